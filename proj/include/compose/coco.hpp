#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

#include "compose/geometry.hpp"

namespace compose {

struct CocoInstance {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  int category_id = 0;
  PixelBox box;
  bool crowd = false;
  nlohmann::json segmentation;  // polygons or RLE, decoded on demand
};

struct CocoImage {
  std::int64_t id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
  std::vector<CocoInstance> instances;  // ascending id

  const CocoInstance* find_instance(std::int64_t instance_id) const;
};

/// COCO-format annotations grouped by image. Zero-area boxes are dropped at load with a warning.
class CocoDataset {
 public:
  static CocoDataset load(const std::filesystem::path& annotation_file);
  static CocoDataset from_json(const nlohmann::json& doc);

  const std::vector<CocoImage>& images() const { return images_; }
  const std::map<int, std::string>& categories() const { return categories_; }
  const CocoImage* find_image(std::int64_t image_id) const;

  /// Category id for a name; throws InvalidArgument when absent.
  int category_id(const std::string& name) const;
  std::vector<int> category_ids() const;

  std::size_t rejected_annotations() const { return rejected_; }

 private:
  std::vector<CocoImage> images_;  // ascending id
  std::map<int, std::string> categories_;
  std::size_t rejected_ = 0;
};

/// Rasterize a COCO segmentation (polygon list, uncompressed RLE or compressed RLE string) to a
/// CV_8UC1 mask holding 0/255.
cv::Mat decode_segmentation(const nlohmann::json& segmentation, int width, int height);

/// Counts of a compressed COCO RLE string.
std::vector<std::uint32_t> decode_rle_string(const std::string& s);

/// Tight bounds of the nonzero pixels, or nullopt for an empty mask.
std::optional<PixelBox> mask_bounds(const cv::Mat& mask);

}  // namespace compose
