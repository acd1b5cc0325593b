#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "compose/coco.hpp"
#include "compose/detections.hpp"
#include "compose/filters.hpp"
#include "compose/scene.hpp"
#include "compose/trainer.hpp"

namespace compose {

struct BuildConfig {
  std::string category = "person";
  FilterOptions filters;
  EraseOptions erase;
  SceneOptions scene;
  std::uint64_t seed = 0;  // palette
};

void to_json(nlohmann::json& j, const BuildConfig& c);
void from_json(const nlohmann::json& j, BuildConfig& c);

struct TrainingSample {
  SceneInput scene;
  GridCell location;  // g_xy
  GridCell size;      // g_wh
  std::int64_t image_id = 0;
  std::int64_t instance_id = 0;
  PixelBox box;
  NormalizedBox target;
};

/// Class labels for a ground-truth box: (g_xy, g_wh).
std::pair<GridCell, GridCell> targets_for(const PixelBox& box, const SquareFrame& frame);

struct BuildReport {
  std::size_t images = 0;
  std::size_t candidates = 0;  // instances surviving the filters
  std::size_t samples = 0;
  std::size_t skipped = 0;
};

void to_json(nlohmann::json& j, const BuildReport& r);

/// One sample per filtered instance: erase it, blur, run the detector on the erased image, render the
/// layout and derive the grid targets. Instances are visited in (image id, instance id) order.
/// Unreadable images and undecodable masks are skipped with a warning.
BuildReport build_training_set(const CocoDataset& dataset, const std::filesystem::path& image_dir, Detector& detector,
                               const BuildConfig& config, const std::function<void(const TrainingSample&)>& sink);

/// build_training_set writing a manifest directory:
///   manifest.jsonl   {image_id, instance_id, g_xy, g_wh, box:[x,y,w,h], nbox:[xs,ys,w,h], frame, ib, il}
///   detections.jsonl detection cache keyed by "<image>/<instance>"
///   ib/*.png il/*.png, palette.json, build.json
BuildReport write_training_set(const CocoDataset& dataset, const std::filesystem::path& image_dir, Detector& detector,
                               const BuildConfig& config, const std::filesystem::path& out_dir);

struct ManifestEntry {
  std::int64_t image_id = 0;
  std::int64_t instance_id = 0;
  GridCell location;
  GridCell size;
  PixelBox box;
  NormalizedBox target;
  SquareFrame frame;
  std::filesystem::path blurred_path;
  std::filesystem::path layout_path;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);
Palette read_palette(const std::filesystem::path& dir);
BuildConfig read_build_config(const std::filesystem::path& dir);

/// Training examples backed by a manifest directory. Images are decoded up front when preload is set,
/// otherwise on each access.
class ManifestExamples : public ExampleSource {
 public:
  explicit ManifestExamples(const std::filesystem::path& dir, bool preload = true);

  std::size_t size() const override { return entries_.size(); }
  TrainingExample get(std::size_t index) const override;
  const std::vector<ManifestEntry>& entries() const { return entries_; }
  nn::Tensor input(std::size_t index) const;

 private:
  std::vector<ManifestEntry> entries_;
  std::vector<std::pair<cv::Mat, cv::Mat>> images_;
};

}  // namespace compose
