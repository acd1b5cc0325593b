#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "compose/coco.hpp"

namespace compose {

/// Occlusion / truncation / size thresholds for keeping an instance.
struct FilterOptions {
  double max_overlap_iou = 0.3;     // exclude when IoU with another instance exceeds this
  double min_edge_distance = 18.0;  // exclude when the box is closer than this to an image edge (px)
  double min_area = 2500.0;         // exclude when the box area is below this (px^2)
  bool overlap_against_all_categories = true;  // false: only compare against the same category
};

void to_json(nlohmann::json& j, const FilterOptions& f);
void from_json(const nlohmann::json& j, FilterOptions& f);

struct InstanceRef {
  std::int64_t image_id = 0;
  std::int64_t instance_id = 0;

  friend auto operator<=>(const InstanceRef&, const InstanceRef&) = default;
};

/// Why an instance was rejected, or Kept.
enum class FilterVerdict { Kept, WrongCategory, Crowd, Overlap, NearEdge, TooSmall };

FilterVerdict classify_instance(const CocoImage& image, const CocoInstance& instance, int category,
                                const FilterOptions& options);

/// Instances of the category that pass every filter, in (image id, instance id) order.
std::vector<InstanceRef> filter_instances(const std::vector<CocoImage>& images, int category,
                                          const FilterOptions& options = {});

}  // namespace compose
