#include "compose/filters.hpp"

#include <algorithm>

#include "compose/geometry.hpp"

namespace compose {

void to_json(nlohmann::json& j, const FilterOptions& f) {
  j = {{"max_overlap_iou", f.max_overlap_iou},
       {"min_edge_distance", f.min_edge_distance},
       {"min_area", f.min_area},
       {"overlap_against_all_categories", f.overlap_against_all_categories}};
}

void from_json(const nlohmann::json& j, FilterOptions& f) {
  const FilterOptions d;
  f.max_overlap_iou = j.value("max_overlap_iou", d.max_overlap_iou);
  f.min_edge_distance = j.value("min_edge_distance", d.min_edge_distance);
  f.min_area = j.value("min_area", d.min_area);
  f.overlap_against_all_categories = j.value("overlap_against_all_categories", d.overlap_against_all_categories);
}

FilterVerdict classify_instance(const CocoImage& image, const CocoInstance& instance, int category,
                                const FilterOptions& options) {
  if (instance.category_id != category) return FilterVerdict::WrongCategory;
  if (instance.crowd) return FilterVerdict::Crowd;
  for (const auto& other : image.instances) {
    if (other.id == instance.id) continue;
    if (!options.overlap_against_all_categories && other.category_id != category) continue;
    if (iou(instance.box, other.box) > options.max_overlap_iou) return FilterVerdict::Overlap;
  }
  const PixelBox& b = instance.box;
  const double edge = std::min({b.x_min, b.y_min, image.width - b.x_max, image.height - b.y_max});
  if (edge < options.min_edge_distance) return FilterVerdict::NearEdge;
  if (b.area() < options.min_area) return FilterVerdict::TooSmall;
  return FilterVerdict::Kept;
}

std::vector<InstanceRef> filter_instances(const std::vector<CocoImage>& images, int category,
                                          const FilterOptions& options) {
  std::vector<InstanceRef> kept;
  for (const auto& image : images) {
    for (const auto& inst : image.instances) {
      if (classify_instance(image, inst, category, options) == FilterVerdict::Kept) {
        kept.push_back({image.id, inst.id});
      }
    }
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

}  // namespace compose
