#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

#include "compose/geometry.hpp"
#include "compose/pool.hpp"

namespace compose {

inline constexpr double kDefaultFeatherRadius = 3.0;
inline constexpr double kMinScale = 0.05;
inline constexpr double kMaxScale = 20.0;

/// A segment resampled to its target height, on a canvas padded by `margin` px on every side.
struct PlacedSegment {
  cv::Mat color;      // CV_8UC3; colors outside the mask extend the nearest mask color
  cv::Mat mask;       // CV_8UC1, 0/255
  cv::Point origin;   // background coordinates of the canvas's top-left pixel
  PixelBox box;       // placed segment box in background coordinates (canvas without margin)
  double scale = 1.0;
};

/// Uniform scale = target height / segment height, centered on the target's center. The color is
/// resampled bilinearly with premultiplied alpha. Throws InvalidArgument for an invalid target or a
/// scale outside [0.05, 20].
PlacedSegment place_segment(const SegmentRecord& segment, const PixelBox& target, int margin = 0);

/// alpha = clamp(0.5 + d / (2 radius)), d the signed distance (px, positive inside) from the mask
/// boundary. radius 0 gives the binary mask. CV_64FC1.
cv::Mat feather_matte(const cv::Mat& mask, double radius);

/// out = alpha fg + (1 - alpha) bg, rounded, for the part of fg inside the background. Pixels with
/// alpha 0 are copied from the background untouched.
cv::Mat blend(const cv::Mat& background, const cv::Mat& foreground, const cv::Mat& matte, cv::Point origin);

struct Placement {
  std::int64_t segment_id = 0;
  PixelBox box;  // target box in background coordinates
};

struct CompositeSpec {
  std::vector<Placement> placements;  // paint order
  double feather_radius = kDefaultFeatherRadius;
};

struct ProvenanceEntry {
  std::int64_t segment_id = 0;
  PixelBox box;  // target box after clamping to the background
  double scale = 1.0;
};

struct Provenance {
  double feather_radius = kDefaultFeatherRadius;
  std::vector<ProvenanceEntry> placements;
};

void to_json(nlohmann::json& j, const Provenance& p);
void from_json(const nlohmann::json& j, Provenance& p);

struct CompositeResult {
  cv::Mat image;
  Provenance provenance;
};

/// Applies the placements in order. Throws InvalidArgument naming an unknown segment id or a box
/// that is empty after clamping.
CompositeResult compose(const cv::Mat& background, const CompositeSpec& spec, const CandidatePool& pool);

struct MattedPlacement {
  PlacedSegment segment;
  cv::Mat alpha;  // feather_matte of segment.mask
};

/// The placed segments and their mattes in paint order, shared by compose and render_silhouette.
std::vector<MattedPlacement> prepare_placements(cv::Size background, const CompositeSpec& spec,
                                                const CandidatePool& pool, Provenance* provenance = nullptr);

/// Same geometry as compose, with each segment painted solid white where its alpha exceeds 0.5.
cv::Mat render_silhouette(const cv::Mat& background, const CompositeSpec& spec, const CandidatePool& pool);

/// Re-renders a composite from its provenance record.
CompositeResult recompose(const cv::Mat& background, const Provenance& provenance, const CandidatePool& pool);

/// 64-bit FNV-1a over the image's dimensions, type and pixel bytes.
std::uint64_t image_hash(const cv::Mat& image);

}  // namespace compose
