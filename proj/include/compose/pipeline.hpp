#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

#include "compose/compositor.hpp"
#include "compose/features.hpp"
#include "compose/placement_net.hpp"
#include "compose/pool.hpp"
#include "compose/scene.hpp"

namespace compose {

/// A trained network plus what is needed to rebuild its input for a new background.
struct PlacementModel {
  PlacementNet net;
  Palette palette;
  SceneOptions scene;
};

/// Checkpoint metadata recording the palette and scene options used to build the training set.
nlohmann::json model_metadata(const Palette& palette, const SceneOptions& scene);

/// Loads a checkpoint. Missing metadata falls back to the default scene options at the network's
/// resolution and a seed-0 palette over the COCO category ids 1..90.
PlacementModel load_placement_model(const std::filesystem::path& checkpoint);

struct ScenePrediction {
  SquareFrame frame;
  std::vector<PlacementPrediction> people;  // one per requested person, best first
  std::vector<PixelBox> boxes;              // top-1 box of each, in background pixels
};

/// Cells whose center lies strictly inside the image part of the square frame (not the padding).
std::vector<char> standing_cells(const SquareFrame& frame, int grid = kGridSize);

/// Top-1 boxes for n_people, with standing points restricted to standing_cells.
ScenePrediction predict_scene(const PlacementModel& model, const cv::Mat& background,
                              std::span<const Detection> detections, int n_people);

/// The extractor named in the pool's build parameters.
std::unique_ptr<FeatureExtractor> pool_extractor(const CandidatePool& pool);

/// Candidates for one box, ordered as the retrieval UI shows them.
UiCandidates candidates_for_box(const CandidatePool& pool, const FeatureExtractor& extractor, const cv::Mat& background,
                                const PixelBox& box, int count = 9);

/// The top-1 candidate for each box. A segment already used for an earlier box is skipped while
/// unused candidates remain.
CompositeSpec automatic_spec(const CandidatePool& pool, const FeatureExtractor& extractor, const cv::Mat& background,
                             std::span<const PixelBox> boxes, double feather_radius = kDefaultFeatherRadius);

/// Detections for a background from a JSON array of {category, box:[x,y,w,h], score}.
std::vector<Detection> read_detections(const std::filesystem::path& path);

}  // namespace compose
