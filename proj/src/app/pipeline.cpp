#include "compose/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "compose/checkpoint.hpp"
#include "compose/errors.hpp"

namespace compose {

nlohmann::json model_metadata(const Palette& palette, const SceneOptions& scene) {
  return {{"palette", palette}, {"scene", scene}};
}

PlacementModel load_placement_model(const std::filesystem::path& checkpoint) {
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
  SceneOptions scene;
  scene.input_resolution = ckpt.net.config().input_resolution;
  if (ckpt.metadata.contains("scene")) scene = ckpt.metadata.at("scene").get<SceneOptions>();
  if (scene.input_resolution != ckpt.net.config().input_resolution) {
    throw InvalidArgument("checkpoint scene resolution does not match its network");
  }
  Palette palette;
  if (ckpt.metadata.contains("palette")) {
    palette = ckpt.metadata.at("palette").get<Palette>();
  } else {
    std::vector<int> ids(90);
    std::iota(ids.begin(), ids.end(), 1);
    palette = Palette(0, ids);
  }
  return {std::move(ckpt.net), std::move(palette), scene};
}

std::vector<char> standing_cells(const SquareFrame& frame, int grid) {
  std::vector<char> ok(static_cast<std::size_t>(grid * grid), 0);
  for (int i = 0; i < grid * grid; ++i) {
    const auto [u, v] = decode_cell(GridCell::from_index(i, grid), grid);
    const double x = u * frame.side, y = v * frame.side;
    ok[static_cast<std::size_t>(i)] = x > frame.offset_x && x < frame.offset_x + frame.width && y > frame.offset_y &&
                                      y < frame.offset_y + frame.height;
  }
  return ok;
}

ScenePrediction predict_scene(const PlacementModel& model, const cv::Mat& background,
                              std::span<const Detection> detections, int n_people) {
  if (background.empty() || background.type() != CV_8UC3) throw InvalidArgument("background must be an 8-bit BGR image");
  const SceneInput input = make_scene_input(background, detections, model.palette, model.scene);
  ScenePrediction out;
  out.frame = input.frame;
  out.people = model.net.predict_multi(scene_to_tensor(input), n_people, 1, standing_cells(input.frame, model.net.config().grid_size));
  for (const auto& p : out.people) {
    out.boxes.push_back(clip_box(denormalize_box(p.top_box(), input.frame), background.cols, background.rows));
  }
  return out;
}

std::unique_ptr<FeatureExtractor> pool_extractor(const CandidatePool& pool) {
  const std::string id = pool.params().value("extractor", std::string("histogram"));
  auto ex = make_extractor(id);
  if (ex->dimension() != pool.descriptor_dim()) {
    throw StateError("extractor " + id + " does not match the pool's descriptor size");
  }
  return ex;
}

UiCandidates candidates_for_box(const CandidatePool& pool, const FeatureExtractor& extractor, const cv::Mat& background,
                                const PixelBox& box, int count) {
  return top_candidates_for_ui(pool, describe_query(background, box, extractor), count);
}

CompositeSpec automatic_spec(const CandidatePool& pool, const FeatureExtractor& extractor, const cv::Mat& background,
                             std::span<const PixelBox> boxes, double feather_radius) {
  CompositeSpec spec;
  spec.feather_radius = feather_radius;
  std::set<std::int64_t> used;
  for (const PixelBox& box : boxes) {
    const int want = static_cast<int>(std::min<std::size_t>(pool.size(), used.size() + 1));
    const UiCandidates c = candidates_for_box(pool, extractor, background, box, want);
    const auto fresh = std::find_if(c.matches.begin(), c.matches.end(),
                                    [&](const Match& m) { return !used.count(m.record->id); });
    const Match& pick = fresh != c.matches.end() ? *fresh : c.matches.front();
    used.insert(pick.record->id);
    spec.placements.push_back({pick.record->id, box});
  }
  return spec;
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read detections " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    return (j.is_object() ? j.at("detections") : j).get<std::vector<Detection>>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("malformed detections " + path.string() + ": " + e.what());
  }
}

}  // namespace compose
