#include "compose/training_set.hpp"

#include <fstream>

#include <spdlog/spdlog.h>

#include "compose/errors.hpp"
#include "compose/image_ops.hpp"

namespace compose {

namespace fs = std::filesystem;

void to_json(nlohmann::json& j, const BuildConfig& c) {
  j = {{"category", c.category}, {"filters", c.filters}, {"scene", c.scene}, {"seed", c.seed},
       {"erase", {{"dilation_radius", c.erase.dilation_radius}, {"max_mask_fraction", c.erase.max_mask_fraction}}}};
}

void from_json(const nlohmann::json& j, BuildConfig& c) {
  const BuildConfig d;
  c.category = j.value("category", d.category);
  c.filters = j.value("filters", d.filters);
  c.scene = j.value("scene", d.scene);
  c.seed = j.value("seed", d.seed);
  const auto erase = j.value("erase", nlohmann::json::object());
  c.erase.dilation_radius = erase.value("dilation_radius", d.erase.dilation_radius);
  c.erase.max_mask_fraction = erase.value("max_mask_fraction", d.erase.max_mask_fraction);
}

void to_json(nlohmann::json& j, const BuildReport& r) {
  j = {{"images", r.images}, {"candidates", r.candidates}, {"samples", r.samples}, {"skipped", r.skipped}};
}

std::pair<GridCell, GridCell> targets_for(const PixelBox& box, const SquareFrame& frame) {
  const NormalizedBox n = normalize_box(box, frame);
  auto unit = [](double v) { return std::clamp(v, 0.0, 1.0); };
  return {encode_cell(unit(n.x_stand), unit(n.y_stand)), encode_cell(unit(n.w), unit(n.h))};
}

namespace {

bool mask_consistent(const cv::Mat& mask, const PixelBox& box) {
  const auto bounds = mask_bounds(mask);
  if (!bounds) return false;
  constexpr double kSlack = 2.0;
  return bounds->x_min >= box.x_min - kSlack && bounds->y_min >= box.y_min - kSlack &&
         bounds->x_max <= box.x_max + kSlack && bounds->y_max <= box.y_max + kSlack;
}

}  // namespace

BuildReport build_training_set(const CocoDataset& dataset, const fs::path& image_dir, Detector& detector,
                               const BuildConfig& config, const std::function<void(const TrainingSample&)>& sink) {
  const int category = dataset.category_id(config.category);
  const Palette palette(config.seed, dataset.category_ids());
  const HarmonicInpainter inpainter;
  const auto refs = filter_instances(dataset.images(), category, config.filters);

  BuildReport report;
  report.images = dataset.images().size();
  report.candidates = refs.size();
  std::int64_t loaded_id = -1;
  cv::Mat pixels;
  for (const auto& ref : refs) {
    const CocoImage& image = *dataset.find_image(ref.image_id);
    const CocoInstance& inst = *image.find_instance(ref.instance_id);
    try {
      if (loaded_id != image.id) {
        pixels = read_color_image(image_dir / image.file_name);
        loaded_id = image.id;
        if (pixels.cols != image.width || pixels.rows != image.height) {
          throw IoError("image size does not match its annotation");
        }
      }
      const cv::Mat mask = decode_segmentation(inst.segmentation, image.width, image.height);
      if (!mask_consistent(mask, inst.box)) throw InvalidArgument("mask disagrees with its bounding box");
      const cv::Mat erased = erase_person(pixels, mask, inpainter, config.erase);
      const DetectionRequest request{detection_key(image.id, inst.id), &image, inst.id, &erased};
      const auto detections = detector.detect(request);

      TrainingSample sample;
      sample.scene = make_scene_input(erased, detections, palette, config.scene);
      sample.image_id = image.id;
      sample.instance_id = inst.id;
      sample.box = inst.box;
      sample.target = normalize_box(inst.box, sample.scene.frame);
      std::tie(sample.location, sample.size) = targets_for(inst.box, sample.scene.frame);
      sink(sample);
      ++report.samples;
    } catch (const std::exception& e) {
      spdlog::warn("skipping image {} instance {}: {}", image.id, inst.id, e.what());
      ++report.skipped;
    }
  }
  return report;
}

BuildReport write_training_set(const CocoDataset& dataset, const fs::path& image_dir, Detector& detector,
                               const BuildConfig& config, const fs::path& out_dir) {
  fs::create_directories(out_dir / "ib");
  fs::create_directories(out_dir / "il");
  std::ofstream manifest(out_dir / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw IoError("cannot write manifest in " + out_dir.string());

  // Record what the detector produced so later runs can replay it.
  class Recording : public Detector {
   public:
    explicit Recording(Detector& inner) : inner_(inner) {}
    std::vector<Detection> detect(const DetectionRequest& r) override {
      auto d = inner_.detect(r);
      cache.put(r.key, d);
      return d;
    }
    DetectionCache cache;

   private:
    Detector& inner_;
  } recording(detector);

  const auto report = build_training_set(dataset, image_dir, recording, config, [&](const TrainingSample& s) {
    const std::string stem = std::to_string(s.image_id) + "_" + std::to_string(s.instance_id) + ".png";
    write_image(out_dir / "ib" / stem, s.scene.blurred);
    write_image(out_dir / "il" / stem, s.scene.layout);
    const auto& f = s.scene.frame;
    manifest << nlohmann::json{{"image_id", s.image_id},
                               {"instance_id", s.instance_id},
                               {"g_xy", s.location.index},
                               {"g_wh", s.size.index},
                               {"box", {s.box.x_min, s.box.y_min, s.box.width(), s.box.height()}},
                               {"nbox", {s.target.x_stand, s.target.y_stand, s.target.w, s.target.h}},
                               {"frame",
                                {{"side", f.side},
                                 {"offset_x", f.offset_x},
                                 {"offset_y", f.offset_y},
                                 {"width", f.width},
                                 {"height", f.height}}},
                               {"ib", "ib/" + stem},
                               {"il", "il/" + stem}}
                    .dump()
             << '\n';
  });
  recording.cache.save(out_dir / "detections.jsonl");
  std::ofstream(out_dir / "palette.json")
      << nlohmann::json(Palette(config.seed, dataset.category_ids())).dump(2) << '\n';
  std::ofstream(out_dir / "build.json") << nlohmann::json{{"config", config}, {"report", report}}.dump(2) << '\n';
  return report;
}

std::vector<ManifestEntry> read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.jsonl");
  if (!in) throw IoError("no manifest.jsonl in " + dir.string());
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    ManifestEntry e;
    e.image_id = j.at("image_id").get<std::int64_t>();
    e.instance_id = j.at("instance_id").get<std::int64_t>();
    e.location = GridCell::from_index(j.at("g_xy").get<int>());
    e.size = GridCell::from_index(j.at("g_wh").get<int>());
    const auto& b = j.at("box");
    e.box = PixelBox::from_xywh(b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>());
    const auto& n = j.at("nbox");
    e.target = {n[0].get<double>(), n[1].get<double>(), n[2].get<double>(), n[3].get<double>()};
    const auto& f = j.at("frame");
    e.frame = {f.at("side").get<int>(), f.at("offset_x").get<int>(), f.at("offset_y").get<int>(),
               f.at("width").get<int>(), f.at("height").get<int>()};
    e.blurred_path = dir / j.at("ib").get<std::string>();
    e.layout_path = dir / j.at("il").get<std::string>();
    out.push_back(std::move(e));
  }
  return out;
}

Palette read_palette(const fs::path& dir) {
  std::ifstream in(dir / "palette.json");
  if (!in) throw IoError("no palette.json in " + dir.string());
  return nlohmann::json::parse(in).get<Palette>();
}

BuildConfig read_build_config(const fs::path& dir) {
  std::ifstream in(dir / "build.json");
  if (!in) throw IoError("no build.json in " + dir.string());
  return nlohmann::json::parse(in).at("config").get<BuildConfig>();
}

ManifestExamples::ManifestExamples(const fs::path& dir, bool preload) : entries_(read_manifest(dir)) {
  if (preload) {
    images_.reserve(entries_.size());
    for (const auto& e : entries_) images_.emplace_back(read_color_image(e.blurred_path), read_color_image(e.layout_path));
  }
}

nn::Tensor ManifestExamples::input(std::size_t index) const {
  if (!images_.empty()) return scene_to_tensor(images_[index].first, images_[index].second);
  const auto& e = entries_.at(index);
  return scene_to_tensor(read_color_image(e.blurred_path), read_color_image(e.layout_path));
}

TrainingExample ManifestExamples::get(std::size_t index) const {
  const auto& e = entries_.at(index);
  return {input(index), e.location.index, e.size.index};
}

}  // namespace compose
