#include "compose/cli.hpp"

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "compose/checkpoint.hpp"
#include "compose/compositor.hpp"
#include "compose/detections.hpp"
#include "compose/errors.hpp"
#include "compose/evaluator.hpp"
#include "compose/image_ops.hpp"
#include "compose/pipeline.hpp"
#include "compose/pool.hpp"
#include "compose/service.hpp"
#include "compose/synth.hpp"
#include "compose/trainer.hpp"
#include "compose/training_set.hpp"

namespace compose::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Config files: a JSON object ({"net": {"train": {"epochs": 5}}}) or TOML/INI sections
/// ([net.train] epochs = 5). Keys follow the long option names of the command path.
class JsonOrTomlConfig : public CLI::ConfigTOML {
 public:
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    std::string text((std::istreambuf_iterator<char>(input)), std::istreambuf_iterator<char>());
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos || text[first] != '{') {
      std::istringstream again(text);
      return CLI::ConfigTOML::from_config(again);
    }
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    std::vector<CLI::ConfigItem> items;
    flatten(doc, {}, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

  static void flatten(const json& node, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : node.items()) {
      if (value.is_object()) {
        std::vector<std::string> p = parents;
        p.push_back(key);
        flatten(value, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      out.push_back(std::move(item));
    }
  }
};

PixelBox parse_box(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      v.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw InvalidArgument("box must be x,y,w,h: " + text);
    }
  }
  if (v.size() != 4) throw InvalidArgument("box must be x,y,w,h: " + text);
  const PixelBox b = PixelBox::from_xywh(v[0], v[1], v[2], v[3]);
  if (!b.valid()) throw InvalidArgument("box has no extent: " + text);
  return b;
}

json box_json(const PixelBox& b) { return {b.x_min, b.y_min, b.width(), b.height()}; }
json cell_json(const GridCell& c) { return {{"col", c.col}, {"row", c.row}, {"index", c.index}}; }

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument("malformed JSON in " + path.string() + ": " + e.what());
  }
}

NetworkConfig network_preset(const std::string& name) {
  if (name == "reference") return NetworkConfig::reference();
  if (name == "compact") return NetworkConfig::compact();
  if (name == "tiny") return NetworkConfig::tiny();
  throw InvalidArgument("unknown network preset " + name);
}

std::vector<Detection> optional_detections(const std::string& path) {
  return path.empty() ? std::vector<Detection>{} : read_detections(path);
}

void add_filter_options(CLI::App* cmd, FilterOptions& f) {
  cmd->add_option("--max-overlap-iou", f.max_overlap_iou, "Drop instances overlapping another above this IoU")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--min-edge-distance", f.min_edge_distance, "Drop instances closer than this to an edge (px)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--min-area", f.min_area, "Drop instances with a smaller box area (px^2)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  cmd->add_flag_callback(
      "--same-category-overlap", [&f] { f.overlap_against_all_categories = false; },
      "Only test overlaps against instances of the same category");
}

struct Streams {
  std::ostream& out;
};

// Each command registers its options and returns the action to run if it is selected.
using Action = std::function<void(Streams&)>;

Action add_synth(CLI::App& app) {
  auto* cmd = app.add_subcommand("synth", "Write a synthetic COCO-style corpus of people standing on a ground line");
  auto out_dir = std::make_shared<std::string>();
  auto opts = std::make_shared<SynthOptions>();
  cmd->add_option("--out", *out_dir, "Output directory")->required();
  cmd->add_option("--images", opts->images, "Number of images")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--width", opts->width, "Image width")->capture_default_str()->check(CLI::Range(64, 8192));
  cmd->add_option("--height", opts->height, "Image height")->capture_default_str()->check(CLI::Range(64, 8192));
  cmd->add_option("--seed", opts->seed, "Random seed")->capture_default_str();
  cmd->add_flag_callback("--no-person", [opts] { opts->with_person = false; }, "Leave the people out (backgrounds only)");
  return [=](Streams& s) {
    write_synthetic_coco(*out_dir, *opts);
    s.out << json{{"out", *out_dir},
                  {"images", opts->images},
                  {"annotations", (fs::path(*out_dir) / "annotations.json").string()}}
                 .dump()
          << '\n';
  };
}

Action add_data(CLI::App& app) {
  auto* data = app.add_subcommand("data", "Training-set construction");
  data->require_subcommand(1);
  auto* cmd = data->add_subcommand("build", "Filter instances, erase them and write network inputs and targets");
  auto annotations = std::make_shared<std::string>();
  auto images = std::make_shared<std::string>();
  auto out_dir = std::make_shared<std::string>();
  auto detections = std::make_shared<std::string>();
  auto cfg = std::make_shared<BuildConfig>();
  cmd->add_option("--annotations", *annotations, "COCO annotation JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--images", *images, "Image directory")->required()->check(CLI::ExistingDirectory);
  cmd->add_option("--out", *out_dir, "Output manifest directory")->required();
  cmd->add_option("--detections", *detections,
                  "Detection cache (JSON lines keyed by image/instance); the annotations stand in when absent")
      ->check(CLI::ExistingFile);
  cmd->add_option("--category", cfg->category, "Category to place")->capture_default_str();
  cmd->add_option("--seed", cfg->seed, "Palette seed")->capture_default_str();
  cmd->add_option("--resolution", cfg->scene.input_resolution, "Network input resolution")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--blur-sigma", cfg->scene.blur_sigma, "Gaussian blur sigma")->capture_default_str();
  cmd->add_option("--min-detection-score", cfg->scene.min_detection_score, "Layout detection score threshold")
      ->capture_default_str();
  cmd->add_option("--dilation", cfg->erase.dilation_radius, "Erase mask dilation radius (px)")->capture_default_str();
  add_filter_options(cmd, cfg->filters);
  return [=](Streams& s) {
    const CocoDataset ds = CocoDataset::load(*annotations);
    std::unique_ptr<Detector> detector;
    if (detections->empty()) {
      detector = std::make_unique<AnnotationDetector>();
    } else {
      detector = std::make_unique<CachedDetector>(DetectionCache::load(*detections));
    }
    const BuildReport report = write_training_set(ds, *images, *detector, *cfg, *out_dir);
    s.out << json{{"out", *out_dir}, {"report", report}}.dump() << '\n';
  };
}

Action add_net(CLI::App& app) {
  auto* net = app.add_subcommand("net", "Placement network");
  net->require_subcommand(1);

  auto* train = net->add_subcommand("train", "Train on a manifest directory written by data build");
  struct TrainArgs {
    std::string data, out, preset = "reference", network_json, metrics;
    std::uint64_t init_seed = 0;
    std::string optimizer = "sgd";
    bool lazy = false;
    TrainingHyperparams hp;
  };
  auto t = std::make_shared<TrainArgs>();
  train->add_option("--data", t->data, "Manifest directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", t->out, "Checkpoint path")->required();
  train->add_option("--network", t->preset, "Architecture preset: reference, compact or tiny")
      ->capture_default_str()
      ->check(CLI::IsMember({"reference", "compact", "tiny"}));
  train->add_option("--network-config", t->network_json, "NetworkConfig JSON (overrides --network)")
      ->check(CLI::ExistingFile);
  train->add_option("--epochs", t->hp.epochs, "Epochs")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--batch-size", t->hp.batch_size, "Mini-batch size")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--lr", t->hp.learning_rate, "Learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--momentum", t->hp.momentum, "SGD momentum")->capture_default_str();
  train->add_option("--optimizer", t->optimizer, "sgd or adam")->capture_default_str()->check(CLI::IsMember({"sgd", "adam"}));
  train->add_option("--lr-step", t->hp.lr_step_epochs, "Decay the rate every N epochs (0: never)")->capture_default_str();
  train->add_option("--lr-decay", t->hp.lr_decay, "Decay factor")->capture_default_str();
  train->add_option("--weight-decay", t->hp.weight_decay, "L2 weight decay")->capture_default_str();
  train->add_option("--seed", t->hp.seed, "Shuffling seed")->capture_default_str();
  train->add_option("--init-seed", t->init_seed, "Weight initialization seed")->capture_default_str();
  train->add_option("--metrics", t->metrics, "Write per-epoch metrics (JSON lines) here");
  train->add_flag("--lazy", t->lazy, "Decode training images on access instead of up front");

  auto* predict = net->add_subcommand("predict", "Predict placements for one background");
  struct PredictArgs {
    std::string ckpt, image, layout, heatmap;
    int k = 1, k_size = 1, n = 1;
  };
  auto p = std::make_shared<PredictArgs>();
  predict->add_option("--ckpt", p->ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  predict->add_option("--image", p->image, "Background image")->required()->check(CLI::ExistingFile);
  predict->add_option("--layout", p->layout, "Detections JSON for the layout input")->check(CLI::ExistingFile);
  predict->add_option("--k", p->k, "Location hypotheses per person")->capture_default_str()->check(CLI::Range(1, 225));
  predict->add_option("--k-size", p->k_size, "Size hypotheses per location")->capture_default_str()->check(CLI::Range(1, 225));
  predict->add_option("--n", p->n, "People to place")->capture_default_str()->check(CLI::Range(1, 225));
  predict->add_option("--heatmap", p->heatmap, "Write the location heatmap PNG here");

  return [=](Streams& s) {
    if (train->parsed()) {
      NetworkConfig config = t->network_json.empty() ? network_preset(t->preset)
                                                     : read_json_file(t->network_json).get<NetworkConfig>();
      const BuildConfig build = read_build_config(t->data);
      if (build.scene.input_resolution != config.input_resolution) {
        throw InvalidArgument("training set resolution " + std::to_string(build.scene.input_resolution) +
                              " does not match the network input " + std::to_string(config.input_resolution));
      }
      t->hp.optimizer = t->optimizer == "adam" ? OptimizerKind::Adam : OptimizerKind::SgdMomentum;
      const ManifestExamples examples(t->data, !t->lazy);
      if (examples.size() == 0) throw StateError("training set " + t->data + " is empty");
      PlacementNet model(config, t->init_seed);
      Trainer trainer(model, t->hp);
      std::optional<std::ofstream> log;
      if (!t->metrics.empty()) log.emplace(t->metrics, std::ios::trunc);
      spdlog::info("training on {} samples, {} parameters", examples.size(), model.parameter_count());
      const auto history = trainer.train(examples, log ? &*log : nullptr, [](const EpochMetrics& m) {
        spdlog::info("epoch {} loss {:.4f} (loc {:.4f}, size {:.4f}) top1 loc {:.3f} size {:.3f}", m.epoch,
                     m.loss_total(), m.loss_location, m.loss_size, m.top1_location, m.top1_size);
      });
      json meta = model_metadata(read_palette(t->data), build.scene);
      meta["hyperparams"] = t->hp;
      meta["samples"] = examples.size();
      save_checkpoint(model, t->out, meta);
      s.out << json{{"checkpoint", t->out}, {"epochs", history.size()}, {"final", history.back()}}.dump() << '\n';
      return;
    }
    const PlacementModel model = load_placement_model(p->ckpt);
    const cv::Mat image = read_color_image(p->image);
    const auto dets = optional_detections(p->layout);
    const SceneInput scene = make_scene_input(image, dets, model.palette, model.scene);
    const nn::Tensor input = scene_to_tensor(scene);
    std::vector<PlacementPrediction> preds;
    if (p->n == 1) {
      preds.push_back(model.net.predict(input, p->k, p->k_size));
    } else {
      preds = model.net.predict_multi(input, p->n, p->k_size, standing_cells(scene.frame, model.net.config().grid_size));
    }
    json people = json::array();
    for (const auto& pred : preds) {
      json hyps = json::array();
      std::size_t b = 0;
      for (const auto& h : pred.hypotheses) {
        json sizes = json::array();
        for (const auto& sz : h.sizes) {
          const NormalizedBox nb = pred.boxes.at(b++);
          sizes.push_back({{"size", cell_json(sz.cell)},
                           {"probability", sz.probability},
                           {"normalized_box", {nb.x_stand, nb.y_stand, nb.w, nb.h}},
                           {"box", box_json(clip_box(denormalize_box(nb, scene.frame), image.cols, image.rows))}});
        }
        hyps.push_back({{"location", cell_json(h.cell)}, {"probability", h.probability}, {"sizes", sizes}});
      }
      people.push_back({{"hypotheses", hyps}});
    }
    if (!p->heatmap.empty()) write_image(p->heatmap, export_heatmap(preds.front(), scene.frame, image));
    s.out << json{{"image", p->image}, {"width", image.cols}, {"height", image.rows}, {"people", people}}.dump() << '\n';
  };
}

Action add_pool(CLI::App& app) {
  auto* pool = app.add_subcommand("pool", "Candidate segment pool");
  pool->require_subcommand(1);

  auto* build = pool->add_subcommand("build", "Extract descriptors for every filtered instance");
  struct BuildArgs {
    std::string annotations, images, out, extractor = "histogram";
    PoolBuildConfig config;
  };
  auto b = std::make_shared<BuildArgs>();
  build->add_option("--annotations", b->annotations, "COCO annotation JSON")->required()->check(CLI::ExistingFile);
  build->add_option("--images", b->images, "Image directory")->required()->check(CLI::ExistingDirectory);
  build->add_option("--out", b->out, "Pool directory")->required();
  build->add_option("--extractor", b->extractor, "histogram[:dim] or onnx:<model path>")->capture_default_str();
  build->add_option("--category", b->config.category, "Category to collect")->capture_default_str();
  add_filter_options(build, b->config.filters);

  auto* query = pool->add_subcommand("query", "Rank pool segments for a box in a background");
  struct QueryArgs {
    std::string pool, image, box;
    int k = 9;
    double min_iou = kSizePrefilterIou;
    bool ui = false;
  };
  auto q = std::make_shared<QueryArgs>();
  query->add_option("--pool", q->pool, "Pool directory")->required()->check(CLI::ExistingDirectory);
  query->add_option("--image", q->image, "Background image")->required()->check(CLI::ExistingFile);
  query->add_option("--box", q->box, "Query box x,y,w,h in pixels")->required();
  query->add_option("--k", q->k, "Results")->capture_default_str()->check(CLI::PositiveNumber);
  query->add_option("--min-iou", q->min_iou, "Size prefilter (center-aligned IoU)")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  query->add_flag("--ui", q->ui, "Top up with size-filtered candidates as the interactive grid does");

  return [=](Streams& s) {
    if (build->parsed()) {
      const CocoDataset ds = CocoDataset::load(b->annotations);
      const auto ex = make_extractor(b->extractor);
      const CandidatePool built = build_pool(ds, b->images, *ex, b->config);
      built.save(b->out);
      s.out << json{{"out", b->out}, {"size", built.size()}, {"extractor", ex->id()}}.dump() << '\n';
      return;
    }
    const CandidatePool loaded = CandidatePool::load(q->pool);
    const auto ex = pool_extractor(loaded);
    const cv::Mat image = read_color_image(q->image);
    const PixelBox box = parse_box(q->box);
    const QueryDescriptor d = describe_query(image, box, *ex);
    std::vector<Match> matches;
    json extra;
    if (q->ui) {
      const UiCandidates c = top_candidates_for_ui(loaded, d, q->k, q->min_iou);
      matches = c.matches;
      extra = {{"padded", c.padded}, {"incomplete", c.incomplete}};
    } else {
      const QueryResult r = compose::query(loaded, d, q->k, q->min_iou);
      matches = r.matches;
      extra = {{"status", r.status == QueryStatus::Ok ? "ok" : "all_filtered_by_size"}};
    }
    json list = json::array();
    for (const Match& m : matches) {
      const auto [w, h] = m.record->normalized_size();
      list.push_back({{"segment_id", m.record->id},
                      {"distance", m.distance},
                      {"size_iou", center_aligned_iou({w, h}, {d.w, d.h})},
                      {"source", m.record->source},
                      {"box", box_json(m.record->box)}});
    }
    extra["matches"] = list;
    s.out << extra.dump() << '\n';
  };
}

Action add_run(CLI::App& app) {
  auto* cmd = app.add_subcommand("run", "Predict, retrieve and composite people into a background");
  struct RunArgs {
    std::string ckpt, pool, image, layout, out, provenance, heatmap, silhouette;
    int n = 1;
    double feather = kDefaultFeatherRadius;
  };
  auto a = std::make_shared<RunArgs>();
  cmd->add_option("--ckpt", a->ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  cmd->add_option("--pool", a->pool, "Pool directory")->required()->check(CLI::ExistingDirectory);
  cmd->add_option("--image", a->image, "Background image")->required()->check(CLI::ExistingFile);
  cmd->add_option("--layout", a->layout, "Detections JSON for the layout input")->check(CLI::ExistingFile);
  cmd->add_option("--n", a->n, "People to place")->capture_default_str()->check(CLI::Range(1, 225));
  cmd->add_option("--out", a->out, "Composite PNG")->required();
  cmd->add_option("--provenance", a->provenance, "Provenance JSON")->required();
  cmd->add_option("--feather", a->feather, "Matte feather radius (px)")->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd->add_option("--heatmap", a->heatmap, "Also write the location heatmap PNG");
  cmd->add_option("--silhouette", a->silhouette, "Also write the white-silhouette rendering");
  return [=](Streams& s) {
    const PlacementModel model = load_placement_model(a->ckpt);
    const CandidatePool pool = CandidatePool::load(a->pool);
    const auto ex = pool_extractor(pool);
    const cv::Mat image = read_color_image(a->image);
    const ScenePrediction pred = predict_scene(model, image, optional_detections(a->layout), a->n);
    const CompositeSpec spec = automatic_spec(pool, *ex, image, pred.boxes, a->feather);
    const CompositeResult result = compose(image, spec, pool);
    write_image(a->out, result.image);
    write_json_file(a->provenance, result.provenance);
    if (!a->heatmap.empty()) write_image(a->heatmap, export_heatmap(pred.people.front(), pred.frame, image));
    if (!a->silhouette.empty()) write_image(a->silhouette, render_silhouette(image, spec, pool));
    s.out << json{{"composite", a->out},
                  {"provenance", result.provenance},
                  {"hash", image_hash(result.image)}}
                 .dump()
          << '\n';
  };
}

Action add_render(CLI::App& app) {
  auto* cmd = app.add_subcommand("render", "Re-render a composite from its provenance record");
  struct RenderArgs {
    std::string pool, image, provenance, out, silhouette;
  };
  auto a = std::make_shared<RenderArgs>();
  cmd->add_option("--pool", a->pool, "Pool directory")->required()->check(CLI::ExistingDirectory);
  cmd->add_option("--image", a->image, "Background image")->required()->check(CLI::ExistingFile);
  cmd->add_option("--provenance", a->provenance, "Provenance JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", a->out, "Composite PNG")->required();
  cmd->add_option("--silhouette", a->silhouette, "Also write the white-silhouette rendering");
  return [=](Streams& s) {
    const CandidatePool pool = CandidatePool::load(a->pool);
    const cv::Mat image = read_color_image(a->image);
    Provenance prov;
    try {
      prov = read_json_file(a->provenance).get<Provenance>();
    } catch (const json::exception& e) {
      throw InvalidArgument("malformed provenance " + a->provenance + ": " + e.what());
    }
    const CompositeResult result = recompose(image, prov, pool);
    write_image(a->out, result.image);
    if (!a->silhouette.empty()) {
      CompositeSpec spec{{}, prov.feather_radius};
      for (const auto& e : prov.placements) spec.placements.push_back({e.segment_id, e.box});
      write_image(a->silhouette, render_silhouette(image, spec, pool));
    }
    s.out << json{{"composite", a->out}, {"hash", image_hash(result.image)}}.dump() << '\n';
  };
}

Action add_eval(CLI::App& app) {
  auto* cmd = app.add_subcommand("eval", "Correlate predicted and ground-truth placement histograms");
  struct EvalArgs {
    std::string ckpt, data, out;
    int top_k = 1;
    std::uint64_t baseline_seed = 0;
  };
  auto a = std::make_shared<EvalArgs>();
  cmd->add_option("--ckpt", a->ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  cmd->add_option("--data", a->data, "Manifest directory of held-out scenes")->required()->check(CLI::ExistingDirectory);
  cmd->add_option("--out", a->out, "Also write report.json and histogram PNGs here");
  cmd->add_option("--top-k", a->top_k, "Location hypotheses counted per scene")->capture_default_str()->check(CLI::Range(1, 225));
  cmd->add_option("--baseline-seed", a->baseline_seed, "Seed of the uniform-random baseline")->capture_default_str();
  return [=](Streams& s) {
    const PlacementModel model = load_placement_model(a->ckpt);
    const ManifestExamples examples(a->data, false);
    const EvaluationReport report = evaluate_model(model.net, examples, a->top_k);
    const EvaluationReport baseline = evaluate_uniform_baseline(examples, a->baseline_seed);
    if (!a->out.empty()) write_report(report, a->out);
    json j{{"position_correlation", report.position_correlation},
           {"size_correlation", report.size_correlation},
           {"n_samples", report.samples},
           {"top_k", a->top_k},
           {"uniform_baseline",
            {{"position_correlation", baseline.position_correlation}, {"size_correlation", baseline.size_correlation}}}};
    s.out << j.dump() << '\n';
  };
}

Action add_serve(CLI::App& app) {
  auto* cmd = app.add_subcommand("serve", "Serve the interactive compositing API over HTTP");
  struct ServeArgs {
    std::string ckpt, pool, host = "127.0.0.1", persist;
    int port = 8080;
    double max_megapixels = 20.0;
    std::size_t max_upload_mb = 64;
    ServiceOptions options;
  };
  auto a = std::make_shared<ServeArgs>();
  cmd->add_option("--ckpt", a->ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  cmd->add_option("--pool", a->pool, "Pool directory")->required()->check(CLI::ExistingDirectory);
  cmd->add_option("--host", a->host, "Bind address")->capture_default_str();
  cmd->add_option("--port", a->port, "Port (0 picks a free one)")->capture_default_str()->check(CLI::Range(0, 65535));
  cmd->add_option("--persist", a->persist, "Keep sessions in this directory across restarts");
  cmd->add_option("--max-megapixels", a->max_megapixels, "Largest accepted upload")->capture_default_str();
  cmd->add_option("--max-upload-mb", a->max_upload_mb, "Largest accepted request body")->capture_default_str();
  cmd->add_option("--feather", a->options.feather_radius, "Matte feather radius (px)")->capture_default_str();
  return [=](Streams& s) {
    auto model = std::make_shared<const PlacementModel>(load_placement_model(a->ckpt));
    auto pool = std::make_shared<const CandidatePool>(CandidatePool::load(a->pool));
    ServiceOptions opts = a->options;
    opts.max_pixels = static_cast<std::int64_t>(a->max_megapixels * 1e6);
    opts.max_upload_bytes = a->max_upload_mb << 20;
    if (!a->persist.empty()) opts.persist_dir = a->persist;
    ComposeService service(model, pool, opts);
    HttpServer server(service);

    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);
    const int port = server.start(a->host, a->port);
    s.out << json{{"host", a->host}, {"port", port}}.dump() << std::endl;
    spdlog::info("serving on http://{}:{}", a->host, port);
    int received = 0;
    sigwait(&signals, &received);
    spdlog::info("signal {} received, shutting down", received);
    server.stop();
  };
}

}  // namespace

int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  if (args.empty()) args.emplace_back("compose");
  const std::string prog = fs::path(args[0]).filename().string();
  if (prog.rfind("compose-", 0) == 0) args.insert(args.begin() + 1, prog.substr(8));

  CLI::App app{"Data-driven person placement and compositing", "compose"};
  app.set_version_flag("--version", "compose 0.1.0");
  app.config_formatter(std::make_shared<JsonOrTomlConfig>());
  app.set_config("--config", "", "Read options from a JSON or TOML file; explicit flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  auto* verbose = app.add_flag("-v,--verbose", "Debug logging");
  auto* quiet = app.add_flag("-q,--quiet", "Only log warnings and errors");

  const std::vector<Action> actions{add_synth(app), add_data(app), add_net(app),  add_pool(app),
                                    add_run(app),   add_render(app), add_eval(app), add_serve(app)};

  std::vector<std::string> rest(args.begin() + 1, args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << app.version() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto* failed = app.get_subcommands().empty() ? &app : app.get_subcommands().back();
    while (!failed->get_subcommands().empty()) failed = failed->get_subcommands().back();
    err << failed->help();
    return kExitUsage;
  }

  if (verbose->count()) spdlog::set_level(spdlog::level::debug);
  if (quiet->count()) spdlog::set_level(spdlog::level::warn);

  const CLI::App* leaf = &app;
  std::string path;
  while (!leaf->get_subcommands().empty()) {
    leaf = leaf->get_subcommands().front();
    path += (path.empty() ? "" : " ") + leaf->get_name();
  }
  spdlog::info("compose {}: effective configuration\n{}", path, leaf->config_to_str(true, false));

  Streams streams{out};
  const auto top = app.get_subcommands({});
  const auto selected = std::find_if(top.begin(), top.end(), [](const CLI::App* s) { return s->parsed(); });
  const auto which = static_cast<std::size_t>(selected - top.begin());
  try {
    actions.at(which)(streams);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace compose::cli
