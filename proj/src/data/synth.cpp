#include "compose/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "compose/coco.hpp"
#include "compose/errors.hpp"
#include "compose/image_ops.hpp"

namespace compose {

namespace fs = std::filesystem;

namespace {

struct Theme {
  cv::Scalar sky, ground;
};

// beach, park, plaza (BGR)
const Theme kThemes[] = {{{235, 206, 135}, {130, 200, 238}},
                         {{250, 230, 200}, {60, 150, 70}},
                         {{200, 200, 200}, {110, 110, 120}}};

double clamped_normal(std::mt19937_64& rng, double mean, double stddev, double lo, double hi) {
  std::normal_distribution<double> d(mean, stddev);
  return std::clamp(d(rng), lo, hi);
}

cv::Scalar jitter(const cv::Scalar& c, std::mt19937_64& rng, int amount) {
  std::uniform_int_distribution<int> d(-amount, amount);
  return {std::clamp(c[0] + d(rng), 0.0, 255.0), std::clamp(c[1] + d(rng), 0.0, 255.0),
          std::clamp(c[2] + d(rng), 0.0, 255.0)};
}

SynthObject object_from_mask(int category, cv::Mat mask) {
  const auto bounds = mask_bounds(mask);
  if (!bounds) throw InvalidArgument("synthetic object has an empty mask");
  return {category, *bounds, std::move(mask)};
}

nlohmann::json polygon_of(const cv::Mat& mask) {
  std::vector<std::vector<cv::Point>> contours;
  cv::findContours(mask.clone(), contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_NONE);
  nlohmann::json polys = nlohmann::json::array();
  for (const auto& c : contours) {
    nlohmann::json poly = nlohmann::json::array();
    for (const auto& p : c) {
      poly.push_back(p.x);
      poly.push_back(p.y);
    }
    if (c.size() >= 3) polys.push_back(poly);
  }
  return polys;
}

}  // namespace

SynthScene generate_scene(std::mt19937_64& rng, const SynthOptions& o) {
  const double W = o.width, H = o.height;
  SynthScene s;
  std::uniform_int_distribution<int> theme_pick(0, 2);
  s.theme = theme_pick(rng);
  const Theme& theme = kThemes[s.theme];

  const double person_h = std::round(clamped_normal(rng, 0.42 * H, 0.04 * H, 0.34 * H, 0.52 * H));
  const double person_w = std::round(0.4 * person_h);
  const double min_ground = person_h + 22.0;
  s.ground_y = std::round(clamped_normal(rng, 0.77 * H, 0.05 * H, std::max(0.62 * H, min_ground), 0.89 * H));

  s.image = cv::Mat(o.height, o.width, CV_8UC3);
  const int horizon = static_cast<int>(s.ground_y);
  s.image(cv::Rect(0, 0, o.width, horizon)).setTo(jitter(theme.sky, rng, 20));
  s.image(cv::Rect(0, horizon, o.width, o.height - horizon)).setTo(jitter(theme.ground, rng, 20));
  cv::Mat noisy;
  s.image.convertTo(noisy, CV_16SC3);
  cv::Mat noise(s.image.size(), CV_16SC3);
  cv::randn(noise, cv::Scalar::all(0), cv::Scalar::all(6));
  noisy += noise;
  noisy.convertTo(s.image, CV_8UC3);

  const double bench_w = std::round(0.6 * person_h);
  const double bench_h = std::round(0.5 * person_h);
  const double gap = 4.0;
  const double min_cx = person_w / 2 + gap + bench_w + 4.0;
  const double max_cx = W - person_w / 2 - 22.0;
  const double cx = std::round(clamped_normal(rng, 0.58 * W, 0.1 * W, min_cx, max_cx));

  // Bench.
  const double bx1 = cx - person_w / 2 - gap;
  const double bx0 = bx1 - bench_w;
  cv::Mat bench_mask(s.image.size(), CV_8UC1, cv::Scalar(0));
  const cv::Rect bench_rect(static_cast<int>(bx0), static_cast<int>(s.ground_y - bench_h), static_cast<int>(bench_w),
                            static_cast<int>(bench_h));
  bench_mask(bench_rect).setTo(255);
  s.image.setTo(jitter({40, 70, 120}, rng, 15), bench_mask);
  s.objects.push_back(object_from_mask(kBenchCategory, bench_mask));

  if (o.with_person) {
    cv::Mat mask(s.image.size(), CV_8UC1, cv::Scalar(0));
    const double top = s.ground_y - person_h;
    const double head_r = std::round(0.12 * person_h);
    const cv::Point head(static_cast<int>(cx), static_cast<int>(top + head_r));
    cv::circle(mask, head, static_cast<int>(head_r), cv::Scalar(255), cv::FILLED);
    const double body_top = top + 2 * head_r - 1;
    const cv::Point body_center(static_cast<int>(cx), static_cast<int>((body_top + s.ground_y) / 2));
    const cv::Size axes(static_cast<int>(person_w / 2), static_cast<int>((s.ground_y - body_top) / 2));
    cv::ellipse(mask, body_center, axes, 0, 0, 360, cv::Scalar(255), cv::FILLED);
    std::uniform_int_distribution<int> shade(20, 235);
    s.image.setTo(cv::Scalar(shade(rng), shade(rng), shade(rng)), mask);
    s.objects.push_back(object_from_mask(kPersonCategory, mask));
  }
  return s;
}

void write_synthetic_coco(const fs::path& dir, const SynthOptions& options) {
  if (options.images < 1) throw InvalidArgument("synthetic dataset needs at least one image");
  fs::create_directories(dir / "images");
  std::mt19937_64 rng(options.seed);
  nlohmann::json images = nlohmann::json::array();
  nlohmann::json annotations = nlohmann::json::array();
  std::int64_t ann_id = 1;
  for (int i = 0; i < options.images; ++i) {
    const SynthScene scene = generate_scene(rng, options);
    char name[32];
    std::snprintf(name, sizeof name, "synth_%06d.png", i + 1);
    write_image(dir / "images" / name, scene.image);
    images.push_back({{"id", i + 1}, {"file_name", name}, {"width", options.width}, {"height", options.height}});
    for (const auto& obj : scene.objects) {
      annotations.push_back({{"id", ann_id++},
                             {"image_id", i + 1},
                             {"category_id", obj.category},
                             {"bbox", {obj.box.x_min, obj.box.y_min, obj.box.width(), obj.box.height()}},
                             {"area", cv::countNonZero(obj.mask)},
                             {"iscrowd", 0},
                             {"segmentation", polygon_of(obj.mask)}});
    }
  }
  const nlohmann::json doc{{"images", images},
                           {"annotations", annotations},
                           {"categories",
                            {{{"id", kPersonCategory}, {"name", "person"}},
                             {{"id", kCarCategory}, {"name", "car"}},
                             {{"id", kBenchCategory}, {"name", "bench"}}}}};
  std::ofstream out(dir / "annotations.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "annotations.json").string());
  out << doc.dump() << '\n';
}

}  // namespace compose
