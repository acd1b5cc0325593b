#include "compose/compositor.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "compose/errors.hpp"

namespace compose {

namespace {

// Colors of the nearest mask pixel for every pixel outside the mask.
cv::Mat extend_colors(const cv::Mat& color, const cv::Mat& mask) {
  const cv::Mat outside = mask == 0;
  if (cv::countNonZero(outside) == 0) return color.clone();
  cv::Mat dist, labels;
  cv::distanceTransform(outside, dist, labels, cv::DIST_L2, cv::DIST_MASK_5, cv::DIST_LABEL_PIXEL);
  // label -> location of the zero (mask) pixel carrying it
  std::vector<cv::Point> seeds(static_cast<std::size_t>(mask.total()) + 1);
  for (int y = 0; y < mask.rows; ++y) {
    for (int x = 0; x < mask.cols; ++x) {
      if (mask.at<std::uint8_t>(y, x)) seeds[static_cast<std::size_t>(labels.at<int>(y, x))] = {x, y};
    }
  }
  cv::Mat out = color.clone();
  for (int y = 0; y < mask.rows; ++y) {
    for (int x = 0; x < mask.cols; ++x) {
      if (!mask.at<std::uint8_t>(y, x)) {
        out.at<cv::Vec3b>(y, x) = color.at<cv::Vec3b>(seeds[static_cast<std::size_t>(labels.at<int>(y, x))]);
      }
    }
  }
  return out;
}

}  // namespace

PlacedSegment place_segment(const SegmentRecord& segment, const PixelBox& target, int margin) {
  if (!target.valid()) throw InvalidArgument("target box must have positive size");
  if (segment.mask.empty() || segment.pixels.size() != segment.mask.size()) {
    throw InvalidArgument("segment " + std::to_string(segment.id) + " has no pixels");
  }
  const double scale = target.height() / segment.mask.rows;
  if (!(scale >= kMinScale && scale <= kMaxScale)) {
    throw InvalidArgument("scale " + std::to_string(scale) + " for segment " + std::to_string(segment.id) +
                          " is outside [0.05, 20]");
  }
  const int w = std::max(1, static_cast<int>(std::lround(segment.mask.cols * scale)));
  const int h = std::max(1, static_cast<int>(std::lround(segment.mask.rows * scale)));

  // Premultiply so transparent pixels do not bleed into the resampled edge.
  cv::Mat alpha, color, premult;
  segment.mask.convertTo(alpha, CV_32F, 1.0 / 255.0);
  segment.pixels.convertTo(color, CV_32FC3);
  cv::Mat alpha3;
  cv::merge(std::vector<cv::Mat>{alpha, alpha, alpha}, alpha3);
  cv::multiply(color, alpha3, premult);
  cv::Mat alpha_s, premult_s;
  cv::resize(alpha, alpha_s, {w, h}, 0, 0, cv::INTER_LINEAR);
  cv::resize(premult, premult_s, {w, h}, 0, 0, cv::INTER_LINEAR);

  cv::Mat mask_s = alpha_s >= 0.5f;
  if (cv::countNonZero(mask_s) == 0) {
    // tiny downscales can lose every pixel; keep the strongest one
    cv::Point peak;
    cv::minMaxLoc(alpha_s, nullptr, nullptr, nullptr, &peak);
    mask_s.at<std::uint8_t>(peak) = 255;
  }
  cv::Mat color_s(h, w, CV_8UC3, cv::Scalar::all(0));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float a = alpha_s.at<float>(y, x);
      if (a <= 0.0f) continue;
      const cv::Vec3f p = premult_s.at<cv::Vec3f>(y, x) / a;
      color_s.at<cv::Vec3b>(y, x) = cv::Vec3b(cv::saturate_cast<std::uint8_t>(p[0]), cv::saturate_cast<std::uint8_t>(p[1]),
                                              cv::saturate_cast<std::uint8_t>(p[2]));
    }
  }

  PlacedSegment placed;
  placed.scale = scale;
  placed.mask = cv::Mat(h + 2 * margin, w + 2 * margin, CV_8UC1, cv::Scalar(0));
  mask_s.copyTo(placed.mask(cv::Rect(margin, margin, w, h)));
  cv::Mat canvas(placed.mask.size(), CV_8UC3, cv::Scalar::all(0));
  color_s.copyTo(canvas(cv::Rect(margin, margin, w, h)));
  placed.color = extend_colors(canvas, placed.mask);

  const double cx = target.center_x(), cy = target.center_y();
  const int x0 = static_cast<int>(std::lround(cx - w / 2.0));
  const int y0 = static_cast<int>(std::lround(cy - h / 2.0));
  placed.box = {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x0 + w),
                static_cast<double>(y0 + h)};
  placed.origin = {x0 - margin, y0 - margin};
  return placed;
}

cv::Mat feather_matte(const cv::Mat& mask, double radius) {
  if (mask.empty() || mask.type() != CV_8UC1) throw InvalidArgument("feather_matte expects an 8-bit mask");
  if (!(radius >= 0.0)) throw InvalidArgument("feather radius must be non-negative");
  const cv::Mat inside = mask != 0;
  cv::Mat alpha;
  if (radius == 0.0) {
    inside.convertTo(alpha, CV_64F, 1.0 / 255.0);
    return alpha;
  }
  cv::Mat d_in, d_out;
  cv::distanceTransform(inside, d_in, cv::DIST_L2, cv::DIST_MASK_PRECISE, CV_32F);
  cv::distanceTransform(~inside, d_out, cv::DIST_L2, cv::DIST_MASK_PRECISE, CV_32F);
  const bool any_outside = cv::countNonZero(~inside) > 0;
  const bool any_inside = cv::countNonZero(inside) > 0;
  alpha.create(mask.size(), CV_64F);
  for (int y = 0; y < mask.rows; ++y) {
    for (int x = 0; x < mask.cols; ++x) {
      // the boundary lies half a pixel from the nearest center across it
      double sd;
      if (inside.at<std::uint8_t>(y, x)) {
        sd = any_outside ? d_in.at<float>(y, x) - 0.5 : radius;
      } else {
        sd = any_inside ? -(d_out.at<float>(y, x) - 0.5) : -radius;
      }
      alpha.at<double>(y, x) = std::clamp(0.5 + sd / (2.0 * radius), 0.0, 1.0);
    }
  }
  return alpha;
}

cv::Mat blend(const cv::Mat& background, const cv::Mat& foreground, const cv::Mat& matte, cv::Point origin) {
  if (background.type() != CV_8UC3 || foreground.type() != CV_8UC3 || matte.type() != CV_64FC1 ||
      foreground.size() != matte.size()) {
    throw InvalidArgument("blend expects 8-bit BGR images and a matching CV_64F matte");
  }
  cv::Mat out = background.clone();
  const cv::Rect region = cv::Rect(origin, foreground.size()) & cv::Rect(0, 0, background.cols, background.rows);
  for (int y = region.y; y < region.y + region.height; ++y) {
    for (int x = region.x; x < region.x + region.width; ++x) {
      const double a = matte.at<double>(y - origin.y, x - origin.x);
      if (a <= 0.0) continue;
      const cv::Vec3b f = foreground.at<cv::Vec3b>(y - origin.y, x - origin.x);
      if (a >= 1.0) {
        out.at<cv::Vec3b>(y, x) = f;
        continue;
      }
      cv::Vec3b& o = out.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) o[c] = cv::saturate_cast<std::uint8_t>(std::floor(a * f[c] + (1.0 - a) * o[c] + 0.5));
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const Provenance& p) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& e : p.placements) {
    list.push_back({{"segment_id", e.segment_id},
                    {"box", {e.box.x_min, e.box.y_min, e.box.width(), e.box.height()}},
                    {"scale", e.scale}});
  }
  j = {{"feather_radius", p.feather_radius}, {"placements", list}};
}

void from_json(const nlohmann::json& j, Provenance& p) {
  p.feather_radius = j.value("feather_radius", kDefaultFeatherRadius);
  p.placements.clear();
  for (const auto& e : j.at("placements")) {
    const auto& b = e.at("box");
    p.placements.push_back({e.at("segment_id").get<std::int64_t>(),
                            PixelBox::from_xywh(b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                                                b.at(3).get<double>()),
                            e.value("scale", 1.0)});
  }
}

std::vector<MattedPlacement> prepare_placements(cv::Size background, const CompositeSpec& spec,
                                                const CandidatePool& pool, Provenance* provenance) {
  if (provenance) {
    provenance->feather_radius = spec.feather_radius;
    provenance->placements.clear();
  }
  const int margin = static_cast<int>(std::ceil(spec.feather_radius)) + 1;
  std::vector<MattedPlacement> out;
  for (const auto& p : spec.placements) {
    const SegmentRecord* seg = pool.find(p.segment_id);
    if (!seg) throw InvalidArgument("unknown segment id " + std::to_string(p.segment_id));
    const PixelBox box = clip_box(p.box, background.width, background.height);
    if (!box.valid()) {
      throw InvalidArgument("placement box for segment " + std::to_string(p.segment_id) +
                            " is empty inside the background");
    }
    PlacedSegment placed = place_segment(*seg, box, margin);
    cv::Mat alpha = feather_matte(placed.mask, spec.feather_radius);
    if (provenance) provenance->placements.push_back({p.segment_id, box, placed.scale});
    out.push_back({std::move(placed), std::move(alpha)});
  }
  return out;
}

CompositeResult compose(const cv::Mat& background, const CompositeSpec& spec, const CandidatePool& pool) {
  if (background.empty() || background.type() != CV_8UC3) throw InvalidArgument("background must be an 8-bit BGR image");
  CompositeResult result;
  result.image = background.clone();
  for (const auto& m : prepare_placements(background.size(), spec, pool, &result.provenance)) {
    result.image = blend(result.image, m.segment.color, m.alpha, m.segment.origin);
  }
  return result;
}

cv::Mat render_silhouette(const cv::Mat& background, const CompositeSpec& spec, const CandidatePool& pool) {
  if (background.empty() || background.type() != CV_8UC3) throw InvalidArgument("background must be an 8-bit BGR image");
  cv::Mat out = background.clone();
  const cv::Rect bounds(0, 0, background.cols, background.rows);
  for (const auto& m : prepare_placements(background.size(), spec, pool)) {
    for (int y = 0; y < m.alpha.rows; ++y) {
      for (int x = 0; x < m.alpha.cols; ++x) {
        const cv::Point q = m.segment.origin + cv::Point(x, y);
        if (m.alpha.at<double>(y, x) > 0.5 && bounds.contains(q)) out.at<cv::Vec3b>(q) = cv::Vec3b(255, 255, 255);
      }
    }
  }
  return out;
}

CompositeResult recompose(const cv::Mat& background, const Provenance& provenance, const CandidatePool& pool) {
  CompositeSpec spec;
  spec.feather_radius = provenance.feather_radius;
  for (const auto& e : provenance.placements) spec.placements.push_back({e.segment_id, e.box});
  return compose(background, spec, pool);
}

std::uint64_t image_hash(const cv::Mat& image) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::uint8_t b) {
    h ^= b;
    h *= 1099511628211ull;
  };
  for (int v : {image.rows, image.cols, image.type()}) {
    for (int k = 0; k < 4; ++k) mix(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  const cv::Mat c = image.isContinuous() ? image : image.clone();
  const auto* p = c.ptr<std::uint8_t>();
  for (std::size_t i = 0; i < c.total() * c.elemSize(); ++i) mix(p[i]);
  return h;
}

}  // namespace compose
