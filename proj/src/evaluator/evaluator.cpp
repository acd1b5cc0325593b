#include "compose/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <opencv2/imgproc.hpp>

#include "compose/errors.hpp"
#include "compose/image_ops.hpp"

namespace compose {

void Histogram2D::add(int cell, double weight) {
  if (cell < 0 || cell >= grid * grid) throw InvalidArgument("histogram cell out of range");
  bins[static_cast<std::size_t>(cell)] += weight;
}

double Histogram2D::total() const {
  double t = 0.0;
  for (double b : bins) t += b;
  return t;
}

HistogramPair accumulate(std::span<const NormalizedBox> boxes) {
  HistogramPair h;
  for (const auto& b : boxes) {
    h.position.add(encode_cell(b.x_stand, b.y_stand).index);
    h.size.add(encode_cell(b.w, b.h).index);
  }
  return h;
}

double correlation(const Histogram2D& a, const Histogram2D& b) {
  if (a.bins.size() != b.bins.size()) throw InvalidArgument("histograms have different bin counts");
  const double n = static_cast<double>(a.bins.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.bins.size(); ++i) {
    ma += a.bins[i];
    mb += b.bins[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.bins.size(); ++i) {
    const double da = a.bins[i] - ma, db = b.bins[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw UndefinedCorrelation("correlation is undefined for a constant histogram");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

void to_json(nlohmann::json& j, const EvaluationReport& r) {
  j = {{"position_correlation", r.position_correlation},
       {"size_correlation", r.size_correlation},
       {"n_samples", r.samples},
       {"histograms",
        {{"truth_position", r.truth.position.bins},
         {"truth_size", r.truth.size.bins},
         {"predicted_position", r.predicted.position.bins},
         {"predicted_size", r.predicted.size.bins}}}};
}

EvaluationReport evaluate_cells(std::span<const CellPair> truth, std::span<const CellPair> predicted) {
  if (truth.empty() || predicted.empty()) throw InvalidArgument("evaluation set is empty");
  EvaluationReport r;
  r.samples = truth.size();
  for (const auto& c : truth) {
    r.truth.position.add(c.location);
    r.truth.size.add(c.size);
  }
  for (const auto& c : predicted) {
    r.predicted.position.add(c.location);
    r.predicted.size.add(c.size);
  }
  r.position_correlation = correlation(r.truth.position, r.predicted.position);
  r.size_correlation = correlation(r.truth.size, r.predicted.size);
  return r;
}

EvaluationReport evaluate_model(const PlacementNet& net, const ExampleSource& examples, int top_k) {
  if (examples.size() == 0) throw InvalidArgument("evaluation set is empty");
  if (top_k < 1) throw InvalidArgument("top_k must be at least 1");
  std::vector<CellPair> truth, predicted;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const TrainingExample ex = examples.get(i);
    const PlacementPrediction p = net.predict(ex.input, top_k, 1);
    for (const auto& h : p.hypotheses) {
      predicted.push_back({h.cell.index, h.sizes.front().cell.index});
      truth.push_back({ex.location_target, ex.size_target});
    }
  }
  EvaluationReport r = evaluate_cells(truth, predicted);
  r.samples = examples.size();
  return r;
}

EvaluationReport evaluate_uniform_baseline(std::span<const CellPair> truth, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> cell(0, kNumCells - 1);
  std::vector<CellPair> predicted;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int loc = cell(rng);
    predicted.push_back({loc, cell(rng)});
  }
  return evaluate_cells(truth, predicted);
}

EvaluationReport evaluate_uniform_baseline(const ExampleSource& examples, std::uint64_t seed) {
  std::vector<CellPair> truth;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const TrainingExample ex = examples.get(i);
    truth.push_back({ex.location_target, ex.size_target});
  }
  return evaluate_uniform_baseline(truth, seed);
}

cv::Mat render_histogram(const Histogram2D& h, int cell_px) {
  const double peak = *std::max_element(h.bins.begin(), h.bins.end());
  cv::Mat gray(h.grid, h.grid, CV_8UC1);
  for (int i = 0; i < h.grid * h.grid; ++i) {
    gray.at<std::uint8_t>(i / h.grid, i % h.grid) =
        peak > 0 ? cv::saturate_cast<std::uint8_t>(255.0 * h.bins[static_cast<std::size_t>(i)] / peak) : 0;
  }
  cv::Mat big, color;
  cv::resize(gray, big, {h.grid * cell_px, h.grid * cell_px}, 0, 0, cv::INTER_NEAREST);
  cv::applyColorMap(big, color, cv::COLORMAP_JET);
  return color;
}

void write_report(const EvaluationReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "report.json", std::ios::trunc) << nlohmann::json(report).dump(1) << '\n';
  auto pair = [](const Histogram2D& a, const Histogram2D& b) {
    cv::Mat out;
    const cv::Mat gap(a.grid * 16, 8, CV_8UC3, cv::Scalar::all(255));
    cv::hconcat(std::vector<cv::Mat>{render_histogram(a), gap, render_histogram(b)}, out);
    return out;
  };
  write_image(dir / "position.png", pair(report.truth.position, report.predicted.position));
  write_image(dir / "size.png", pair(report.truth.size, report.predicted.size));
}

cv::Mat export_heatmap(const PlacementPrediction& prediction, const SquareFrame& frame, const cv::Mat& background,
                       double opacity, bool draw_box) {
  const int g = prediction.grid;
  if (static_cast<int>(prediction.location_probabilities.size()) != g * g) {
    throw InvalidArgument("prediction has no location map");
  }
  const double peak = *std::max_element(prediction.location_probabilities.begin(), prediction.location_probabilities.end());
  cv::Mat map(g, g, CV_32F);
  for (int i = 0; i < g * g; ++i) {
    map.at<float>(i / g, i % g) = static_cast<float>(prediction.location_probabilities[static_cast<std::size_t>(i)] / peak);
  }
  cv::Mat up, gray, color;
  cv::resize(map, up, {frame.side, frame.side}, 0, 0, cv::INTER_LINEAR);
  up.convertTo(gray, CV_8U, 255.0);
  cv::applyColorMap(gray, color, cv::COLORMAP_JET);
  cv::Mat out = color(cv::Rect(frame.offset_x, frame.offset_y, frame.width, frame.height)).clone();
  if (!background.empty()) {
    if (background.size() != out.size() || background.type() != CV_8UC3) {
      throw InvalidArgument("heatmap background does not match the scene");
    }
    cv::addWeighted(out, opacity, background, 1.0 - opacity, 0.0, out);
  }
  if (draw_box && !prediction.boxes.empty()) {
    const PixelBox b = denormalize_box(prediction.top_box(), frame);
    cv::rectangle(out, cv::Point(static_cast<int>(std::lround(b.x_min)), static_cast<int>(std::lround(b.y_min))),
                  cv::Point(static_cast<int>(std::lround(b.x_max)) - 1, static_cast<int>(std::lround(b.y_max)) - 1),
                  cv::Scalar(255, 255, 255), 2);
  }
  return out;
}

}  // namespace compose
