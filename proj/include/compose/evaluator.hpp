#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

#include "compose/geometry.hpp"
#include "compose/placement_net.hpp"
#include "compose/trainer.hpp"

namespace compose {

/// grid x grid bin counts, row-major (index = row * grid + col).
struct Histogram2D {
  int grid = kGridSize;
  std::vector<double> bins = std::vector<double>(kNumCells, 0.0);

  void add(int cell, double weight = 1.0);
  double total() const;
  friend bool operator==(const Histogram2D&, const Histogram2D&) = default;
};

struct HistogramPair {
  Histogram2D position;  // (x_stand, y_stand)
  Histogram2D size;      // (w, h)
};

HistogramPair accumulate(std::span<const NormalizedBox> boxes);

/// Pearson correlation over all bins. Throws UndefinedCorrelation when either histogram is constant
/// and InvalidArgument for mismatched grids.
double correlation(const Histogram2D& a, const Histogram2D& b);

struct CellPair {
  int location = 0;
  int size = 0;
};

struct EvaluationReport {
  std::size_t samples = 0;
  double position_correlation = 0.0;
  double size_correlation = 0.0;
  HistogramPair truth;
  HistogramPair predicted;
};

void to_json(nlohmann::json& j, const EvaluationReport& r);

/// Histograms of ground-truth and predicted cells and their correlations. Throws InvalidArgument for
/// an empty set.
EvaluationReport evaluate_cells(std::span<const CellPair> truth, std::span<const CellPair> predicted);

/// Runs the model on every example. Each example contributes its top_k location hypotheses (with the
/// top size at each) to the predicted histograms and top_k copies of its ground truth.
EvaluationReport evaluate_model(const PlacementNet& net, const ExampleSource& examples, int top_k = 1);

/// Same ground truth against cells drawn uniformly at random.
EvaluationReport evaluate_uniform_baseline(const ExampleSource& examples, std::uint64_t seed);
EvaluationReport evaluate_uniform_baseline(std::span<const CellPair> truth, std::uint64_t seed);

/// Color-mapped histogram, cell_px pixels per bin, normalized by the largest bin.
cv::Mat render_histogram(const Histogram2D& h, int cell_px = 16);

/// report.json plus position.png and size.png (ground truth left, prediction right).
void write_report(const EvaluationReport& report, const std::filesystem::path& dir);

/// Location map upsampled to the scene's square frame and cropped to the scene, JET color-mapped and
/// optionally blended over the background; the top-1 box is outlined when draw_box is set.
cv::Mat export_heatmap(const PlacementPrediction& prediction, const SquareFrame& frame,
                       const cv::Mat& background = cv::Mat(), double opacity = 0.5, bool draw_box = true);

}  // namespace compose
