#include <unistd.h>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <opencv2/imgcodecs.hpp>

#include "compose/errors.hpp"
#include "compose/evaluator.hpp"
#include "support/gradient_check.hpp"

namespace compose {
namespace {

// Single-pass textbook form in long double; shares nothing with the two-pass implementation.
double pearson_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  long double n = static_cast<long double>(a.size()), sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double x = a[i], y = b[i];
    sa += x;
    sb += y;
    saa += x * x;
    sbb += y * y;
    sab += x * y;
  }
  return static_cast<double>((n * sab - sa * sb) / std::sqrt((n * saa - sa * sa) * (n * sbb - sb * sb)));
}

Histogram2D random_histogram(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(0, 50);
  Histogram2D h;
  for (auto& b : h.bins) b = count(rng);
  return h;
}

Histogram2D one_hot(int cell) {
  Histogram2D h;
  h.add(cell);
  return h;
}

NormalizedBox random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0), s(0.01, 1.0);
  return {u(rng), u(rng), s(rng), s(rng)};
}

TEST(Accumulate, Empty) {
  const HistogramPair h = accumulate({});
  EXPECT_EQ(h.position.total(), 0.0);
  EXPECT_EQ(h.size.total(), 0.0);
  EXPECT_EQ(h.position.bins.size(), 225u);
}

TEST(Accumulate, SingleBoxHitsEncodedCells) {
  const NormalizedBox b{0.5, 0.9, 0.1, 0.3};
  const std::vector<NormalizedBox> boxes{b};
  const HistogramPair h = accumulate(boxes);
  EXPECT_EQ(h.position.total(), 1.0);
  EXPECT_EQ(h.size.total(), 1.0);
  // x_stand 0.5 -> col 7, y_stand 0.9 -> row 13; w 0.1 -> col 1, h 0.3 -> row 4
  EXPECT_EQ(h.position.bins[13 * 15 + 7], 1.0);
  EXPECT_EQ(h.size.bins[4 * 15 + 1], 1.0);
}

TEST(Accumulate, HundredCopies) {
  const std::vector<NormalizedBox> boxes(100, NormalizedBox{0.2, 0.4, 0.3, 0.6});
  const HistogramPair h = accumulate(boxes);
  EXPECT_EQ(*std::max_element(h.position.bins.begin(), h.position.bins.end()), 100.0);
  EXPECT_EQ(std::count(h.position.bins.begin(), h.position.bins.end(), 0.0), 224);
  EXPECT_EQ(*std::max_element(h.size.bins.begin(), h.size.bins.end()), 100.0);
}

TEST(Accumulate, PermutationInvariantAndAdditive) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<NormalizedBox> a, b;
    for (int i = 0; i < 40; ++i) a.push_back(random_box(rng));
    for (int i = 0; i < 25; ++i) b.push_back(random_box(rng));
    std::vector<NormalizedBox> shuffled = a;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_EQ(accumulate(a).position, accumulate(shuffled).position);
    EXPECT_EQ(accumulate(a).size, accumulate(shuffled).size);

    std::vector<NormalizedBox> ab = a;
    ab.insert(ab.end(), b.begin(), b.end());
    const HistogramPair joint = accumulate(ab), ha = accumulate(a), hb = accumulate(b);
    for (int i = 0; i < 225; ++i) {
      EXPECT_EQ(joint.position.bins[i], ha.position.bins[i] + hb.position.bins[i]);
      EXPECT_EQ(joint.size.bins[i], ha.size.bins[i] + hb.size.bins[i]);
    }
  }
}

TEST(Correlation, MatchesOracleOnRandomPairs) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const Histogram2D a = random_histogram(rng), b = random_histogram(rng);
    EXPECT_NEAR(correlation(a, b), pearson_oracle(a.bins, b.bins), 1e-9);
  }
}

TEST(Correlation, SelfScaleSymmetryAffine) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> pos(0.1, 10.0), shift(-5.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Histogram2D a = random_histogram(rng), b = random_histogram(rng);
    EXPECT_NEAR(correlation(a, a), 1.0, 1e-12);
    Histogram2D scaled = a, affine = b;
    const double c = pos(rng), m = pos(rng), k = shift(rng);
    for (auto& v : scaled.bins) v *= c;
    for (auto& v : affine.bins) v = m * v + k;
    EXPECT_NEAR(correlation(a, scaled), 1.0, 1e-12);
    EXPECT_NEAR(correlation(a, b), correlation(b, a), 1e-15);
    EXPECT_NEAR(correlation(a, affine), correlation(a, b), 1e-12);
    const double d = correlation(a, b);
    EXPECT_GE(d, -1.0);
    EXPECT_LE(d, 1.0);
  }
}

TEST(Correlation, AdjacentOneHotsClosedForm) {
  // covariance -1/n over variance 1 - 1/n
  const double n = 225.0;
  const double expected = (-1.0 / n) / (1.0 - 1.0 / n);
  EXPECT_NEAR(expected, -1.0 / 224.0, 1e-18);
  EXPECT_NEAR(correlation(one_hot(0), one_hot(1)), expected, 1e-15);
  EXPECT_NEAR(pearson_oracle(one_hot(0).bins, one_hot(1).bins), expected, 1e-15);
}

TEST(Correlation, ConstantHistogramThrows) {
  Histogram2D flat;
  for (auto& b : flat.bins) b = 4.0;
  EXPECT_THROW(correlation(flat, one_hot(3)), UndefinedCorrelation);
  EXPECT_THROW(correlation(one_hot(3), Histogram2D{}), UndefinedCorrelation);
  Histogram2D small;
  small.grid = 5;
  small.bins.assign(25, 1.0);
  small.bins[0] = 2.0;
  EXPECT_THROW(correlation(small, one_hot(0)), InvalidArgument);
}

TEST(Evaluate, OracleModelScoresOne) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> cell(0, 224);
  std::vector<CellPair> truth;
  for (int i = 0; i < 300; ++i) truth.push_back({cell(rng), cell(rng)});
  const EvaluationReport r = evaluate_cells(truth, truth);
  EXPECT_NEAR(r.position_correlation, 1.0, 1e-12);
  EXPECT_NEAR(r.size_correlation, 1.0, 1e-12);
  EXPECT_EQ(r.samples, 300u);
  EXPECT_EQ(r.truth.position.total(), 300.0);
}

TEST(Evaluate, UniformPredictorOnPeakedTruthIsNearZero) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> col(7.0, 1.0), row(11.0, 0.7), scol(2.0, 0.6), srow(6.0, 0.8);
  auto clampi = [](double v) { return std::clamp(static_cast<int>(std::lround(v)), 0, 14); };
  std::vector<CellPair> truth;
  for (int i = 0; i < 10000; ++i) {
    truth.push_back({clampi(row(rng)) * 15 + clampi(col(rng)), clampi(srow(rng)) * 15 + clampi(scol(rng))});
  }
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const EvaluationReport r = evaluate_uniform_baseline(truth, seed);
    EXPECT_LT(std::abs(r.position_correlation), 0.2) << seed;
    EXPECT_LT(std::abs(r.size_correlation), 0.2) << seed;
  }
  EXPECT_GT(evaluate_cells(truth, truth).position_correlation, 0.999);
}

TEST(Evaluate, EmptySetThrows) {
  EXPECT_THROW(evaluate_cells({}, {}), InvalidArgument);
  const InMemoryExamples none({});
  PlacementNet net(NetworkConfig::compact(), 1);
  EXPECT_THROW(evaluate_model(net, none), InvalidArgument);
}

TEST(Evaluate, ModelReportMatchesDirectPredictions) {
  PlacementNet net(NetworkConfig::compact(), 4);
  std::vector<TrainingExample> ex;
  for (int i = 0; i < 4; ++i) ex.push_back({testing::random_input(net.config(), 40 + i), 30 + i, 100 + 2 * i});
  const InMemoryExamples source(ex);
  const EvaluationReport r = evaluate_model(net, source);
  EXPECT_EQ(r.samples, 4u);
  Histogram2D pos;
  for (const auto& e : ex) pos.add(net.predict(e.input, 1, 1).location.index);
  EXPECT_EQ(r.predicted.position, pos);
  EXPECT_EQ(r.truth.position.bins[30], 1.0);

  const EvaluationReport r3 = evaluate_model(net, source, 3);
  EXPECT_EQ(r3.predicted.position.total(), 12.0);
  EXPECT_EQ(r3.truth.position.bins[30], 3.0);
}

TEST(Report, JsonAndImages) {
  std::vector<CellPair> truth{{0, 1}, {5, 6}, {5, 7}}, pred{{0, 1}, {5, 6}, {9, 9}};
  const EvaluationReport r = evaluate_cells(truth, pred);
  const auto dir = std::filesystem::temp_directory_path() / ("compose_eval_report_test_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  write_report(r, dir);
  nlohmann::json j;
  std::ifstream(dir / "report.json") >> j;
  EXPECT_EQ(j["n_samples"], 3);
  EXPECT_DOUBLE_EQ(j["position_correlation"].get<double>(), r.position_correlation);
  EXPECT_DOUBLE_EQ(j["size_correlation"].get<double>(), r.size_correlation);
  const cv::Mat png = cv::imread((dir / "position.png").string());
  EXPECT_EQ(png.rows, 15 * 16);
  EXPECT_EQ(png.cols, 2 * 15 * 16 + 8);
  std::filesystem::remove_all(dir);
}

PlacementPrediction prediction_from(const std::vector<double>& probs) {
  PlacementPrediction p;
  p.location_probabilities = probs;
  const int top = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  p.location = GridCell::from_index(top);
  p.size = GridCell::from_col_row(3, 5);
  p.boxes.push_back(decode_box(p.location, p.size));
  return p;
}

TEST(Heatmap, DimensionsFollowTheScene) {
  const SquareFrame frame = pad_to_square(300, 200);
  const cv::Mat h = export_heatmap(prediction_from(std::vector<double>(225, 1.0 / 225)), frame, cv::Mat(), 0.5, false);
  EXPECT_EQ(h.cols, 300);
  EXPECT_EQ(h.rows, 200);
  EXPECT_EQ(h.type(), CV_8UC3);
}

TEST(Heatmap, UniformMapIsFlat) {
  const SquareFrame frame = pad_to_square(150, 150);
  const cv::Mat h = export_heatmap(prediction_from(std::vector<double>(225, 1.0 / 225)), frame, cv::Mat(), 0.5, false);
  cv::Mat diff;
  cv::absdiff(h, cv::Scalar(h.at<cv::Vec3b>(0, 0)), diff);
  EXPECT_EQ(cv::countNonZero(diff.reshape(1)), 0);
}

TEST(Heatmap, CenterOneHotPeaksAtCenter) {
  std::vector<double> probs(225, 0.0);
  probs[7 * 15 + 7] = 1.0;
  const SquareFrame frame = pad_to_square(300, 300);
  const cv::Mat h = export_heatmap(prediction_from(probs), frame, cv::Mat(), 0.5, false);
  cv::Mat gray;
  cv::Mat red;
  cv::extractChannel(h, red, 2);
  // JET's hot end is red; the hottest red pixel sits in the middle cell
  cv::Point peak;
  cv::minMaxLoc(red, nullptr, nullptr, nullptr, &peak);
  EXPECT_GE(peak.x, 140);
  EXPECT_LE(peak.x, 160);
  EXPECT_GE(peak.y, 140);
  EXPECT_LE(peak.y, 160);
  // corners are cold (blue dominant)
  const cv::Vec3b corner = h.at<cv::Vec3b>(0, 0);
  EXPECT_GT(corner[0], corner[2]);
}

TEST(Heatmap, BlendsOverBackgroundAndRejectsMismatch) {
  const SquareFrame frame = pad_to_square(64, 48);
  const cv::Mat bg(48, 64, CV_8UC3, cv::Scalar(0, 0, 0));
  const auto pred = prediction_from(std::vector<double>(225, 1.0));
  const cv::Mat pure = export_heatmap(pred, frame, cv::Mat(), 0.5, false);
  const cv::Mat half = export_heatmap(pred, frame, bg, 0.5, false);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(half.at<cv::Vec3b>(10, 10)[c], pure.at<cv::Vec3b>(10, 10)[c] * 0.5, 1.0);
  EXPECT_THROW(export_heatmap(pred, frame, cv::Mat(10, 10, CV_8UC3)), InvalidArgument);
}

}  // namespace
}  // namespace compose
