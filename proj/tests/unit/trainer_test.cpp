#include <unistd.h>

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "compose/checkpoint.hpp"
#include "compose/errors.hpp"
#include "compose/trainer.hpp"
#include "support/gradient_check.hpp"

namespace compose {
namespace {

std::vector<TrainingExample> random_examples(const NetworkConfig& c, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> cls(0, c.num_location_classes() - 1);
  std::vector<TrainingExample> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({testing::random_input(c, seed + static_cast<std::uint64_t>(i) + 1), cls(rng), cls(rng)});
  }
  return out;
}

TEST(Trainer, SingleSampleLossDecreases) {
  PlacementNet net(NetworkConfig::tiny(), 1);
  TrainingHyperparams hp;
  hp.epochs = 60;
  hp.batch_size = 1;
  hp.optimizer = OptimizerKind::Adam;
  hp.lr_step_epochs = 0;
  Trainer trainer(net, hp);
  const InMemoryExamples source(random_examples(net.config(), 1, 2));
  const auto history = trainer.train(source);
  const int warmup = 5;
  for (std::size_t e = warmup + 1; e < history.size(); ++e) {
    EXPECT_LE(history[e].loss_total(), history[e - 1].loss_total() + 1e-9) << "epoch " << e;
  }
  EXPECT_LT(history.back().loss_total(), 0.05);
}

TEST(Trainer, MetricsLogHasHeaderAndOneLinePerEpoch) {
  PlacementNet net(NetworkConfig::tiny(), 3);
  TrainingHyperparams hp;
  hp.epochs = 3;
  hp.batch_size = 2;
  Trainer trainer(net, hp);
  const InMemoryExamples source(random_examples(net.config(), 4, 4));
  std::stringstream log;
  trainer.train(source, &log);
  std::string line;
  std::vector<nlohmann::json> lines;
  while (std::getline(log, line)) lines.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0]["hyperparams"]["optimizer"], "sgd_momentum");
  EXPECT_EQ(lines[0]["hyperparams"]["batch_size"], 2);
  EXPECT_EQ(lines[3]["epoch"], 2);
  EXPECT_TRUE(lines[1].contains("top5_size"));
}

TEST(Trainer, NonFiniteLossAborts) {
  PlacementNet net(NetworkConfig::tiny(), 5);
  auto examples = random_examples(net.config(), 2, 6);
  examples[1].input[0] = std::numeric_limits<double>::quiet_NaN();
  TrainingHyperparams hp;
  hp.epochs = 1;
  Trainer trainer(net, hp);
  EXPECT_THROW(trainer.train(InMemoryExamples(examples)), DivergenceError);
}

TEST(Trainer, StepDecaySchedule) {
  PlacementNet net(NetworkConfig::tiny(), 5);
  TrainingHyperparams hp;
  hp.learning_rate = 1e-3;
  hp.lr_step_epochs = 10;
  hp.lr_decay = 0.1;
  const Trainer trainer(net, hp);
  EXPECT_DOUBLE_EQ(trainer.learning_rate_for(9), 1e-3);
  EXPECT_NEAR(trainer.learning_rate_for(10), 1e-4, 1e-18);
  EXPECT_NEAR(trainer.learning_rate_for(25), 1e-5, 1e-18);
}

TEST(Trainer, InTopK) {
  const std::vector<double> logits{0.1, 0.9, 0.5, 0.5};
  EXPECT_TRUE(in_top_k(logits, 1, 1));
  EXPECT_FALSE(in_top_k(logits, 2, 1));
  EXPECT_TRUE(in_top_k(logits, 2, 2));
  EXPECT_FALSE(in_top_k(logits, 3, 2));  // tie resolved toward the lower index
}

TEST(Checkpoint, RoundTripPreservesWeightsAndPredictions) {
  const PlacementNet net(NetworkConfig::compact(), 77);
  const auto path = std::filesystem::temp_directory_path() / ("compose_ckpt_test_" + std::to_string(::getpid()) + ".bin");
  save_checkpoint(net, path, {{"note", "unit"}});
  const auto loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.net.config(), net.config());
  EXPECT_EQ(loaded.net.seed(), 77u);
  EXPECT_EQ(loaded.metadata["note"], "unit");
  for (std::size_t i = 0; i < net.parameters().size(); ++i) EXPECT_EQ(loaded.net.parameters()[i], net.parameters()[i]);
  const auto input = testing::random_input(net.config(), 1);
  EXPECT_EQ(loaded.net.predict(input, 2, 2).location_probabilities, net.predict(input, 2, 2).location_probabilities);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsForeignFile) {
  const auto path = std::filesystem::temp_directory_path() / ("compose_not_ckpt_" + std::to_string(::getpid()) + ".bin");
  {
    std::ofstream out(path);
    out << "definitely not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(path), IoError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace compose
