#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "compose/placement_net.hpp"

namespace compose {

struct TrainingExample {
  nn::Tensor input;
  int location_target = 0;
  int size_target = 0;
};

/// Random-access source of training examples; lets large manifests stream from disk.
class ExampleSource {
 public:
  virtual ~ExampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual TrainingExample get(std::size_t index) const = 0;
};

class InMemoryExamples : public ExampleSource {
 public:
  explicit InMemoryExamples(std::vector<TrainingExample> examples) : examples_(std::move(examples)) {}
  std::size_t size() const override { return examples_.size(); }
  TrainingExample get(std::size_t index) const override { return examples_.at(index); }

 private:
  std::vector<TrainingExample> examples_;
};

enum class OptimizerKind { SgdMomentum, Adam };

struct TrainingHyperparams {
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  OptimizerKind optimizer = OptimizerKind::SgdMomentum;
  int lr_step_epochs = 10;  // multiply the rate by lr_decay every lr_step_epochs
  double lr_decay = 0.1;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;  // shuffling
};

void to_json(nlohmann::json& j, const TrainingHyperparams& h);
void from_json(const nlohmann::json& j, TrainingHyperparams& h);

struct EpochMetrics {
  int epoch = 0;
  double learning_rate = 0.0;
  double loss_location = 0.0;
  double loss_size = 0.0;
  double top1_location = 0.0;
  double top5_location = 0.0;
  double top1_size = 0.0;
  double top5_size = 0.0;

  double loss_total() const { return loss_location + loss_size; }
};

void to_json(nlohmann::json& j, const EpochMetrics& m);

/// Parameter update rule with per-parameter state.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::vector<nn::Tensor>& params, const std::vector<nn::Tensor>& grads, double lr) = 0;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainingHyperparams& h);

/// Mini-batch trainer minimizing the sum of both heads' cross-entropy. The size head is always
/// trained on the slice at the ground-truth location cell.
class Trainer {
 public:
  Trainer(PlacementNet& net, TrainingHyperparams hyperparams);

  double learning_rate_for(int epoch) const;

  /// One pass over the source in a seeded shuffled order. Metrics are measured on the fly, before
  /// each batch's update. Throws DivergenceError on a non-finite loss.
  EpochMetrics run_epoch(const ExampleSource& source, int epoch);

  /// Runs all epochs; writes a header line and one JSON line per epoch to metrics_log when given.
  std::vector<EpochMetrics> train(const ExampleSource& source, std::ostream* metrics_log = nullptr,
                                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

 private:
  PlacementNet& net_;
  TrainingHyperparams hp_;
  std::unique_ptr<Optimizer> optimizer_;
  std::vector<nn::Tensor> grads_;
};

/// Fraction of examples whose target lies in the top-k of the logits.
bool in_top_k(std::span<const double> logits, int target, int k);

}  // namespace compose
