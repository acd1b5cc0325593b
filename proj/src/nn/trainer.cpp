#include "compose/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "compose/errors.hpp"
#include "compose/nn/layers.hpp"

namespace compose {

namespace {

class SgdMomentum : public Optimizer {
 public:
  SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::vector<nn::Tensor>& params, const std::vector<nn::Tensor>& grads, double lr) override {
    if (velocity_.empty()) {
      for (const auto& p : params) velocity_.emplace_back(p.shape());
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k];
      auto& v = velocity_[k];
      const auto& g = grads[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = momentum_ * v[i] + g[i] + weight_decay_ * p[i];
        p[i] -= lr * v[i];
      }
    }
  }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<nn::Tensor> velocity_;
};

class Adam : public Optimizer {
 public:
  explicit Adam(double weight_decay) : weight_decay_(weight_decay) {}

  void step(std::vector<nn::Tensor>& params, const std::vector<nn::Tensor>& grads, double lr) override {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.shape());
        v_.emplace_back(p.shape());
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k];
      const auto& g = grads[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i] + weight_decay_ * p[i];
        m_[k][i] = kBeta1 * m_[k][i] + (1 - kBeta1) * gi;
        v_[k][i] = kBeta2 * v_[k][i] + (1 - kBeta2) * gi * gi;
        p[i] -= lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + kEps);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double weight_decay_;
  int t_ = 0;
  std::vector<nn::Tensor> m_, v_;
};

const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd_momentum"; }

}  // namespace

void to_json(nlohmann::json& j, const TrainingHyperparams& h) {
  j = {{"epochs", h.epochs},
       {"batch_size", h.batch_size},
       {"learning_rate", h.learning_rate},
       {"momentum", h.momentum},
       {"optimizer", optimizer_name(h.optimizer)},
       {"lr_step_epochs", h.lr_step_epochs},
       {"lr_decay", h.lr_decay},
       {"weight_decay", h.weight_decay},
       {"seed", h.seed}};
}

void from_json(const nlohmann::json& j, TrainingHyperparams& h) {
  const TrainingHyperparams d;
  h.epochs = j.value("epochs", d.epochs);
  h.batch_size = j.value("batch_size", d.batch_size);
  h.learning_rate = j.value("learning_rate", d.learning_rate);
  h.momentum = j.value("momentum", d.momentum);
  const std::string opt = j.value("optimizer", std::string(optimizer_name(d.optimizer)));
  if (opt == "adam") {
    h.optimizer = OptimizerKind::Adam;
  } else if (opt == "sgd_momentum" || opt == "sgd") {
    h.optimizer = OptimizerKind::SgdMomentum;
  } else {
    throw InvalidArgument("unknown optimizer '" + opt + "'");
  }
  h.lr_step_epochs = j.value("lr_step_epochs", d.lr_step_epochs);
  h.lr_decay = j.value("lr_decay", d.lr_decay);
  h.weight_decay = j.value("weight_decay", d.weight_decay);
  h.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const EpochMetrics& m) {
  j = {{"epoch", m.epoch},
       {"learning_rate", m.learning_rate},
       {"loss_location", m.loss_location},
       {"loss_size", m.loss_size},
       {"loss_total", m.loss_total()},
       {"top1_location", m.top1_location},
       {"top5_location", m.top5_location},
       {"top1_size", m.top1_size},
       {"top5_size", m.top5_size}};
}

std::unique_ptr<Optimizer> make_optimizer(const TrainingHyperparams& h) {
  if (h.optimizer == OptimizerKind::Adam) return std::make_unique<Adam>(h.weight_decay);
  return std::make_unique<SgdMomentum>(h.momentum, h.weight_decay);
}

bool in_top_k(std::span<const double> logits, int target, int k) {
  const double t = logits[static_cast<std::size_t>(target)];
  int better = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const int idx = static_cast<int>(i);
    if (logits[i] > t || (logits[i] == t && idx < target)) ++better;
  }
  return better < k;
}

Trainer::Trainer(PlacementNet& net, TrainingHyperparams hyperparams)
    : net_(net), hp_(hyperparams), optimizer_(make_optimizer(hp_)), grads_(net.zero_gradients()) {
  if (hp_.epochs < 1 || hp_.batch_size < 1 || !(hp_.learning_rate > 0.0)) {
    throw InvalidArgument("trainer: epochs, batch size and learning rate must be positive");
  }
}

double Trainer::learning_rate_for(int epoch) const {
  if (hp_.lr_step_epochs <= 0) return hp_.learning_rate;
  return hp_.learning_rate * std::pow(hp_.lr_decay, epoch / hp_.lr_step_epochs);
}

EpochMetrics Trainer::run_epoch(const ExampleSource& source, int epoch) {
  const std::size_t n = source.size();
  if (n == 0) throw InvalidArgument("trainer: empty example source");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(hp_.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);

  EpochMetrics m;
  m.epoch = epoch;
  m.learning_rate = learning_rate_for(epoch);
  const int grid = net_.config().grid_size;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(hp_.batch_size)) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(hp_.batch_size));
    const double weight = 1.0 / static_cast<double>(end - start);
    for (auto& g : grads_) g.fill(0.0);
    for (std::size_t b = start; b < end; ++b) {
      const TrainingExample ex = source.get(order[b]);
      const auto state = net_.forward(ex.input, GridCell::from_index(ex.location_target, grid));
      const LossBreakdown loss = net_.backward(state, ex.location_target, ex.size_target, grads_, weight);
      if (!std::isfinite(loss.total())) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", example " +
                              std::to_string(order[b]) + ": loss is " + std::to_string(loss.total()) +
                              " (learning rate " + std::to_string(m.learning_rate) + ")");
      }
      m.loss_location += loss.location;
      m.loss_size += loss.size;
      m.top1_location += in_top_k(state.location_map.values(), ex.location_target, 1);
      m.top5_location += in_top_k(state.location_map.values(), ex.location_target, 5);
      m.top1_size += in_top_k(state.size_logits.values(), ex.size_target, 1);
      m.top5_size += in_top_k(state.size_logits.values(), ex.size_target, 5);
    }
    optimizer_->step(net_.parameters(), grads_, m.learning_rate);
  }
  const double inv = 1.0 / static_cast<double>(n);
  m.loss_location *= inv;
  m.loss_size *= inv;
  m.top1_location *= inv;
  m.top5_location *= inv;
  m.top1_size *= inv;
  m.top5_size *= inv;
  return m;
}

std::vector<EpochMetrics> Trainer::train(const ExampleSource& source, std::ostream* metrics_log,
                                         const std::function<void(const EpochMetrics&)>& on_epoch) {
  if (metrics_log) {
    *metrics_log << nlohmann::json{{"network", net_.config()},
                                   {"hyperparams", hp_},
                                   {"init_seed", net_.seed()},
                                   {"examples", source.size()}}
                        .dump()
                 << '\n';
  }
  std::vector<EpochMetrics> history;
  for (int epoch = 0; epoch < hp_.epochs; ++epoch) {
    history.push_back(run_epoch(source, epoch));
    if (metrics_log) *metrics_log << nlohmann::json(history.back()).dump() << '\n' << std::flush;
    if (on_epoch) on_epoch(history.back());
  }
  return history;
}

}  // namespace compose
