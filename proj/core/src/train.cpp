#include "sparseflow/train.hpp"

#include "sparseflow/error.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace sparseflow {

std::string_view to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "adamw"; }

Optimizer parse_optimizer(std::string_view name) {
  if (name == "adam") return Optimizer::adam;
  if (name == "adamw") return Optimizer::adamw;
  throw ContractError("unknown optimizer '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ContractError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ContractError("beta1 and beta2 must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ContractError("eps must be positive");
  if (!(weight_decay >= 0.0)) throw ContractError("weight_decay must be non-negative");
  if (batch_size < 1) throw ContractError("batch_size must be at least 1");
  if (epochs < 1) throw ContractError("epochs must be at least 1");
  for (const auto& s : lr_steps) {
    if (!(s.multiplier > 0.0)) throw ContractError("lr step multipliers must be positive");
  }
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double out = lr;
  for (const auto& s : lr_steps) {
    if (epoch >= s.epoch) out *= s.multiplier;
  }
  return out;
}

AdamState AdamState::zeros(Eigen::Index n) {
  return AdamState{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0};
}

void adam_step(ParamVector& params, const ParamVector& grads, AdamState& state,
               const TrainConfig& cfg, std::size_t step, double lr, const Mask* mask) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ContractError("adam_step: parameter, gradient and state sizes differ");
  }
  if (step < 1) throw ContractError("adam_step: step index starts at 1");
  if (!grads.allFinite()) {
    throw TrainingError("non-finite gradient at optimizer step " + std::to_string(step));
  }
  Eigen::VectorXd g = grads;
  if (cfg.optimizer == Optimizer::adam && cfg.weight_decay > 0.0) g += cfg.weight_decay * params;
  if (cfg.optimizer == Optimizer::adamw && cfg.weight_decay > 0.0) {
    params *= 1.0 - lr * cfg.weight_decay;
  }
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g.cwiseAbs2();
  state.step = step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  params.array() -= lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + cfg.eps);
  if (mask != nullptr) apply_mask_inplace(params, *mask);
}

CycleStats train_cycle(ParamVector& params, const Mask& mask, const TrainConfig& cfg,
                       std::size_t n_train, const GradFn& grad_fn, Rng& batching, Rng& noise,
                       AdamState& state, const EpochHook& on_epoch) {
  cfg.validate();
  if (n_train == 0) throw ContractError("training set is empty");
  state = AdamState::zeros(params.size());
  std::vector<std::size_t> order(n_train);
  CycleStats stats;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    if (on_epoch) on_epoch(epoch, lr);
    std::iota(order.begin(), order.end(), std::size_t{0});
    batching.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n_train - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      LossGrad lg = grad_fn(params, mask, idx, noise);
      if (!std::isfinite(lg.loss)) {
        throw TrainingError("non-finite loss at optimizer step " + std::to_string(step + 1));
      }
      adam_step(params, lg.grad, state, cfg, ++step, lr, &mask);
      stats.n_evals += lg.n_evals;
      loss_sum += lg.loss * static_cast<double>(len);
      seen += len;
    }
    stats.last_epoch_loss = loss_sum / static_cast<double>(seen);
  }
  stats.n_steps = step;
  return stats;
}

Points gather_columns(const Points& x, std::span<const std::size_t> idx) {
  Points out(x.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    out.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(idx[j]));
  }
  return out;
}

}  // namespace sparseflow
