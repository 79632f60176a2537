#pragma once

#include "sparseflow/cnf.hpp"
#include "sparseflow/net.hpp"
#include "sparseflow/rng.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace sparseflow {

enum class Optimizer { adam, adamw };

std::string_view to_string(Optimizer o);
Optimizer parse_optimizer(std::string_view name);

/// Multiply the learning rate by `multiplier` from `epoch` (0-based, within a
/// cycle) onwards. Steps compound.
struct LrStep {
  std::size_t epoch = 0;
  double multiplier = 1.0;
};

struct TrainConfig {
  Optimizer optimizer = Optimizer::adamw;
  double lr = 5e-3;
  std::vector<LrStep> lr_steps;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
  std::size_t batch_size = 1024;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;

  void validate() const;
  /// Learning rate in effect at `epoch` of a cycle.
  [[nodiscard]] double lr_at(std::size_t epoch) const;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::size_t step = 0;

  static AdamState zeros(Eigen::Index n);
};

/// One bias-corrected Adam update with step index `step` (>= 1). adamw decays
/// the weights by lr * weight_decay before the Adam delta; adam adds
/// weight_decay * theta to the gradient. Masked entries are zeroed after the
/// update. Throws TrainingError on a non-finite gradient.
void adam_step(ParamVector& params, const ParamVector& grads, AdamState& state,
               const TrainConfig& cfg, std::size_t step, double lr, const Mask* mask = nullptr);

/// Loss and masked gradient on the training rows `idx`.
using GradFn = std::function<LossGrad(const ParamVector& params, const Mask& mask,
                                      std::span<const std::size_t> idx, Rng& noise)>;

struct CycleStats {
  std::size_t n_evals = 0;
  std::size_t n_steps = 0;
  double last_epoch_loss = 0.0;
};

/// Called at the start of every epoch with the learning rate in effect.
using EpochHook = std::function<void(std::size_t epoch, double lr)>;

/// `cfg.epochs` epochs of minibatch training from a fresh optimizer state and
/// the initial learning-rate schedule. Rows are reshuffled every epoch from
/// `batching`; the last batch of an epoch may be smaller.
CycleStats train_cycle(ParamVector& params, const Mask& mask, const TrainConfig& cfg,
                       std::size_t n_train, const GradFn& grad_fn, Rng& batching, Rng& noise,
                       AdamState& state, const EpochHook& on_epoch = {});

/// Gathers the columns `idx` of `x`.
Points gather_columns(const Points& x, std::span<const std::size_t> idx);

}  // namespace sparseflow
