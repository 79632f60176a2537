#pragma once

#include "sparseflow/net.hpp"
#include "sparseflow/odeint.hpp"
#include "sparseflow/rng.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace sparseflow {

/// Point sets are stored column-wise: D x N, one column per point.
using Points = Eigen::MatrixXd;

enum class DivergenceKind { exact, hutchinson };
enum class NoiseKind { rademacher, gaussian };

std::string_view to_string(DivergenceKind k);
std::string_view to_string(NoiseKind k);
DivergenceKind parse_divergence_kind(std::string_view name);
NoiseKind parse_noise_kind(std::string_view name);

struct DivergenceMode {
  DivergenceKind kind = DivergenceKind::hutchinson;
  NoiseKind noise = NoiseKind::rademacher;
  std::size_t probes_per_sample = 1;

  void validate() const;
};

/// Augmented CNF state: position and the accumulated log-density change.
struct AugState {
  Eigen::VectorXd z;
  double delta_logp = 0.0;
};

/// A continuous normalizing flow with a standard normal base at t0 and data
/// at t1. Density evaluation integrates backward, sampling forward.
struct FlowModel {
  MlpSpec spec;
  ParamVector params;
  Mask mask;
  SolverConfig solver;
  DivergenceMode divergence;

  static FlowModel create(const MlpSpec& spec, std::uint64_t seed, const SolverConfig& solver,
                          const DivergenceMode& divergence = {});

  void validate() const;
  [[nodiscard]] ParamVector effective_params() const { return apply_mask(params, mask); }
  [[nodiscard]] std::size_t dim() const { return spec.data_dim(); }
};

/// Neural ODE dz/dt = f(z, t) over a batch. The state vector is the D x B
/// batch matrix in column-major order.
class NeuralOdeSystem : public OdeSystem {
 public:
  NeuralOdeSystem(const MlpSpec& spec, const ParamVector& params, Eigen::Index batch);

  [[nodiscard]] Eigen::Index state_dim() const override { return dim_ * batch_; }
  [[nodiscard]] Eigen::Index param_dim() const override { return params_.size(); }

  void rhs(double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) override;
  void vjp(double t, const Eigen::VectorXd& y, const Eigen::VectorXd& cot, Eigen::VectorXd& grad_y,
           Eigen::Ref<Eigen::VectorXd> grad_params) override;
  void rhs_and_vjp(double t, const Eigen::VectorXd& y, const Eigen::VectorXd& cot,
                   Eigen::VectorXd& dy, Eigen::VectorXd& grad_y,
                   Eigen::Ref<Eigen::VectorXd> grad_params) override;

 private:
  MlpBatch net_;
  ParamVector params_;
  Eigen::Index dim_;
  Eigen::Index batch_;
  Eigen::MatrixXd f_, gz_;
};

/// The CNF augmented dynamics over a batch. State layout: [vec(Z); delta],
/// Z is D x B column-major, delta has B entries, d(delta)/dt = -div.
class CnfSystem : public OdeSystem {
 public:
  CnfSystem(const MlpSpec& spec, const ParamVector& params, const ProbeSet& probes,
            Eigen::Index batch);

  [[nodiscard]] Eigen::Index state_dim() const override { return (dim_ + 1) * batch_; }
  [[nodiscard]] Eigen::Index param_dim() const override { return params_.size(); }

  void rhs(double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) override;
  void vjp(double t, const Eigen::VectorXd& y, const Eigen::VectorXd& cot, Eigen::VectorXd& grad_y,
           Eigen::Ref<Eigen::VectorXd> grad_params) override;
  void rhs_and_vjp(double t, const Eigen::VectorXd& y, const Eigen::VectorXd& cot,
                   Eigen::VectorXd& dy, Eigen::VectorXd& grad_y,
                   Eigen::Ref<Eigen::VectorXd> grad_params) override;

  /// Packs points (D x B) and a zero log-density change into a state vector.
  [[nodiscard]] Eigen::VectorXd pack(const Points& x) const;

 private:
  void eval(double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy);
  void pull(const Eigen::VectorXd& cot, Eigen::VectorXd& grad_y,
            Eigen::Ref<Eigen::VectorXd> grad_params);

  MlpBatch net_;
  ParamVector params_;
  ProbeSet probes_;
  Eigen::Index dim_;
  Eigen::Index batch_;
  Eigen::MatrixXd f_, gz_;
  Eigen::VectorXd div_, cot_div_, scratch_dy_;
};

/// Draws the fixed Hutchinson probes for one solve (or unit vectors in exact
/// mode). Each probe is D x B; K probes carry weight 1/K.
ProbeSet make_probes(const DivergenceMode& mode, std::size_t dim, std::size_t batch, Rng& noise);

/// d(AugState)/dt for one sample. Hutchinson mode requires `noise`; exact
/// mode ignores it.
AugState augmented_dynamics(const FlowModel& model, const AugState& state, double t,
                            const Eigen::VectorXd* noise = nullptr);

/// log p(x) with exact divergence. Points are solved jointly in chunks of
/// `chunk` columns.
Eigen::VectorXd log_prob_batch(const FlowModel& model, const Points& x, std::size_t chunk = 1024);
double log_prob(const FlowModel& model, const Eigen::VectorXd& x);

/// -mean log p over the batch, exact divergence. Throws on an empty batch.
double nll(const FlowModel& model, const Points& batch, std::size_t chunk = 1024);

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;  // masked
  std::size_t n_evals = 0;
};

/// NLL and its gradient w.r.t. params under model.divergence and
/// model.solver. Hutchinson probes are drawn from `noise`, once per sample
/// per solve.
LossGrad nll_grad(const FlowModel& model, const Points& batch, Rng& noise);
/// Same with caller-supplied probes.
LossGrad nll_grad_with_probes(const FlowModel& model, const Points& batch, const ProbeSet& probes);

/// n draws z0 ~ N(0, I) from the sampling stream of `seed`, pushed to t1.
Points sample(const FlowModel& model, std::size_t n, std::uint64_t seed);
/// Integrates z from t0 to t1 (latent to data).
Points push_forward(const FlowModel& model, const Points& z0, std::size_t chunk = 4096);
/// Integrates x from t1 to t0 (data to latent).
Points pull_back(const FlowModel& model, const Points& x, std::size_t chunk = 4096);

}  // namespace sparseflow
