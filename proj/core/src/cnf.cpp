#include "sparseflow/cnf.hpp"

#include "sparseflow/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace sparseflow {
namespace {

using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;

double log_normalizer(Eigen::Index dim) {
  return 0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi);
}

void check_points(const FlowModel& model, const Points& x) {
  if (x.rows() != static_cast<Eigen::Index>(model.dim())) {
    throw ContractError("points have dimension " + std::to_string(x.rows()) + ", flow expects " +
                        std::to_string(model.dim()));
  }
}

// Solves the flow ODE (no density term) column chunk by column chunk.
Points integrate_points(const FlowModel& model, const Points& x, const SolverConfig& cfg,
                        std::size_t chunk) {
  model.validate();
  check_points(model, x);
  const ParamVector eff = model.effective_params();
  const Eigen::Index dim = x.rows();
  const Eigen::Index n = x.cols();
  const auto step = static_cast<Eigen::Index>(std::max<std::size_t>(1, chunk));
  Points out(dim, n);
  for (Eigen::Index start = 0; start < n; start += step) {
    const Eigen::Index b = std::min(step, n - start);
    NeuralOdeSystem sys(model.spec, eff, b);
    Eigen::VectorXd y0 = Eigen::Map<const Eigen::VectorXd>(x.col(start).data(), dim * b);
    VectorField g = [&sys](double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
      sys.rhs(t, y, dy);
    };
    auto r = integrate(g, y0, cfg);
    out.middleCols(start, b) = ConstMatrixMap(r.y1.data(), dim, b);
  }
  return out;
}

}  // namespace

std::string_view to_string(DivergenceKind k) {
  return k == DivergenceKind::exact ? "exact" : "hutchinson";
}

std::string_view to_string(NoiseKind k) {
  return k == NoiseKind::rademacher ? "rademacher" : "gaussian";
}

DivergenceKind parse_divergence_kind(std::string_view name) {
  if (name == "exact") return DivergenceKind::exact;
  if (name == "hutchinson") return DivergenceKind::hutchinson;
  throw ContractError("unknown divergence kind '" + std::string(name) + "'");
}

NoiseKind parse_noise_kind(std::string_view name) {
  if (name == "rademacher") return NoiseKind::rademacher;
  if (name == "gaussian") return NoiseKind::gaussian;
  throw ContractError("unknown noise kind '" + std::string(name) + "'");
}

void DivergenceMode::validate() const {
  if (probes_per_sample < 1) throw ContractError("probes_per_sample must be at least 1");
}

FlowModel FlowModel::create(const MlpSpec& spec, std::uint64_t seed, const SolverConfig& solver,
                            const DivergenceMode& divergence) {
  FlowModel m;
  m.spec = spec;
  m.params = mlp_init(spec, seed);
  m.mask = Mask::ones(static_cast<std::size_t>(m.params.size()));
  m.solver = solver;
  m.divergence = divergence;
  m.validate();
  return m;
}

void FlowModel::validate() const {
  spec.validate();
  const ParamLayout layout(spec);
  if (static_cast<std::size_t>(params.size()) != layout.size()) {
    throw ContractError("flow parameter vector does not match its network spec");
  }
  if (mask.size() != layout.size()) throw ContractError("flow mask does not match its network spec");
  solver.validate();
  divergence.validate();
}

NeuralOdeSystem::NeuralOdeSystem(const MlpSpec& spec, const ParamVector& params, Eigen::Index batch)
    : net_(spec),
      params_(params),
      dim_(static_cast<Eigen::Index>(spec.data_dim())),
      batch_(batch) {}

void NeuralOdeSystem::rhs(double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
  net_.forward(params_, ConstMatrixMap(y.data(), dim_, batch_), t, f_);
  dy = Eigen::Map<const Eigen::VectorXd>(f_.data(), f_.size());
}

void NeuralOdeSystem::vjp(double t, const Eigen::VectorXd& y, const Eigen::VectorXd& cot,
                          Eigen::VectorXd& grad_y, Eigen::Ref<Eigen::VectorXd> grad_params) {
  net_.forward(params_, ConstMatrixMap(y.data(), dim_, batch_), t, f_);
  net_.backward(params_, ConstMatrixMap(cot.data(), dim_, batch_), nullptr, gz_, grad_params);
  grad_y = Eigen::Map<const Eigen::VectorXd>(gz_.data(), gz_.size());
}

void NeuralOdeSystem::rhs_and_vjp(double t, const Eigen::VectorXd& y, const Eigen::VectorXd& cot,
                                  Eigen::VectorXd& dy, Eigen::VectorXd& grad_y,
                                  Eigen::Ref<Eigen::VectorXd> grad_params) {
  net_.forward(params_, ConstMatrixMap(y.data(), dim_, batch_), t, f_);
  dy = Eigen::Map<const Eigen::VectorXd>(f_.data(), f_.size());
  net_.backward(params_, ConstMatrixMap(cot.data(), dim_, batch_), nullptr, gz_, grad_params);
  grad_y = Eigen::Map<const Eigen::VectorXd>(gz_.data(), gz_.size());
}

CnfSystem::CnfSystem(const MlpSpec& spec, const ParamVector& params, const ProbeSet& probes,
                     Eigen::Index batch)
    : net_(spec),
      params_(params),
      probes_(probes),
      dim_(static_cast<Eigen::Index>(spec.data_dim())),
      batch_(batch) {
  if (probes_.empty()) throw ContractError("CNF dynamics need at least one divergence probe");
  for (const auto& p : probes_.directions) {
    if (p.rows() != dim_ || p.cols() != batch_) throw ContractError("probe shape mismatch");
  }
}

Eigen::VectorXd CnfSystem::pack(const Points& x) const {
  if (x.rows() != dim_ || x.cols() != batch_) throw ContractError("batch shape mismatch");
  Eigen::VectorXd y(state_dim());
  y.head(dim_ * batch_) = Eigen::Map<const Eigen::VectorXd>(x.data(), dim_ * batch_);
  y.tail(batch_).setZero();
  return y;
}

void CnfSystem::eval(double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
  net_.forward_with_divergence(params_, ConstMatrixMap(y.data(), dim_, batch_), t, probes_, f_,
                               div_);
  dy.resize(state_dim());
  dy.head(dim_ * batch_) = Eigen::Map<const Eigen::VectorXd>(f_.data(), f_.size());
  dy.tail(batch_) = -div_;
}

void CnfSystem::pull(const Eigen::VectorXd& cot, Eigen::VectorXd& grad_y,
                     Eigen::Ref<Eigen::VectorXd> grad_params) {
  cot_div_ = -cot.tail(batch_);
  net_.backward(params_, ConstMatrixMap(cot.data(), dim_, batch_), &cot_div_, gz_, grad_params);
  grad_y.resize(state_dim());
  grad_y.head(dim_ * batch_) = Eigen::Map<const Eigen::VectorXd>(gz_.data(), gz_.size());
  grad_y.tail(batch_).setZero();
}

void CnfSystem::rhs(double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) { eval(t, y, dy); }

void CnfSystem::vjp(double t, const Eigen::VectorXd& y, const Eigen::VectorXd& cot,
                    Eigen::VectorXd& grad_y, Eigen::Ref<Eigen::VectorXd> grad_params) {
  eval(t, y, scratch_dy_);
  pull(cot, grad_y, grad_params);
}

void CnfSystem::rhs_and_vjp(double t, const Eigen::VectorXd& y, const Eigen::VectorXd& cot,
                            Eigen::VectorXd& dy, Eigen::VectorXd& grad_y,
                            Eigen::Ref<Eigen::VectorXd> grad_params) {
  eval(t, y, dy);
  pull(cot, grad_y, grad_params);
}

ProbeSet make_probes(const DivergenceMode& mode, std::size_t dim, std::size_t batch, Rng& noise) {
  mode.validate();
  if (mode.kind == DivergenceKind::exact) return ProbeSet::unit_vectors(dim, batch);
  ProbeSet set;
  const double w = 1.0 / static_cast<double>(mode.probes_per_sample);
  for (std::size_t k = 0; k < mode.probes_per_sample; ++k) {
    Eigen::MatrixXd e(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(batch));
    double* p = e.data();
    for (Eigen::Index i = 0; i < e.size(); ++i) {
      p[i] = mode.noise == NoiseKind::rademacher ? noise.rademacher() : noise.normal();
    }
    set.directions.push_back(std::move(e));
    set.weights.push_back(w);
  }
  return set;
}

AugState augmented_dynamics(const FlowModel& model, const AugState& state, double t,
                            const Eigen::VectorXd* noise) {
  model.validate();
  const auto dim = static_cast<Eigen::Index>(model.dim());
  if (state.z.size() != dim) throw ContractError("state dimension mismatch");
  ProbeSet probes;
  if (model.divergence.kind == DivergenceKind::exact) {
    probes = ProbeSet::unit_vectors(model.dim(), 1);
  } else {
    if (noise == nullptr) throw ContractError("hutchinson divergence needs a noise vector");
    if (noise->size() != dim) throw ContractError("noise dimension mismatch");
    probes.directions.emplace_back(*noise);
    probes.weights.push_back(1.0);
  }
  MlpBatch net(model.spec);
  Eigen::MatrixXd f;
  Eigen::VectorXd div;
  net.forward_with_divergence(model.effective_params(), state.z, t, probes, f, div);
  return AugState{f.col(0), -div[0]};
}

Eigen::VectorXd log_prob_batch(const FlowModel& model, const Points& x, std::size_t chunk) {
  model.validate();
  check_points(model, x);
  const ParamVector eff = model.effective_params();
  const Eigen::Index dim = x.rows();
  const Eigen::Index n = x.cols();
  const auto step = static_cast<Eigen::Index>(std::max<std::size_t>(1, chunk));
  const SolverConfig cfg = model.solver.reversed();
  Eigen::VectorXd out(n);
  for (Eigen::Index start = 0; start < n; start += step) {
    const Eigen::Index b = std::min(step, n - start);
    const ProbeSet probes = ProbeSet::unit_vectors(model.dim(), static_cast<std::size_t>(b));
    CnfSystem sys(model.spec, eff, probes, b);
    VectorField g = [&sys](double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
      sys.rhs(t, y, dy);
    };
    auto r = integrate(g, sys.pack(x.middleCols(start, b)), cfg);
    const ConstMatrixMap z0(r.y1.data(), dim, b);
    out.segment(start, b) =
        -0.5 * z0.colwise().squaredNorm().transpose().array() - log_normalizer(dim) -
        r.y1.tail(b).array();
  }
  return out;
}

double log_prob(const FlowModel& model, const Eigen::VectorXd& x) {
  return log_prob_batch(model, x, 1)[0];
}

double nll(const FlowModel& model, const Points& batch, std::size_t chunk) {
  if (batch.cols() == 0) throw ContractError("nll of an empty batch");
  return -log_prob_batch(model, batch, chunk).mean();
}

LossGrad nll_grad_with_probes(const FlowModel& model, const Points& batch, const ProbeSet& probes) {
  model.validate();
  check_points(model, batch);
  if (batch.cols() == 0) throw ContractError("nll_grad of an empty batch");
  const Eigen::Index dim = batch.rows();
  const Eigen::Index b = batch.cols();
  CnfSystem sys(model.spec, model.effective_params(), probes, b);
  const double inv_b = 1.0 / static_cast<double>(b);

  auto loss = [&](const Eigen::VectorXd& y1, Eigen::VectorXd& cot) {
    const ConstMatrixMap z0(y1.data(), dim, b);
    const double value = (0.5 * z0.colwise().squaredNorm().sum() + y1.tail(b).sum()) * inv_b +
                         log_normalizer(dim);
    cot.resize(y1.size());
    cot.head(dim * b) = inv_b * y1.head(dim * b);
    cot.tail(b).setConstant(inv_b);
    return value;
  };
  auto r = value_and_grad(sys, sys.pack(batch), model.solver.reversed(), loss);

  LossGrad out;
  out.loss = r.value;
  out.grad = std::move(r.grads.grad_params);
  apply_mask_inplace(out.grad, model.mask);
  out.n_evals = r.forward_evals + r.grads.n_evals;
  return out;
}

LossGrad nll_grad(const FlowModel& model, const Points& batch, Rng& noise) {
  const ProbeSet probes =
      make_probes(model.divergence, model.dim(), static_cast<std::size_t>(batch.cols()), noise);
  return nll_grad_with_probes(model, batch, probes);
}

Points sample(const FlowModel& model, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ContractError("sample count must be at least 1");
  Rng rng = make_stream(seed, Stream::sampling);
  Points z0(static_cast<Eigen::Index>(model.dim()), static_cast<Eigen::Index>(n));
  double* p = z0.data();
  for (Eigen::Index i = 0; i < z0.size(); ++i) p[i] = rng.normal();
  return push_forward(model, z0);
}

Points push_forward(const FlowModel& model, const Points& z0, std::size_t chunk) {
  return integrate_points(model, z0, model.solver, chunk);
}

Points pull_back(const FlowModel& model, const Points& x, std::size_t chunk) {
  return integrate_points(model, x, model.solver.reversed(), chunk);
}

}  // namespace sparseflow
