#include "sparseflow/hessian.hpp"

#include "sparseflow/csv.hpp"
#include "sparseflow/error.hpp"
#include "sparseflow/rng.hpp"

#include <algorithm>
#include <cmath>
#include <bit>
#include <limits>
#include <numeric>

namespace sparseflow {
namespace {

using LinearOp = std::function<ParamVector(const ParamVector&)>;

ParamVector masked_normal(const Mask& mask, Eigen::Index n, Rng& rng) {
  ParamVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
  apply_mask_inplace(v, mask);
  return v;
}

EigenEstimate power_iteration(const LinearOp& op, ParamVector v, std::size_t iters, double tol) {
  EigenEstimate out;
  const double norm0 = v.norm();
  if (norm0 == 0.0) {
    out.vector = std::move(v);
    out.converged = true;
    return out;
  }
  v /= norm0;
  double prev = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t k = 1; k <= std::max<std::size_t>(1, iters); ++k) {
    const ParamVector w = op(v);
    const double rq = v.dot(w);
    out.value = rq;
    out.iterations = k;
    const double wn = w.norm();
    if (wn == 0.0) {
      out.vector = v;
      out.converged = true;
      return out;
    }
    if (std::abs(rq - prev) <= tol * std::max(1.0, std::abs(rq))) {
      out.vector = v;
      out.converged = true;
      return out;
    }
    prev = rq;
    v = w / wn;
  }
  out.vector = std::move(v);
  return out;
}

void check_objective(const CurvatureObjective& obj) {
  if (!obj.gradient) throw ContractError("curvature objective has no gradient");
  if (obj.mask.size() != static_cast<std::size_t>(obj.theta.size())) {
    throw ContractError("curvature objective mask does not match theta");
  }
}

}  // namespace

ParamVector hvp(const CurvatureObjective& obj, const ParamVector& v, double fd_step) {
  check_objective(obj);
  if (v.size() != obj.theta.size()) throw ContractError("hvp direction has the wrong length");
  if (!(fd_step > 0.0)) throw ContractError("fd_step must be positive");
  const double vmax = v.cwiseAbs().maxCoeff();
  if (vmax == 0.0) throw ContractError("hvp direction must be non-zero");
  const ParamVector u = apply_mask(v, obj.mask);
  const double umax = u.cwiseAbs().maxCoeff();
  if (umax == 0.0) return ParamVector::Zero(v.size());
  const double eps = fd_step * (1.0 + obj.theta.cwiseAbs().maxCoeff()) / umax;
  const ParamVector gp = obj.gradient(obj.theta + eps * u);
  const ParamVector gm = obj.gradient(obj.theta - eps * u);
  ParamVector out = (gp - gm) / (2.0 * eps);
  apply_mask_inplace(out, obj.mask);
  return out;
}

EigenEstimate top_eigenvalue(const CurvatureObjective& obj, std::size_t iters, double tol,
                             std::uint64_t seed, double fd_step) {
  check_objective(obj);
  Rng rng = make_stream(seed, Stream::hessian).split(1);
  ParamVector v0 = masked_normal(obj.mask, obj.theta.size(), rng);
  return power_iteration([&](const ParamVector& v) { return hvp(obj, v, fd_step); },
                         std::move(v0), iters, tol);
}

EigenEstimate min_eigenvalue(const CurvatureObjective& obj, double lambda_ref, std::size_t iters,
                             double tol, std::uint64_t seed, double fd_step) {
  check_objective(obj);
  Rng rng = make_stream(seed, Stream::hessian).split(2);
  ParamVector v0 = masked_normal(obj.mask, obj.theta.size(), rng);
  const Mask& mask = obj.mask;
  EigenEstimate e = power_iteration(
      [&](const ParamVector& v) {
        ParamVector out = lambda_ref * v - hvp(obj, v, fd_step);
        apply_mask_inplace(out, mask);
        return out;
      },
      std::move(v0), iters, tol * std::max(1.0, std::abs(lambda_ref)));
  e.value = lambda_ref - e.value;
  return e;
}

TraceEstimate hessian_trace(const CurvatureObjective& obj, std::size_t n_probes,
                            std::uint64_t seed, double fd_step) {
  check_objective(obj);
  if (n_probes < 2) throw ContractError("hessian_trace needs at least two probes");
  const std::size_t m = obj.mask.count();
  if (m == 0) return {};
  std::vector<std::size_t> live;
  live.reserve(m);
  for (std::size_t i = 0; i < obj.mask.size(); ++i) {
    if (obj.mask[i]) live.push_back(i);
  }
  // Probes are columns of a Sylvester-Hadamard matrix of order N >= m with a
  // random sign per row, drawn without replacement within blocks of N. Each
  // probe is a uniform Rademacher vector, and a complete block satisfies
  // sum v v^T = N I, so it returns the trace exactly.
  std::uint64_t order = 1;
  while (order < m) order <<= 1;
  Rng rng = make_stream(seed, Stream::hessian).split(3);
  const Eigen::Index n = obj.theta.size();
  std::vector<std::uint64_t> columns(order);
  std::vector<double> signs(m);
  std::vector<double> samples;
  samples.reserve(n_probes);
  for (std::size_t k = 0; k < n_probes; ++k) {
    const std::size_t slot = k % order;
    if (slot == 0) {
      std::iota(columns.begin(), columns.end(), std::uint64_t{0});
      rng.shuffle(std::span<std::uint64_t>(columns));
      for (auto& sgn : signs) sgn = rng.rademacher();
    }
    const std::uint64_t c = columns[slot];
    ParamVector v = ParamVector::Zero(n);
    for (std::size_t r = 0; r < m; ++r) {
      const double h = (std::popcount(static_cast<std::uint64_t>(r) & c) & 1) ? -1.0 : 1.0;
      v[static_cast<Eigen::Index>(live[r])] = signs[r] * h;
    }
    samples.push_back(v.dot(hvp(obj, v, fd_step)));
  }
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= static_cast<double>(n_probes);
  double var = 0.0;
  for (double s : samples) var += (s - mean) * (s - mean);
  var /= static_cast<double>(n_probes - 1);
  return {mean, std::sqrt(var / static_cast<double>(n_probes))};
}

HessianReport hessian_report(const CurvatureObjective& obj, double nll,
                             const HessianSettings& settings) {
  HessianReport r;
  r.nll = nll;
  r.n_probes = settings.n_probes;
  r.power_iters = settings.power_iters;
  r.fd_step = settings.fd_step;
  r.seed = settings.seed;

  const EigenEstimate top =
      top_eigenvalue(obj, settings.power_iters, settings.tol, settings.seed, settings.fd_step);
  r.converged = top.converged;
  const double radius = std::abs(top.value);
  if (top.value >= 0.0) {
    r.lambda_max = top.value;
  } else {
    // The dominant eigenvalue is negative: shift the spectrum up by |top| so
    // the largest algebraic eigenvalue dominates.
    Rng rng = make_stream(settings.seed, Stream::hessian).split(4);
    const EigenEstimate shifted = power_iteration(
        [&](const ParamVector& v) {
          ParamVector out = hvp(obj, v, settings.fd_step) + radius * v;
          apply_mask_inplace(out, obj.mask);
          return out;
        },
        masked_normal(obj.mask, obj.theta.size(), rng), settings.power_iters,
        settings.tol * std::max(1.0, radius));
    r.lambda_max = shifted.value - radius;
    r.converged = r.converged && shifted.converged;
  }
  const EigenEstimate low = min_eigenvalue(obj, radius, settings.power_iters, settings.tol,
                                           settings.seed, settings.fd_step);
  r.lambda_min = low.value;
  r.converged = r.converged && low.converged;
  const TraceEstimate tr = hessian_trace(obj, settings.n_probes, settings.seed, settings.fd_step);
  r.trace = tr.estimate;
  r.se_trace = tr.standard_error;
  r.kappa = r.lambda_min == 0.0 ? std::numeric_limits<double>::infinity()
                                : std::abs(r.lambda_max) / std::abs(r.lambda_min);
  return r;
}

FlowModel curvature_model(const FlowModel& model, const HessianSettings& settings) {
  FlowModel m = model;
  m.solver.method = Method::rk4;
  m.solver.fixed_step = settings.rk4_step;
  m.solver.backprop = Backprop::bptt;
  m.divergence.kind = DivergenceKind::exact;
  return m;
}

CurvatureObjective flow_objective(const FlowModel& model, const Points& batch,
                                  const HessianSettings& settings) {
  FlowModel m = curvature_model(model, settings);
  m.validate();
  CurvatureObjective obj;
  obj.theta = m.effective_params();
  obj.mask = m.mask;
  obj.gradient = [m, batch](const ParamVector& theta) {
    FlowModel local = m;
    local.params = theta;
    const ProbeSet probes = ProbeSet::unit_vectors(local.dim(), static_cast<std::size_t>(batch.cols()));
    return nll_grad_with_probes(local, batch, probes).grad;
  };
  return obj;
}

HessianReport hessian_report(const FlowModel& model, const Points& batch,
                             const HessianSettings& settings) {
  const FlowModel m = curvature_model(model, settings);
  const ProbeSet probes = ProbeSet::unit_vectors(m.dim(), static_cast<std::size_t>(batch.cols()));
  const double value = nll_grad_with_probes(m, batch, probes).loss;
  return hessian_report(flow_objective(model, batch, settings), value, settings);
}

const std::vector<std::string> kHessianColumns{"tag",        "prune_ratio", "nll",
                                               "lambda_max", "lambda_min",  "trace",
                                               "kappa",      "n_probes",    "se_trace"};

void write_hessian_csv(const std::vector<HessianRow>& rows, const std::filesystem::path& path) {
  auto emit = [&rows](const std::filesystem::path& p, const HessianReport* ref) {
    CsvWriter w(p, kHessianColumns);
    for (const auto& row : rows) {
      const auto& r = row.report;
      auto scaled = [ref](double v, double base) { return ref ? v / base : v; };
      w.field(row.tag).field(row.prune_ratio).field(r.nll);
      w.field(scaled(r.lambda_max, ref ? ref->lambda_max : 1.0));
      w.field(scaled(r.lambda_min, ref ? ref->lambda_min : 1.0));
      w.field(scaled(r.trace, ref ? ref->trace : 1.0));
      w.field(scaled(r.kappa, ref ? ref->kappa : 1.0));
      w.field(r.n_probes).field(scaled(r.se_trace, ref ? std::abs(ref->trace) : 1.0));
      w.end_row();
    }
  };
  emit(path, nullptr);
  if (rows.empty()) return;
  const auto ref = std::min_element(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.prune_ratio < b.prune_ratio;
  });
  auto norm_path = path;
  norm_path.replace_filename(path.stem().string() + "_normalized" + path.extension().string());
  emit(norm_path, &ref->report);
}

}  // namespace sparseflow
