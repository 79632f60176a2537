#pragma once

#include "sparseflow/cnf.hpp"
#include "sparseflow/net.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace sparseflow {

using GradientFn = std::function<ParamVector(const ParamVector& theta)>;

/// A smooth scalar objective seen through its exact gradient, evaluated at
/// theta. Masked coordinates are removed from every curvature query.
struct CurvatureObjective {
  GradientFn gradient;
  ParamVector theta;
  Mask mask;
};

/// H v by central differences of the gradient with
/// eps = fd_step * (1 + |theta|_inf) / |v|_inf. Input and output are masked.
/// Throws ContractError for v = 0.
ParamVector hvp(const CurvatureObjective& obj, const ParamVector& v, double fd_step);

struct EigenEstimate {
  double value = 0.0;
  ParamVector vector;
  std::size_t iterations = 0;
  /// False when `iters` ran out before successive Rayleigh quotients agreed
  /// to within tol * max(1, |value|); `value` is then the last estimate.
  bool converged = false;
};

/// Power iteration on H from a masked Gaussian start: the eigenvalue of
/// largest magnitude, with its sign.
EigenEstimate top_eigenvalue(const CurvatureObjective& obj, std::size_t iters, double tol,
                             std::uint64_t seed, double fd_step = 1e-4);

/// Power iteration on v -> lambda_ref v - H v; returns lambda_ref minus its
/// dominant eigenvalue, i.e. the smallest eigenvalue of H when lambda_ref is
/// at least the spectral radius.
EigenEstimate min_eigenvalue(const CurvatureObjective& obj, double lambda_ref, std::size_t iters,
                             double tol, std::uint64_t seed, double fd_step = 1e-4);

struct TraceEstimate {
  double estimate = 0.0;
  double standard_error = 0.0;
};

/// Hutchinson estimate of tr(H) over masked Rademacher probes. Probes come in
/// orthogonal blocks of N >= unmasked count; a full block is exact.
TraceEstimate hessian_trace(const CurvatureObjective& obj, std::size_t n_probes,
                            std::uint64_t seed, double fd_step = 1e-4);

struct HessianSettings {
  double fd_step = 1e-4;
  std::size_t power_iters = 300;
  double tol = 1e-6;
  std::size_t n_probes = 100;
  std::uint64_t seed = 0;
  /// RK4 step of the curvature objective.
  double rk4_step = 0.05;
};

struct HessianReport {
  double nll = 0.0;
  double lambda_max = 0.0;
  double lambda_min = 0.0;
  double trace = 0.0;
  double se_trace = 0.0;
  /// |lambda_max| / |lambda_min|.
  double kappa = 0.0;
  std::size_t n_probes = 0;
  std::size_t power_iters = 0;
  double fd_step = 0.0;
  std::uint64_t seed = 0;
  bool converged = true;
};

/// The report for an arbitrary objective whose value at theta is `nll`.
HessianReport hessian_report(const CurvatureObjective& obj, double nll,
                             const HessianSettings& settings);

/// The NLL objective of `model` on `batch` with exact divergence, fixed-step
/// RK4 (settings.rk4_step) and backprop through the steps, so the objective
/// is deterministic and smooth in theta.
CurvatureObjective flow_objective(const FlowModel& model, const Points& batch,
                                  const HessianSettings& settings);
FlowModel curvature_model(const FlowModel& model, const HessianSettings& settings);

HessianReport hessian_report(const FlowModel& model, const Points& batch,
                             const HessianSettings& settings);

struct HessianRow {
  std::string tag;
  double prune_ratio = 0.0;
  HessianReport report;
};

extern const std::vector<std::string> kHessianColumns;

/// Writes `rows` to `path` and a copy with lambda_max, lambda_min, trace and
/// kappa divided by the row with the smallest prune ratio to
/// <stem>_normalized.csv.
void write_hessian_csv(const std::vector<HessianRow>& rows, const std::filesystem::path& path);

}  // namespace sparseflow
