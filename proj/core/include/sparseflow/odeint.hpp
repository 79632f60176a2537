#pragma once

#include "sparseflow/error.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <string_view>

namespace sparseflow {

enum class Method { euler, rk4, dopri5 };
enum class Backprop { bptt, adjoint };

std::string_view to_string(Method m);
std::string_view to_string(Backprop b);
Method parse_method(std::string_view name);
Backprop parse_backprop(std::string_view name);

struct SolverConfig {
  Method method = Method::dopri5;
  double t0 = 0.0;
  double t1 = 1.0;
  double fixed_step = 0.05;  // euler / rk4
  double rtol = 1e-5;        // dopri5
  double atol = 1e-5;        // dopri5
  std::size_t max_steps = 10000;
  Backprop backprop = Backprop::adjoint;

  void validate() const;
  /// Same solver over [t1, t0].
  [[nodiscard]] SolverConfig reversed() const;
  [[nodiscard]] bool fixed_step_method() const { return method != Method::dopri5; }
};

/// Integration failed at time `time()`: step budget exhausted, step size
/// underflow, or a non-finite state.
class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, double t);
  [[nodiscard]] double time() const { return t_; }

 private:
  double t_;
};

/// A solver/gradient combination that is not defined, e.g. BPTT through dopri5.
class UnsupportedCombination : public ContractError {
 public:
  using ContractError::ContractError;
};

using VectorField = std::function<void(double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy)>;

struct IntegrateResult {
  Eigen::VectorXd y1;
  std::size_t n_evals = 0;
  std::size_t n_accepted = 0;
  std::size_t n_rejected = 0;
};

struct IntegrateOptions {
  /// Only the leading `norm_components` entries enter the dopri5 error norm
  /// (all entries when negative).
  Eigen::Index norm_components = -1;
};

/// Solves y' = g(t, y), y(t0) = y0 up to t1. Fixed-step methods take
/// ceil(|t1 - t0| / fixed_step) equal steps. dopri5 uses the 5(4) embedded
/// pair with a PI step controller and the mixed RMS error norm
///   sqrt(mean((err_i / (atol + rtol * max(|y_i|, |y_new_i|)))^2)).
IntegrateResult integrate(const VectorField& g, const Eigen::VectorXd& y0,
                          const SolverConfig& cfg, const IntegrateOptions& opts = {});

/// A parametrised vector field g(t, y; theta) that can pull cotangents back
/// through itself.
class OdeSystem {
 public:
  virtual ~OdeSystem() = default;

  [[nodiscard]] virtual Eigen::Index state_dim() const = 0;
  [[nodiscard]] virtual Eigen::Index param_dim() const = 0;

  virtual void rhs(double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) = 0;

  /// grad_y = cot^T dg/dy (overwritten); grad_params += cot^T dg/dtheta.
  virtual void vjp(double t, const Eigen::VectorXd& y, const Eigen::VectorXd& cot,
                   Eigen::VectorXd& grad_y, Eigen::Ref<Eigen::VectorXd> grad_params) = 0;

  /// rhs and vjp at the same point. Override when they can share work.
  virtual void rhs_and_vjp(double t, const Eigen::VectorXd& y, const Eigen::VectorXd& cot,
                           Eigen::VectorXd& dy, Eigen::VectorXd& grad_y,
                           Eigen::Ref<Eigen::VectorXd> grad_params);
};

struct Gradients {
  Eigen::VectorXd grad_y0;
  Eigen::VectorXd grad_params;
  std::size_t n_evals = 0;  // backward-pass evaluations
};

/// Scalar loss of the terminal state. Returns the value and writes dL/dy1.
using TerminalLoss = std::function<double(const Eigen::VectorXd& y1, Eigen::VectorXd& cot)>;

struct ValueAndGrad {
  double value = 0.0;
  Eigen::VectorXd y1;
  Gradients grads;
  std::size_t forward_evals = 0;
};

/// Forward solve, loss, and gradient through the path selected by cfg.backprop.
ValueAndGrad value_and_grad(OdeSystem& sys, const Eigen::VectorXd& y0, const SolverConfig& cfg,
                            const TerminalLoss& loss);

/// Exact reverse-mode derivative of the discrete fixed-step solver map.
Gradients backprop_bptt(OdeSystem& sys, const Eigen::VectorXd& y0, const SolverConfig& cfg,
                        const Eigen::VectorXd& cot_y1);

/// Adjoint sensitivities: solves forward, then integrates [y, a, g_theta]
/// from t1 back to t0 with da/dt = -a^T dg/dy, dg_theta/dt = -a^T dg/dtheta.
Gradients backprop_adjoint(OdeSystem& sys, const Eigen::VectorXd& y0, const SolverConfig& cfg,
                           const Eigen::VectorXd& cot_y1);

/// The backward half of backprop_adjoint, starting from a known y(t1).
Gradients adjoint_from_terminal(OdeSystem& sys, const Eigen::VectorXd& y1,
                                const SolverConfig& cfg, const Eigen::VectorXd& cot_y1);

}  // namespace sparseflow
