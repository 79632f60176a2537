#include "sparseflow/odeint.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace sparseflow {
namespace {

// Dormand-Prince 5(4) tableau (FSAL: stage 7 is evaluated at the new point).
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                 a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

constexpr double kMinStep = 1e-8;
constexpr double kSafety = 0.9;
constexpr double kBeta = 0.04;
constexpr double kExpo = 0.2 - kBeta * 0.75;
constexpr double kMaxShrink = 1.0 / 0.2;  // hnew >= h / 5
constexpr double kMaxGrow = 1.0 / 10.0;   // hnew <= 10 h

std::string at_time(const std::string& what, double t) {
  std::ostringstream os;
  os << what << " at t = " << t;
  return os.str();
}

void require_finite(const Eigen::VectorXd& y, double t) {
  if (!y.allFinite()) throw IntegrationError("non-finite state", t);
}

double rms_norm(const Eigen::VectorXd& v, const Eigen::VectorXd& y, double atol, double rtol,
                Eigen::Index n) {
  const auto scale = atol + rtol * y.head(n).array().abs();
  return std::sqrt((v.head(n).array() / scale).square().mean());
}

std::size_t fixed_step_count(const SolverConfig& cfg) {
  const double span = std::abs(cfg.t1 - cfg.t0);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(span / cfg.fixed_step - 1e-9)));
}

// Hairer's automatic initial step.
double initial_step(const VectorField& g, double t0, const Eigen::VectorXd& y0,
                    const Eigen::VectorXd& f0, double direction, const SolverConfig& cfg,
                    Eigen::Index n, std::size_t& evals) {
  const double d0 = rms_norm(y0, y0, cfg.atol, cfg.rtol, n);
  const double d1 = rms_norm(f0, y0, cfg.atol, cfg.rtol, n);
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  const Eigen::VectorXd y1 = y0 + direction * h0 * f0;
  Eigen::VectorXd f1(y0.size());
  g(t0 + direction * h0, y1, f1);
  ++evals;
  const double d2 = rms_norm(f1 - f0, y0, cfg.atol, cfg.rtol, n) / h0;
  const double dmax = std::max(d1, d2);
  const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dmax, 1.0 / 5.0);
  return std::min(100.0 * h0, h1);
}

IntegrateResult integrate_fixed(const VectorField& g, const Eigen::VectorXd& y0,
                                const SolverConfig& cfg) {
  const std::size_t n = fixed_step_count(cfg);
  const double h = (cfg.t1 - cfg.t0) / static_cast<double>(n);
  if (n > cfg.max_steps) throw IntegrationError("fixed-step count exceeds max_steps", cfg.t0);
  IntegrateResult r;
  Eigen::VectorXd y = y0;
  const auto dim = y0.size();
  Eigen::VectorXd k1(dim), k2(dim), k3(dim), k4(dim), tmp(dim);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = cfg.t0 + static_cast<double>(i) * h;
    if (cfg.method == Method::euler) {
      g(t, y, k1);
      y += h * k1;
      r.n_evals += 1;
    } else {
      g(t, y, k1);
      tmp = y + 0.5 * h * k1;
      g(t + 0.5 * h, tmp, k2);
      tmp = y + 0.5 * h * k2;
      g(t + 0.5 * h, tmp, k3);
      tmp = y + h * k3;
      g(t + h, tmp, k4);
      y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      r.n_evals += 4;
    }
    require_finite(y, t + h);
    ++r.n_accepted;
  }
  r.y1 = std::move(y);
  return r;
}

IntegrateResult integrate_dopri5(const VectorField& g, const Eigen::VectorXd& y0,
                                 const SolverConfig& cfg, const IntegrateOptions& opts) {
  const auto dim = y0.size();
  const Eigen::Index n_norm = opts.norm_components < 0 ? dim : std::min(opts.norm_components, dim);
  const double span = std::abs(cfg.t1 - cfg.t0);
  const double dir = cfg.t1 > cfg.t0 ? 1.0 : -1.0;

  IntegrateResult r;
  Eigen::VectorXd y = y0;
  Eigen::VectorXd k1(dim), k2(dim), k3(dim), k4(dim), k5(dim), k6(dim), k7(dim);
  Eigen::VectorXd ytmp(dim), ynew(dim), err(dim);

  double t = cfg.t0;
  g(t, y, k1);
  ++r.n_evals;
  double h = initial_step(g, t, y, k1, dir, cfg, n_norm, r.n_evals);
  h = std::clamp(h, kMinStep, span);
  double fac_old = 1e-4;
  bool last_rejected = false;
  std::size_t attempts = 0;

  while (dir * (cfg.t1 - t) > 0.0) {
    if (++attempts > cfg.max_steps) throw IntegrationError(at_time("exceeded max_steps", t), t);
    const double remaining = std::abs(cfg.t1 - t);
    bool final_step = false;
    if (h >= remaining * (1.0 - 1e-12)) {
      h = remaining;
      final_step = true;
    }
    const double hs = dir * h;

    ytmp = y + hs * a21 * k1;
    g(t + c2 * hs, ytmp, k2);
    ytmp = y + hs * (a31 * k1 + a32 * k2);
    g(t + c3 * hs, ytmp, k3);
    ytmp = y + hs * (a41 * k1 + a42 * k2 + a43 * k3);
    g(t + c4 * hs, ytmp, k4);
    ytmp = y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    g(t + c5 * hs, ytmp, k5);
    ytmp = y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    g(t + hs, ytmp, k6);
    ynew = y + hs * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    g(t + hs, ynew, k7);
    r.n_evals += 6;

    err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const auto scale = cfg.atol + cfg.rtol * y.head(n_norm).array().abs().max(ynew.head(n_norm).array().abs());
    const double err_norm = std::sqrt((err.head(n_norm).array() / scale).square().mean());

    if (!std::isfinite(err_norm)) {
      ++r.n_rejected;
      if (h <= kMinStep) throw IntegrationError(at_time("non-finite state", t), t);
      h = std::max(kMinStep, h / kMaxShrink);
      last_rejected = true;
      continue;
    }

    const double fac11 = std::pow(err_norm, kExpo);
    if (err_norm <= 1.0) {
      double fac = fac11 / std::pow(fac_old, kBeta);
      fac = std::clamp(fac / kSafety, kMaxGrow, kMaxShrink);
      double h_new = h / fac;
      fac_old = std::max(err_norm, 1e-4);
      if (last_rejected) h_new = std::min(h_new, h);
      t = final_step ? cfg.t1 : t + hs;
      y.swap(ynew);
      k1.swap(k7);
      require_finite(y, t);
      ++r.n_accepted;
      last_rejected = false;
      h = std::clamp(h_new, kMinStep, span);
    } else {
      ++r.n_rejected;
      if (h <= kMinStep) throw IntegrationError(at_time("step size underflow", t), t);
      const double h_new = h / std::min(kMaxShrink, fac11 / kSafety);
      h = std::max(kMinStep, h_new);
      last_rejected = true;
    }
  }
  r.y1 = std::move(y);
  return r;
}

// Forward solve recording the state at the start of every fixed step.
struct Tape {
  std::vector<Eigen::VectorXd> states;
  double h = 0.0;
};

Eigen::VectorXd forward_with_tape(OdeSystem& sys, const Eigen::VectorXd& y0,
                                  const SolverConfig& cfg, Tape& tape, std::size_t& evals) {
  const std::size_t n = fixed_step_count(cfg);
  if (n > cfg.max_steps) throw IntegrationError("fixed-step count exceeds max_steps", cfg.t0);
  tape.h = (cfg.t1 - cfg.t0) / static_cast<double>(n);
  tape.states.clear();
  tape.states.reserve(n);
  const double h = tape.h;
  const auto dim = y0.size();
  Eigen::VectorXd y = y0, k1(dim), k2(dim), k3(dim), k4(dim), tmp(dim);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = cfg.t0 + static_cast<double>(i) * h;
    tape.states.push_back(y);
    if (cfg.method == Method::euler) {
      sys.rhs(t, y, k1);
      y += h * k1;
      evals += 1;
    } else {
      sys.rhs(t, y, k1);
      tmp = y + 0.5 * h * k1;
      sys.rhs(t + 0.5 * h, tmp, k2);
      tmp = y + 0.5 * h * k2;
      sys.rhs(t + 0.5 * h, tmp, k3);
      tmp = y + h * k3;
      sys.rhs(t + h, tmp, k4);
      y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      evals += 4;
    }
    require_finite(y, t + h);
  }
  return y;
}

Gradients reverse_tape(OdeSystem& sys, const SolverConfig& cfg, const Tape& tape,
                       const Eigen::VectorXd& cot_y1) {
  const auto dim = sys.state_dim();
  Gradients out;
  out.grad_params = Eigen::VectorXd::Zero(sys.param_dim());
  Eigen::VectorXd y_bar = cot_y1;
  Eigen::VectorXd gy(dim), k1(dim), k2(dim), k3(dim), s2(dim), s3(dim), s4(dim);
  Eigen::VectorXd kb1(dim), kb2(dim), kb3(dim), kb4(dim);
  const double h = tape.h;
  for (std::size_t i = tape.states.size(); i-- > 0;) {
    const double t = cfg.t0 + static_cast<double>(i) * h;
    const Eigen::VectorXd& y = tape.states[i];
    if (cfg.method == Method::euler) {
      sys.vjp(t, y, h * y_bar, gy, out.grad_params);
      y_bar += gy;
      out.n_evals += 1;
      continue;
    }
    // Recompute the stage inputs of this RK4 step.
    sys.rhs(t, y, k1);
    s2 = y + 0.5 * h * k1;
    sys.rhs(t + 0.5 * h, s2, k2);
    s3 = y + 0.5 * h * k2;
    sys.rhs(t + 0.5 * h, s3, k3);
    s4 = y + h * k3;
    out.n_evals += 3;

    kb1 = (h / 6.0) * y_bar;
    kb2 = (h / 3.0) * y_bar;
    kb3 = kb2;
    kb4 = kb1;
    sys.vjp(t + h, s4, kb4, gy, out.grad_params);
    y_bar += gy;
    kb3 += h * gy;
    sys.vjp(t + 0.5 * h, s3, kb3, gy, out.grad_params);
    y_bar += gy;
    kb2 += 0.5 * h * gy;
    sys.vjp(t + 0.5 * h, s2, kb2, gy, out.grad_params);
    y_bar += gy;
    kb1 += 0.5 * h * gy;
    sys.vjp(t, y, kb1, gy, out.grad_params);
    y_bar += gy;
    out.n_evals += 4;
  }
  out.grad_y0 = std::move(y_bar);
  return out;
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::euler: return "euler";
    case Method::rk4: return "rk4";
    case Method::dopri5: return "dopri5";
  }
  return "unknown";
}

std::string_view to_string(Backprop b) { return b == Backprop::bptt ? "bptt" : "adjoint"; }

Method parse_method(std::string_view name) {
  if (name == "euler") return Method::euler;
  if (name == "rk4") return Method::rk4;
  if (name == "dopri5" || name == "dopri") return Method::dopri5;
  throw ContractError("unknown solver method '" + std::string(name) + "'");
}

Backprop parse_backprop(std::string_view name) {
  if (name == "bptt") return Backprop::bptt;
  if (name == "adjoint") return Backprop::adjoint;
  throw ContractError("unknown backprop mode '" + std::string(name) + "'");
}

void SolverConfig::validate() const {
  if (!(t1 != t0)) throw ContractError("solver interval must be non-empty (t1 != t0)");
  if (!(fixed_step > 0.0)) throw ContractError("fixed_step must be positive");
  if (!(rtol > 0.0) || !(atol > 0.0)) throw ContractError("rtol and atol must be positive");
  if (max_steps < 1) throw ContractError("max_steps must be at least 1");
}

SolverConfig SolverConfig::reversed() const {
  SolverConfig r = *this;
  std::swap(r.t0, r.t1);
  return r;
}

IntegrationError::IntegrationError(const std::string& what, double t) : Error(what), t_(t) {}

IntegrateResult integrate(const VectorField& g, const Eigen::VectorXd& y0,
                          const SolverConfig& cfg, const IntegrateOptions& opts) {
  cfg.validate();
  if (!y0.allFinite()) throw IntegrationError("non-finite initial state", cfg.t0);
  if (cfg.fixed_step_method()) return integrate_fixed(g, y0, cfg);
  return integrate_dopri5(g, y0, cfg, opts);
}

void OdeSystem::rhs_and_vjp(double t, const Eigen::VectorXd& y, const Eigen::VectorXd& cot,
                            Eigen::VectorXd& dy, Eigen::VectorXd& grad_y,
                            Eigen::Ref<Eigen::VectorXd> grad_params) {
  rhs(t, y, dy);
  vjp(t, y, cot, grad_y, grad_params);
}

ValueAndGrad value_and_grad(OdeSystem& sys, const Eigen::VectorXd& y0, const SolverConfig& cfg,
                            const TerminalLoss& loss) {
  cfg.validate();
  ValueAndGrad out;
  Eigen::VectorXd cot(y0.size());
  if (cfg.backprop == Backprop::bptt) {
    if (!cfg.fixed_step_method()) {
      throw UnsupportedCombination("bptt requires a fixed-step method (euler or rk4)");
    }
    Tape tape;
    out.y1 = forward_with_tape(sys, y0, cfg, tape, out.forward_evals);
    out.value = loss(out.y1, cot);
    out.grads = reverse_tape(sys, cfg, tape, cot);
    return out;
  }
  VectorField g = [&sys](double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) { sys.rhs(t, y, dy); };
  auto fwd = integrate(g, y0, cfg);
  out.forward_evals = fwd.n_evals;
  out.y1 = std::move(fwd.y1);
  out.value = loss(out.y1, cot);
  out.grads = adjoint_from_terminal(sys, out.y1, cfg, cot);
  return out;
}

Gradients backprop_bptt(OdeSystem& sys, const Eigen::VectorXd& y0, const SolverConfig& cfg,
                        const Eigen::VectorXd& cot_y1) {
  SolverConfig c = cfg;
  c.backprop = Backprop::bptt;
  auto r = value_and_grad(sys, y0, c, [&](const Eigen::VectorXd& y1, Eigen::VectorXd& cot) {
    cot = cot_y1;
    return cot_y1.dot(y1);
  });
  return std::move(r.grads);
}

Gradients backprop_adjoint(OdeSystem& sys, const Eigen::VectorXd& y0, const SolverConfig& cfg,
                           const Eigen::VectorXd& cot_y1) {
  SolverConfig c = cfg;
  c.backprop = Backprop::adjoint;
  auto r = value_and_grad(sys, y0, c, [&](const Eigen::VectorXd& y1, Eigen::VectorXd& cot) {
    cot = cot_y1;
    return cot_y1.dot(y1);
  });
  return std::move(r.grads);
}

Gradients adjoint_from_terminal(OdeSystem& sys, const Eigen::VectorXd& y1,
                                const SolverConfig& cfg, const Eigen::VectorXd& cot_y1) {
  const Eigen::Index n = sys.state_dim();
  const Eigen::Index p = sys.param_dim();
  if (y1.size() != n || cot_y1.size() != n) throw ContractError("adjoint state size mismatch");

  Eigen::VectorXd aug(2 * n + p);
  aug.head(n) = y1;
  aug.segment(n, n) = cot_y1;
  aug.tail(p).setZero();

  Eigen::VectorXd y(n), a(n), dy(n), gy(n), gp(p);
  VectorField g = [&](double t, const Eigen::VectorXd& s, Eigen::VectorXd& ds) {
    y = s.head(n);
    a = s.segment(n, n);
    gp.setZero();
    sys.rhs_and_vjp(t, y, a, dy, gy, gp);
    ds.head(n) = dy;
    ds.segment(n, n) = -gy;
    ds.tail(p) = -gp;
  };
  // The parameter adjoint is a pure quadrature; it does not steer the step size.
  IntegrateOptions opts;
  opts.norm_components = 2 * n;
  auto back = integrate(g, aug, cfg.reversed(), opts);

  Gradients out;
  out.grad_y0 = back.y1.segment(n, n);
  out.grad_params = back.y1.tail(p);
  out.n_evals = back.n_evals;
  return out;
}

}  // namespace sparseflow
