#include "sparseflow/classifier.hpp"

#include "sidecar.hpp"
#include "sparseflow/csv.hpp"
#include "sparseflow/error.hpp"

#include <cmath>
#include <limits>

namespace sparseflow {
namespace {

constexpr Eigen::Index kHeadSize = 6;

Eigen::MatrixXd softmax_cols(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits;
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    const double m = p.col(j).maxCoeff();
    p.col(j) = (p.col(j).array() - m).exp().matrix();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

void check_labels(const Points& x, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(x.cols()) != labels.size()) {
    throw ContractError("label count does not match point count");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw ContractError("labels must be 0 or 1");
  }
}

}  // namespace

ClassifierModel ClassifierModel::create(const MlpSpec& spec, std::uint64_t seed,
                                        const SolverConfig& solver) {
  if (spec.data_dim() != 2) throw ContractError("the classifier works on 2D inputs");
  ClassifierModel m;
  DivergenceMode unused;
  m.flow = FlowModel::create(spec, seed, solver, unused);
  Rng rng = make_stream(seed, Stream::init).split(1);
  const double bound = 1.0 / std::sqrt(2.0);
  for (Eigen::Index i = 0; i < 2; ++i) {
    for (Eigen::Index j = 0; j < 2; ++j) m.head_w(i, j) = rng.uniform(-bound, bound);
  }
  return m;
}

ParamVector ClassifierModel::packed() const {
  const Eigen::Index n = flow.params.size();
  ParamVector all(n + kHeadSize);
  all.head(n) = flow.params;
  all.segment(n, 4) << head_w(0, 0), head_w(0, 1), head_w(1, 0), head_w(1, 1);
  all.tail(2) = head_b;
  return all;
}

void ClassifierModel::unpack(const ParamVector& all) {
  const Eigen::Index n = flow.params.size();
  if (all.size() != n + kHeadSize) throw ContractError("packed classifier vector has the wrong size");
  flow.params = all.head(n);
  head_w << all[n], all[n + 1], all[n + 2], all[n + 3];
  head_b = all.tail(2);
}

Mask ClassifierModel::packed_mask() const {
  std::vector<std::uint8_t> bits = flow.mask.bits();
  bits.insert(bits.end(), kHeadSize, 1);
  return Mask(std::move(bits));
}

Eigen::MatrixXd ClassifierModel::logits(const Points& x) const {
  const Points z = push_forward(flow, x);
  Eigen::MatrixXd out = head_w * z;
  out.colwise() += head_b;
  return out;
}

Eigen::VectorXd ClassifierModel::prob_class1(const Points& x) const {
  return softmax_cols(logits(x)).row(1).transpose();
}

std::vector<int> ClassifierModel::predict(const Points& x) const {
  const Eigen::MatrixXd l = logits(x);
  std::vector<int> out(static_cast<std::size_t>(l.cols()));
  for (Eigen::Index j = 0; j < l.cols(); ++j) out[static_cast<std::size_t>(j)] = l(1, j) > l(0, j) ? 1 : 0;
  return out;
}

double accuracy(const ClassifierModel& model, const Dataset& data) {
  if (!data.has_labels() || data.size() == 0) throw ContractError("accuracy needs labelled data");
  const auto pred = model.predict(data.points);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double cross_entropy(const ClassifierModel& model, const Dataset& data) {
  check_labels(data.points, data.labels);
  const Eigen::MatrixXd l = model.logits(data.points);
  double s = 0.0;
  for (Eigen::Index j = 0; j < l.cols(); ++j) {
    const double m = l.col(j).maxCoeff();
    const double lse = m + std::log((l.col(j).array() - m).exp().sum());
    s += lse - l(data.labels[static_cast<std::size_t>(j)], j);
  }
  return s / static_cast<double>(l.cols());
}

LossGrad cross_entropy_grad(const ClassifierModel& model, const Points& x,
                            const std::vector<int>& labels) {
  check_labels(x, labels);
  model.flow.validate();
  const Eigen::Index b = x.cols();
  if (b == 0) throw ContractError("cross_entropy_grad of an empty batch");
  NeuralOdeSystem sys(model.flow.spec, model.flow.effective_params(), b);
  Eigen::Matrix2d gw = Eigen::Matrix2d::Zero();
  Eigen::Vector2d gb = Eigen::Vector2d::Zero();
  const double inv_b = 1.0 / static_cast<double>(b);

  auto loss = [&](const Eigen::VectorXd& y1, Eigen::VectorXd& cot) {
    const Eigen::Map<const Eigen::MatrixXd> z(y1.data(), 2, b);
    Eigen::MatrixXd l = model.head_w * z;
    l.colwise() += model.head_b;
    Eigen::MatrixXd p = softmax_cols(l);
    double value = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) {
      const int y = labels[static_cast<std::size_t>(j)];
      value -= std::log(std::max(p(y, j), std::numeric_limits<double>::min()));
      p(y, j) -= 1.0;
    }
    p *= inv_b;  // dL/dlogits
    gw = p * z.transpose();
    gb = p.rowwise().sum();
    cot.resize(y1.size());
    Eigen::Map<Eigen::MatrixXd>(cot.data(), 2, b) = model.head_w.transpose() * p;
    return value * inv_b;
  };
  Eigen::VectorXd y0 = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
  auto r = value_and_grad(sys, y0, model.flow.solver, loss);

  LossGrad out;
  out.loss = r.value;
  const Eigen::Index n = model.flow.params.size();
  out.grad.resize(n + kHeadSize);
  out.grad.head(n) = r.grads.grad_params;
  out.grad.segment(n, 4) << gw(0, 0), gw(0, 1), gw(1, 0), gw(1, 1);
  out.grad.tail(2) = gb;
  apply_mask_inplace(out.grad, model.packed_mask());
  out.n_evals = r.forward_evals + r.grads.n_evals;
  return out;
}

ClassifierModel classifier_from_snapshot(const ClassifierModel& init, const Snapshot& snap) {
  ClassifierModel m = init;
  m.unpack(snap.params);
  const auto n = static_cast<std::ptrdiff_t>(m.flow.params.size());
  m.flow.mask = Mask(std::vector<std::uint8_t>(snap.mask.bits().begin(), snap.mask.bits().begin() + n));
  return m;
}

ClassifierTrainResult train_classifier(const ClassifierModel& init, const Splits& splits,
                                       const TrainConfig& train, const PruneConfig& prune,
                                       const RunOptions& opts) {
  if (!splits.train.has_labels()) throw ContractError("classifier training needs labels");
  PruneTask task;
  task.spec = init.flow.spec;
  task.n_train = splits.train.size();
  auto with = [&init](const ParamVector& params, const Mask& mask) {
    Snapshot s;
    s.params = params;
    s.mask = mask;
    return classifier_from_snapshot(init, s);
  };
  task.grad = [&](const ParamVector& params, const Mask& mask, std::span<const std::size_t> idx,
                  Rng&) {
    std::vector<int> labels;
    labels.reserve(idx.size());
    for (auto i : idx) labels.push_back(splits.train.labels[i]);
    return cross_entropy_grad(with(params, mask), gather_columns(splits.train.points, idx), labels);
  };
  task.evaluate = [&](const ParamVector& params, const Mask& mask) {
    const ClassifierModel m = with(params, mask);
    EvalResult ev;
    ev.train_loss = cross_entropy(m, splits.train);
    ev.val_loss = cross_entropy(m, splits.val);
    ev.test_loss = cross_entropy(m, splits.test);
    ev.val_acc = accuracy(m, splits.val);
    ev.test_acc = accuracy(m, splits.test);
    ev.val_score = -ev.val_acc;
    return ev;
  };
  PruneRunResult run = run_sparse_training(task, init.packed(), train, prune, opts);

  ClassifierTrainResult out;
  Snapshot best;
  best.params = run.params;
  best.mask = run.mask;
  out.model = classifier_from_snapshot(init, best);
  out.best_iter = run.best_iter;
  out.history = std::move(run.history);
  out.snapshots = std::move(run.snapshots);
  return out;
}

DecisionBoundary decision_boundary(const ClassifierModel& model, const GridSpec& grid,
                                   const Points& test_points) {
  grid.validate();
  const std::size_t res = grid.resolution;
  Points nodes(2, static_cast<Eigen::Index>(res * res));
  for (std::size_t j = 0; j < res; ++j) {
    for (std::size_t i = 0; i < res; ++i) {
      nodes.col(static_cast<Eigen::Index>(j * res + i)) << grid.node_x(i), grid.node_y(j);
    }
  }
  const Eigen::VectorXd p = model.prob_class1(nodes);
  DecisionBoundary out;
  out.grid = grid;
  out.p_class1.resize(static_cast<Eigen::Index>(res), static_cast<Eigen::Index>(res));
  for (std::size_t j = 0; j < res; ++j) {
    for (std::size_t i = 0; i < res; ++i) {
      out.p_class1(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) =
          p[static_cast<Eigen::Index>(j * res + i)];
    }
  }
  auto crossing = [&out](double pa, double pb, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    if ((pa - 0.5) * (pb - 0.5) > 0.0 || pa == pb) return;
    const double s = (0.5 - pa) / (pb - pa);
    out.boundary.push_back(a + s * (b - a));
  };
  for (std::size_t j = 0; j < res; ++j) {
    for (std::size_t i = 0; i < res; ++i) {
      const auto jj = static_cast<Eigen::Index>(j);
      const auto ii = static_cast<Eigen::Index>(i);
      const Eigen::Vector2d here(grid.node_x(i), grid.node_y(j));
      if (i + 1 < res) {
        crossing(out.p_class1(jj, ii), out.p_class1(jj, ii + 1), here,
                 Eigen::Vector2d(grid.node_x(i + 1), grid.node_y(j)));
      }
      if (j + 1 < res) {
        crossing(out.p_class1(jj, ii), out.p_class1(jj + 1, ii), here,
                 Eigen::Vector2d(grid.node_x(i), grid.node_y(j + 1)));
      }
    }
  }
  out.margin = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < test_points.cols(); ++k) {
    for (const auto& q : out.boundary) {
      out.margin = std::min(out.margin, (test_points.col(k) - q).norm());
    }
  }
  return out;
}

DecisionBoundary export_decision_boundary(const ClassifierModel& model, const GridSpec& grid,
                                          const Points& test_points,
                                          const std::filesystem::path& path,
                                          const ExportMeta& meta) {
  DecisionBoundary db = decision_boundary(model, grid, test_points);
  CsvWriter w(path, {"x", "y", "p_class1"});
  for (std::size_t j = 0; j < grid.resolution; ++j) {
    for (std::size_t i = 0; i < grid.resolution; ++i) {
      w.field(grid.node_x(i)).field(grid.node_y(j));
      w.field(db.p_class1(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)));
      w.end_row();
    }
  }
  detail::write_sidecar(path, "decision_boundary", meta,
                        {{"grid", detail::grid_json(grid)},
                         {"margin", std::isfinite(db.margin) ? nlohmann::json(db.margin) : nlohmann::json(nullptr)},
                         {"boundary_points", db.boundary.size()}});
  return db;
}

}  // namespace sparseflow
