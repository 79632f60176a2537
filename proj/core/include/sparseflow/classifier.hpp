#pragma once

#include "sparseflow/cnf.hpp"
#include "sparseflow/data.hpp"
#include "sparseflow/eval.hpp"
#include "sparseflow/prune.hpp"
#include "sparseflow/train.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace sparseflow {

/// Neural ODE classifier: x -> z(t1) through `flow`, then logits = W z + b.
/// Only the flow network is masked and pruned; the head is always dense.
struct ClassifierModel {
  FlowModel flow;
  Eigen::Matrix2d head_w = Eigen::Matrix2d::Zero();
  Eigen::Vector2d head_b = Eigen::Vector2d::Zero();

  static ClassifierModel create(const MlpSpec& spec, std::uint64_t seed, const SolverConfig& solver);

  /// [flow params; head_w row-major; head_b]
  [[nodiscard]] ParamVector packed() const;
  void unpack(const ParamVector& all);
  /// Mask over packed(): the flow mask followed by ones for the head.
  [[nodiscard]] Mask packed_mask() const;

  /// 2 x N class logits.
  [[nodiscard]] Eigen::MatrixXd logits(const Points& x) const;
  [[nodiscard]] Eigen::VectorXd prob_class1(const Points& x) const;
  [[nodiscard]] std::vector<int> predict(const Points& x) const;
};

double accuracy(const ClassifierModel& model, const Dataset& data);
double cross_entropy(const ClassifierModel& model, const Dataset& data);

/// Mean softmax cross-entropy on (x, labels) and its gradient w.r.t.
/// packed(), flow part masked.
LossGrad cross_entropy_grad(const ClassifierModel& model, const Points& x,
                            const std::vector<int>& labels);

struct ClassifierTrainResult {
  ClassifierModel model;  // best-validation-accuracy iterate
  std::size_t best_iter = 0;
  PruneHistory history;
  std::vector<Snapshot> snapshots;
};

/// The prune/retrain loop on cross-entropy with validation accuracy as the
/// early-stop signal.
ClassifierTrainResult train_classifier(const ClassifierModel& init, const Splits& splits,
                                       const TrainConfig& train, const PruneConfig& prune,
                                       const RunOptions& opts = {});

/// `init` with the packed parameters and mask of `snap`.
ClassifierModel classifier_from_snapshot(const ClassifierModel& init, const Snapshot& snap);

struct DecisionBoundary {
  GridSpec grid;
  Eigen::MatrixXd p_class1;  // (j, i) at node (node_x(i), node_y(j))
  /// Linear-interpolated 0.5 crossings along grid edges.
  std::vector<Eigen::Vector2d> boundary;
  /// Smallest distance from a test point to the boundary polyline samples
  /// (infinity when no crossing exists on the grid).
  double margin = 0.0;
};

DecisionBoundary decision_boundary(const ClassifierModel& model, const GridSpec& grid,
                                   const Points& test_points);

/// Columns x,y,p_class1; the margin is recorded in the sidecar.
DecisionBoundary export_decision_boundary(const ClassifierModel& model, const GridSpec& grid,
                                          const Points& test_points,
                                          const std::filesystem::path& path,
                                          const ExportMeta& meta = {});

}  // namespace sparseflow
