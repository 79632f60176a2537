#pragma once

#include "sparseflow/cnf.hpp"
#include "sparseflow/data.hpp"
#include "sparseflow/net.hpp"
#include "sparseflow/rng.hpp"
#include "sparseflow/train.hpp"

#include <cstddef>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sparseflow {

enum class PruneMode { unstructured, structured };

std::string_view to_string(PruneMode m);
PruneMode parse_prune_mode(std::string_view name);

struct PruneConfig {
  PruneMode mode = PruneMode::unstructured;
  double pr_per_iter = 0.1;
  std::size_t epochs_per_cycle = 100;
  /// Consecutive non-improving prune iterations tolerated; the run stops on
  /// the next one.
  std::size_t patience = 2;
  std::size_t max_iters = 25;

  void validate() const;
};

/// A scored prune target. Unstructured: `index` is the flat parameter index.
/// Structured: `index` is the neuron within hidden layer `layer` (the output
/// of weight block `layer`).
struct Score {
  std::size_t layer = 0;
  std::size_t index = 0;
  double value = 0.0;
};

/// Scores of every unmasked target. Unstructured: |w| over all weight
/// entries (biases excluded). Structured: l1 norm of each live hidden
/// neuron's incoming row, time column included.
std::vector<Score> score_params(const ParamVector& params, const Mask& mask, const MlpSpec& spec,
                                PruneMode mode);

/// floor(pr * remaining), with a small guard against representation error in
/// pr * remaining.
std::size_t prune_count(double pr, std::size_t remaining);

/// Prunes a fraction `pr` of the remaining targets. Unstructured: the
/// prune_count(pr, remaining weights) smallest |w| globally. Structured: per
/// hidden layer, the prune_count(pr, live neurons) lowest-norm neurons; a
/// neuron's incoming row, bias and outgoing column are masked. Ties go to the
/// lowest index. pr = 0 returns the mask unchanged; a prune that would remove
/// every remaining target is refused with ContractError.
Mask apply_prune(const ParamVector& params, const Mask& mask, const MlpSpec& spec, PruneMode mode,
                 double pr);

/// Unstructured: pruned weights / all weights. Structured: pruned hidden
/// neurons / all hidden neurons.
double sparsity(const Mask& mask, const MlpSpec& spec, PruneMode mode);

/// Unmasked weights plus unmasked biases.
std::size_t params_remaining(const Mask& mask);

struct PruneRecord {
  std::size_t iter = 0;
  double prune_ratio = 0.0;
  std::size_t params_remaining = 0;
  double train_nll = std::numeric_limits<double>::quiet_NaN();
  double val_nll = std::numeric_limits<double>::quiet_NaN();
  double test_nll = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_evals = 0;
  double seconds = 0.0;
  // Classifier runs only.
  double val_acc = std::numeric_limits<double>::quiet_NaN();
  double test_acc = std::numeric_limits<double>::quiet_NaN();
};

struct PruneHistory {
  std::vector<PruneRecord> records;
  /// Set when a cycle aborted; the records stop at the last good iteration.
  std::string aborted;
};

extern const std::vector<std::string> kHistoryColumns;
extern const std::vector<std::string> kClassifierHistoryColumns;

/// Writes the history with kHistoryColumns, or kClassifierHistoryColumns when
/// `with_accuracy` is set. With `zero_seconds` the seconds column is written
/// as 0 so that repeated runs produce identical bytes.
void write_history_csv(const PruneHistory& h, const std::filesystem::path& path,
                       bool zero_seconds, bool with_accuracy = false);
PruneHistory read_history_csv(const std::filesystem::path& path);

/// Model state after one prune iteration (iteration 0 is the dense warm start).
struct Snapshot {
  std::size_t iter = 0;
  double prune_ratio = 0.0;
  ParamVector params;
  Mask mask;
  AdamState adam;
  Rng::State batching{};
  Rng::State noise{};
};

struct EvalResult {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double test_loss = 0.0;
  /// Early-stopping signal, lower is better.
  double val_score = 0.0;
  double val_acc = std::numeric_limits<double>::quiet_NaN();
  double test_acc = std::numeric_limits<double>::quiet_NaN();
};

/// A model whose parameter vector starts with the prunable network `spec`.
/// Entries past the network (e.g. a classifier head) are trained but never
/// scored or masked.
struct PruneTask {
  MlpSpec spec;
  std::size_t n_train = 0;
  GradFn grad;
  std::function<EvalResult(const ParamVector& params, const Mask& mask)> evaluate;
};

struct RunOptions {
  /// Write 0 seconds into the history so reruns are byte-identical.
  bool deterministic = true;
  /// Called after every completed iteration, e.g. to persist a checkpoint.
  std::function<void(const Snapshot&, const PruneHistory&)> on_iteration;
  /// Continue a killed run: all snapshots written so far (the last one is the
  /// resume point) and the matching history.
  const std::vector<Snapshot>* resume_snapshots = nullptr;
  const PruneHistory* resume_history = nullptr;
  EpochHook on_epoch;
};

struct PruneRunResult {
  ParamVector params;  // best-validation iterate
  Mask mask;
  std::size_t best_iter = 0;
  PruneHistory history;
  std::vector<Snapshot> snapshots;
};

/// The iterative prune/retrain loop: dense warm start, then prune, rewind
/// the learning-rate schedule and retrain for prune.epochs_per_cycle epochs,
/// until validation stops improving (see PruneConfig::patience) or max_iters.
PruneRunResult run_sparse_training(const PruneTask& task, const ParamVector& init,
                                   const TrainConfig& train, const PruneConfig& prune,
                                   const RunOptions& opts = {});

struct FlowTrainResult {
  FlowModel model;  // best-validation iterate
  std::size_t best_iter = 0;
  PruneHistory history;
  std::vector<Snapshot> snapshots;
};

/// Trains a flow on splits.train with the loop above. Losses in the history
/// are exact-divergence NLLs.
FlowTrainResult sparse_flow_train(const FlowModel& model, const Splits& splits,
                                  const TrainConfig& train, const PruneConfig& prune,
                                  const RunOptions& opts = {});

/// The snapshot whose prune ratio is closest to `target` (first on ties).
const Snapshot& nearest_snapshot(const std::vector<Snapshot>& snaps, double target);

}  // namespace sparseflow
