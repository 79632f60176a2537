#pragma once

#include "sparseflow/checkpoint.hpp"
#include "sparseflow/classifier.hpp"
#include "sparseflow/config.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sparseflow::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kInvalidConfig = 3,
  kMissingCheckpoint = 4,
  kCorruptCheckpoint = 5,
  kRuntime = 6,
};

/// Parses argv and runs one subcommand. Diagnostics go to stderr as a single
/// line; the return value is one of ExitCode.
int run(int argc, const char* const* argv);

struct Inputs {
  std::filesystem::path config_path;
  std::vector<std::string> overrides;
  std::filesystem::path out_dir;  // empty: config output_dir
  std::vector<std::filesystem::path> checkpoints;
};

ExperimentConfig resolve_config(const Inputs& in);
std::filesystem::path output_dir(const Inputs& in, const ExperimentConfig& cfg);

int cmd_train(const Inputs& in);
int cmd_sweep(const Inputs& in);
int cmd_hessian(const Inputs& in);
int cmd_sample(const Inputs& in);
int cmd_classify(const Inputs& in);

/// Trains one flow run into `dir`: config.json, checkpoints/iter_NNNN.ckpt
/// after every iteration, then history.csv and best.ckpt. A directory with
/// checkpoints from the same config is resumed; a finished one is left as is.
void train_run(const ExperimentConfig& cfg, const std::filesystem::path& dir);
/// True when `dir` holds a finished run (history.csv and best.ckpt).
bool run_finished(const std::filesystem::path& dir);

/// Worker count from SPARSEFLOW_WORKERS (default 1, at least 1).
std::size_t worker_count();

/// Rebuilds the models stored in a checkpoint.
FlowModel flow_from_checkpoint(const CheckpointState& ck, const ExperimentConfig& cfg);
ClassifierModel classifier_from_checkpoint(const CheckpointState& ck, const ExperimentConfig& cfg);
/// The experiment config stored in a checkpoint.
ExperimentConfig checkpoint_config(const CheckpointState& ck);

/// Train/val/test splits of the dataset described by cfg.dataset.
Splits make_splits(const ExperimentConfig& cfg);

}  // namespace sparseflow::cli
