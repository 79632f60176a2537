#pragma once

#include "sparseflow/cnf.hpp"
#include "sparseflow/data.hpp"
#include "sparseflow/eval.hpp"
#include "sparseflow/hessian.hpp"
#include "sparseflow/net.hpp"
#include "sparseflow/odeint.hpp"
#include "sparseflow/prune.hpp"
#include "sparseflow/train.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sparseflow {

/// Raised for unparseable configs, unknown keys and inconsistent settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct DatasetConfig {
  DatasetKind kind = DatasetKind::gaussians;
  std::size_t n = 2560;
  std::uint64_t seed = 0;
  Geometry geometry;
  std::array<double, 3> split{0.8, 0.1, 0.1};
};

struct SampleSettings {
  std::size_t n_samples = 10000;
  std::vector<double> n_std{2.0, 3.0, 5.0};
  std::size_t n_trajectories = 50;
  std::size_t n_time_samples = 21;
};

/// Grid axes of the sweep command. Empty lists keep the base config value.
struct SweepSettings {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<double> prune_ratios{0.0, 0.3, 0.5, 0.7, 0.9};
  std::vector<std::string> activations;
  std::vector<std::string> methods;
  /// Hidden-layer width lists, e.g. [[128], [64, 64, 64]].
  std::vector<std::vector<std::size_t>> hidden;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  MlpSpec model;
  SolverConfig solver;
  TrainConfig train;
  PruneConfig prune;
  DivergenceMode divergence;
  HessianSettings hessian;
  SampleSettings sample;
  SweepSettings sweep;
  GridSpec grid;
  std::string output_dir = "runs";
  /// Zero the seconds column of history CSVs so reruns are byte-identical.
  bool deterministic = true;

  /// Toy hyperparameters for `kind`: architecture, solver, optimizer and
  /// prune ratio per dataset.
  static ExperimentConfig defaults(DatasetKind kind);

  /// Throws ConfigError on inconsistent settings (e.g. bptt with dopri5).
  void validate() const;
};

/// Parses `text` over the defaults of its dataset.kind (gaussians when
/// absent), then applies `key.path=value` overrides. Values are read as JSON
/// when they parse, otherwise as strings. Unknown keys are rejected.
ExperimentConfig parse_config(std::string_view text, const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});

/// Canonical JSON text (sorted keys, 2-space indent).
std::string to_json(const ExperimentConfig& cfg);

}  // namespace sparseflow
