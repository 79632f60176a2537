#pragma once

#include "sparseflow/error.hpp"
#include "sparseflow/net.hpp"
#include "sparseflow/prune.hpp"
#include "sparseflow/rng.hpp"
#include "sparseflow/train.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace sparseflow {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  using Error::Error;
};
class CheckpointNotFound : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointHashMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncated : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Everything needed to resume or evaluate a run. `params` and `mask` cover
/// the whole trainable vector (flow network first, then any head).
struct CheckpointState {
  std::string kind = "flow";  // "flow" or "classifier"
  std::string config_json = "{}";
  MlpSpec spec;
  std::size_t iter = 0;
  double prune_ratio = 0.0;
  ParamVector params;
  Mask mask;
  AdamState adam;
  PruneHistory history;
  std::map<std::string, Rng::State> rng;
};

/// File layout: the line "SPARSEFLOW-CHECKPOINT", an 8-byte little-endian
/// header length, a JSON header (version, kind, config, shapes, history, RNG
/// states, SHA-256 content hash) and a payload of little-endian float64
/// arrays: params, mask (0/1), adam m, adam v. The hash covers the header
/// without its hash field plus the payload. Returns the hash (hex).
std::string save_checkpoint(const CheckpointState& state, const std::filesystem::path& path);
CheckpointState load_checkpoint(const std::filesystem::path& path);

/// The content hash recorded in a checkpoint header (not re-verified).
std::string checkpoint_hash(const std::filesystem::path& path);

/// Lowercase hex SHA-256 of `bytes`.
std::string sha256_hex(const std::string& bytes);

/// Snapshot <-> checkpoint conversion for the prune loop.
CheckpointState checkpoint_from_snapshot(const Snapshot& snap, const PruneHistory& history,
                                         const MlpSpec& spec, const std::string& kind,
                                         const std::string& config_json);
Snapshot snapshot_from_checkpoint(const CheckpointState& state);

}  // namespace sparseflow
