#include "sparseflow/prune.hpp"

#include "sparseflow/csv.hpp"
#include "sparseflow/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

namespace sparseflow {
namespace {

void check_aligned(const ParamVector& params, const Mask& mask, const ParamLayout& layout) {
  if (static_cast<std::size_t>(params.size()) != layout.size() || mask.size() != layout.size()) {
    throw ContractError("parameters and mask must match the network layout");
  }
}

bool score_less(const Score& a, const Score& b) {
  if (a.value != b.value) return a.value < b.value;
  if (a.layer != b.layer) return a.layer < b.layer;
  return a.index < b.index;
}

Mask head_mask(const Mask& m, std::size_t n) {
  return Mask(std::vector<std::uint8_t>(m.bits().begin(),
                                        m.bits().begin() + static_cast<std::ptrdiff_t>(n)));
}

double record_score(const PruneRecord& r) {
  return std::isnan(r.val_acc) ? r.val_nll : -r.val_acc;
}

}  // namespace

std::string_view to_string(PruneMode m) {
  return m == PruneMode::unstructured ? "unstructured" : "structured";
}

PruneMode parse_prune_mode(std::string_view name) {
  if (name == "unstructured") return PruneMode::unstructured;
  if (name == "structured") return PruneMode::structured;
  throw ContractError("unknown prune mode '" + std::string(name) + "'");
}

void PruneConfig::validate() const {
  if (!(pr_per_iter > 0.0 && pr_per_iter < 1.0)) {
    throw ContractError("pr_per_iter must lie in (0, 1)");
  }
  if (epochs_per_cycle < 1) throw ContractError("epochs_per_cycle must be at least 1");
}

std::vector<Score> score_params(const ParamVector& params, const Mask& mask, const MlpSpec& spec,
                                PruneMode mode) {
  const ParamLayout layout(spec);
  check_aligned(params, mask, layout);
  const auto& blocks = layout.layers();
  std::vector<Score> out;
  if (mode == PruneMode::unstructured) {
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      for (std::size_t i = blocks[l].weight_offset; i < blocks[l].bias_offset; ++i) {
        if (mask[i]) out.push_back({l, i, std::abs(params[static_cast<Eigen::Index>(i)])});
      }
    }
    return out;
  }
  for (std::size_t l = 0; l + 1 < blocks.size(); ++l) {
    const auto& b = blocks[l];
    for (std::size_t r = 0; r < b.rows; ++r) {
      if (!mask[b.bias_offset + r]) continue;
      double norm = 0.0;
      for (std::size_t c = 0; c < b.cols; ++c) {
        const std::size_t i = b.weight_index(r, c);
        if (mask[i]) norm += std::abs(params[static_cast<Eigen::Index>(i)]);
      }
      out.push_back({l, r, norm});
    }
  }
  return out;
}

std::size_t prune_count(double pr, std::size_t remaining) {
  return static_cast<std::size_t>(std::floor(pr * static_cast<double>(remaining) + 1e-9));
}

Mask apply_prune(const ParamVector& params, const Mask& mask, const MlpSpec& spec, PruneMode mode,
                 double pr) {
  if (!(pr >= 0.0 && pr < 1.0)) throw ContractError("prune ratio must lie in [0, 1)");
  const ParamLayout layout(spec);
  check_aligned(params, mask, layout);
  if (pr == 0.0) return mask;
  std::vector<Score> scores = score_params(params, mask, spec, mode);
  Mask out = mask;

  if (mode == PruneMode::unstructured) {
    const std::size_t k = prune_count(pr, scores.size());
    if (scores.empty() || k >= scores.size()) {
      throw ContractError("prune would remove every remaining weight");
    }
    std::sort(scores.begin(), scores.end(), score_less);
    for (std::size_t j = 0; j < k; ++j) out.set(scores[j].index, false);
    return out;
  }

  const auto& blocks = layout.layers();
  for (std::size_t l = 0; l + 1 < blocks.size(); ++l) {
    std::vector<Score> layer;
    for (const auto& s : scores) {
      if (s.layer == l) layer.push_back(s);
    }
    const std::size_t k = prune_count(pr, layer.size());
    if (k == 0) continue;
    if (k >= layer.size()) throw ContractError("prune would remove every neuron of a layer");
    std::sort(layer.begin(), layer.end(), score_less);
    const auto& b = blocks[l];
    const auto& next = blocks[l + 1];
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t r = layer[j].index;
      for (std::size_t c = 0; c < b.cols; ++c) out.set(b.weight_index(r, c), false);
      out.set(b.bias_offset + r, false);
      for (std::size_t o = 0; o < next.rows; ++o) out.set(next.weight_index(o, r), false);
    }
  }
  return out;
}

double sparsity(const Mask& mask, const MlpSpec& spec, PruneMode mode) {
  const ParamLayout layout(spec);
  if (mask.size() != layout.size()) throw ContractError("mask does not match the network layout");
  const auto& blocks = layout.layers();
  std::size_t pruned = 0;
  std::size_t total = 0;
  if (mode == PruneMode::unstructured) {
    for (const auto& b : blocks) {
      for (std::size_t i = b.weight_offset; i < b.bias_offset; ++i) pruned += mask[i] ? 0 : 1;
    }
    total = layout.weight_count();
  } else {
    for (std::size_t l = 0; l + 1 < blocks.size(); ++l) {
      for (std::size_t r = 0; r < blocks[l].rows; ++r) pruned += mask[blocks[l].bias_offset + r] ? 0 : 1;
      total += blocks[l].rows;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(pruned) / static_cast<double>(total);
}

std::size_t params_remaining(const Mask& mask) { return mask.count(); }

const std::vector<std::string> kHistoryColumns{"iter",     "prune_ratio", "params_remaining",
                                               "train_nll", "val_nll",    "test_nll",
                                               "n_evals",  "seconds"};
const std::vector<std::string> kClassifierHistoryColumns{
    "iter",    "prune_ratio", "params_remaining", "train_nll", "val_nll", "test_nll",
    "n_evals", "seconds",     "val_acc",          "test_acc"};

void write_history_csv(const PruneHistory& h, const std::filesystem::path& path, bool zero_seconds,
                       bool with_accuracy) {
  CsvWriter w(path, with_accuracy ? kClassifierHistoryColumns : kHistoryColumns);
  for (const auto& r : h.records) {
    w.field(r.iter).field(r.prune_ratio).field(r.params_remaining);
    w.field(r.train_nll).field(r.val_nll).field(r.test_nll).field(r.n_evals);
    w.field(zero_seconds ? 0.0 : r.seconds);
    if (with_accuracy) w.field(r.val_acc).field(r.test_acc);
    w.end_row();
  }
}

PruneHistory read_history_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  PruneHistory h;
  const bool acc = std::find(t.header.begin(), t.header.end(), "val_acc") != t.header.end();
  for (const auto& row : t.rows) {
    PruneRecord r;
    r.iter = std::stoull(row.at(t.column("iter")));
    r.prune_ratio = std::stod(row.at(t.column("prune_ratio")));
    r.params_remaining = std::stoull(row.at(t.column("params_remaining")));
    r.train_nll = std::stod(row.at(t.column("train_nll")));
    r.val_nll = std::stod(row.at(t.column("val_nll")));
    r.test_nll = std::stod(row.at(t.column("test_nll")));
    r.n_evals = std::stoull(row.at(t.column("n_evals")));
    r.seconds = std::stod(row.at(t.column("seconds")));
    if (acc) {
      r.val_acc = std::stod(row.at(t.column("val_acc")));
      r.test_acc = std::stod(row.at(t.column("test_acc")));
    }
    h.records.push_back(r);
  }
  return h;
}

PruneRunResult run_sparse_training(const PruneTask& task, const ParamVector& init,
                                   const TrainConfig& train, const PruneConfig& prune,
                                   const RunOptions& opts) {
  train.validate();
  prune.validate();
  const ParamLayout layout(task.spec);
  const std::size_t net_size = layout.size();
  if (static_cast<std::size_t>(init.size()) < net_size) {
    throw ContractError("initial parameters are shorter than the prunable network");
  }
  TrainConfig cycle = train;
  cycle.epochs = prune.epochs_per_cycle;

  PruneRunResult res;
  ParamVector params = init;
  Mask mask = Mask::ones(static_cast<std::size_t>(init.size()));
  Rng batching = make_stream(train.seed, Stream::batching);
  Rng noise = make_stream(train.seed, Stream::noise);
  AdamState adam = AdamState::zeros(init.size());
  std::size_t start_iter = 0;
  std::size_t best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  std::size_t bad = 0;

  if (opts.resume_snapshots != nullptr && !opts.resume_snapshots->empty()) {
    if (opts.resume_history == nullptr) throw ContractError("resume needs the run history");
    res.snapshots = *opts.resume_snapshots;
    const Snapshot& s = res.snapshots.back();
    params = s.params;
    mask = s.mask;
    adam = s.adam;
    batching = Rng::from_state(s.batching);
    noise = Rng::from_state(s.noise);
    res.history = *opts.resume_history;
    res.history.records.resize(std::min(res.history.records.size(), s.iter + 1));
    start_iter = s.iter + 1;
    for (const auto& r : res.history.records) {
      const double score = record_score(r);
      if (score < best_score) {
        best_score = score;
        best = r.iter;
        bad = 0;
      } else {
        ++bad;
      }
    }
    if (bad > prune.patience) start_iter = prune.max_iters + 1;
  }

  for (std::size_t iter = start_iter; iter <= prune.max_iters; ++iter) {
    const auto t0 = std::chrono::steady_clock::now();
    EvalResult ev;
    CycleStats stats;
    try {
      if (iter > 0) {
        const Mask pruned = apply_prune(params.head(static_cast<Eigen::Index>(net_size)),
                                        head_mask(mask, net_size), task.spec, prune.mode,
                                        prune.pr_per_iter);
        for (std::size_t i = 0; i < net_size; ++i) mask.set(i, pruned[i]);
        apply_mask_inplace(params, mask);
      }
      stats = train_cycle(params, mask, cycle, task.n_train, task.grad, batching, noise, adam,
                          opts.on_epoch);
      ev = task.evaluate(params, mask);
    } catch (const Error& e) {
      if (iter == 0) throw;
      res.history.aborted = "iteration " + std::to_string(iter) + ": " + e.what();
      break;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const Mask net_mask = head_mask(mask, net_size);
    PruneRecord rec;
    rec.iter = iter;
    rec.prune_ratio = sparsity(net_mask, task.spec, prune.mode);
    rec.params_remaining = params_remaining(net_mask);
    rec.train_nll = ev.train_loss;
    rec.val_nll = ev.val_loss;
    rec.test_nll = ev.test_loss;
    rec.n_evals = stats.n_evals;
    rec.seconds = opts.deterministic ? 0.0 : secs;
    rec.val_acc = ev.val_acc;
    rec.test_acc = ev.test_acc;
    res.history.records.push_back(rec);

    Snapshot snap{iter, rec.prune_ratio, params, mask, adam, batching.state(), noise.state()};
    if (opts.on_iteration) opts.on_iteration(snap, res.history);
    res.snapshots.push_back(std::move(snap));

    if (ev.val_score < best_score) {
      best_score = ev.val_score;
      best = iter;
      bad = 0;
    } else if (++bad > prune.patience) {
      break;
    }
  }

  res.best_iter = best;
  const auto it = std::find_if(res.snapshots.begin(), res.snapshots.end(),
                               [best](const Snapshot& s) { return s.iter == best; });
  if (it == res.snapshots.end()) throw Error("best iterate missing from snapshots");
  res.params = it->params;
  res.mask = it->mask;
  return res;
}

FlowTrainResult sparse_flow_train(const FlowModel& model, const Splits& splits,
                                  const TrainConfig& train, const PruneConfig& prune,
                                  const RunOptions& opts) {
  model.validate();
  const Points& x_train = splits.train.points;
  PruneTask task;
  task.spec = model.spec;
  task.n_train = splits.train.size();
  task.grad = [&](const ParamVector& params, const Mask& mask, std::span<const std::size_t> idx,
                  Rng& noise) {
    FlowModel m = model;
    m.params = params;
    m.mask = mask;
    return nll_grad(m, gather_columns(x_train, idx), noise);
  };
  task.evaluate = [&](const ParamVector& params, const Mask& mask) {
    FlowModel m = model;
    m.params = params;
    m.mask = mask;
    EvalResult ev;
    ev.train_loss = nll(m, splits.train.points);
    ev.val_loss = nll(m, splits.val.points);
    ev.test_loss = nll(m, splits.test.points);
    ev.val_score = ev.val_loss;
    return ev;
  };
  PruneRunResult run = run_sparse_training(task, model.params, train, prune, opts);

  FlowTrainResult out;
  out.model = model;
  out.model.params = std::move(run.params);
  out.model.mask = std::move(run.mask);
  out.best_iter = run.best_iter;
  out.history = std::move(run.history);
  out.snapshots = std::move(run.snapshots);
  return out;
}

const Snapshot& nearest_snapshot(const std::vector<Snapshot>& snaps, double target) {
  if (snaps.empty()) throw ContractError("no snapshots to choose from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < snaps.size(); ++i) {
    if (std::abs(snaps[i].prune_ratio - target) < std::abs(snaps[best].prune_ratio - target)) {
      best = i;
    }
  }
  return snaps[best];
}

}  // namespace sparseflow
