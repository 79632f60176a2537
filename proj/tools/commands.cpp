#include "cli.hpp"

#include "sparseflow/csv.hpp"
#include "sparseflow/eval.hpp"
#include "sparseflow/hessian.hpp"
#include "sparseflow/prune.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace sparseflow::cli {
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

std::string iter_name(std::size_t iter) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "iter_%04zu.ckpt", iter);
  return buf;
}

std::vector<fs::path> list_checkpoints(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".ckpt") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct RunDir {
  fs::path dir;
  std::string config_json;
  std::vector<Snapshot> snapshots;
  PruneHistory history;
};

// Creates or reopens a run directory. Checkpoints left by a killed run with
// the same config become the resume point.
RunDir open_run_dir(const ExperimentConfig& cfg, const fs::path& dir, const std::string& kind) {
  RunDir rd;
  rd.dir = dir;
  rd.config_json = to_json(cfg);
  fs::create_directories(dir / "checkpoints");
  const fs::path cfg_file = dir / "config.json";
  if (fs::exists(cfg_file)) {
    if (read_text(cfg_file) != rd.config_json) {
      throw ConfigError("output directory " + dir.string() +
                        " holds a run with a different config; choose another --out");
    }
  } else {
    write_text(cfg_file, rd.config_json);
  }
  for (const auto& p : list_checkpoints(dir / "checkpoints")) {
    CheckpointState ck = load_checkpoint(p);
    if (ck.kind != kind) throw ConfigError("checkpoint " + p.string() + " is not a " + kind + " run");
    rd.history = ck.history;
    rd.snapshots.push_back(snapshot_from_checkpoint(ck));
  }
  return rd;
}

RunOptions run_options(RunDir& rd, const ExperimentConfig& cfg, const std::string& kind) {
  RunOptions opts;
  opts.deterministic = cfg.deterministic;
  const fs::path ckdir = rd.dir / "checkpoints";
  opts.on_iteration = [&rd, &cfg, ckdir, kind](const Snapshot& snap, const PruneHistory& h) {
    save_checkpoint(checkpoint_from_snapshot(snap, h, cfg.model, kind, rd.config_json),
                    ckdir / iter_name(snap.iter));
  };
  if (!rd.snapshots.empty()) {
    opts.resume_snapshots = &rd.snapshots;
    opts.resume_history = &rd.history;
  }
  return opts;
}

const Snapshot& snapshot_at(const std::vector<Snapshot>& snaps, std::size_t iter) {
  for (const auto& s : snaps) {
    if (s.iter == iter) return s;
  }
  throw Error("no snapshot for iteration " + std::to_string(iter));
}

void finish_run(const RunDir& rd, const ExperimentConfig& cfg, const std::string& kind,
                const Snapshot& best, const PruneHistory& history, bool with_accuracy) {
  save_checkpoint(checkpoint_from_snapshot(best, history, cfg.model, kind, rd.config_json),
                  rd.dir / "best.ckpt");
  // history.csv is written last: its presence marks the run as finished.
  const fs::path tmp = rd.dir / "history.csv.tmp";
  write_history_csv(history, tmp, cfg.deterministic, with_accuracy);
  fs::rename(tmp, rd.dir / "history.csv");
}

ExportMeta meta_for(const fs::path& ckpt, std::uint64_t seed) {
  return ExportMeta{checkpoint_hash(ckpt), seed};
}

std::string join_sizes(const std::vector<std::size_t>& v, char sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<std::size_t> hidden_of(const MlpSpec& spec) {
  return {spec.layer_sizes.begin() + 1, spec.layer_sizes.end() - 1};
}

std::vector<fs::path> resolve_checkpoints(const Inputs& in, const ExperimentConfig& cfg) {
  if (!in.checkpoints.empty()) return in.checkpoints;
  const fs::path dir = output_dir(in, cfg) / "checkpoints";
  auto found = list_checkpoints(dir);
  if (found.empty()) throw CheckpointNotFound("no checkpoints under " + dir.string());
  return found;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

ExperimentConfig resolve_config(const Inputs& in) {
  if (in.config_path.empty()) return parse_config("{}", in.overrides);
  return load_config(in.config_path, in.overrides);
}

fs::path output_dir(const Inputs& in, const ExperimentConfig& cfg) {
  return in.out_dir.empty() ? fs::path(cfg.output_dir) : in.out_dir;
}

Splits make_splits(const ExperimentConfig& cfg) {
  const Dataset ds = make_dataset(cfg.dataset.kind, cfg.dataset.n, cfg.dataset.seed, cfg.dataset.geometry);
  return split(ds, cfg.dataset.split, cfg.dataset.seed);
}

ExperimentConfig checkpoint_config(const CheckpointState& ck) { return parse_config(ck.config_json); }

FlowModel flow_from_checkpoint(const CheckpointState& ck, const ExperimentConfig& cfg) {
  if (ck.kind != "flow") throw ContractError("checkpoint holds a " + ck.kind + " model, not a flow");
  FlowModel m;
  m.spec = ck.spec;
  m.params = ck.params;
  m.mask = ck.mask;
  m.solver = cfg.solver;
  m.divergence = cfg.divergence;
  m.validate();
  return m;
}

ClassifierModel classifier_from_checkpoint(const CheckpointState& ck, const ExperimentConfig& cfg) {
  if (ck.kind != "classifier") throw ContractError("checkpoint holds a " + ck.kind + " model, not a classifier");
  const ClassifierModel init = ClassifierModel::create(ck.spec, cfg.train.seed, cfg.solver);
  return classifier_from_snapshot(init, snapshot_from_checkpoint(ck));
}

bool run_finished(const fs::path& dir) {
  return fs::exists(dir / "history.csv") && fs::exists(dir / "best.ckpt");
}

void train_run(const ExperimentConfig& cfg, const fs::path& dir) {
  RunDir rd = open_run_dir(cfg, dir, "flow");
  if (run_finished(dir)) return;
  const Splits splits = make_splits(cfg);
  const FlowModel init = FlowModel::create(cfg.model, cfg.train.seed, cfg.solver, cfg.divergence);
  const RunOptions opts = run_options(rd, cfg, "flow");
  const FlowTrainResult res = sparse_flow_train(init, splits, cfg.train, cfg.prune, opts);
  finish_run(rd, cfg, "flow", snapshot_at(res.snapshots, res.best_iter), res.history, false);
}

int cmd_train(const Inputs& in) {
  const ExperimentConfig cfg = resolve_config(in);
  const fs::path dir = output_dir(in, cfg);
  const bool cached = run_finished(dir);
  train_run(cfg, dir);
  const PruneHistory h = read_history_csv(dir / "history.csv");
  std::size_t evals = 0;
  const PruneRecord* best = nullptr;
  for (const auto& r : h.records) {
    evals += r.n_evals;
    if (best == nullptr || r.val_nll < best->val_nll) best = &r;
  }
  std::cout << (cached ? "cached " : "") << "train: " << h.records.size() << " iterations";
  if (best != nullptr) {
    std::cout << ", best iter " << best->iter << " prune_ratio " << format_real(best->prune_ratio)
              << " test_nll " << format_real(best->test_nll);
  }
  std::cout << ", " << evals << " function evaluations";
  if (!h.aborted.empty()) std::cout << ", aborted: " << h.aborted;
  std::cout << " -> " << dir.string() << '\n';
  return kOk;
}

int cmd_sweep(const Inputs& in) {
  const ExperimentConfig base = resolve_config(in);
  const fs::path root = output_dir(in, base);
  const SweepSettings& sw = base.sweep;
  if (sw.seeds.empty()) throw ConfigError("sweep.seeds must not be empty");
  if (sw.prune_ratios.empty()) throw ConfigError("sweep.prune_ratios must not be empty");

  struct Cell {
    std::string config;  // grid point without the seed
    std::uint64_t seed;
    ExperimentConfig cfg;
    fs::path dir;
  };
  std::vector<Cell> cells;
  std::vector<std::vector<std::size_t>> hiddens = sw.hidden;
  if (hiddens.empty()) hiddens.push_back(hidden_of(base.model));
  std::vector<std::string> acts = sw.activations;
  if (acts.empty()) acts.emplace_back(to_string(base.model.activation));
  std::vector<std::string> methods = sw.methods;
  if (methods.empty()) methods.emplace_back(to_string(base.solver.method));
  for (const auto& hidden : hiddens) {
    for (const auto& act : acts) {
      for (const auto& method : methods) {
        const std::string name = "h" + join_sizes(hidden, 'x') + "_" + act + "_" + method;
        for (const auto seed : sw.seeds) {
          ExperimentConfig c = base;
          try {
            c.model = MlpSpec::for_dimension(base.model.data_dim(), hidden, parse_activation(act));
            c.solver.method = parse_method(method);
          } catch (const ContractError& e) {
            throw ConfigError(e.what());
          }
          c.train.seed = seed;
          c.output_dir = (root / "cells" / (name + "_s" + std::to_string(seed))).string();
          c.validate();
          cells.push_back({name, seed, c, c.output_dir});
        }
      }
    }
  }

  const std::size_t workers = std::min(worker_count(), cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex io;
  std::vector<std::string> errors(cells.size());
  auto work = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const Cell& c = cells[i];
      const bool cached = run_finished(c.dir);
      try {
        train_run(c.cfg, c.dir);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
      std::lock_guard lock(io);
      std::cout << "cell " << c.dir.filename().string() << ": "
                << (!errors[i].empty() ? "failed: " + errors[i] : cached ? "cached" : "done") << '\n';
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
  }

  struct Row {
    const Cell* cell;
    double target;
    PruneRecord rec;
  };
  std::vector<Row> rows;
  std::map<std::pair<std::string, double>, std::vector<double>> groups;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!errors[i].empty()) continue;
    const PruneHistory h = read_history_csv(cells[i].dir / "history.csv");
    if (h.records.empty()) continue;
    for (const double target : sw.prune_ratios) {
      const PruneRecord* best = &h.records.front();
      for (const auto& r : h.records) {
        if (std::abs(r.prune_ratio - target) < std::abs(best->prune_ratio - target)) best = &r;
      }
      rows.push_back({&cells[i], target, *best});
      groups[{cells[i].config, target}].push_back(best->test_nll);
    }
  }

  const std::vector<std::string> cols{"config", "hidden", "activation", "method", "seed",
                                      "target_prune_ratio", "prune_ratio", "iter", "train_nll",
                                      "val_nll", "test_nll", "mean_test_nll", "median_test_nll"};
  {
    CsvWriter w(root / "sweep_nll.csv", cols);
    for (const auto& r : rows) {
      const auto& g = groups.at({r.cell->config, r.target});
      const double mean = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
      w.field(r.cell->config)
          .field(join_sizes(hidden_of(r.cell->cfg.model), 'x'))
          .field(std::string(to_string(r.cell->cfg.model.activation)))
          .field(std::string(to_string(r.cell->cfg.solver.method)))
          .field(static_cast<unsigned long long>(r.cell->seed))
          .field(r.target)
          .field(r.rec.prune_ratio)
          .field(r.rec.iter)
          .field(r.rec.train_nll)
          .field(r.rec.val_nll)
          .field(r.rec.test_nll)
          .field(mean)
          .field(median(g));
      w.end_row();
    }
  }
  {
    CsvWriter w(root / "sweep_summary.csv",
                {"config", "target_prune_ratio", "n_seeds", "mean_test_nll", "median_test_nll"});
    for (const auto& [key, g] : groups) {
      w.field(key.first)
          .field(key.second)
          .field(g.size())
          .field(std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size()))
          .field(median(g));
      w.end_row();
    }
  }

  std::size_t failed = 0;
  for (const auto& e : errors) failed += e.empty() ? 0 : 1;
  std::cout << "sweep: " << cells.size() << " runs, " << rows.size() << " (run, prune ratio) cells";
  if (failed) std::cout << ", " << failed << " failed";
  std::cout << " -> " << (root / "sweep_nll.csv").string() << '\n';
  return failed ? kRuntime : kOk;
}

int cmd_hessian(const Inputs& in) {
  const ExperimentConfig cli_cfg = resolve_config(in);
  const auto paths = resolve_checkpoints(in, cli_cfg);
  std::vector<HessianRow> rows;
  fs::path out;
  for (const auto& p : paths) {
    const CheckpointState ck = load_checkpoint(p);
    const ExperimentConfig cfg = parse_config(ck.config_json, in.overrides);
    if (out.empty()) out = in.out_dir.empty() ? fs::path(cfg.output_dir) : in.out_dir;
    const FlowModel model = flow_from_checkpoint(ck, cfg);
    const Splits splits = make_splits(cfg);
    HessianRow row{p.stem().string(), ck.prune_ratio, hessian_report(model, splits.train.points, cfg.hessian)};
    std::cout << row.tag << ": prune_ratio " << format_real(row.prune_ratio) << " lambda_max "
              << format_real(row.report.lambda_max) << " trace " << format_real(row.report.trace)
              << (row.report.converged ? "" : " (power iteration did not converge)") << '\n';
    rows.push_back(std::move(row));
  }
  fs::create_directories(out);
  write_hessian_csv(rows, out / "hessian.csv");
  std::cout << "hessian: " << rows.size() << " checkpoints -> " << (out / "hessian.csv").string() << '\n';
  return kOk;
}

int cmd_sample(const Inputs& in) {
  const ExperimentConfig cli_cfg = resolve_config(in);
  std::vector<fs::path> paths = in.checkpoints;
  if (paths.empty()) {
    const fs::path best = output_dir(in, cli_cfg) / "best.ckpt";
    if (!fs::exists(best)) throw CheckpointNotFound("checkpoint not found: " + best.string());
    paths.push_back(best);
  }
  fs::path out;
  std::vector<std::tuple<std::string, double, double, double>> quality;
  for (const auto& p : paths) {
    const CheckpointState ck = load_checkpoint(p);
    const ExperimentConfig cfg = parse_config(ck.config_json, in.overrides);
    if (out.empty()) out = in.out_dir.empty() ? fs::path(cfg.output_dir) : in.out_dir;
    fs::create_directories(out);
    const FlowModel model = flow_from_checkpoint(ck, cfg);
    const std::string tag = p.stem().string();
    const ExportMeta meta = meta_for(p, cfg.train.seed);

    const Points xs = sample(model, cfg.sample.n_samples, cfg.train.seed);
    {
      CsvWriter w(out / ("samples_" + tag + ".csv"), {"x", "y"});
      for (Eigen::Index j = 0; j < xs.cols(); ++j) {
        w.field(xs(0, j)).field(xs(1, j));
        w.end_row();
      }
    }
    const Eigen::Matrix2Xd centers = mode_centers(cfg.dataset.kind, cfg.dataset.geometry);
    if (centers.cols() > 0) {
      for (const double k : cfg.sample.n_std) {
        const double f = good_quality_fraction(xs, centers, cfg.dataset.geometry.sigma, k);
        quality.emplace_back(tag, ck.prune_ratio, k, f);
        std::cout << tag << ": good_quality_fraction(n_std=" << format_real(k) << ") = " << format_real(f) << '\n';
      }
    }
    const DensityGrid grid = export_density_grid(model, cfg.grid, out / ("density_" + tag + ".csv"), meta);
    export_vector_field(model, cfg.grid, out / ("field_" + tag + ".csv"), meta);
    Rng rng = make_stream(cfg.train.seed, Stream::sampling).split(1);
    Points z0(2, static_cast<Eigen::Index>(cfg.sample.n_trajectories));
    for (Eigen::Index j = 0; j < z0.cols(); ++j) {
      z0(0, j) = rng.normal();
      z0(1, j) = rng.normal();
    }
    export_trajectories(model, z0, cfg.sample.n_time_samples, out / ("trajectories_" + tag + ".csv"), meta);
    std::cout << tag << ": density mass on grid " << format_real(grid.mass()) << '\n';
  }
  if (!quality.empty()) {
    CsvWriter w(out / "quality.csv", {"tag", "prune_ratio", "n_std", "good_quality_fraction"});
    for (const auto& [tag, pr, k, f] : quality) {
      w.field(tag).field(pr).field(k).field(f);
      w.end_row();
    }
  }
  std::cout << "sample: " << paths.size() << " checkpoints -> " << out.string() << '\n';
  return kOk;
}

int cmd_classify(const Inputs& in) {
  const ExperimentConfig cfg = resolve_config(in);
  if (cfg.dataset.kind != DatasetKind::moons) {
    throw ConfigError("classify needs a labelled dataset; set dataset.kind to moons");
  }
  const fs::path dir = output_dir(in, cfg);
  RunDir rd = open_run_dir(cfg, dir, "classifier");
  const Splits splits = make_splits(cfg);
  const ClassifierModel init = ClassifierModel::create(cfg.model, cfg.train.seed, cfg.solver);
  if (!run_finished(dir)) {
    const RunOptions opts = run_options(rd, cfg, "classifier");
    const ClassifierTrainResult res = train_classifier(init, splits, cfg.train, cfg.prune, opts);
    finish_run(rd, cfg, "classifier", snapshot_at(res.snapshots, res.best_iter), res.history, true);
  }

  const PruneHistory h = read_history_csv(dir / "history.csv");
  const std::size_t n_traj = std::min<std::size_t>(cfg.sample.n_trajectories, splits.test.size());
  std::vector<std::size_t> idx(n_traj);
  std::iota(idx.begin(), idx.end(), 0);
  const Points traj_inputs = gather_columns(splits.test.points, idx);
  for (const auto& [tag, path] : {std::pair<std::string, fs::path>{"dense", dir / "checkpoints" / iter_name(0)},
                                  {"best", dir / "best.ckpt"}}) {
    const CheckpointState ck = load_checkpoint(path);
    const ClassifierModel m = classifier_from_checkpoint(ck, cfg);
    const ExportMeta meta = meta_for(path, cfg.train.seed);
    const DecisionBoundary b =
        export_decision_boundary(m, cfg.grid, splits.test.points, dir / ("boundary_" + tag + ".csv"), meta);
    export_vector_field(m.flow, cfg.grid, dir / ("field_" + tag + ".csv"), meta);
    export_trajectories(m.flow, traj_inputs, cfg.sample.n_time_samples, dir / ("trajectories_" + tag + ".csv"), meta);
    std::cout << tag << ": prune_ratio " << format_real(ck.prune_ratio) << " test_acc "
              << format_real(accuracy(m, splits.test)) << " margin " << format_real(b.margin) << '\n';
  }
  std::cout << "classify: " << h.records.size() << " iterations -> " << dir.string() << '\n';
  return kOk;
}

}  // namespace sparseflow::cli
