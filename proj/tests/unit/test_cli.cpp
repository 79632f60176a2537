#include <doctest.h>

#include "cli.hpp"

#include <sparseflow/csv.hpp>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using sparseflow::cli::run;

namespace {

int cli(std::initializer_list<std::string> args) {
  std::vector<std::string> store{"sparseflow"};
  store.insert(store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : store) argv.push_back(s.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const std::vector<std::string> kTiny{"-s", "dataset.n=200", "-s", "prune.epochs_per_cycle=2",
                                     "-s", "prune.max_iters=3", "-s", "train.batch_size=64",
                                     "-s", "prune.patience=3"};

int cli_tiny(const std::string& cmd, const fs::path& out, std::vector<std::string> extra = {}) {
  std::vector<std::string> store{"sparseflow", cmd, "-o", out.string()};
  store.insert(store.end(), kTiny.begin(), kTiny.end());
  store.insert(store.end(), extra.begin(), extra.end());
  std::vector<const char*> argv;
  for (const auto& s : store) argv.push_back(s.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("exit statuses") {
  TempDir d("sparseflow_test_cli_exit");
  CHECK(cli({}) == 2);
  CHECK(cli({"fly"}) == 2);
  CHECK(cli({"train", "--bogus-flag"}) == 2);
  CHECK(cli({"train", "-s", "train.nope=1"}) == 3);
  CHECK(cli({"train", "-c", (d.path / "missing.json").string()}) == 3);
  CHECK(cli({"classify", "-s", "dataset.kind=gaussians"}) == 3);
  CHECK(cli({"sample", "-k", (d.path / "none.ckpt").string()}) == 4);
  std::ofstream(d.path / "junk.ckpt") << "not a checkpoint";
  CHECK(cli({"hessian", "-k", (d.path / "junk.ckpt").string()}) == 5);
  CHECK(cli({"--help"}) == 0);
}

TEST_CASE("train is deterministic, resumable and idempotent") {
  TempDir d("sparseflow_test_cli_train");
  REQUIRE(cli_tiny("train", d.path / "a") == 0);
  REQUIRE(cli_tiny("train", d.path / "b") == 0);
  const std::string ha = slurp(d.path / "a" / "history.csv");
  CHECK(ha == slurp(d.path / "b" / "history.csv"));
  const auto table = sparseflow::read_csv(d.path / "a" / "history.csv");
  REQUIRE(table.rows.size() == 4);
  CHECK(table.rows[0][table.column("prune_ratio")] == "0");

  // Simulate a run killed after iteration 1.
  fs::create_directories(d.path / "c" / "checkpoints");
  fs::copy_file(d.path / "a" / "config.json", d.path / "c" / "config.json");
  for (const char* f : {"iter_0000.ckpt", "iter_0001.ckpt"}) {
    fs::copy_file(d.path / "a" / "checkpoints" / f, d.path / "c" / "checkpoints" / f);
  }
  REQUIRE(cli_tiny("train", d.path / "c") == 0);
  CHECK(slurp(d.path / "c" / "history.csv") == ha);
  CHECK(slurp(d.path / "c" / "checkpoints" / "iter_0003.ckpt") ==
        slurp(d.path / "a" / "checkpoints" / "iter_0003.ckpt"));

  // A finished run is left alone; a different config in the same directory is refused.
  const auto stamp = fs::last_write_time(d.path / "a" / "history.csv");
  REQUIRE(cli_tiny("train", d.path / "a") == 0);
  CHECK(fs::last_write_time(d.path / "a" / "history.csv") == stamp);
  CHECK(cli_tiny("train", d.path / "a", {"-s", "train.lr=0.001"}) == 3);

  CHECK(cli_tiny("hessian", d.path / "a",
                 {"-s", "hessian.power_iters=5", "-s", "hessian.n_probes=4", "-s", "hessian.rk4_step=0.25"}) == 0);
  CHECK(sparseflow::read_csv(d.path / "a" / "hessian.csv").rows.size() == 4);
  CHECK(fs::exists(d.path / "a" / "hessian_normalized.csv"));
  CHECK(cli_tiny("sample", d.path / "a", {"-s", "sample.n_samples=500", "-s", "grid.resolution=12"}) == 0);
  CHECK(sparseflow::read_csv(d.path / "a" / "quality.csv").rows.size() == 3);
  CHECK(fs::exists(d.path / "a" / "density_best.csv"));
}

TEST_CASE("sweep emits one row per (seed, prune ratio) and skips finished runs") {
  TempDir d("sparseflow_test_cli_sweep");
  const std::vector<std::string> grid{"-s", "sweep.seeds=[0,1]", "-s", "sweep.prune_ratios=[0,0.1,0.2]"};
  REQUIRE(cli_tiny("sweep", d.path, grid) == 0);
  const auto t = sparseflow::read_csv(d.path / "sweep_nll.csv");
  CHECK(t.rows.size() == 2 * 3);
  CHECK(t.header.back() == "median_test_nll");
  const std::string before = slurp(d.path / "sweep_nll.csv");
  const auto stamp = fs::last_write_time(d.path / "cells" / "h128_sigmoid_dopri5_s0" / "history.csv");
  REQUIRE(cli_tiny("sweep", d.path, grid) == 0);
  CHECK(fs::last_write_time(d.path / "cells" / "h128_sigmoid_dopri5_s0" / "history.csv") == stamp);
  CHECK(slurp(d.path / "sweep_nll.csv") == before);
  CHECK(sparseflow::read_csv(d.path / "sweep_summary.csv").rows.size() == 3);
}

TEST_CASE("classify writes history with accuracy and boundary exports") {
  TempDir d("sparseflow_test_cli_classify");
  REQUIRE(cli({"classify", "-o", d.path.string(), "-s", "dataset.kind=moons", "-s", "dataset.n=200",
               "-s", "prune.epochs_per_cycle=3", "-s", "prune.max_iters=1", "-s", "grid.resolution=10",
               "-s", "sample.n_trajectories=5", "-s", "sample.n_time_samples=4"}) == 0);
  const auto h = sparseflow::read_csv(d.path / "history.csv");
  CHECK(h.header.back() == "test_acc");
  CHECK(h.rows.size() == 2);
  CHECK(sparseflow::read_csv(d.path / "boundary_best.csv").rows.size() == 100);
  CHECK(sparseflow::read_csv(d.path / "trajectories_dense.csv").rows.size() == 20);
}
