#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace sparseflow::cli {
namespace {

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

int fail(int code, const std::string& what) {
  std::cerr << "sparseflow: error: " << one_line(what) << '\n';
  return code;
}

}  // namespace

std::size_t worker_count() {
  const char* env = std::getenv("SPARSEFLOW_WORKERS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || n < 1) return 1;
  return static_cast<std::size_t>(n);
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Sparse continuous normalizing flows on 2D toy data"};
  app.name("sparseflow");
  app.require_subcommand(1);

  Inputs in;
  std::vector<std::string> checkpoints;
  struct Entry {
    const char* name;
    const char* help;
    int (*fn)(const Inputs&);
    bool takes_checkpoints;
  };
  const Entry entries[] = {
      {"train", "Prune/retrain a flow; writes checkpoints and history.csv", cmd_train, false},
      {"sweep", "Repeat train over seeds and the configured grid; writes sweep_nll.csv", cmd_sweep,
       false},
      {"hessian", "Curvature report per checkpoint; writes hessian.csv", cmd_hessian, true},
      {"sample", "Samples, mode-collapse metric and grid exports per checkpoint", cmd_sample, true},
      {"classify", "Prune/retrain a neural ODE classifier on moons with boundary exports",
       cmd_classify, false},
  };
  std::vector<std::pair<CLI::App*, const Entry*>> subs;
  for (const auto& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    sub->add_option("-c,--config", in.config_path, "JSON config (defaults follow dataset.kind)");
    sub->add_option("-s,--set", in.overrides, "Override a config key, e.g. train.lr=0.005")
        ->allow_extra_args(false);
    sub->add_option("-o,--out", in.out_dir, "Output directory (default: output_dir from config)");
    if (e.takes_checkpoints) {
      sub->add_option("-k,--checkpoint", checkpoints,
                      "Checkpoint file; default: every checkpoint of the output directory")
          ->allow_extra_args(false);
    }
    subs.emplace_back(sub, &e);
  }

  if (argc > 1 && argv[1][0] != '-') {
    const std::string cmd = argv[1];
    bool known = false;
    for (const auto& e : entries) known = known || cmd == e.name;
    if (!known) {
      return fail(kUsage, "unknown command '" + cmd + "'; expected train, sweep, hessian, sample or classify");
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  } catch (const CLI::ParseError& e) {
    return fail(kUsage, e.what());
  }
  for (const auto& c : checkpoints) in.checkpoints.emplace_back(c);

  try {
    for (const auto& [sub, entry] : subs) {
      if (sub->parsed()) return entry->fn(in);
    }
    return fail(kUsage, "no command given");
  } catch (const ConfigError& e) {
    return fail(kInvalidConfig, e.what());
  } catch (const CheckpointNotFound& e) {
    return fail(kMissingCheckpoint, e.what());
  } catch (const CheckpointError& e) {
    return fail(kCorruptCheckpoint, e.what());
  } catch (const std::exception& e) {
    return fail(kRuntime, e.what());
  }
}

}  // namespace sparseflow::cli
