#include "sparseflow/config.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace sparseflow {
namespace {

using nlohmann::json;

// Removes and returns obj[key]; the caller has checked presence.
json take(json& obj, const char* key) {
  json v = std::move(obj.at(key));
  obj.erase(key);
  return v;
}

template <typename T>
void read(json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = take(obj, key).get<T>();
}

void expect_empty(const json& obj, const std::string& section) {
  if (!obj.empty()) {
    throw ConfigError("unknown config key '" + (section.empty() ? "" : section + ".") +
                      obj.begin().key() + "'");
  }
}

json section_of(json& root, const char* key) {
  if (!root.contains(key)) return json::object();
  json s = take(root, key);
  if (!s.is_object()) throw ConfigError(std::string("config section '") + key + "' must be an object");
  return s;
}

json to_json_value(const ExperimentConfig& c) {
  json lr_steps = json::array();
  for (const auto& s : c.train.lr_steps) {
    lr_steps.push_back({{"epoch", s.epoch}, {"multiplier", s.multiplier}});
  }
  const Geometry& g = c.dataset.geometry;
  return json{
      {"dataset",
       {{"kind", std::string(to_string(c.dataset.kind))},
        {"n", c.dataset.n},
        {"seed", c.dataset.seed},
        {"split", c.dataset.split},
        {"geometry",
         {{"n_modes", g.n_modes},
          {"radius", g.radius},
          {"sigma", g.sigma},
          {"spiral_r0", g.spiral_r0},
          {"spiral_growth", g.spiral_growth},
          {"spiral_phi_max", g.spiral_phi_max},
          {"noise", g.noise}}}}},
      {"model",
       {{"layer_sizes", c.model.layer_sizes},
        {"activation", std::string(to_string(c.model.activation))},
        {"time_mode", "concat"}}},
      {"solver",
       {{"method", std::string(to_string(c.solver.method))},
        {"t0", c.solver.t0},
        {"t1", c.solver.t1},
        {"fixed_step", c.solver.fixed_step},
        {"rtol", c.solver.rtol},
        {"atol", c.solver.atol},
        {"max_steps", c.solver.max_steps},
        {"backprop", std::string(to_string(c.solver.backprop))}}},
      {"train",
       {{"optimizer", std::string(to_string(c.train.optimizer))},
        {"lr", c.train.lr},
        {"lr_steps", lr_steps},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"eps", c.train.eps},
        {"weight_decay", c.train.weight_decay},
        {"batch_size", c.train.batch_size},
        {"epochs", c.train.epochs},
        {"seed", c.train.seed}}},
      {"prune",
       {{"mode", std::string(to_string(c.prune.mode))},
        {"pr_per_iter", c.prune.pr_per_iter},
        {"epochs_per_cycle", c.prune.epochs_per_cycle},
        {"patience", c.prune.patience},
        {"max_iters", c.prune.max_iters}}},
      {"divergence",
       {{"kind", std::string(to_string(c.divergence.kind))},
        {"noise", std::string(to_string(c.divergence.noise))},
        {"probes_per_sample", c.divergence.probes_per_sample}}},
      {"hessian",
       {{"fd_step", c.hessian.fd_step},
        {"power_iters", c.hessian.power_iters},
        {"tol", c.hessian.tol},
        {"n_probes", c.hessian.n_probes},
        {"seed", c.hessian.seed},
        {"rk4_step", c.hessian.rk4_step}}},
      {"sample",
       {{"n_samples", c.sample.n_samples},
        {"n_std", c.sample.n_std},
        {"n_trajectories", c.sample.n_trajectories},
        {"n_time_samples", c.sample.n_time_samples}}},
      {"sweep",
       {{"seeds", c.sweep.seeds},
        {"prune_ratios", c.sweep.prune_ratios},
        {"activations", c.sweep.activations},
        {"methods", c.sweep.methods},
        {"hidden", c.sweep.hidden}}},
      {"grid",
       {{"x_min", c.grid.x_min},
        {"x_max", c.grid.x_max},
        {"y_min", c.grid.y_min},
        {"y_max", c.grid.y_max},
        {"resolution", c.grid.resolution},
        {"t_eval", c.grid.t_eval}}},
      {"output_dir", c.output_dir},
      {"deterministic", c.deterministic}};
}

ExperimentConfig from_json_value(json root) {
  ExperimentConfig c;
  {
    json s = section_of(root, "dataset");
    if (s.contains("kind")) c.dataset.kind = parse_dataset_kind(take(s, "kind").get<std::string>());
    read(s, "n", c.dataset.n);
    read(s, "seed", c.dataset.seed);
    read(s, "split", c.dataset.split);
    json g = section_of(s, "geometry");
    Geometry& geo = c.dataset.geometry;
    read(g, "n_modes", geo.n_modes);
    read(g, "radius", geo.radius);
    read(g, "sigma", geo.sigma);
    read(g, "spiral_r0", geo.spiral_r0);
    read(g, "spiral_growth", geo.spiral_growth);
    read(g, "spiral_phi_max", geo.spiral_phi_max);
    read(g, "noise", geo.noise);
    expect_empty(g, "dataset.geometry");
    expect_empty(s, "dataset");
  }
  {
    json s = section_of(root, "model");
    read(s, "layer_sizes", c.model.layer_sizes);
    if (s.contains("activation")) c.model.activation = parse_activation(take(s, "activation").get<std::string>());
    if (s.contains("time_mode") && take(s, "time_mode").get<std::string>() != "concat") {
      throw ConfigError("model.time_mode must be 'concat'");
    }
    expect_empty(s, "model");
  }
  {
    json s = section_of(root, "solver");
    if (s.contains("method")) c.solver.method = parse_method(take(s, "method").get<std::string>());
    read(s, "t0", c.solver.t0);
    read(s, "t1", c.solver.t1);
    read(s, "fixed_step", c.solver.fixed_step);
    read(s, "rtol", c.solver.rtol);
    read(s, "atol", c.solver.atol);
    read(s, "max_steps", c.solver.max_steps);
    if (s.contains("backprop")) c.solver.backprop = parse_backprop(take(s, "backprop").get<std::string>());
    expect_empty(s, "solver");
  }
  {
    json s = section_of(root, "train");
    if (s.contains("optimizer")) c.train.optimizer = parse_optimizer(take(s, "optimizer").get<std::string>());
    read(s, "lr", c.train.lr);
    if (s.contains("lr_steps")) {
      c.train.lr_steps.clear();
      for (const auto& e : take(s, "lr_steps")) {
        if (e.is_object()) {
          if (e.size() != 2 || !e.contains("epoch") || !e.contains("multiplier")) {
            throw ConfigError("train.lr_steps entries need exactly 'epoch' and 'multiplier'");
          }
          c.train.lr_steps.push_back({e.at("epoch").get<std::size_t>(), e.at("multiplier").get<double>()});
        } else {
          c.train.lr_steps.push_back({e.at(0).get<std::size_t>(), e.at(1).get<double>()});
        }
      }
    }
    read(s, "beta1", c.train.beta1);
    read(s, "beta2", c.train.beta2);
    read(s, "eps", c.train.eps);
    read(s, "weight_decay", c.train.weight_decay);
    read(s, "batch_size", c.train.batch_size);
    read(s, "epochs", c.train.epochs);
    read(s, "seed", c.train.seed);
    expect_empty(s, "train");
  }
  {
    json s = section_of(root, "prune");
    if (s.contains("mode")) c.prune.mode = parse_prune_mode(take(s, "mode").get<std::string>());
    read(s, "pr_per_iter", c.prune.pr_per_iter);
    read(s, "epochs_per_cycle", c.prune.epochs_per_cycle);
    read(s, "patience", c.prune.patience);
    read(s, "max_iters", c.prune.max_iters);
    expect_empty(s, "prune");
  }
  {
    json s = section_of(root, "divergence");
    if (s.contains("kind")) c.divergence.kind = parse_divergence_kind(take(s, "kind").get<std::string>());
    if (s.contains("noise")) c.divergence.noise = parse_noise_kind(take(s, "noise").get<std::string>());
    read(s, "probes_per_sample", c.divergence.probes_per_sample);
    expect_empty(s, "divergence");
  }
  {
    json s = section_of(root, "hessian");
    read(s, "fd_step", c.hessian.fd_step);
    read(s, "power_iters", c.hessian.power_iters);
    read(s, "tol", c.hessian.tol);
    read(s, "n_probes", c.hessian.n_probes);
    read(s, "seed", c.hessian.seed);
    read(s, "rk4_step", c.hessian.rk4_step);
    expect_empty(s, "hessian");
  }
  {
    json s = section_of(root, "sample");
    read(s, "n_samples", c.sample.n_samples);
    read(s, "n_std", c.sample.n_std);
    read(s, "n_trajectories", c.sample.n_trajectories);
    read(s, "n_time_samples", c.sample.n_time_samples);
    expect_empty(s, "sample");
  }
  {
    json s = section_of(root, "sweep");
    read(s, "seeds", c.sweep.seeds);
    read(s, "prune_ratios", c.sweep.prune_ratios);
    read(s, "activations", c.sweep.activations);
    read(s, "methods", c.sweep.methods);
    read(s, "hidden", c.sweep.hidden);
    expect_empty(s, "sweep");
  }
  {
    json s = section_of(root, "grid");
    read(s, "x_min", c.grid.x_min);
    read(s, "x_max", c.grid.x_max);
    read(s, "y_min", c.grid.y_min);
    read(s, "y_max", c.grid.y_max);
    read(s, "resolution", c.grid.resolution);
    read(s, "t_eval", c.grid.t_eval);
    expect_empty(s, "grid");
  }
  read(root, "output_dir", c.output_dir);
  read(root, "deterministic", c.deterministic);
  expect_empty(root, "");
  return c;
}

void apply_override(json& root, const std::string& item) {
  const auto eq = item.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + item + "' is not of the form key.path=value");
  }
  const std::string path = item.substr(0, eq);
  const std::string text = item.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + item + "' has an empty key");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    json& child = (*node)[key];
    if (child.is_null()) child = json::object();
    if (!child.is_object()) throw ConfigError("override '" + item + "' descends into a non-object");
    node = &child;
    start = dot + 1;
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults(DatasetKind kind) {
  ExperimentConfig c;
  c.dataset.kind = kind;
  c.dataset.geometry = default_geometry(kind);
  c.solver.method = Method::dopri5;
  c.solver.backprop = Backprop::adjoint;
  c.solver.rtol = c.solver.atol = 1e-5;
  c.divergence.kind = DivergenceKind::hutchinson;
  c.prune.pr_per_iter = 0.1;
  c.prune.max_iters = 25;
  switch (kind) {
    case DatasetKind::gaussians:
      c.model = MlpSpec::for_dimension(2, {128}, Activation::sigmoid);
      c.train.optimizer = Optimizer::adamw;
      c.train.lr = 5e-3;
      c.train.weight_decay = 1e-5;
      c.train.epochs = 100;
      c.train.batch_size = 1024;
      break;
    case DatasetKind::gaussian_spiral:
    case DatasetKind::spirals:
      c.model = MlpSpec::for_dimension(2, {64, 64, 64}, Activation::sigmoid);
      c.train.optimizer = Optimizer::adamw;
      c.train.lr = 5e-2;
      c.train.weight_decay = kind == DatasetKind::spirals ? 1e-6 : 1e-2;
      c.train.epochs = 100;
      c.train.batch_size = 1024;
      c.grid.x_min = c.grid.y_min = kind == DatasetKind::spirals ? -4.0 : -5.0;
      c.grid.x_max = c.grid.y_max = kind == DatasetKind::spirals ? 4.0 : 5.0;
      break;
    case DatasetKind::moons:
      c.dataset.n = 1000;
      c.model = MlpSpec::for_dimension(2, {128}, Activation::tanh);
      c.solver.rtol = c.solver.atol = 1e-4;
      c.train.optimizer = Optimizer::adam;
      c.train.lr = 1e-2;
      c.train.weight_decay = 1e-4;
      c.train.epochs = 50;
      c.train.batch_size = 128;
      c.grid.x_min = -2.0;
      c.grid.x_max = 3.0;
      c.grid.y_min = -1.5;
      c.grid.y_max = 2.0;
      break;
  }
  c.prune.epochs_per_cycle = c.train.epochs;
  return c;
}

void ExperimentConfig::validate() const {
  try {
    model.validate();
    if (model.data_dim() != 2) throw ConfigError("model output width must be 2 for the 2D datasets");
    solver.validate();
    if (solver.backprop == Backprop::bptt && !solver.fixed_step_method()) {
      throw ConfigError("backprop 'bptt' requires a fixed-step solver (euler or rk4), not dopri5");
    }
    train.validate();
    prune.validate();
    divergence.validate();
    grid.validate();
    if (dataset.n < 3) throw ConfigError("dataset.n must be at least 3");
    double sum = 0.0;
    for (double f : dataset.split) {
      if (!(f > 0.0)) throw ConfigError("dataset.split fractions must be positive");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("dataset.split must sum to 1");
    if (!(hessian.fd_step > 0.0) || hessian.power_iters < 1 || hessian.n_probes < 2 ||
        !(hessian.rk4_step > 0.0) || !(hessian.tol > 0.0)) {
      throw ConfigError("invalid hessian settings");
    }
    if (sample.n_samples < 1 || sample.n_time_samples < 2) throw ConfigError("invalid sample settings");
    for (double s : sample.n_std) {
      if (!(s > 0.0)) throw ConfigError("sample.n_std entries must be positive");
    }
    if (sweep.seeds.empty()) throw ConfigError("sweep.seeds must not be empty");
    for (double r : sweep.prune_ratios) {
      if (!(r >= 0.0 && r < 1.0)) throw ConfigError("sweep.prune_ratios must lie in [0, 1)");
    }
    for (const auto& a : sweep.activations) parse_activation(a);
    for (const auto& m : sweep.methods) parse_method(m);
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig parse_config(std::string_view text, const std::vector<std::string>& overrides) {
  json user = json::object();
  if (!text.empty()) {
    user = json::parse(text, nullptr, false);
    if (user.is_discarded() || !user.is_object()) throw ConfigError("config is not a JSON object");
  }
  for (const auto& o : overrides) apply_override(user, o);

  DatasetKind kind = DatasetKind::gaussians;
  try {
    if (user.contains("dataset") && user["dataset"].contains("kind")) {
      kind = parse_dataset_kind(user["dataset"]["kind"].get<std::string>());
    }
    json merged = to_json_value(ExperimentConfig::defaults(kind));
    merged.merge_patch(user);
    ExperimentConfig cfg = from_json_value(std::move(merged));
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

std::string to_json(const ExperimentConfig& cfg) { return to_json_value(cfg).dump(2); }

}  // namespace sparseflow
