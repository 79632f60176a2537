#include "sparseflow/data.hpp"

#include "sparseflow/csv.hpp"
#include "sparseflow/error.hpp"
#include "sparseflow/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>

namespace sparseflow {
namespace {

using nlohmann::json;

std::filesystem::path sidecar_path(const std::filesystem::path& p) {
  return p.string() + ".json";
}

json geometry_json(const Geometry& g) {
  return json{{"n_modes", g.n_modes},
              {"radius", g.radius},
              {"sigma", g.sigma},
              {"spiral_r0", g.spiral_r0},
              {"spiral_growth", g.spiral_growth},
              {"spiral_phi_max", g.phi_max()},
              {"noise", g.noise}};
}

Geometry geometry_from_json(const json& j) {
  Geometry g;
  g.n_modes = j.at("n_modes").get<std::size_t>();
  g.radius = j.at("radius").get<double>();
  g.sigma = j.at("sigma").get<double>();
  g.spiral_r0 = j.at("spiral_r0").get<double>();
  g.spiral_growth = j.at("spiral_growth").get<double>();
  g.spiral_phi_max = j.at("spiral_phi_max").get<double>();
  g.noise = j.at("noise").get<double>();
  return g;
}

}  // namespace

std::string_view to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::gaussians: return "gaussians";
    case DatasetKind::gaussian_spiral: return "gaussian_spiral";
    case DatasetKind::spirals: return "spirals";
    case DatasetKind::moons: return "moons";
  }
  return "unknown";
}

DatasetKind parse_dataset_kind(std::string_view name) {
  if (name == "gaussians") return DatasetKind::gaussians;
  if (name == "gaussian_spiral") return DatasetKind::gaussian_spiral;
  if (name == "spirals") return DatasetKind::spirals;
  if (name == "moons") return DatasetKind::moons;
  throw ContractError("unknown dataset kind '" + std::string(name) + "'");
}

double Geometry::phi_max() const {
  return spiral_phi_max > 0.0 ? spiral_phi_max : 3.0 * std::numbers::pi;
}

Geometry default_geometry(DatasetKind kind) {
  Geometry g;
  if (kind == DatasetKind::gaussian_spiral) {
    g.n_modes = 8;
    g.sigma = 0.25;
  }
  return g;
}

Eigen::Matrix2Xd mode_centers(DatasetKind kind, const Geometry& g) {
  if (kind == DatasetKind::gaussians) {
    Eigen::Matrix2Xd c(2, static_cast<Eigen::Index>(g.n_modes));
    for (std::size_t k = 0; k < g.n_modes; ++k) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(g.n_modes);
      c.col(static_cast<Eigen::Index>(k)) << g.radius * std::cos(a), g.radius * std::sin(a);
    }
    return c;
  }
  if (kind == DatasetKind::gaussian_spiral) {
    Eigen::Matrix2Xd c(2, static_cast<Eigen::Index>(g.n_modes));
    const double denom = g.n_modes > 1 ? static_cast<double>(g.n_modes - 1) : 1.0;
    for (std::size_t k = 0; k < g.n_modes; ++k) {
      const double phi = g.phi_max() * static_cast<double>(k) / denom;
      const double r = g.spiral_r0 + g.spiral_growth * phi;
      c.col(static_cast<Eigen::Index>(k)) << r * std::cos(phi), r * std::sin(phi);
    }
    return c;
  }
  return {};
}

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
  Dataset out = *this;
  out.points.resize(2, static_cast<Eigen::Index>(idx.size()));
  out.labels.clear();
  out.components.clear();
  for (std::size_t j = 0; j < idx.size(); ++j) {
    out.points.col(static_cast<Eigen::Index>(j)) = points.col(static_cast<Eigen::Index>(idx[j]));
    if (!labels.empty()) out.labels.push_back(labels[idx[j]]);
    if (!components.empty()) out.components.push_back(components[idx[j]]);
  }
  return out;
}

Dataset make_dataset(DatasetKind kind, std::size_t n, std::uint64_t seed,
                     const std::optional<Geometry>& geometry) {
  if (n < 1) throw ContractError("dataset needs at least one point");
  Dataset ds;
  ds.kind = kind;
  ds.seed = seed;
  ds.geometry = geometry.value_or(default_geometry(kind));
  const Geometry& g = ds.geometry;
  ds.points.resize(2, static_cast<Eigen::Index>(n));
  ds.components.resize(n);
  Rng rng = make_stream(seed, Stream::data);

  switch (kind) {
    case DatasetKind::gaussians:
    case DatasetKind::gaussian_spiral: {
      if (g.n_modes < 1 || !(g.sigma > 0.0)) throw ContractError("invalid mode geometry");
      ds.mode_centers = mode_centers(kind, g);
      ds.mode_sigma = g.sigma;
      for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<Eigen::Index>(rng.below(g.n_modes));
        const double dx = rng.normal();
        const double dy = rng.normal();
        ds.points.col(static_cast<Eigen::Index>(i)) =
            ds.mode_centers.col(k) + g.sigma * Eigen::Vector2d(dx, dy);
        ds.components[i] = static_cast<int>(k);
      }
      break;
    }
    case DatasetKind::spirals: {
      for (std::size_t i = 0; i < n; ++i) {
        const int arm = static_cast<int>(i % 2);
        const double phi = std::sqrt(rng.uniform()) * 3.0 * std::numbers::pi;
        double x = -std::cos(phi) * phi / 3.0;
        double y = std::sin(phi) * phi / 3.0;
        if (arm == 1) {
          x = -x;
          y = -y;
        }
        const double nx = rng.normal();
        const double ny = rng.normal();
        ds.points.col(static_cast<Eigen::Index>(i)) << x + g.noise * nx, y + g.noise * ny;
        ds.components[i] = arm;
      }
      break;
    }
    case DatasetKind::moons: {
      ds.labels.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        const double theta = rng.uniform() * std::numbers::pi;
        double x = std::cos(theta);
        double y = std::sin(theta);
        if (label == 1) {
          x = 1.0 - x;
          y = 0.5 - y;
        }
        const double nx = rng.normal();
        const double ny = rng.normal();
        ds.points.col(static_cast<Eigen::Index>(i)) << x + g.noise * nx, y + g.noise * ny;
        ds.labels[i] = label;
        ds.components[i] = label;
      }
      break;
    }
  }
  return ds;
}

Splits split(const Dataset& ds, const std::array<double, 3>& fractions, std::uint64_t seed) {
  const std::size_t n = ds.size();
  if (n < 3) throw ContractError("cannot split a dataset of fewer than 3 points");
  for (double f : fractions) {
    if (!(f > 0.0)) throw ContractError("split fractions must be positive");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ContractError("split fractions must sum to 1");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_stream(seed, Stream::split);
  rng.shuffle(std::span<std::size_t>(order));

  auto count = [n](double f) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
  };
  std::size_t n_val = std::max<std::size_t>(1, count(fractions[1]));
  std::size_t n_train = std::max<std::size_t>(1, count(fractions[0]));
  if (n_train + n_val >= n) n_train = n - n_val - 1;

  auto take = [&](std::size_t from, std::size_t len) {
    return ds.subset(std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(from),
                                              order.begin() + static_cast<std::ptrdiff_t>(from + len)));
  };
  return Splits{take(0, n_train), take(n_train, n_val),
                take(n_train + n_val, n - n_train - n_val)};
}

void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::vector<std::string> header{"x", "y"};
  if (ds.has_labels()) header.emplace_back("label");
  CsvWriter w(path, header);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    w.field(ds.points(0, c)).field(ds.points(1, c));
    if (ds.has_labels()) w.field(ds.labels[i]);
    w.end_row();
  }

  json meta{{"kind", std::string(to_string(ds.kind))},
            {"seed", ds.seed},
            {"n_points", ds.size()},
            {"geometry", geometry_json(ds.geometry)}};
  if (ds.has_modes()) {
    json centers = json::array();
    for (Eigen::Index k = 0; k < ds.mode_centers.cols(); ++k) {
      centers.push_back({ds.mode_centers(0, k), ds.mode_centers(1, k)});
    }
    meta["mode_centers"] = centers;
    meta["mode_sigma"] = *ds.mode_sigma;
  }
  meta["components"] = ds.components;
  std::ofstream out(sidecar_path(path));
  if (!out) throw Error("cannot write " + sidecar_path(path).string());
  out << meta.dump(2) << '\n';
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  Dataset ds;
  const std::size_t cx = t.column("x");
  const std::size_t cy = t.column("y");
  const bool labelled = std::find(t.header.begin(), t.header.end(), "label") != t.header.end();
  ds.points.resize(2, static_cast<Eigen::Index>(t.rows.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    ds.points(0, c) = std::stod(t.rows[i].at(cx));
    ds.points(1, c) = std::stod(t.rows[i].at(cy));
    if (labelled) ds.labels.push_back(std::stoi(t.rows[i].at(t.column("label"))));
  }

  std::ifstream side(sidecar_path(path));
  if (!side) return ds;
  const json meta = json::parse(side);
  ds.kind = parse_dataset_kind(meta.at("kind").get<std::string>());
  ds.seed = meta.at("seed").get<std::uint64_t>();
  ds.geometry = geometry_from_json(meta.at("geometry"));
  if (meta.contains("mode_centers")) {
    const auto& centers = meta.at("mode_centers");
    ds.mode_centers.resize(2, static_cast<Eigen::Index>(centers.size()));
    for (std::size_t k = 0; k < centers.size(); ++k) {
      ds.mode_centers(0, static_cast<Eigen::Index>(k)) = centers[k][0].get<double>();
      ds.mode_centers(1, static_cast<Eigen::Index>(k)) = centers[k][1].get<double>();
    }
    ds.mode_sigma = meta.at("mode_sigma").get<double>();
  }
  if (meta.contains("components")) ds.components = meta.at("components").get<std::vector<int>>();
  return ds;
}

}  // namespace sparseflow
