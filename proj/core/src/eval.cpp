#include "sparseflow/eval.hpp"

#include "sidecar.hpp"
#include "sparseflow/csv.hpp"
#include "sparseflow/error.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace sparseflow {

namespace detail {

void write_sidecar(const std::filesystem::path& csv, const std::string& kind,
                   const ExportMeta& meta, const nlohmann::json& extra) {
  nlohmann::json j{{"export", kind}, {"checkpoint_hash", meta.checkpoint_hash}, {"seed", meta.seed}};
  j.update(extra);
  std::ofstream out(csv.string() + ".json");
  if (!out) throw Error("cannot write sidecar for " + csv.string());
  out << j.dump(2) << '\n';
}

}  // namespace detail

double good_quality_fraction(const Points& samples, const Eigen::Matrix2Xd& centers, double sigma,
                             double n_std) {
  if (samples.cols() == 0) throw ContractError("good_quality_fraction needs samples");
  if (centers.cols() == 0 || !(sigma > 0.0)) {
    throw ContractError("good_quality_fraction needs mode centers and a positive sigma");
  }
  if (samples.rows() != 2) throw ContractError("good_quality_fraction expects 2D samples");
  const double radius2 = (n_std * sigma) * (n_std * sigma);
  std::size_t good = 0;
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    const double d2 = (centers.colwise() - samples.col(j)).colwise().squaredNorm().minCoeff();
    if (d2 <= radius2) ++good;
  }
  return static_cast<double>(good) / static_cast<double>(samples.cols());
}

void GridSpec::validate() const {
  if (!(x_max > x_min) || !(y_max > y_min)) throw ContractError("grid ranges are degenerate");
  if (resolution < 2) throw ContractError("grid resolution must be at least 2");
}

double GridSpec::node_x(std::size_t i) const {
  return x_min + (x_max - x_min) * static_cast<double>(i) / static_cast<double>(resolution - 1);
}
double GridSpec::node_y(std::size_t j) const {
  return y_min + (y_max - y_min) * static_cast<double>(j) / static_cast<double>(resolution - 1);
}
double GridSpec::center_x(std::size_t i) const {
  return x_min + (x_max - x_min) * (static_cast<double>(i) + 0.5) / static_cast<double>(resolution);
}
double GridSpec::center_y(std::size_t j) const {
  return y_min + (y_max - y_min) * (static_cast<double>(j) + 0.5) / static_cast<double>(resolution);
}
double GridSpec::cell_area() const {
  const auto r = static_cast<double>(resolution);
  return (x_max - x_min) / r * (y_max - y_min) / r;
}

double DensityGrid::mass() const {
  double s = 0.0;
  for (Eigen::Index i = 0; i < density.size(); ++i) {
    if (std::isfinite(density.data()[i])) s += density.data()[i];
  }
  return s * grid.cell_area();
}

DensityGrid density_grid(const FlowModel& model, const GridSpec& grid) {
  grid.validate();
  if (model.dim() != 2) throw ContractError("density grids need a 2D flow");
  const std::size_t res = grid.resolution;
  Points pts(2, static_cast<Eigen::Index>(res * res));
  for (std::size_t j = 0; j < res; ++j) {
    for (std::size_t i = 0; i < res; ++i) {
      pts.col(static_cast<Eigen::Index>(j * res + i)) << grid.center_x(i), grid.center_y(j);
    }
  }
  constexpr std::size_t kChunk = 1024;
  Eigen::VectorXd logp(pts.cols());
  for (Eigen::Index start = 0; start < pts.cols(); start += kChunk) {
    const Eigen::Index b = std::min<Eigen::Index>(kChunk, pts.cols() - start);
    try {
      logp.segment(start, b) = log_prob_batch(model, pts.middleCols(start, b), kChunk);
    } catch (const IntegrationError&) {
      // Retry cell by cell so one bad point does not blank the whole chunk.
      for (Eigen::Index k = start; k < start + b; ++k) {
        try {
          logp[k] = log_prob(model, pts.col(k));
        } catch (const IntegrationError&) {
          logp[k] = std::numeric_limits<double>::quiet_NaN();
        }
      }
    }
  }
  DensityGrid out;
  out.grid = grid;
  out.density.resize(static_cast<Eigen::Index>(res), static_cast<Eigen::Index>(res));
  for (std::size_t j = 0; j < res; ++j) {
    for (std::size_t i = 0; i < res; ++i) {
      const double lp = logp[static_cast<Eigen::Index>(j * res + i)];
      const double d = std::isfinite(lp) ? std::exp(lp) : std::numeric_limits<double>::quiet_NaN();
      if (!std::isfinite(d)) ++out.missing_cells;
      out.density(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = d;
    }
  }
  return out;
}

DensityGrid export_density_grid(const FlowModel& model, const GridSpec& grid,
                                const std::filesystem::path& path, const ExportMeta& meta) {
  DensityGrid g = density_grid(model, grid);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "x_min,x_max,y_min,y_max,resolution,missing_cells\n";
  out << format_real(grid.x_min) << ',' << format_real(grid.x_max) << ',' << format_real(grid.y_min)
      << ',' << format_real(grid.y_max) << ',' << grid.resolution << ',' << g.missing_cells << '\n';
  for (Eigen::Index j = 0; j < g.density.rows(); ++j) {
    for (Eigen::Index i = 0; i < g.density.cols(); ++i) {
      out << (i ? "," : "") << format_real(g.density(j, i));
    }
    out << '\n';
  }
  detail::write_sidecar(path, "density_grid", meta,
                        {{"grid", detail::grid_json(grid)},
                         {"missing_cells", g.missing_cells},
                         {"mass", g.mass()}});
  return g;
}

void export_vector_field(const FlowModel& model, const GridSpec& grid,
                         const std::filesystem::path& path, const ExportMeta& meta) {
  grid.validate();
  model.validate();
  if (model.dim() != 2) throw ContractError("vector fields need a 2D flow");
  const std::size_t res = grid.resolution;
  Points nodes(2, static_cast<Eigen::Index>(res * res));
  for (std::size_t j = 0; j < res; ++j) {
    for (std::size_t i = 0; i < res; ++i) {
      nodes.col(static_cast<Eigen::Index>(j * res + i)) << grid.node_x(i), grid.node_y(j);
    }
  }
  MlpBatch net(model.spec);
  Eigen::MatrixXd f;
  net.forward(model.effective_params(), nodes, grid.t_eval, f);
  CsvWriter w(path, {"x", "y", "fx", "fy", "norm"});
  for (Eigen::Index k = 0; k < nodes.cols(); ++k) {
    w.field(nodes(0, k)).field(nodes(1, k)).field(f(0, k)).field(f(1, k)).field(f.col(k).norm());
    w.end_row();
  }
  detail::write_sidecar(path, "vector_field", meta, {{"grid", detail::grid_json(grid)}});
}

std::vector<Points> trajectories(const FlowModel& model, const Points& inputs,
                                 std::size_t n_time_samples) {
  model.validate();
  if (n_time_samples < 2) throw ContractError("trajectories need at least two time samples");
  std::vector<Points> out;
  out.push_back(inputs);
  const double t0 = model.solver.t0;
  const double t1 = model.solver.t1;
  for (std::size_t k = 1; k < n_time_samples; ++k) {
    FlowModel leg = model;
    leg.solver.t0 = t0 + (t1 - t0) * static_cast<double>(k - 1) / static_cast<double>(n_time_samples - 1);
    leg.solver.t1 = t0 + (t1 - t0) * static_cast<double>(k) / static_cast<double>(n_time_samples - 1);
    out.push_back(push_forward(leg, out.back()));
  }
  return out;
}

void export_trajectories(const FlowModel& model, const Points& inputs, std::size_t n_time_samples,
                         const std::filesystem::path& path, const ExportMeta& meta) {
  if (model.dim() != 2) throw ContractError("trajectory export expects a 2D flow");
  const auto states = trajectories(model, inputs, n_time_samples);
  const double t0 = model.solver.t0;
  const double t1 = model.solver.t1;
  CsvWriter w(path, {"sample_id", "t", "z1", "z2"});
  for (Eigen::Index s = 0; s < inputs.cols(); ++s) {
    for (std::size_t k = 0; k < states.size(); ++k) {
      const double t = t0 + (t1 - t0) * static_cast<double>(k) / static_cast<double>(n_time_samples - 1);
      w.field(static_cast<long long>(s)).field(t).field(states[k](0, s)).field(states[k](1, s));
      w.end_row();
    }
  }
  detail::write_sidecar(path, "trajectories", meta,
                        {{"n_time_samples", n_time_samples}, {"n_inputs", inputs.cols()}});
}

}  // namespace sparseflow
