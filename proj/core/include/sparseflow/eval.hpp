#pragma once

#include "sparseflow/cnf.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

namespace sparseflow {

/// Fraction of samples within n_std * sigma (Euclidean) of their nearest
/// mode center.
double good_quality_fraction(const Points& samples, const Eigen::Matrix2Xd& centers, double sigma,
                             double n_std);

struct GridSpec {
  double x_min = -6.0;
  double x_max = 6.0;
  double y_min = -6.0;
  double y_max = 6.0;
  std::size_t resolution = 100;
  double t_eval = 0.0;  // vector field time slice; defaults to t0

  void validate() const;
  /// Node coordinates (resolution points per axis, ends included).
  [[nodiscard]] double node_x(std::size_t i) const;
  [[nodiscard]] double node_y(std::size_t j) const;
  /// Cell-center coordinates (resolution cells per axis).
  [[nodiscard]] double center_x(std::size_t i) const;
  [[nodiscard]] double center_y(std::size_t j) const;
  [[nodiscard]] double cell_area() const;
};

/// Provenance recorded in every export's JSON sidecar (<csv>.json).
struct ExportMeta {
  std::string checkpoint_hash;
  std::uint64_t seed = 0;
};

struct DensityGrid {
  GridSpec grid;
  /// density(j, i) at cell center (center_x(i), center_y(j)); NaN when the
  /// solve for that cell failed.
  Eigen::MatrixXd density;
  std::size_t missing_cells = 0;

  /// Sum over finite cells times the cell area.
  [[nodiscard]] double mass() const;
};

DensityGrid density_grid(const FlowModel& model, const GridSpec& grid);

/// CSV layout: a metadata header and row
///   x_min,x_max,y_min,y_max,resolution,missing_cells
/// followed by `resolution` rows of densities, row j = center_y(j), column
/// i = center_x(i). Missing cells are written as nan.
DensityGrid export_density_grid(const FlowModel& model, const GridSpec& grid,
                                const std::filesystem::path& path, const ExportMeta& meta = {});

/// f(z, t_eval) on grid nodes: columns x,y,fx,fy,norm, x fastest.
void export_vector_field(const FlowModel& model, const GridSpec& grid,
                         const std::filesystem::path& path, const ExportMeta& meta = {});

/// States at n_time_samples uniform knots from t0 to t1 (both included).
/// Result: one D x N matrix per knot.
std::vector<Points> trajectories(const FlowModel& model, const Points& inputs,
                                 std::size_t n_time_samples);

/// Columns sample_id,t,z1,z2.
void export_trajectories(const FlowModel& model, const Points& inputs, std::size_t n_time_samples,
                         const std::filesystem::path& path, const ExportMeta& meta = {});

}  // namespace sparseflow
