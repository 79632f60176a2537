#pragma once

#include "sparseflow/cnf.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

namespace sparseflow {

enum class DatasetKind { gaussians, gaussian_spiral, spirals, moons };

std::string_view to_string(DatasetKind k);
DatasetKind parse_dataset_kind(std::string_view name);

/// Generator geometry. Unused fields are ignored for a given kind.
struct Geometry {
  std::size_t n_modes = 6;         // gaussians, gaussian_spiral
  double radius = 4.0;             // gaussians: circle radius
  double sigma = 0.5;              // gaussians, gaussian_spiral: per-mode std
  double spiral_r0 = 0.5;          // gaussian_spiral: r = r0 + growth * phi
  double spiral_growth = 0.35;
  double spiral_phi_max = 0.0;     // 0 means 3 pi
  double noise = 0.1;              // spirals, moons: additive Gaussian noise

  [[nodiscard]] double phi_max() const;
};

Geometry default_geometry(DatasetKind kind);

struct Dataset {
  DatasetKind kind = DatasetKind::gaussians;
  Points points;                      // 2 x N
  std::vector<int> labels;            // moons only
  std::vector<int> components;        // generating mode / arm / moon per point
  Eigen::Matrix2Xd mode_centers;      // empty unless mode-bearing
  std::optional<double> mode_sigma;
  Geometry geometry;
  std::uint64_t seed = 0;

  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(points.cols()); }
  [[nodiscard]] bool has_modes() const { return mode_centers.cols() > 0; }
  [[nodiscard]] bool has_labels() const { return !labels.empty(); }
  /// Subset with the given row order; metadata is copied.
  [[nodiscard]] Dataset subset(const std::vector<std::size_t>& idx) const;
};

/// Mode centers for the mode-bearing kinds (empty matrix otherwise).
Eigen::Matrix2Xd mode_centers(DatasetKind kind, const Geometry& g);

Dataset make_dataset(DatasetKind kind, std::size_t n, std::uint64_t seed,
                     const std::optional<Geometry>& geometry = std::nullopt);

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Seeded shuffle, then contiguous partition. Sizes are floor(f * n) for
/// train and val (each at least 1); test takes the rest.
Splits split(const Dataset& ds, const std::array<double, 3>& fractions, std::uint64_t seed);

/// x,y[,label] CSV plus a JSON sidecar (<path>.json) with kind, seed,
/// geometry and mode metadata.
void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path);

}  // namespace sparseflow
