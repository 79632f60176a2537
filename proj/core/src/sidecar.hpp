#pragma once

#include "sparseflow/eval.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace sparseflow::detail {

inline nlohmann::json grid_json(const GridSpec& g) {
  return {{"x_min", g.x_min},   {"x_max", g.x_max},           {"y_min", g.y_min},
          {"y_max", g.y_max},   {"resolution", g.resolution}, {"t_eval", g.t_eval}};
}

/// Writes <csv>.json with the export kind, provenance and `extra` merged in.
void write_sidecar(const std::filesystem::path& csv, const std::string& kind,
                   const ExportMeta& meta, const nlohmann::json& extra);

}  // namespace sparseflow::detail
