#pragma once

#include "occfit/fit.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace occ {

/// Unified run configuration. JSON layout (every key optional except paths.scene):
///
///   {
///     "paths":       {"scene": dir, "output": dir, "init": voxf file},
///     "seed": 0, "threads": 1,
///     "grid":        {"tau": 0.5, "density_prior": 0.1},
///     "sampling":    {"n_proposal": 50, "n_fine": 100, "t_near_min": 0.05, "weight_floor": 0.01},
///     "supervision": {"mode": "2d", "depth_coeff": 1, "semantic_coeff": 1, "weight_3d": 1,
///                     "class_weighting": true, "rays_per_step": 4096},
///     "temporal":    {"horizon": 0, "dynamic_filter": true, "disocclusion_mask": true,
///                     "dynamic_classes": [from scene]},
///     "flow":        {"enabled": false, "cache": true},
///     "fit":         {"steps": 300, "step_size": 0.01, "beta1": 0.9, "beta2": 0.999,
///                     "epsilon": 1e-8, "cosine_decay": false, "divergence_limit": 1e6},
///     "render":      {"depth_scale": 1000}
///   }
///
/// Unknown keys are rejected with the line of the offending key. Relative paths resolve against
/// the config file's directory.
struct RunConfig {
  std::filesystem::path scene_dir;
  std::filesystem::path output_dir = "out";
  std::optional<std::filesystem::path> init_field;
  FitConfig fit;
  /// Unset means "take the scene's dynamic classes".
  std::optional<std::vector<int>> dynamic_classes;
  bool flow_cache = true;
  double depth_scale = 1000.0;

  /// Canonical JSON of the resolved configuration, without the output directory and thread count.
  std::string to_json() const;
  /// FNV-1a of to_json().
  std::uint64_t hash() const;
};

RunConfig parse_run_config(const std::string& text, const std::string& source_name,
                           const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace occ
