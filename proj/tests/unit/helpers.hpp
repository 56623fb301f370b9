#pragma once

#include "occfit/grid.hpp"
#include "occfit/parallel.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

namespace occtest {

// 16x16x6 yard: ground, one pillar, one car driving +x, two training cameras, one held out
inline constexpr const char* kSmallScene = R"({
  "grid": {"dims": [16, 16, 6], "origin": [-3.2, -3.2, -0.4], "voxel_size": 0.4},
  "classes": ["ground", "pillar", "car"],
  "dynamic_classes": [2],
  "horizon": 1,
  "seed": 3,
  "static": [
    {"kind": "slab", "min": [-3.2, -3.2, -0.4], "max": [3.2, 3.2, 0.0], "class": 0},
    {"kind": "pillar", "min": [1.6, 1.6, 0.0], "max": [2.4, 2.4, 1.6], "class": 1}
  ],
  "dynamic": [
    {"id": 4, "class": 2, "center": [-1.2, -1.2, 0.4], "size": [1.6, 0.8, 0.8], "velocity": [0.8, 0.0, 0.0]}
  ],
  "ego": {"velocity": [0.4, 0.0, 0.0]},
  "cameras": [
    {"name": "front", "position": [0.0, 0.0, 1.0], "yaw_deg": 0, "pitch_deg": 20, "fx": 20, "width": 32, "height": 24},
    {"name": "back", "position": [0.0, 0.0, 1.0], "yaw_deg": 180, "pitch_deg": 20, "fx": 20, "width": 32, "height": 24},
    {"name": "eval", "position": [0.0, 0.0, 1.0], "yaw_deg": 90, "pitch_deg": 20, "fx": 20, "width": 32, "height": 24, "heldout": true}
  ],
  "lidar": {"position": [0.0, 0.0, 1.0], "azimuth_steps": 90, "elevation_min_deg": -60, "elevation_max_deg": 10,
            "elevation_steps": 16, "max_range": 12}
})";

inline occ::GridSpec cube_spec(int n, int classes, double voxel = 0.5) {
  occ::GridSpec s;
  s.dims = {n, n, n};
  s.origin = occ::Vec3(-0.5 * n * voxel, -0.5 * n * voxel, -0.5 * n * voxel);
  s.voxel_size = voxel;
  s.num_classes = classes;
  return s;
}

// logits uniform in [-lo, lo] / [-so, so]
inline occ::VoxelField random_field(const occ::GridSpec& spec, std::uint64_t seed, double lo = 3.0, double so = 2.0) {
  occ::VoxelField f(spec);
  occ::CounterRng rng(seed, 17);
  for (auto& v : f.density_logits()) v = static_cast<float>(lo * (2.0 * rng.uniform() - 1.0));
  for (auto& v : f.semantic_logits()) v = static_cast<float>(so * (2.0 * rng.uniform() - 1.0));
  return f;
}

inline occ::Vec3 random_unit(occ::CounterRng& rng) {
  for (;;) {
    occ::Vec3 v(2 * rng.uniform() - 1, 2 * rng.uniform() - 1, 2 * rng.uniform() - 1);
    const double n = v.norm();
    if (n > 1e-3 && n <= 1.0) return v / n;
  }
}

// fresh scratch dir under the build tree
inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("occfit_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::filesystem::path source_dir() { return OCCFIT_SOURCE_DIR; }

}  // namespace occtest
