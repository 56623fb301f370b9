#pragma once

#include "occfit/grid.hpp"

#include <cstdint>
#include <vector>

namespace occ {

inline constexpr std::uint16_t kIgnoreLabel = 0xFFFF;

/// Voxel targets: occupancy everywhere, semantics only where occupied.
struct VoxelTargets {
  GridSpec spec;
  std::vector<std::uint8_t> occupancy;
  std::vector<std::uint16_t> semantics;
};

VoxelTargets targets_from_labels(const OccupancyLabels& labels);

struct Loss3d {
  explicit Loss3d(const GridSpec& spec) : grad(spec) {}

  double loss = 0.0;
  double density_term = 0.0;
  double semantic_term = 0.0;
  FieldGrad grad;
};

/// Mean BCE(psi(density logit), occupancy) over all voxels plus mean CE(semantic logits, class)
/// over occupied voxels (0 if there are none). Both terms are evaluated on logits.
Loss3d loss_3d(const VoxelField& field, const VoxelTargets& targets);

}  // namespace occ
