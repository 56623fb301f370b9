#pragma once

#include "occfit/camera.hpp"
#include "occfit/grid.hpp"
#include "occfit/supervise2d.hpp"

#include <span>
#include <vector>

namespace occ {

/// {-O, ..., 0, ..., O}.
std::vector<int> temporal_indices(int horizon);

struct TemporalConfig {
  int horizon = 3;
  /// Movable classes; every other class is static.
  std::vector<int> dynamic_classes;
  bool dynamic_filter = true;
  bool disocclusion_mask = true;

  bool is_dynamic(int class_id) const;
  std::vector<int> static_classes(int num_classes) const;
  /// Throws InputError on a negative horizon or dynamic ids outside [0, num_classes).
  void validate(int num_classes) const;
};

/// Keeps a point iff t = 0 or its class is static.
std::vector<LabeledPoint> dynamic_ray_filter(std::span<const LabeledPoint> points, const TemporalConfig& cfg);

/// Points whose timestep lies within the horizon.
std::vector<LabeledPoint> select_horizon(std::span<const LabeledPoint> points, int horizon);

/// 1 where the current prediction decodes to a dynamic class (psi >= tau and argmax in C_dyn).
std::vector<std::uint8_t> dynamic_decoded_mask(const VoxelField& field, double tau,
                                               std::span<const int> dynamic_classes);

/// Read-only view of a field in which voxels predicted as dynamic read zero density. Used for
/// rendering temporal frames; the underlying field is never modified.
class DisocclusionView {
 public:
  DisocclusionView(const VoxelField& field, double tau, std::span<const int> dynamic_classes);

  const VoxelField& field() const { return field_; }
  bool masked(std::size_t voxel) const { return mask_[voxel] != 0; }
  double density(std::size_t voxel) const { return masked(voxel) ? 0.0 : field_.density(voxel); }
  std::span<const float> semantics_at(std::size_t voxel) const { return field_.semantics_at(voxel); }
  std::span<const std::uint8_t> mask() const { return mask_; }
  std::size_t masked_count() const;

  /// The view materialized for the renderer.
  DensityVolume volume() const;

 private:
  const VoxelField& field_;
  std::vector<std::uint8_t> mask_;
};

/// t = 0 renders the field as is; t != 0 renders the disocclusion view when masking is enabled.
/// Masked voxels receive no density gradient from temporal rays.
class TemporalFields final : public TimestepFields {
 public:
  TemporalFields(const VoxelField& field, double tau, const TemporalConfig& cfg);

  const DensityVolume& volume(int timestep) override;
  void backpropagate(int timestep, const VolumeGrad& grad, FieldGrad& out) const override;

 private:
  const VoxelField& field_;
  bool masking_;
  DisocclusionView view_;
  DensityVolume current_;
  DensityVolume masked_;
};

}  // namespace occ
