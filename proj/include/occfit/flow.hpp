#pragma once

#include "occfit/grid.hpp"
#include "occfit/supervise2d.hpp"
#include "occfit/temporal.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace occ {

/// A tracked dynamic object: box-to-grid poses per timestep (center + rotation) and the full
/// box extent (length, width, height) along its local x, y, z.
struct BoxTrack {
  int box_id = 0;
  int class_id = 0;
  Vec3 extent = Vec3::Ones();
  std::map<int, Mat4> poses;

  /// Strictly inside the oriented box at timestep t (false if the box is absent at t).
  bool contains(const Vec3& p, int timestep) const;
};

// Box-track CSV: header `box_id,class,t,tx,ty,tz,qw,qx,qy,qz,l,w,h`, one row per (box, t).
std::vector<BoxTrack> load_tracks_csv(const std::filesystem::path& path);
void save_tracks_csv(const std::filesystem::path& path, std::span<const BoxTrack> tracks);

struct BoxFlow {
  int box_id = 0;
  int class_id = 0;
  Vec3 center0 = Vec3::Zero();
  /// Voxels whose centers are strictly inside the t = 0 box, ascending.
  std::vector<std::uint32_t> members;
  /// M_t = pose_t * pose_0^-1 for each timestep where the box exists; M_0 is exactly identity.
  std::map<int, Mat4> transforms;

  bool present(int timestep) const { return transforms.count(timestep) != 0; }
};

struct FlowTable {
  GridSpec spec;
  std::vector<int> timesteps;
  std::vector<BoxFlow> boxes;
};

/// Voxels claimed by several boxes go to the box with the nearest t = 0 center (lowest box
/// index on ties).
FlowTable build_flow_table(std::span<const BoxTrack> tracks, const GridSpec& spec, std::span<const int> timesteps);

/// The eight lattice neighbours of a position with normalized inverse-distance weights. Weights
/// are normalized over all eight, including neighbours outside the grid (flagged invalid), so
/// mass deposited there leaves the grid. A position within 1e-9 voxels of a center gives that
/// center weight 1.
struct IdwStencil {
  std::array<std::uint32_t, 8> targets{};
  std::array<double, 8> weights{};
  std::array<bool, 8> valid{};
};

IdwStencil idw_stencil(const GridSpec& spec, const Vec3& position);

/// A timestep copy of the prediction with the selected dynamic voxels moved. Every touched
/// voxel value is a fixed linear combination of base values; that map is kept for the adjoint.
struct FlowedVolume {
  DensityVolume volume;
  /// Source voxels that were moved (ascending).
  std::vector<std::uint32_t> moved;

  struct Provenance {
    double sigma_self = 1.0;
    double semantics_self = 1.0;
    std::vector<std::pair<std::uint32_t, double>> terms;
  };
  /// Index into `provenance` per voxel, -1 where the voxel is untouched.
  std::vector<std::int32_t> slot;
  std::vector<Provenance> provenance;

  /// Accumulates the gradient with respect to the base volume into `base`.
  void backpropagate(const VolumeGrad& grad, VolumeGrad& base) const;
};

/// Member voxels currently predicted as their box's class with psi >= tau, per box, ascending.
std::vector<std::vector<std::uint32_t>> select_flow_sources(const VoxelField& field, const FlowTable& table,
                                                            double tau);

/// Vacates every selected source (density 0), then deposits each moved source, in ascending
/// source order, onto its eight neighbours: v_i <- a_i * v_src + (1 - a_i) * v_i for density
/// and every semantic logit. Boxes absent at `timestep` are vacated without redeposit.
FlowedVolume apply_flow(const DensityVolume& base, const FlowTable& table,
                        const std::vector<std::vector<std::uint32_t>>& sources, int timestep);

FlowedVolume apply_flow(const VoxelField& field, const FlowTable& table, double tau, int timestep);

/// Renders temporal rays through per-timestep flowed copies (built lazily). Dynamic-decoded
/// voxels that were not moved are zeroed in temporal frames when disocclusion masking is on.
class FlowFields final : public TimestepFields {
 public:
  FlowFields(const VoxelField& field, const FlowTable& table, double tau, const TemporalConfig& cfg);

  const DensityVolume& volume(int timestep) override;
  void backpropagate(int timestep, const VolumeGrad& grad, FieldGrad& out) const override;

  std::size_t moved_count() const;

 private:
  const VoxelField& field_;
  const FlowTable& table_;
  std::vector<std::vector<std::uint32_t>> sources_;
  std::vector<std::uint8_t> mask_;
  DensityVolume current_;
  DensityVolume temporal_base_;
  std::map<int, FlowedVolume> flowed_;
};

// Binary sidecar: "FLOW", u16 version, u64 scene hash, grid header, timesteps, boxes.
inline constexpr std::uint16_t kFlowFormatVersion = 1;
void save_flow_table(const std::filesystem::path& path, const FlowTable& table, std::uint64_t scene_hash);
/// Empty when the file is missing or was built for a different scene hash.
std::optional<FlowTable> load_flow_table(const std::filesystem::path& path, std::uint64_t scene_hash);

}  // namespace occ
