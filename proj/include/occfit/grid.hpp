#pragma once

#include "occfit/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace occ {

/// Metric voxel grid. Voxel (x, y, z) covers [origin + (x,y,z) * voxel_size, +voxel_size) and its
/// value lives at the voxel center. Linear index is x-fastest: x + X * (y + Y * z).
struct GridSpec {
  std::array<int, 3> dims{1, 1, 1};
  Vec3 origin = Vec3::Zero();
  double voxel_size = 1.0;
  int num_classes = 1;

  /// Throws InputError on non-positive dims / voxel size / class count or a non-finite extent.
  void validate() const;

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }
  /// Label id reserved for empty space; always equal to num_classes.
  int free_id() const { return num_classes; }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(z));
  }
  std::array<int, 3> coords(std::size_t index) const;
  bool in_bounds(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
  }

  Vec3 voxel_center(int x, int y, int z) const;
  Vec3 voxel_center(std::size_t index) const;
  Vec3 max_corner() const;
  /// Closed axis-aligned bounding box test.
  bool contains(const Vec3& p) const;

  bool operator==(const GridSpec& other) const;
};

/// Occupancy and semantics as optimizable logits. Density logits are stored per voxel,
/// semantic logits class-fastest (voxel * C + c).
class VoxelField {
 public:
  /// Density logits start at logit(density_prior), semantic logits at zero.
  explicit VoxelField(GridSpec spec, double density_prior = kDefaultDensityPrior);

  static constexpr double kDefaultDensityPrior = 0.1;

  const GridSpec& spec() const { return spec_; }

  std::span<float> density_logits() { return density_logits_; }
  std::span<const float> density_logits() const { return density_logits_; }
  std::span<float> semantic_logits() { return semantic_logits_; }
  std::span<const float> semantic_logits() const { return semantic_logits_; }
  std::span<const float> semantics_at(std::size_t voxel) const;

  /// Occupancy probability psi(logit).
  double density(std::size_t voxel) const { return sigmoid(density_logits_[voxel]); }

  bool operator==(const VoxelField& other) const;

 private:
  GridSpec spec_;
  std::vector<float> density_logits_;
  std::vector<float> semantic_logits_;
};

/// Gradient of a scalar loss with respect to the field logits.
struct FieldGrad {
  explicit FieldGrad(const GridSpec& spec);

  std::vector<double> density_logits;
  std::vector<double> semantic_logits;

  void clear();
  void add(const FieldGrad& other, double scale = 1.0);
  void scale(double factor);
  bool all_zero() const;
};

/// Class id per voxel; values in [0, C) or the free id C.
struct OccupancyLabels {
  explicit OccupancyLabels(GridSpec spec);

  GridSpec spec;
  std::vector<std::uint16_t> labels;

  bool is_free(std::size_t voxel) const { return labels[voxel] == spec.free_id(); }
  /// Throws InputError if any label is neither a class id nor the free id.
  void validate() const;
  bool operator==(const OccupancyLabels& other) const = default;
};

/// argmax with ties broken toward the lowest index.
int argmax_class(std::span<const float> logits);
int argmax_class(std::span<const double> logits);

/// Voxel gets argmax semantics where psi(density) >= tau, the free id otherwise.
OccupancyLabels decode(const VoxelField& field, double tau);

/// The eight voxel centers surrounding a position and their trilinear weights.
/// Positions between the outermost centers and the grid boundary clamp onto the edge cell;
/// positions outside the grid box are flagged `inside = false` and read as empty space.
struct TrilinearCell {
  std::array<std::uint32_t, 8> corners{};
  std::array<double, 8> weights{};
  bool inside = false;
};

TrilinearCell locate_trilinear(const GridSpec& spec, const Vec3& position);

struct FieldSample {
  double density = 0.0;
  std::vector<double> semantics;
};

/// Blends psi(density logits) and the raw semantic logits at `position`.
FieldSample sample_trilinear(const VoxelField& field, const Vec3& position);

/// Adjoint of sample_trilinear: accumulates d_density * w * psi'(logit) and d_semantics * w
/// into the corner voxels of `grad`.
void sample_trilinear_backward(const VoxelField& field, const Vec3& position, double d_density,
                               std::span<const double> d_semantics, FieldGrad& grad);

/// What the renderer reads: densities already mapped to probabilities, semantic logits in f64.
/// Timestep copies (masked, flowed) are DensityVolumes too.
struct DensityVolume {
  GridSpec spec;
  std::vector<double> sigma;
  std::vector<double> semantics;

  static DensityVolume from_field(const VoxelField& field);
};

/// Gradient with respect to a DensityVolume's probabilities and semantic logits.
struct VolumeGrad {
  explicit VolumeGrad(const GridSpec& spec);

  std::vector<double> sigma;
  std::vector<double> semantics;

  void clear();
  void add(const VolumeGrad& other);
};

/// Chains a probability-space gradient back to logits: d_logit = d_sigma * psi(1 - psi).
void chain_to_logits(const VoxelField& field, const VolumeGrad& grad, FieldGrad& out);

// Binary formats. Little-endian throughout.
//   VOXF: "VOXF", u16 version, 3 x u32 dims, 3 x f64 origin, f64 voxel_size, u32 num_classes,
//         f32 density logits (x-fastest), f32 semantic logits (class-fastest).
//   OCCL: "OCCL", u16 version, 3 x u32 dims, 3 x f64 origin, f64 voxel_size, u32 num_classes,
//         u32 free_id, u16 label per voxel (x-fastest).
inline constexpr std::uint16_t kFieldFormatVersion = 1;
inline constexpr std::uint16_t kLabelsFormatVersion = 1;

void write_field(std::ostream& out, const VoxelField& field);
VoxelField read_field(std::istream& in);
void save_field(const std::filesystem::path& path, const VoxelField& field);
VoxelField load_field(const std::filesystem::path& path);

void write_labels(std::ostream& out, const OccupancyLabels& labels);
OccupancyLabels read_labels(std::istream& in);
void save_labels(const std::filesystem::path& path, const OccupancyLabels& labels);
OccupancyLabels load_labels(const std::filesystem::path& path);

}  // namespace occ
