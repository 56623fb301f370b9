#pragma once

#include "occfit/camera.hpp"
#include "occfit/grid.hpp"
#include "occfit/render.hpp"
#include "occfit/sampling.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace occ {

/// Per-class ray weights omega(c) = ln(sum_k N_k / N_c); classes without points get 0.
struct ClassWeights {
  std::vector<std::uint64_t> counts;
  std::vector<double> weights;
};

/// Throws InputError when every count is zero.
ClassWeights compute_class_weights(std::span<const std::uint64_t> counts);

std::vector<std::uint64_t> count_classes(std::span<const LabeledPoint> points, int num_classes);

struct LossCoefficients {
  double depth = 1.0;
  double semantic = 1.0;
};

struct RayLoss {
  double loss = 0.0;
  double depth_term = 0.0;
  double semantic_term = 0.0;
  /// dloss/d(rendered depth) and dloss/d(rendered semantic logits).
  double d_depth = 0.0;
  std::vector<double> d_semantics;
};

/// weight * (depth_coeff * (D - gt)^2 + sem_coeff * CE(softmax(S), gt_class)), with a
/// log-sum-exp cross-entropy.
RayLoss ray_loss(const RenderOutput& out, const Ray& ray, const LossCoefficients& coeffs = {});

/// Source of the volume each ray is rendered against, keyed by the ray's timestep, plus the
/// chain rule from that volume back to the field logits.
class TimestepFields {
 public:
  virtual ~TimestepFields() = default;
  /// May build the timestep volume lazily; called from one thread only.
  virtual const DensityVolume& volume(int timestep) = 0;
  virtual void backpropagate(int timestep, const VolumeGrad& grad, FieldGrad& out) const = 0;
};

/// Every timestep renders the unmodified field.
class StaticFields final : public TimestepFields {
 public:
  explicit StaticFields(const VoxelField& field);
  const DensityVolume& volume(int timestep) override;
  void backpropagate(int timestep, const VolumeGrad& grad, FieldGrad& out) const override;

 private:
  const VoxelField& field_;
  DensityVolume volume_;
};

struct BatchOptions {
  SamplingConfig sampling;
  LossCoefficients coeffs;
  std::size_t rays_per_step = 32768;
  std::uint64_t seed = 0;
  /// Selects the per-step random streams (batch subsample, stratification jitter).
  std::uint64_t step = 0;
  int threads = 1;
};

struct BatchLoss {
  explicit BatchLoss(const GridSpec& spec) : grad(spec) {}

  double loss = 0.0;
  double depth_term = 0.0;
  double semantic_term = 0.0;
  std::size_t rays = 0;
  FieldGrad grad;
};

/// Ray ids used in this step: the whole pool if it fits, otherwise a seeded subsample without
/// replacement (ascending ids).
std::vector<std::size_t> select_batch(std::size_t pool_size, std::size_t rays_per_step, std::uint64_t seed,
                                      std::uint64_t step);

/// Mean ray loss over `batch` and its gradient. Rays are grouped by timestep and split into
/// chunks whose size does not depend on the thread count; chunk gradients are reduced in chunk
/// order, so the result is bitwise independent of `threads`.
BatchLoss batch_loss(std::span<const Ray> rays, std::span<const std::size_t> batch, TimestepFields& fields,
                     const GridSpec& spec, const BatchOptions& opts);

/// Static-field convenience: subsamples `rays_per_step` rays and renders the plain field.
BatchLoss batch_loss(std::span<const Ray> rays, const VoxelField& field, const BatchOptions& opts);

/// Renders one ray with the coarse-to-fine sampler; the random stream is keyed by ray_id.
struct RayRender {
  bool hit = false;
  SampleSet samples;
  RenderOutput output;
};
RayRender render_ray(const Ray& ray, std::size_t ray_id, const DensityVolume& volume, const SamplingConfig& cfg,
                     std::uint64_t stream_seed);

}  // namespace occ
