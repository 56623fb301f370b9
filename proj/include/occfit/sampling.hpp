#pragma once

#include "occfit/grid.hpp"
#include "occfit/parallel.hpp"

#include <optional>
#include <span>
#include <vector>

namespace occ {

struct SamplingConfig {
  int n_proposal = 50;
  int n_fine = 100;
  /// Near-plane clamp in meters.
  double t_near_min = 0.05;
  /// Added to every proposal-interval weight before building the fine-sampling PDF.
  double weight_floor = 0.01;
};

struct RaySpan {
  double t_near = 0.0;
  double t_far = 0.0;
};

/// Slab intersection with the grid box; t_near is clamped to at least `t_near_min`.
/// Empty when the ray misses the box or the clamped span is empty.
std::optional<RaySpan> clip_to_grid(const Vec3& origin, const Vec3& direction, const GridSpec& spec,
                                    double t_near_min = 0.05);

/// Ordered samples along one ray. deltas[k] = distances[k+1] - distances[k]; the last delta
/// reaches t_far, so a ray may leave the grid with leftover transmittance.
struct SampleSet {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double t_near = 0.0;
  double t_far = 0.0;
  int num_classes = 0;

  std::vector<double> distances;
  std::vector<double> deltas;
  std::vector<double> sigma;
  /// size() * num_classes, class-fastest. Empty for proposal sets.
  std::vector<double> semantics;
  std::vector<TrilinearCell> cells;
  /// Filled by render_forward.
  std::vector<double> weights;
  double transmittance_end = 1.0;

  std::size_t size() const { return distances.size(); }
  Vec3 position(std::size_t k) const { return origin + distances[k] * direction; }
};

/// Stratified proposal: one uniform draw in each of n_prop equal strata of the span. Densities
/// come from the volume and compositing weights are filled in; semantics are not fetched.
SampleSet propose(const Vec3& origin, const Vec3& direction, const RaySpan& span, const DensityVolume& volume,
                  int n_prop, CounterRng& rng);

/// Inverse-CDF draws from the piecewise-constant PDF over the proposal intervals with mass
/// proportional to (weight + floor), merged with the proposal distances. Strictly ascending,
/// n_prop + n_fine entries, all inside [t_near, t_far).
std::vector<double> resample_fine(const SampleSet& proposal, int n_fine, CounterRng& rng,
                                  double weight_floor = 0.01);

/// Fetches densities, semantics and interpolation cells at fixed distances.
SampleSet gather_samples(const Vec3& origin, const Vec3& direction, const RaySpan& span,
                         std::span<const double> distances, const DensityVolume& volume);

/// Full coarse-to-fine placement for one ray; empty when the ray misses the grid.
std::optional<SampleSet> sample_ray(const Vec3& origin, const Vec3& direction, const DensityVolume& volume,
                                    const SamplingConfig& cfg, CounterRng& rng);

}  // namespace occ
