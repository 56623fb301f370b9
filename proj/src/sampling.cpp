#include "occfit/sampling.hpp"

#include "occfit/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace occ {

std::optional<RaySpan> clip_to_grid(const Vec3& origin, const Vec3& direction, const GridSpec& spec,
                                    double t_near_min) {
  const Vec3 lo = spec.origin;
  const Vec3 hi = spec.max_corner();
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    const double o = origin[axis];
    const double d = direction[axis];
    if (std::abs(d) < 1e-15) {
      if (o < lo[axis] || o > hi[axis]) {
        return std::nullopt;
      }
      continue;
    }
    double t0 = (lo[axis] - o) / d;
    double t1 = (hi[axis] - o) / d;
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
  }
  const double t_near = std::max(t_enter, t_near_min);
  if (!(t_exit > t_near)) {
    return std::nullopt;
  }
  return RaySpan{t_near, t_exit};
}

namespace {

void fill_deltas(SampleSet& s) {
  const std::size_t n = s.distances.size();
  s.deltas.resize(n);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    s.deltas[k] = s.distances[k + 1] - s.distances[k];
  }
  if (n > 0) {
    s.deltas[n - 1] = s.t_far - s.distances[n - 1];
  }
}

double density_at(const DensityVolume& volume, const TrilinearCell& cell) {
  if (!cell.inside) return 0.0;
  double sigma = 0.0;
  for (std::size_t k = 0; k < 8; ++k) {
    sigma += cell.weights[k] * volume.sigma[cell.corners[k]];
  }
  return sigma;
}

}  // namespace

SampleSet propose(const Vec3& origin, const Vec3& direction, const RaySpan& span, const DensityVolume& volume,
                  int n_prop, CounterRng& rng) {
  SampleSet s;
  s.origin = origin;
  s.direction = direction;
  s.t_near = span.t_near;
  s.t_far = span.t_far;
  s.num_classes = volume.spec.num_classes;
  const auto n = static_cast<std::size_t>(std::max(n_prop, 1));
  const double width = (span.t_far - span.t_near) / static_cast<double>(n);
  s.distances.resize(n);
  s.sigma.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.distances[i] = span.t_near + (static_cast<double>(i) + rng.uniform()) * width;
    s.sigma[i] = density_at(volume, locate_trilinear(volume.spec, s.position(i)));
  }
  fill_deltas(s);
  s.weights.resize(n);
  s.transmittance_end = compositing_weights(s.sigma, s.deltas, s.weights);
  return s;
}

std::vector<double> resample_fine(const SampleSet& proposal, int n_fine, CounterRng& rng, double weight_floor) {
  const std::size_t n = proposal.size();
  std::vector<double> cdf(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = proposal.weights.empty() ? 0.0 : std::max(proposal.weights[i], 0.0);
    cdf[i + 1] = cdf[i] + w + weight_floor;
  }
  const double total = cdf[n];

  std::vector<double> u(static_cast<std::size_t>(std::max(n_fine, 0)));
  for (double& x : u) x = rng.uniform();
  std::sort(u.begin(), u.end());

  std::vector<double> fine;
  fine.reserve(u.size());
  if (total > 0.0) {
    std::size_t i = 0;
    for (double x : u) {
      const double target = x * total;
      while (i + 1 < n && cdf[i + 1] <= target) ++i;
      const double mass = cdf[i + 1] - cdf[i];
      const double frac = mass > 0.0 ? std::clamp((target - cdf[i]) / mass, 0.0, 1.0) : 0.0;
      fine.push_back(proposal.distances[i] + frac * proposal.deltas[i]);
    }
  } else {
    // All-zero PDF (floor 0 and empty proposal weights): fall back to uniform placement.
    for (double x : u) fine.push_back(proposal.t_near + x * (proposal.t_far - proposal.t_near));
  }

  std::vector<double> merged(n + fine.size());
  std::merge(proposal.distances.begin(), proposal.distances.end(), fine.begin(), fine.end(), merged.begin());
  const double upper = std::nextafter(proposal.t_far, -std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < merged.size(); ++k) {
    if (k > 0 && merged[k] <= merged[k - 1]) {
      merged[k] = std::nextafter(merged[k - 1], std::numeric_limits<double>::infinity());
    }
    merged[k] = std::min(merged[k], upper);
  }
  return merged;
}

SampleSet gather_samples(const Vec3& origin, const Vec3& direction, const RaySpan& span,
                         std::span<const double> distances, const DensityVolume& volume) {
  SampleSet s;
  s.origin = origin;
  s.direction = direction;
  s.t_near = span.t_near;
  s.t_far = span.t_far;
  const auto c = static_cast<std::size_t>(volume.spec.num_classes);
  s.num_classes = static_cast<int>(c);
  const std::size_t n = distances.size();
  s.distances.assign(distances.begin(), distances.end());
  s.sigma.assign(n, 0.0);
  s.semantics.assign(n * c, 0.0);
  s.cells.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const TrilinearCell cell = locate_trilinear(volume.spec, s.position(k));
    s.cells[k] = cell;
    if (!cell.inside) continue;
    double sigma = 0.0;
    double* sem = s.semantics.data() + k * c;
    for (std::size_t corner = 0; corner < 8; ++corner) {
      const double w = cell.weights[corner];
      if (w == 0.0) continue;
      const std::size_t v = cell.corners[corner];
      sigma += w * volume.sigma[v];
      const double* src = volume.semantics.data() + v * c;
      for (std::size_t j = 0; j < c; ++j) sem[j] += w * src[j];
    }
    s.sigma[k] = sigma;
  }
  fill_deltas(s);
  return s;
}

std::optional<SampleSet> sample_ray(const Vec3& origin, const Vec3& direction, const DensityVolume& volume,
                                    const SamplingConfig& cfg, CounterRng& rng) {
  const auto span = clip_to_grid(origin, direction, volume.spec, cfg.t_near_min);
  if (!span) {
    return std::nullopt;
  }
  const SampleSet proposal = propose(origin, direction, *span, volume, cfg.n_proposal, rng);
  const std::vector<double> distances = resample_fine(proposal, cfg.n_fine, rng, cfg.weight_floor);
  return gather_samples(origin, direction, *span, distances, volume);
}

}  // namespace occ
