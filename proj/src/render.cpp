#include "occfit/render.hpp"

#include <algorithm>
#include <cmath>

namespace occ {

double compositing_weights(std::span<const double> sigma, std::span<const double> deltas,
                           std::span<double> weights) {
  double optical_depth = 0.0;
  for (std::size_t k = 0; k < sigma.size(); ++k) {
    const double tau = sigma[k] * deltas[k];
    weights[k] = std::exp(-optical_depth) * -std::expm1(-tau);
    optical_depth += tau;
  }
  return std::exp(-optical_depth);
}

RenderOutput render_forward(SampleSet& samples) {
  const std::size_t n = samples.size();
  const auto c = static_cast<std::size_t>(samples.num_classes);
  samples.weights.resize(n);
  samples.transmittance_end = compositing_weights(samples.sigma, samples.deltas, samples.weights);

  RenderOutput out;
  out.semantics.assign(c, 0.0);
  out.transmittance_end = samples.transmittance_end;
  const bool has_semantics = samples.semantics.size() == n * c;
  for (std::size_t k = 0; k < n; ++k) {
    const double w = samples.weights[k];
    out.depth += w * samples.distances[k];
    out.opacity += w;
    if (has_semantics) {
      const double* s = samples.semantics.data() + k * c;
      for (std::size_t j = 0; j < c; ++j) out.semantics[j] += w * s[j];
    }
  }
  return out;
}

SampleGrad render_backward_samples(const SampleSet& samples, double d_depth, std::span<const double> d_semantics) {
  const std::size_t n = samples.size();
  const auto c = static_cast<std::size_t>(samples.num_classes);
  SampleGrad g;
  g.sigma.assign(n, 0.0);
  g.semantics.assign(n * c, 0.0);

  // Upstream gradient with respect to each weight.
  std::vector<double> dw(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double v = d_depth * samples.distances[k];
    const double* s = samples.semantics.data() + k * c;
    for (std::size_t j = 0; j < c; ++j) v += d_semantics[j] * s[j];
    dw[k] = v;
    const double w = samples.weights[k];
    for (std::size_t j = 0; j < c; ++j) g.semantics[k * c + j] = w * d_semantics[j];
  }

  // dw_k/dsigma_j: -delta_j w_k for k > j, delta_j T_{j+1} for k = j.
  double optical_depth = 0.0;
  std::vector<double> t_after(n);
  for (std::size_t k = 0; k < n; ++k) {
    optical_depth += samples.sigma[k] * samples.deltas[k];
    t_after[k] = std::exp(-optical_depth);
  }
  double suffix = 0.0;
  for (std::size_t j = n; j-- > 0;) {
    g.sigma[j] = samples.deltas[j] * (t_after[j] * dw[j] - suffix);
    suffix += samples.weights[j] * dw[j];
  }
  return g;
}

void render_backward(const SampleSet& samples, double d_depth, std::span<const double> d_semantics,
                     VolumeGrad& grad) {
  if (d_depth == 0.0 && std::all_of(d_semantics.begin(), d_semantics.end(), [](double v) { return v == 0.0; })) {
    return;
  }
  const SampleGrad g = render_backward_samples(samples, d_depth, d_semantics);
  const auto c = static_cast<std::size_t>(samples.num_classes);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const TrilinearCell& cell = samples.cells[k];
    if (!cell.inside) continue;
    const double ds = g.sigma[k];
    const double* dsem = g.semantics.data() + k * c;
    for (std::size_t corner = 0; corner < 8; ++corner) {
      const double w = cell.weights[corner];
      if (w == 0.0) continue;
      const std::size_t v = cell.corners[corner];
      grad.sigma[v] += w * ds;
      double* dst = grad.semantics.data() + v * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += w * dsem[j];
    }
  }
}

void render_backward(const SampleSet& samples, double d_depth, std::span<const double> d_semantics,
                     const VoxelField& field, FieldGrad& grad) {
  const SampleGrad g = render_backward_samples(samples, d_depth, d_semantics);
  const auto c = static_cast<std::size_t>(samples.num_classes);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    sample_trilinear_backward(field, samples.position(k), g.sigma[k],
                              std::span<const double>(g.semantics).subspan(k * c, c), grad);
  }
}

}  // namespace occ
