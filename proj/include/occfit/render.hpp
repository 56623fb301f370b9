#pragma once

#include "occfit/grid.hpp"
#include "occfit/sampling.hpp"

#include <span>
#include <vector>

namespace occ {

struct RenderOutput {
  /// Sum of w_k t_k; not renormalized by opacity.
  double depth = 0.0;
  std::vector<double> semantics;
  double opacity = 0.0;
  /// Transmittance left after the last sample.
  double transmittance_end = 1.0;
};

/// w_k = T_k (1 - exp(-sigma_k delta_k)) with T_k = exp(-sum_{j<k} sigma_j delta_j), accumulated
/// in log space. Returns the transmittance after the last sample.
double compositing_weights(std::span<const double> sigma, std::span<const double> deltas,
                           std::span<double> weights);

/// Composites depth, semantics and opacity; stores the weights in `samples`.
RenderOutput render_forward(SampleSet& samples);

/// Per-sample adjoint: gradients with respect to each sample's density and semantics.
struct SampleGrad {
  std::vector<double> sigma;
  std::vector<double> semantics;
};

/// Includes the transmittance coupling: dL/dsigma_j = delta_j (T_{j+1} g_j - sum_{k>j} w_k g_k)
/// with g_k = d_depth t_k + <d_semantics, s_k>.
SampleGrad render_backward_samples(const SampleSet& samples, double d_depth, std::span<const double> d_semantics);

/// Scatters the per-sample adjoint through the interpolation cells into a volume gradient.
void render_backward(const SampleSet& samples, double d_depth, std::span<const double> d_semantics,
                     VolumeGrad& grad);

/// Same adjoint, chained all the way to the field logits through sample_trilinear_backward.
void render_backward(const SampleSet& samples, double d_depth, std::span<const double> d_semantics,
                     const VoxelField& field, FieldGrad& grad);

}  // namespace occ
