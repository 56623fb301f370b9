#include "occfit/supervise3d.hpp"

#include <algorithm>
#include <cmath>

namespace occ {

VoxelTargets targets_from_labels(const OccupancyLabels& labels) {
  VoxelTargets t;
  t.spec = labels.spec;
  const std::size_t n = labels.labels.size();
  t.occupancy.resize(n);
  t.semantics.resize(n);
  for (std::size_t v = 0; v < n; ++v) {
    const bool occupied = !labels.is_free(v);
    t.occupancy[v] = occupied ? 1 : 0;
    t.semantics[v] = occupied ? labels.labels[v] : kIgnoreLabel;
  }
  return t;
}

Loss3d loss_3d(const VoxelField& field, const VoxelTargets& targets) {
  const GridSpec& spec = field.spec();
  if (!(targets.spec == spec) || targets.occupancy.size() != spec.voxel_count()) {
    throw InputError("3D targets do not match the field grid");
  }
  Loss3d out(spec);
  const std::size_t n = spec.voxel_count();
  const auto c = static_cast<std::size_t>(spec.num_classes);
  const auto density = field.density_logits();
  const auto semantics = field.semantic_logits();

  double bce_sum = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    const double x = density[v];
    const double y = targets.occupancy[v];
    // max(x, 0) - x y + log(1 + exp(-|x|))
    bce_sum += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    out.grad.density_logits[v] = (sigmoid(x) - y) / static_cast<double>(n);
  }
  out.density_term = bce_sum / static_cast<double>(n);

  std::size_t occupied = 0;
  for (std::size_t v = 0; v < n; ++v) {
    if (targets.semantics[v] != kIgnoreLabel) ++occupied;
  }
  if (occupied > 0) {
    double ce_sum = 0.0;
    const double inv = 1.0 / static_cast<double>(occupied);
    for (std::size_t v = 0; v < n; ++v) {
      const std::uint16_t label = targets.semantics[v];
      if (label == kIgnoreLabel) continue;
      const float* s = semantics.data() + v * c;
      const double m = *std::max_element(s, s + c);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) z += std::exp(s[j] - m);
      const double lse = m + std::log(z);
      ce_sum += lse - s[label];
      for (std::size_t j = 0; j < c; ++j) {
        out.grad.semantic_logits[v * c + j] = (std::exp(s[j] - lse) - (j == label ? 1.0 : 0.0)) * inv;
      }
    }
    out.semantic_term = ce_sum * inv;
  }
  out.loss = out.density_term + out.semantic_term;
  return out;
}

}  // namespace occ
