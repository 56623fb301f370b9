#include "occfit/temporal.hpp"

#include <algorithm>

namespace occ {

std::vector<int> temporal_indices(int horizon) {
  if (horizon < 0) {
    throw InputError("temporal horizon must be >= 0");
  }
  std::vector<int> t;
  t.reserve(static_cast<std::size_t>(2 * horizon + 1));
  for (int i = -horizon; i <= horizon; ++i) t.push_back(i);
  return t;
}

bool TemporalConfig::is_dynamic(int class_id) const {
  return std::find(dynamic_classes.begin(), dynamic_classes.end(), class_id) != dynamic_classes.end();
}

std::vector<int> TemporalConfig::static_classes(int num_classes) const {
  std::vector<int> out;
  for (int c = 0; c < num_classes; ++c) {
    if (!is_dynamic(c)) out.push_back(c);
  }
  return out;
}

void TemporalConfig::validate(int num_classes) const {
  if (horizon < 0) throw InputError("temporal horizon must be >= 0");
  for (int c : dynamic_classes) {
    if (c < 0 || c >= num_classes) {
      throw InputError("dynamic class " + std::to_string(c) + " outside [0, num_classes)");
    }
  }
}

std::vector<LabeledPoint> dynamic_ray_filter(std::span<const LabeledPoint> points, const TemporalConfig& cfg) {
  std::vector<LabeledPoint> kept;
  kept.reserve(points.size());
  for (const auto& p : points) {
    if (p.timestep == 0 || !cfg.is_dynamic(p.class_id)) {
      kept.push_back(p);
    }
  }
  return kept;
}

std::vector<LabeledPoint> select_horizon(std::span<const LabeledPoint> points, int horizon) {
  std::vector<LabeledPoint> kept;
  for (const auto& p : points) {
    if (p.timestep >= -horizon && p.timestep <= horizon) kept.push_back(p);
  }
  return kept;
}

std::vector<std::uint8_t> dynamic_decoded_mask(const VoxelField& field, double tau,
                                               std::span<const int> dynamic_classes) {
  std::vector<std::uint8_t> mask(field.spec().voxel_count(), 0);
  if (dynamic_classes.empty()) return mask;
  for (std::size_t v = 0; v < mask.size(); ++v) {
    if (field.density(v) < tau) continue;
    const int cls = argmax_class(field.semantics_at(v));
    if (std::find(dynamic_classes.begin(), dynamic_classes.end(), cls) != dynamic_classes.end()) {
      mask[v] = 1;
    }
  }
  return mask;
}

DisocclusionView::DisocclusionView(const VoxelField& field, double tau, std::span<const int> dynamic_classes)
    : field_(field), mask_(dynamic_decoded_mask(field, tau, dynamic_classes)) {}

std::size_t DisocclusionView::masked_count() const {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
}

DensityVolume DisocclusionView::volume() const {
  DensityVolume vol = DensityVolume::from_field(field_);
  for (std::size_t v = 0; v < mask_.size(); ++v) {
    if (mask_[v]) vol.sigma[v] = 0.0;
  }
  return vol;
}

TemporalFields::TemporalFields(const VoxelField& field, double tau, const TemporalConfig& cfg)
    : field_(field),
      masking_(cfg.disocclusion_mask && !cfg.dynamic_classes.empty()),
      view_(field, tau, masking_ ? std::span<const int>(cfg.dynamic_classes) : std::span<const int>()),
      current_(DensityVolume::from_field(field)) {}

const DensityVolume& TemporalFields::volume(int timestep) {
  if (timestep == 0 || !masking_) return current_;
  if (masked_.sigma.empty()) masked_ = view_.volume();
  return masked_;
}

void TemporalFields::backpropagate(int timestep, const VolumeGrad& grad, FieldGrad& out) const {
  if (timestep == 0 || !masking_) {
    chain_to_logits(field_, grad, out);
    return;
  }
  VolumeGrad g = grad;
  for (std::size_t v = 0; v < g.sigma.size(); ++v) {
    if (view_.masked(v)) g.sigma[v] = 0.0;
  }
  chain_to_logits(field_, g, out);
}

}  // namespace occ
