#include "occfit/grid.hpp"

#include "binary_io.hpp"

#include <algorithm>
#include <fstream>

namespace occ {

void GridSpec::validate() const {
  for (int axis = 0; axis < 3; ++axis) {
    if (dims[axis] < 1) {
      throw InputError("grid dims must be >= 1 on every axis");
    }
  }
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) {
    throw InputError("grid voxel_size must be positive and finite");
  }
  if (num_classes < 1) {
    throw InputError("grid num_classes must be >= 1");
  }
  if (num_classes >= 0xFFFF) {
    throw InputError("grid num_classes too large for u16 labels");
  }
  if (!origin.allFinite() || !max_corner().allFinite()) {
    throw InputError("grid extent must be finite");
  }
}

std::array<int, 3> GridSpec::coords(std::size_t index) const {
  const auto nx = static_cast<std::size_t>(dims[0]);
  const auto ny = static_cast<std::size_t>(dims[1]);
  return {static_cast<int>(index % nx), static_cast<int>((index / nx) % ny),
          static_cast<int>(index / (nx * ny))};
}

Vec3 GridSpec::voxel_center(int x, int y, int z) const {
  return origin + voxel_size * Vec3(x + 0.5, y + 0.5, z + 0.5);
}

Vec3 GridSpec::voxel_center(std::size_t index) const {
  const auto c = coords(index);
  return voxel_center(c[0], c[1], c[2]);
}

Vec3 GridSpec::max_corner() const {
  return origin + voxel_size * Vec3(dims[0], dims[1], dims[2]);
}

bool GridSpec::contains(const Vec3& p) const {
  const Vec3 hi = max_corner();
  return (p.array() >= origin.array()).all() && (p.array() <= hi.array()).all();
}

bool GridSpec::operator==(const GridSpec& other) const {
  return dims == other.dims && origin == other.origin && voxel_size == other.voxel_size &&
         num_classes == other.num_classes;
}

VoxelField::VoxelField(GridSpec spec, double density_prior) : spec_(spec) {
  spec_.validate();
  density_logits_.assign(spec_.voxel_count(), static_cast<float>(logit(density_prior)));
  semantic_logits_.assign(spec_.voxel_count() * static_cast<std::size_t>(spec_.num_classes), 0.0f);
}

std::span<const float> VoxelField::semantics_at(std::size_t voxel) const {
  const auto c = static_cast<std::size_t>(spec_.num_classes);
  return std::span<const float>(semantic_logits_).subspan(voxel * c, c);
}

bool VoxelField::operator==(const VoxelField& other) const {
  // Bitwise comparison so that NaN payloads and signed zeros count.
  auto same_bits = [](std::span<const float> a, std::span<const float> b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
  };
  return spec_ == other.spec_ && same_bits(density_logits_, other.density_logits_) &&
         same_bits(semantic_logits_, other.semantic_logits_);
}

FieldGrad::FieldGrad(const GridSpec& spec)
    : density_logits(spec.voxel_count(), 0.0),
      semantic_logits(spec.voxel_count() * static_cast<std::size_t>(spec.num_classes), 0.0) {}

void FieldGrad::clear() {
  std::fill(density_logits.begin(), density_logits.end(), 0.0);
  std::fill(semantic_logits.begin(), semantic_logits.end(), 0.0);
}

void FieldGrad::add(const FieldGrad& other, double scale) {
  for (std::size_t i = 0; i < density_logits.size(); ++i) {
    density_logits[i] += scale * other.density_logits[i];
  }
  for (std::size_t i = 0; i < semantic_logits.size(); ++i) {
    semantic_logits[i] += scale * other.semantic_logits[i];
  }
}

void FieldGrad::scale(double factor) {
  for (double& g : density_logits) g *= factor;
  for (double& g : semantic_logits) g *= factor;
}

bool FieldGrad::all_zero() const {
  auto zero = [](double v) { return v == 0.0; };
  return std::all_of(density_logits.begin(), density_logits.end(), zero) &&
         std::all_of(semantic_logits.begin(), semantic_logits.end(), zero);
}

OccupancyLabels::OccupancyLabels(GridSpec s)
    : spec(s), labels(s.voxel_count(), static_cast<std::uint16_t>(s.free_id())) {}

void OccupancyLabels::validate() const {
  spec.validate();
  if (labels.size() != spec.voxel_count()) {
    throw InputError("label count does not match grid dims");
  }
  for (auto l : labels) {
    if (l > spec.free_id()) {
      throw InputError("label " + std::to_string(l) + " is neither a class id nor the free id");
    }
  }
}

template <typename T>
static int argmax_impl(std::span<const T> logits) {
  int best = 0;
  for (std::size_t c = 1; c < logits.size(); ++c) {
    if (logits[c] > logits[static_cast<std::size_t>(best)]) {
      best = static_cast<int>(c);
    }
  }
  return best;
}

int argmax_class(std::span<const float> logits) { return argmax_impl(logits); }
int argmax_class(std::span<const double> logits) { return argmax_impl(logits); }

OccupancyLabels decode(const VoxelField& field, double tau) {
  OccupancyLabels out(field.spec());
  for (std::size_t v = 0; v < out.labels.size(); ++v) {
    if (field.density(v) >= tau) {
      out.labels[v] = static_cast<std::uint16_t>(argmax_class(field.semantics_at(v)));
    }
  }
  return out;
}

TrilinearCell locate_trilinear(const GridSpec& spec, const Vec3& position) {
  TrilinearCell cell;
  if (!spec.contains(position)) {
    return cell;
  }
  cell.inside = true;
  std::array<int, 3> lo{};
  std::array<int, 3> hi{};
  std::array<double, 3> frac{};
  for (int axis = 0; axis < 3; ++axis) {
    const int n = spec.dims[axis];
    double g = (position[axis] - spec.origin[axis]) / spec.voxel_size - 0.5;
    g = std::clamp(g, 0.0, static_cast<double>(n - 1));
    if (n == 1) {
      lo[axis] = hi[axis] = 0;
      frac[axis] = 0.0;
      continue;
    }
    const int i0 = std::min(static_cast<int>(std::floor(g)), n - 2);
    lo[axis] = i0;
    hi[axis] = i0 + 1;
    frac[axis] = g - i0;
  }
  for (int corner = 0; corner < 8; ++corner) {
    const int bx = corner & 1;
    const int by = (corner >> 1) & 1;
    const int bz = (corner >> 2) & 1;
    const int x = bx ? hi[0] : lo[0];
    const int y = by ? hi[1] : lo[1];
    const int z = bz ? hi[2] : lo[2];
    cell.corners[static_cast<std::size_t>(corner)] = static_cast<std::uint32_t>(spec.index(x, y, z));
    cell.weights[static_cast<std::size_t>(corner)] = (bx ? frac[0] : 1.0 - frac[0]) *
                                                     (by ? frac[1] : 1.0 - frac[1]) *
                                                     (bz ? frac[2] : 1.0 - frac[2]);
  }
  return cell;
}

FieldSample sample_trilinear(const VoxelField& field, const Vec3& position) {
  const auto c = static_cast<std::size_t>(field.spec().num_classes);
  FieldSample out;
  out.semantics.assign(c, 0.0);
  const TrilinearCell cell = locate_trilinear(field.spec(), position);
  if (!cell.inside) {
    return out;
  }
  for (std::size_t k = 0; k < 8; ++k) {
    const double w = cell.weights[k];
    out.density += w * field.density(cell.corners[k]);
    const auto sem = field.semantics_at(cell.corners[k]);
    for (std::size_t j = 0; j < c; ++j) {
      out.semantics[j] += w * sem[j];
    }
  }
  return out;
}

void sample_trilinear_backward(const VoxelField& field, const Vec3& position, double d_density,
                               std::span<const double> d_semantics, FieldGrad& grad) {
  const TrilinearCell cell = locate_trilinear(field.spec(), position);
  if (!cell.inside) {
    return;
  }
  const auto c = static_cast<std::size_t>(field.spec().num_classes);
  for (std::size_t k = 0; k < 8; ++k) {
    const double w = cell.weights[k];
    const std::size_t v = cell.corners[k];
    if (d_density != 0.0) {
      const double p = field.density(v);
      grad.density_logits[v] += d_density * w * p * (1.0 - p);
    }
    for (std::size_t j = 0; j < c && j < d_semantics.size(); ++j) {
      grad.semantic_logits[v * c + j] += d_semantics[j] * w;
    }
  }
}

DensityVolume DensityVolume::from_field(const VoxelField& field) {
  DensityVolume vol;
  vol.spec = field.spec();
  const auto dl = field.density_logits();
  vol.sigma.resize(dl.size());
  for (std::size_t i = 0; i < dl.size(); ++i) {
    vol.sigma[i] = sigmoid(dl[i]);
  }
  const auto sl = field.semantic_logits();
  vol.semantics.assign(sl.begin(), sl.end());
  return vol;
}

VolumeGrad::VolumeGrad(const GridSpec& spec)
    : sigma(spec.voxel_count(), 0.0),
      semantics(spec.voxel_count() * static_cast<std::size_t>(spec.num_classes), 0.0) {}

void VolumeGrad::clear() {
  std::fill(sigma.begin(), sigma.end(), 0.0);
  std::fill(semantics.begin(), semantics.end(), 0.0);
}

void VolumeGrad::add(const VolumeGrad& other) {
  for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] += other.sigma[i];
  for (std::size_t i = 0; i < semantics.size(); ++i) semantics[i] += other.semantics[i];
}

void chain_to_logits(const VoxelField& field, const VolumeGrad& grad, FieldGrad& out) {
  for (std::size_t v = 0; v < grad.sigma.size(); ++v) {
    if (grad.sigma[v] != 0.0) {
      const double p = field.density(v);
      out.density_logits[v] += grad.sigma[v] * p * (1.0 - p);
    }
  }
  for (std::size_t i = 0; i < grad.semantics.size(); ++i) {
    out.semantic_logits[i] += grad.semantics[i];
  }
}

// ---------------------------------------------------------------------------------------------
// Binary IO

void bin::write_spec(std::ostream& out, const GridSpec& spec) {
  for (int axis = 0; axis < 3; ++axis) bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(spec.dims[axis]));
  for (int axis = 0; axis < 3; ++axis) bin::put<double>(out, spec.origin[axis]);
  bin::put<double>(out, spec.voxel_size);
  bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(spec.num_classes));
}

GridSpec bin::read_spec(std::istream& in) {
  GridSpec spec;
  for (int axis = 0; axis < 3; ++axis) {
    const auto d = bin::get<std::uint32_t>(in, "dims");
    if (d == 0 || d > (1u << 20)) {
      throw InputError("grid dims out of range in header");
    }
    spec.dims[axis] = static_cast<int>(d);
  }
  for (int axis = 0; axis < 3; ++axis) spec.origin[axis] = bin::get<double>(in, "origin");
  spec.voxel_size = bin::get<double>(in, "voxel_size");
  spec.num_classes = static_cast<int>(bin::get<std::uint32_t>(in, "num_classes"));
  spec.validate();
  return spec;
}

void write_field(std::ostream& out, const VoxelField& field) {
  bin::put_magic(out, "VOXF");
  bin::put<std::uint16_t>(out, kFieldFormatVersion);
  bin::write_spec(out, field.spec());
  for (float v : field.density_logits()) bin::put<float>(out, v);
  for (float v : field.semantic_logits()) bin::put<float>(out, v);
}

VoxelField read_field(std::istream& in) {
  bin::expect_magic(in, "VOXF");
  const auto version = bin::get<std::uint16_t>(in, "version");
  if (version != kFieldFormatVersion) {
    throw InputError("unsupported VOXF version " + std::to_string(version));
  }
  VoxelField field(bin::read_spec(in));
  for (float& v : field.density_logits()) v = bin::get<float>(in, "density logits");
  for (float& v : field.semantic_logits()) v = bin::get<float>(in, "semantic logits");
  return field;
}

void save_field(const std::filesystem::path& path, const VoxelField& field) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  write_field(out, field);
}

VoxelField load_field(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return read_field(in);
}

void write_labels(std::ostream& out, const OccupancyLabels& labels) {
  bin::put_magic(out, "OCCL");
  bin::put<std::uint16_t>(out, kLabelsFormatVersion);
  bin::write_spec(out, labels.spec);
  bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(labels.spec.free_id()));
  for (auto l : labels.labels) bin::put<std::uint16_t>(out, l);
}

OccupancyLabels read_labels(std::istream& in) {
  bin::expect_magic(in, "OCCL");
  const auto version = bin::get<std::uint16_t>(in, "version");
  if (version != kLabelsFormatVersion) {
    throw InputError("unsupported OCCL version " + std::to_string(version));
  }
  OccupancyLabels labels(bin::read_spec(in));
  const auto free_id = bin::get<std::uint32_t>(in, "free_id");
  if (free_id != static_cast<std::uint32_t>(labels.spec.free_id())) {
    throw InputError("OCCL free id must equal num_classes");
  }
  for (auto& l : labels.labels) l = bin::get<std::uint16_t>(in, "labels");
  labels.validate();
  return labels;
}

void save_labels(const std::filesystem::path& path, const OccupancyLabels& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  write_labels(out, labels);
}

OccupancyLabels load_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return read_labels(in);
}

}  // namespace occ
