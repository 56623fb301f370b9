#include "doctest.h"
#include "helpers.hpp"

#include "occfit/supervise3d.hpp"

using namespace occ;

namespace {

OccupancyLabels random_labels(const GridSpec& spec, std::uint64_t seed, double p_occ = 0.3) {
  OccupancyLabels lab(spec);
  lab.labels.assign(spec.voxel_count(), static_cast<std::uint16_t>(spec.free_id()));
  CounterRng rng(seed, 0);
  for (auto& l : lab.labels)
    if (rng.uniform() < p_occ) l = static_cast<std::uint16_t>(rng.uniform() * spec.num_classes);
  return lab;
}

}  // namespace

TEST_SUITE("supervise3d") {

TEST_CASE("targets from an all-free grid") {
  OccupancyLabels lab(occtest::cube_spec(3, 4));
  lab.labels.assign(lab.spec.voxel_count(), 4);
  auto t = targets_from_labels(lab);
  for (std::size_t v = 0; v < t.occupancy.size(); ++v) {
    CHECK(t.occupancy[v] == 0);
    CHECK(t.semantics[v] == kIgnoreLabel);
  }
}

TEST_CASE("targets with one class-3 voxel") {
  OccupancyLabels lab(occtest::cube_spec(3, 4));
  lab.labels.assign(lab.spec.voxel_count(), 4);
  lab.labels[13] = 3;
  auto t = targets_from_labels(lab);
  for (std::size_t v = 0; v < t.occupancy.size(); ++v) {
    CHECK(t.occupancy[v] == (v == 13 ? 1 : 0));
    CHECK(t.semantics[v] == (v == 13 ? 3 : kIgnoreLabel));
  }
}

TEST_CASE("targets agree with the definition on random grids") {
  auto lab = random_labels(occtest::cube_spec(6, 5), 1);
  auto t = targets_from_labels(lab);
  for (std::size_t v = 0; v < lab.labels.size(); ++v) {
    const bool free = lab.labels[v] == 5;
    CHECK(t.occupancy[v] == (free ? 0 : 1));
    CHECK(t.semantics[v] == (free ? kIgnoreLabel : lab.labels[v]));
    CHECK((t.semantics[v] != kIgnoreLabel) == (t.occupancy[v] == 1));
  }
}

TEST_CASE("zero density logits give ln 2 BCE") {
  const auto spec = occtest::cube_spec(4, 3);
  VoxelField f(spec);
  for (auto& d : f.density_logits()) d = 0.0f;
  auto l = loss_3d(f, targets_from_labels(random_labels(spec, 2)));
  CHECK(l.density_term == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("saturated correct predictions drive the loss to zero") {
  const auto spec = occtest::cube_spec(4, 3);
  auto lab = random_labels(spec, 3);
  VoxelField f(spec);
  for (std::size_t v = 0; v < spec.voxel_count(); ++v) {
    const bool occ = !lab.is_free(v);
    f.density_logits()[v] = occ ? 60.0f : -60.0f;
    if (occ) f.semantic_logits()[v * 3 + lab.labels[v]] = 60.0f;
  }
  auto l = loss_3d(f, targets_from_labels(lab));
  CHECK(l.loss < 1e-20);
}

TEST_CASE("no occupied voxels: semantic term is zero") {
  const auto spec = occtest::cube_spec(3, 2);
  OccupancyLabels lab(spec);
  lab.labels.assign(spec.voxel_count(), 2);
  auto f = occtest::random_field(spec, 4);
  auto l = loss_3d(f, targets_from_labels(lab));
  CHECK(l.semantic_term == 0.0);
  for (double g : l.grad.semantic_logits) CHECK(g == 0.0);
}

TEST_CASE("gradients match central differences; ignored voxels get none") {
  const auto spec = occtest::cube_spec(4, 3);
  auto f = occtest::random_field(spec, 5, 4.0, 3.0);
  auto targets = targets_from_labels(random_labels(spec, 6));
  auto l = loss_3d(f, targets);
  auto probe = [&](float& slot) {
    const float orig = slot;
    slot = orig + 1e-3f;
    const float hi = slot;
    const double up = loss_3d(f, targets).loss;
    slot = orig - 1e-3f;
    const float lo = slot;
    const double dn = loss_3d(f, targets).loss;
    slot = orig;
    return (up - dn) / (double(hi) - double(lo));
  };
  std::size_t checked = 0;
  for (std::size_t v = 0; v < spec.voxel_count(); ++v) {
    const double fd = probe(f.density_logits()[v]);
    const double an = l.grad.density_logits[v];
    if (std::max(std::abs(fd), std::abs(an)) > 1e-6) {
      CHECK(std::abs(fd - an) / std::max(std::abs(fd), std::abs(an)) < 1e-3);
      ++checked;
    }
    for (int c = 0; c < 3; ++c) {
      const double fs = probe(f.semantic_logits()[v * 3 + c]);
      const double as = l.grad.semantic_logits[v * 3 + c];
      if (targets.semantics[v] == kIgnoreLabel) CHECK(as == 0.0);
      if (std::max(std::abs(fs), std::abs(as)) > 1e-6) {
        CHECK(std::abs(fs - as) / std::max(std::abs(fs), std::abs(as)) < 1e-3);
        ++checked;
      }
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("a small step along the negative gradient lowers the loss") {
  const auto spec = occtest::cube_spec(5, 4);
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    auto f = occtest::random_field(spec, seed);
    auto targets = targets_from_labels(random_labels(spec, seed + 100));
    auto l = loss_3d(f, targets);
    for (std::size_t i = 0; i < f.density_logits().size(); ++i)
      f.density_logits()[i] -= static_cast<float>(1e-1 * l.grad.density_logits[i] * spec.voxel_count());
    for (std::size_t i = 0; i < f.semantic_logits().size(); ++i)
      f.semantic_logits()[i] -= static_cast<float>(1e-1 * l.grad.semantic_logits[i] * spec.voxel_count());
    CHECK(loss_3d(f, targets).loss < l.loss);
  }
}

TEST_CASE("mismatched targets are rejected") {
  auto f = occtest::random_field(occtest::cube_spec(3, 2), 7);
  OccupancyLabels lab(occtest::cube_spec(4, 2));
  lab.labels.assign(lab.spec.voxel_count(), 2);
  CHECK_THROWS_AS(loss_3d(f, targets_from_labels(lab)), InputError);
}

}  // TEST_SUITE
