#include "doctest.h"
#include "helpers.hpp"

#include "occfit/grid.hpp"

#include <cstring>
#include <sstream>

using namespace occ;
using occtest::cube_spec;
using occtest::random_field;

namespace {

// independent 8-corner blend straight from the lattice definition
FieldSample corner_oracle(const VoxelField& f, const Vec3& p) {
  const GridSpec& s = f.spec();
  FieldSample out;
  out.semantics.assign(s.num_classes, 0.0);
  if (!s.contains(p)) return out;
  int i0[3];
  double fr[3];
  for (int a = 0; a < 3; ++a) {
    double g = (p[a] - s.origin[a]) / s.voxel_size - 0.5;
    g = std::min(std::max(g, 0.0), double(s.dims[a] - 1));
    i0[a] = std::min(int(std::floor(g)), s.dims[a] - 2);
    fr[a] = g - i0[a];
  }
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? fr[0] : 1 - fr[0]) * (dy ? fr[1] : 1 - fr[1]) * (dz ? fr[2] : 1 - fr[2]);
        const std::size_t v = s.index(i0[0] + dx, i0[1] + dy, i0[2] + dz);
        out.density += w * sigmoid(f.density_logits()[v]);
        for (int c = 0; c < s.num_classes; ++c) out.semantics[c] += w * f.semantic_logits()[v * s.num_classes + c];
      }
  return out;
}

}  // namespace

TEST_SUITE("grid") {

TEST_CASE("spec validation rejects degenerate grids") {
  GridSpec s = cube_spec(4, 2);
  CHECK_NOTHROW(s.validate());
  s.dims[1] = 0;
  CHECK_THROWS_AS(s.validate(), InputError);
  s = cube_spec(4, 2);
  s.voxel_size = 0.0;
  CHECK_THROWS_AS(s.validate(), InputError);
  s = cube_spec(4, 2);
  s.num_classes = 0;
  CHECK_THROWS_AS(s.validate(), InputError);
}

TEST_CASE("linear index is x-fastest and coords inverts it") {
  GridSpec s;
  s.dims = {3, 4, 5};
  CHECK(s.index(1, 0, 0) == 1);
  CHECK(s.index(0, 1, 0) == 3);
  CHECK(s.index(0, 0, 1) == 12);
  for (std::size_t i = 0; i < s.voxel_count(); ++i) {
    auto c = s.coords(i);
    CHECK(s.index(c[0], c[1], c[2]) == i);
  }
}

TEST_CASE("default init gives psi 0.1 and zero semantics") {
  VoxelField f(cube_spec(3, 2));
  for (std::size_t v = 0; v < f.spec().voxel_count(); ++v) CHECK(f.density(v) == doctest::Approx(0.1).epsilon(1e-6));
  for (float s : f.semantic_logits()) CHECK(s == 0.0f);
}

TEST_CASE("decode examples") {
  VoxelField f(cube_spec(2, 3));
  // saturated density, class 2 favoured
  f.density_logits()[0] = 40.0f;
  f.semantic_logits()[0 * 3 + 2] = 1.0f;
  // psi = 0.5
  f.density_logits()[1] = 0.0f;
  // uniform semantics, occupied
  f.density_logits()[2] = 5.0f;
  auto lab = decode(f, 0.5);
  CHECK(lab.labels[0] == 2);
  CHECK(lab.labels[2] == 0);
  auto lab6 = decode(f, 0.6);
  CHECK(lab6.labels[1] == f.spec().free_id());
  CHECK(lab.labels[1] == 0);  // 0.5 >= 0.5
}

TEST_CASE("argmax ties break to the lowest index") {
  std::vector<float> all_eq(5, 0.25f);
  CHECK(argmax_class(std::span<const float>(all_eq)) == 0);
  std::vector<double> tie{0.0, 3.0, 1.0, 3.0};
  CHECK(argmax_class(std::span<const double>(tie)) == 1);
  // all-equal grids of any value decode to class 0
  for (float value : {-5.0f, 0.0f, 7.5f}) {
    VoxelField f(cube_spec(3, 4));
    for (auto& d : f.density_logits()) d = 10.0f;
    for (auto& s : f.semantic_logits()) s = value;
    auto lab = decode(f, 0.5);
    for (auto l : lab.labels) CHECK(l == 0);
  }
}

TEST_CASE("tau 0 leaves no voxel free") {
  auto f = random_field(cube_spec(4, 3), 3, 30.0);
  auto lab = decode(f, 0.0);
  for (std::size_t v = 0; v < lab.labels.size(); ++v) CHECK_FALSE(lab.is_free(v));
}

TEST_CASE("trilinear is exact at voxel centers") {
  auto f = random_field(cube_spec(4, 3), 5);
  const auto& s = f.spec();
  for (std::size_t v = 0; v < s.voxel_count(); ++v) {
    auto smp = sample_trilinear(f, s.voxel_center(v));
    CHECK(smp.density == doctest::Approx(f.density(v)).epsilon(1e-12));
    for (int c = 0; c < s.num_classes; ++c)
      CHECK(smp.semantics[c] == doctest::Approx(f.semantic_logits()[v * 3 + c]).epsilon(1e-12));
  }
}

TEST_CASE("trilinear midpoint in x is the mean") {
  auto f = random_field(cube_spec(4, 2), 6);
  const auto& s = f.spec();
  const std::size_t a = s.index(1, 2, 1), b = s.index(2, 2, 1);
  auto smp = sample_trilinear(f, 0.5 * (s.voxel_center(a) + s.voxel_center(b)));
  CHECK(smp.density == doctest::Approx(0.5 * (f.density(a) + f.density(b))).epsilon(1e-12));
  CHECK(smp.semantics[1] ==
        doctest::Approx(0.5 * (f.semantic_logits()[a * 2 + 1] + f.semantic_logits()[b * 2 + 1])).epsilon(1e-12));
}

TEST_CASE("trilinear matches the corner oracle and stays in the corner hull") {
  auto f = random_field(cube_spec(5, 3), 7);
  const auto& s = f.spec();
  CounterRng rng(1, 2);
  const Vec3 lo = s.origin, hi = s.max_corner();
  for (int i = 0; i < 2000; ++i) {
    Vec3 p;
    for (int a = 0; a < 3; ++a) p[a] = lo[a] - 0.3 + (hi[a] - lo[a] + 0.6) * rng.uniform();
    auto got = sample_trilinear(f, p);
    auto want = corner_oracle(f, p);
    CHECK(std::abs(got.density - want.density) < 1e-6);
    for (int c = 0; c < 3; ++c) CHECK(std::abs(got.semantics[c] - want.semantics[c]) < 1e-6);
    auto cell = locate_trilinear(s, p);
    if (!cell.inside) {
      CHECK(got.density == 0.0);
      continue;
    }
    double mn = 1, mx = 0, wsum = 0;
    for (int k = 0; k < 8; ++k) {
      mn = std::min(mn, f.density(cell.corners[k]));
      mx = std::max(mx, f.density(cell.corners[k]));
      wsum += cell.weights[k];
    }
    CHECK(wsum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(got.density >= mn - 1e-12);
    CHECK(got.density <= mx + 1e-12);
  }
}

TEST_CASE("outside the grid box reads empty") {
  auto f = random_field(cube_spec(3, 2), 8);
  auto smp = sample_trilinear(f, Vec3(100, 0, 0));
  CHECK(smp.density == 0.0);
  CHECK(smp.semantics == std::vector<double>{0.0, 0.0});
}

TEST_CASE("trilinear backward at a center hits one voxel") {
  auto f = random_field(cube_spec(4, 2), 9);
  const auto& s = f.spec();
  const std::size_t v = s.index(2, 1, 2);
  FieldGrad g(s);
  std::vector<double> ds{0.5, -1.0};
  sample_trilinear_backward(f, s.voxel_center(v), 2.0, ds, g);
  for (std::size_t i = 0; i < s.voxel_count(); ++i) {
    if (i == v) continue;
    CHECK(g.density_logits[i] == 0.0);
    CHECK(g.semantic_logits[i * 2] == 0.0);
  }
  const double p = f.density(v);
  CHECK(g.density_logits[v] == doctest::Approx(2.0 * p * (1 - p)));
  CHECK(g.semantic_logits[v * 2 + 1] == doctest::Approx(-1.0));
}

TEST_CASE("trilinear backward with zero upstream leaves the buffer alone") {
  auto f = random_field(cube_spec(4, 2), 10);
  FieldGrad g(f.spec());
  std::vector<double> ds{0.0, 0.0};
  sample_trilinear_backward(f, Vec3(0.1, 0.2, -0.3), 0.0, ds, g);
  CHECK(g.all_zero());
}

TEST_CASE("trilinear backward matches central differences") {
  const auto spec = cube_spec(4, 3);
  CounterRng rng(4, 4);
  for (int trial = 0; trial < 20; ++trial) {
    auto f = random_field(spec, 100 + trial);
    Vec3 p(rng.uniform() * 1.6 - 0.8, rng.uniform() * 1.6 - 0.8, rng.uniform() * 1.6 - 0.8);
    const double a = 2 * rng.uniform() - 1;
    std::vector<double> b{rng.uniform(), -rng.uniform(), 0.3};
    auto objective = [&](const VoxelField& ff) {
      auto s = sample_trilinear(ff, p);
      return a * s.density + b[0] * s.semantics[0] + b[1] * s.semantics[1] + b[2] * s.semantics[2];
    };
    FieldGrad g(spec);
    sample_trilinear_backward(f, p, a, b, g);
    auto cell = locate_trilinear(spec, p);
    for (int k = 0; k < 8; ++k) {
      const std::size_t v = cell.corners[k];
      auto probe = [&](float& slot, double analytic) {
        const float orig = slot;
        slot = orig + 1e-3f;
        const double up = objective(f);
        const float hi = slot;
        slot = orig - 1e-3f;
        const double dn = objective(f);
        const float lo = slot;
        slot = orig;
        const double fd = (up - dn) / (double(hi) - double(lo));
        if (std::max(std::abs(fd), std::abs(analytic)) > 1e-6)
          CHECK(std::abs(fd - analytic) / std::max(std::abs(fd), std::abs(analytic)) < 1e-3);
      };
      probe(f.density_logits()[v], g.density_logits[v]);
      probe(f.semantic_logits()[v * 3 + 1], g.semantic_logits[v * 3 + 1]);
    }
  }
}

TEST_CASE("field and label files round-trip bit-exactly") {
  auto f = random_field(cube_spec(5, 4), 11);
  f.density_logits()[3] = -0.0f;
  std::stringstream ss;
  write_field(ss, f);
  auto back = read_field(ss);
  CHECK(back == f);
  CHECK(std::memcmp(back.density_logits().data(), f.density_logits().data(), 4 * f.density_logits().size()) == 0);

  const std::string bytes = [&] {
    std::stringstream s2;
    write_field(s2, f);
    return s2.str();
  }();
  CHECK(bytes.substr(0, 4) == "VOXF");

  auto lab = decode(f, 0.5);
  std::stringstream sl;
  write_labels(sl, lab);
  CHECK(sl.str().substr(0, 4) == "OCCL");
  CHECK(read_labels(sl) == lab);
}

TEST_CASE("corrupt files are input errors") {
  std::stringstream bad("VOXQ....");
  CHECK_THROWS_AS(read_field(bad), InputError);
  auto f = random_field(cube_spec(3, 2), 12);
  std::stringstream ss;
  write_field(ss, f);
  std::string s = ss.str();
  s.resize(s.size() - 5);
  std::stringstream trunc(s);
  CHECK_THROWS_AS(read_field(trunc), InputError);

  OccupancyLabels lab(cube_spec(2, 2));
  lab.labels.assign(lab.spec.voxel_count(), 2);
  lab.labels[1] = 7;
  CHECK_THROWS_AS(lab.validate(), InputError);
}

}  // TEST_SUITE
