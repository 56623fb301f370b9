#include "doctest.h"
#include "helpers.hpp"

#include "occfit/supervise2d.hpp"

#include <cmath>

using namespace occ;

TEST_SUITE("supervise2d") {

TEST_CASE("class weights: ln e, equal counts, and the 900/90/10 case") {
  {
    std::vector<std::uint64_t> counts{10, 10};
    auto w = compute_class_weights(counts);
    CHECK(w.weights[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(w.weights[1] == w.weights[0]);
  }
  {
    std::vector<std::uint64_t> counts{900, 90, 10};
    auto w = compute_class_weights(counts);
    CHECK(std::abs(w.weights[0] - std::log(1000.0 / 900.0)) < 1e-12);
    CHECK(std::abs(w.weights[1] - std::log(1000.0 / 90.0)) < 1e-12);
    CHECK(std::abs(w.weights[2] - std::log(1000.0 / 10.0)) < 1e-12);
    CHECK(w.weights[0] == doctest::Approx(0.1054).epsilon(1e-3));
    CHECK(w.weights[1] == doctest::Approx(2.4079).epsilon(1e-4));
    CHECK(w.weights[2] == doctest::Approx(4.6052).epsilon(1e-4));
  }
  {
    // 1e6 * e rounded: ratio within 1e-7 of e, so the weight is within 1e-7 of 1
    const auto n0 = static_cast<std::uint64_t>(1000000);
    const auto total = static_cast<std::uint64_t>(std::llround(1000000.0 * std::exp(1.0)));
    std::vector<std::uint64_t> counts{n0, total - n0};
    auto w = compute_class_weights(counts);
    CHECK(std::abs(w.weights[0] - 1.0) < 1e-6);
  }
}

TEST_CASE("class weights: empty classes and all-zero counts") {
  std::vector<std::uint64_t> counts{5, 0, 15};
  auto w = compute_class_weights(counts);
  CHECK(w.weights[1] == 0.0);
  CHECK(w.weights[0] > 0.0);
  std::vector<std::uint64_t> zero{0, 0};
  CHECK_THROWS_AS(compute_class_weights(zero), InputError);
}

TEST_CASE("count_classes tallies per class") {
  std::vector<LabeledPoint> pts{{Vec3::Zero(), 2, 0}, {Vec3::Zero(), 0, 1}, {Vec3::Zero(), 2, -1}};
  auto c = count_classes(pts, 3);
  CHECK(c == std::vector<std::uint64_t>{1, 0, 2});
}

TEST_CASE("ray loss examples") {
  Ray ray;
  ray.gt_depth = 4.0;
  ray.gt_class = 1;
  ray.weight = 2.5;
  RenderOutput out;
  out.depth = 4.0;
  out.semantics = {-60.0, 60.0, -60.0};
  auto l = ray_loss(out, ray);
  CHECK(l.loss < 1e-40);
  CHECK(l.loss >= 0.0);

  out.semantics = {0, 0, 0, 0};
  out.depth = 3.0;
  for (int gt = 0; gt < 4; ++gt) {
    ray.gt_class = gt;
    ray.weight = 1.0;
    auto z = ray_loss(out, ray);
    CHECK(z.semantic_term == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    CHECK(z.depth_term == doctest::Approx(1.0));
  }
}

TEST_CASE("ray loss is stable for huge logits") {
  Ray ray;
  ray.gt_class = 0;
  RenderOutput out;
  out.depth = 1.0;
  out.semantics = {1e4, -1e4};
  auto l = ray_loss(out, ray);
  CHECK(std::isfinite(l.loss));
  out.semantics = {-1e4, 1e4};
  l = ray_loss(out, ray);
  CHECK(l.semantic_term == doctest::Approx(2e4));
}

TEST_CASE("ray loss gradients match central differences") {
  CounterRng rng(8, 0);
  LossCoefficients coeffs{0.7, 1.3};
  for (int i = 0; i < 200; ++i) {
    Ray ray;
    ray.gt_depth = 0.5 + 10 * rng.uniform();
    ray.gt_class = int(rng.uniform() * 5);
    ray.weight = 0.1 + 3 * rng.uniform();
    RenderOutput out;
    out.depth = 12 * rng.uniform();
    for (int c = 0; c < 5; ++c) out.semantics.push_back(6 * rng.uniform() - 3);
    auto l = ray_loss(out, ray, coeffs);
    const double h = 1e-5;
    auto at = [&](RenderOutput o) { return ray_loss(o, ray, coeffs).loss; };
    auto up = out, dn = out;
    up.depth += h;
    dn.depth -= h;
    const double fd = (at(up) - at(dn)) / (2 * h);
    CHECK(std::abs(fd - l.d_depth) <= 1e-4 * std::max(1.0, std::abs(fd)));
    for (int c = 0; c < 5; ++c) {
      up = out;
      dn = out;
      up.semantics[c] += h;
      dn.semantics[c] -= h;
      const double fs = (at(up) - at(dn)) / (2 * h);
      if (std::max(std::abs(fs), std::abs(l.d_semantics[c])) > 1e-6)
        CHECK(std::abs(fs - l.d_semantics[c]) / std::max(std::abs(fs), std::abs(l.d_semantics[c])) < 1e-4);
    }
  }
}

TEST_CASE("batch of one ray equals that ray's loss; repeated id equals one copy") {
  const auto spec = occtest::cube_spec(6, 3);
  auto field = occtest::random_field(spec, 9);
  std::vector<Ray> rays(1);
  rays[0].origin = Vec3(-3, 0.2, 0.1);
  rays[0].direction = Vec3(1, 0.05, -0.02).normalized();
  rays[0].gt_depth = 2.5;
  rays[0].gt_class = 2;
  BatchOptions opts;
  opts.seed = 3;
  opts.step = 4;
  auto single = batch_loss(rays, field, opts);

  auto vol = DensityVolume::from_field(field);
  auto rr = render_ray(rays[0], 0, vol, opts.sampling, derive_seed(opts.seed, opts.step, 0x7a3));
  CHECK(single.loss == doctest::Approx(ray_loss(rr.output, rays[0]).loss).epsilon(1e-14));

  StaticFields sf(field);
  std::vector<std::size_t> twice{0, 0};
  auto dup = batch_loss(rays, twice, sf, spec, opts);
  CHECK(dup.loss == doctest::Approx(single.loss).epsilon(1e-14));
  for (std::size_t i = 0; i < spec.voxel_count(); ++i)
    CHECK(dup.grad.density_logits[i] == doctest::Approx(single.grad.density_logits[i]).epsilon(1e-12));
}

TEST_CASE("two rays through a two-voxel field against a hand-composed oracle") {
  GridSpec spec;
  spec.dims = {2, 1, 1};
  spec.origin = Vec3(0, 0, 0);
  spec.voxel_size = 1.0;
  spec.num_classes = 2;
  VoxelField field(spec);
  field.density_logits()[0] = 1.5f;
  field.density_logits()[1] = -0.5f;
  field.semantic_logits()[0] = 0.8f;
  field.semantic_logits()[1] = -0.2f;
  field.semantic_logits()[2] = -1.0f;
  field.semantic_logits()[3] = 0.6f;

  std::vector<Ray> rays(2);
  rays[0].origin = Vec3(-1, 0.5, 0.5);
  rays[0].direction = Vec3::UnitX();
  rays[0].gt_depth = 1.7;
  rays[0].gt_class = 0;
  rays[1].origin = Vec3(3, 0.5, 0.5);
  rays[1].direction = -Vec3::UnitX();
  rays[1].gt_depth = 1.2;
  rays[1].gt_class = 1;
  rays[1].weight = 0.5;

  BatchOptions opts;
  opts.seed = 1;
  auto got = batch_loss(rays, field, opts);

  const double p0 = sigmoid(1.5), p1 = sigmoid(-0.5);
  const double s0[2] = {0.8f, -0.2f}, s1[2] = {-1.0f, 0.6f};  // as stored
  auto vol = DensityVolume::from_field(field);
  double want = 0;
  for (std::size_t r = 0; r < 2; ++r) {
    auto rr = render_ray(rays[r], r, vol, opts.sampling, derive_seed(opts.seed, 0, 0x7a3));
    REQUIRE(rr.hit);
    const auto& d = rr.samples.distances;
    long double T = 1, depth = 0, sem[2] = {0, 0};
    for (std::size_t k = 0; k < d.size(); ++k) {
      const double x = rays[r].origin.x() + d[k] * rays[r].direction.x();
      // centers at 0.5 and 1.5; clamp outside
      const double f = std::min(1.0, std::max(0.0, x - 0.5));
      const double sigma = (1 - f) * p0 + f * p1;
      const double delta = (k + 1 < d.size() ? d[k + 1] : rr.samples.t_far) - d[k];
      const long double a = 1 - std::exp(-(long double)sigma * delta);
      const long double w = T * a;
      depth += w * d[k];
      for (int c = 0; c < 2; ++c) sem[c] += w * ((1 - f) * s0[c] + f * s1[c]);
      T *= 1 - a;
    }
    const long double m = std::max(sem[0], sem[1]);
    const long double lse = m + std::log(std::exp(sem[0] - m) + std::exp(sem[1] - m));
    const long double resid = depth - rays[r].gt_depth;
    want += rays[r].weight * (double)(resid * resid + lse - sem[rays[r].gt_class]);
  }
  want /= 2;
  CHECK(std::abs(got.loss - want) < 1e-9);
}

TEST_CASE("scaling every ray weight scales loss and gradient") {
  const auto spec = occtest::cube_spec(5, 3);
  auto field = occtest::random_field(spec, 10);
  CounterRng rng(10, 1);
  std::vector<Ray> rays;
  for (int i = 0; i < 40; ++i) {
    Ray r;
    r.origin = Vec3(-3, rng.uniform() - 0.5, rng.uniform() - 0.5);
    r.direction = (Vec3(1, 0.2 * rng.uniform() - 0.1, 0.2 * rng.uniform() - 0.1)).normalized();
    r.gt_depth = 1 + 3 * rng.uniform();
    r.gt_class = int(3 * rng.uniform());
    rays.push_back(r);
  }
  BatchOptions opts;
  auto a = batch_loss(rays, field, opts);
  for (auto& r : rays) r.weight = 3.0;
  auto b = batch_loss(rays, field, opts);
  CHECK(b.loss == doctest::Approx(3 * a.loss).epsilon(1e-12));
  CHECK(a.loss >= 0.0);
  for (std::size_t i = 0; i < spec.voxel_count(); ++i)
    CHECK(b.grad.density_logits[i] == doctest::Approx(3 * a.grad.density_logits[i]).epsilon(1e-9));
}

TEST_CASE("batch selection is a seeded subsample without replacement") {
  auto all = select_batch(10, 20, 1, 0);
  CHECK(all.size() == 10);
  auto a = select_batch(1000, 100, 5, 7);
  auto b = select_batch(1000, 100, 5, 7);
  auto c = select_batch(1000, 100, 5, 8);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a.size() == 100);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
}

TEST_CASE("gradient does not depend on the thread count") {
  const auto spec = occtest::cube_spec(6, 3);
  auto field = occtest::random_field(spec, 11);
  CounterRng rng(11, 1);
  std::vector<Ray> rays;
  for (int i = 0; i < 3000; ++i) {
    Ray r;
    r.origin = Vec3(-4, 2 * rng.uniform() - 1, 2 * rng.uniform() - 1);
    r.direction = (Vec3(1, 0.4 * rng.uniform() - 0.2, 0.4 * rng.uniform() - 0.2)).normalized();
    r.gt_depth = 1 + 4 * rng.uniform();
    r.gt_class = int(3 * rng.uniform());
    rays.push_back(r);
  }
  BatchOptions opts;
  opts.rays_per_step = 2500;
  opts.threads = 1;
  auto one = batch_loss(rays, field, opts);
  opts.threads = 4;
  auto four = batch_loss(rays, field, opts);
  CHECK(one.loss == four.loss);
  CHECK(one.grad.density_logits == four.grad.density_logits);
  CHECK(one.grad.semantic_logits == four.grad.semantic_logits);
}

}  // TEST_SUITE
