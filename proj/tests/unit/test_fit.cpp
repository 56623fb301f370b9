#include "doctest.h"
#include "helpers.hpp"

#include "occfit/fit.hpp"
#include "occfit/synth.hpp"

#include <cmath>

using namespace occ;

namespace {

struct SmallWorld {
  SceneScript scene;
  CameraRig rig;
  std::vector<LabeledPoint> points;
  OccupancyLabels labels;
  std::vector<BoxTrack> tracks;
};

const SmallWorld& small_world() {
  static const SmallWorld w = [] {
    auto s = parse_scene_script(occtest::kSmallScene, "small.json");
    return SmallWorld{s, build_camera_rig(s), simulate_scans(s), voxelize(s, 0), build_tracks(s)};
  }();
  return w;
}

FitConfig small_cfg() {
  FitConfig cfg;
  cfg.steps = 4;
  cfg.rays_per_step = 256;
  cfg.adam.step_size = 0.05;
  cfg.seed = 11;
  cfg.temporal.dynamic_classes = {2};
  return cfg;
}

FitData small_data(const FitConfig& cfg) {
  const auto& w = small_world();
  return assemble_fit_data(w.labels.spec, w.rig, w.points, cfg, &w.labels, w.tracks);
}

// independent confusion count straight off the decoded grid
double oracle_iou(const VoxelField& f, const OccupancyLabels& gt, double tau, int cls) {
  std::uint64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t v = 0; v < gt.labels.size(); ++v) {
    int pred = f.spec().num_classes;
    if (f.density(v) >= tau) {
      auto s = f.semantics_at(v);
      pred = int(std::max_element(s.begin(), s.end()) - s.begin());
    }
    const bool p = pred == cls, g = gt.labels[v] == cls;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  if (tp + fp + fn == 0) return std::nan("");
  return double(tp) / double(tp + fp + fn);
}

}  // namespace

TEST_SUITE("fit") {

TEST_CASE("mode names") {
  CHECK(parse_fit_mode("2d") == FitMode::k2d);
  CHECK(parse_fit_mode("3d") == FitMode::k3d);
  CHECK(parse_fit_mode("2d+3d") == FitMode::k2d3d);
  CHECK(to_string(FitMode::k2d3d) == "2d+3d");
  CHECK_THROWS_AS(parse_fit_mode("4d"), InputError);
}

TEST_CASE("zero steps leave the field untouched") {
  auto cfg = small_cfg();
  cfg.steps = 0;
  auto data = small_data(cfg);
  auto init = occtest::random_field(data.spec, 2);
  auto r = fit(init, data, cfg);
  CHECK(r.field == init);
  CHECK(r.history.empty());
}

TEST_CASE("one ray asking for a surface raises the density it crosses") {
  const auto spec = occtest::cube_spec(3, 2, 1.0);
  FitData data;
  data.spec = spec;
  Ray r;
  r.origin = Vec3(-3.0, 0.0, 0.0);
  r.direction = Vec3::UnitX();
  r.gt_depth = 3.0;  // center of the middle voxel
  r.gt_class = 1;
  data.rays.push_back(r);
  FitConfig cfg;
  cfg.steps = 1;
  const VoxelField init(spec);
  auto out = fit(init, data, cfg);
  const auto mid = spec.index(1, 1, 1);
  CHECK(out.field.density_logits()[mid] > init.density_logits()[mid]);
  CHECK(out.field.semantic_logits()[mid * 2 + 1] > out.field.semantic_logits()[mid * 2 + 0]);
}

TEST_CASE("evaluate: perfect prediction and an empty prediction") {
  const auto& w = small_world();
  const auto& gt = w.labels;
  VoxelField perfect(gt.spec);
  for (std::size_t v = 0; v < gt.labels.size(); ++v) {
    if (gt.is_free(v)) {
      perfect.density_logits()[v] = -8.0f;
    } else {
      perfect.density_logits()[v] = 8.0f;
      perfect.semantic_logits()[v * 3 + gt.labels[v]] = 5.0f;
    }
  }
  std::vector<int> dyn{2};
  auto m = evaluate(perfect, gt, 0.5, dyn);
  CHECK(m.miou == 1.0);
  CHECK(m.miou_static == 1.0);
  CHECK(m.miou_dynamic == 1.0);

  VoxelField empty(gt.spec);
  for (auto& d : empty.density_logits()) d = -8.0f;
  auto e = evaluate(empty, gt, 0.5, dyn);
  CHECK(e.miou == 0.0);
  for (double iou : e.class_iou) CHECK(iou == 0.0);
}

TEST_CASE("evaluate matches a brute-force confusion count") {
  const auto& w = small_world();
  std::vector<int> dyn{2};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto f = occtest::random_field(w.labels.spec, seed);
    for (double tau : {0.3, 0.5, 0.8}) {
      auto m = evaluate(f, w.labels, tau, dyn);
      double sum = 0.0;
      int n = 0;
      for (int c = 0; c < 3; ++c) {
        const double want = oracle_iou(f, w.labels, tau, c);
        if (std::isnan(want)) {
          CHECK(std::isnan(m.class_iou[c]));
          continue;
        }
        CHECK(m.class_iou[c] == doctest::Approx(want).epsilon(1e-15));
        sum += want;
        ++n;
      }
      CHECK(m.miou == doctest::Approx(sum / n).epsilon(1e-14));
    }
  }
}

TEST_CASE("assembly keeps held-out cameras out of training") {
  auto cfg = small_cfg();
  auto data = small_data(cfg);
  CHECK(!data.rays.empty());
  CHECK(!data.heldout_rays.empty());
  for (const auto& r : data.heldout_rays) {
    CHECK(r.timestep == 0);
    CHECK(r.weight == 1.0);
  }
  // horizon 0: only t = 0 supervision
  for (const auto& r : data.rays) CHECK(r.timestep == 0);
}

TEST_CASE("assembly filters dynamic rays and weights classes after filtering") {
  auto cfg = small_cfg();
  cfg.temporal.horizon = 1;
  auto data = small_data(cfg);
  bool saw_other_t = false;
  for (const auto& r : data.rays) {
    if (r.timestep != 0) {
      saw_other_t = true;
      CHECK(r.gt_class != 2);
    }
    CHECK(r.weight == doctest::Approx(data.class_weights.weights[r.gt_class]).epsilon(1e-15));
  }
  CHECK(saw_other_t);
  const auto& w = small_world();
  auto kept = dynamic_ray_filter(select_horizon(w.points, 1), cfg.temporal);
  CHECK(data.class_weights.counts == count_classes(kept, 3));

  cfg.class_weighting = false;
  for (const auto& r : small_data(cfg).rays) CHECK(r.weight == 1.0);
}

TEST_CASE("horizon 0 without flow takes the single-frame path") {
  auto cfg = small_cfg();
  cfg.steps = 1;
  auto data = small_data(cfg);
  auto init = occtest::random_field(data.spec, 3);
  auto r = fit(init, data, cfg);
  BatchOptions opts;
  opts.sampling = cfg.sampling;
  opts.rays_per_step = cfg.rays_per_step;
  opts.seed = cfg.seed;
  opts.step = 0;
  auto direct = batch_loss(data.rays, init, opts);
  CHECK(r.history.at(0).loss == direct.loss);
}

TEST_CASE("fits replay bit for bit and do not depend on the thread count") {
  auto cfg = small_cfg();
  cfg.mode = FitMode::k2d3d;
  cfg.temporal.horizon = 1;
  auto data = small_data(cfg);
  const VoxelField init(data.spec);
  auto a = fit(init, data, cfg);
  auto b = fit(init, data, cfg);
  cfg.threads = 3;
  auto c = fit(init, data, cfg);
  CHECK(a.field == b.field);
  CHECK(a.field == c.field);
  REQUIRE(a.history.size() == c.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].loss == c.history[i].loss);
  cfg.seed = 12;
  CHECK_FALSE(fit(init, data, cfg).field == a.field);
}

TEST_CASE("the 2D loss falls over a short run") {
  auto cfg = small_cfg();
  cfg.steps = 30;
  cfg.rays_per_step = 1 << 20;
  auto data = small_data(cfg);
  auto r = fit(VoxelField(data.spec), data, cfg);
  CHECK(r.history.back().loss < 0.8 * r.history.front().loss);
}

TEST_CASE("divergence guard") {
  auto cfg = small_cfg();
  cfg.divergence_limit = 1e-9;
  auto data = small_data(cfg);
  CHECK_THROWS_AS(fit(VoxelField(data.spec), data, cfg), DivergenceError);
}

TEST_CASE("bad inputs") {
  auto cfg = small_cfg();
  auto data = small_data(cfg);
  CHECK_THROWS_AS(fit(VoxelField(occtest::cube_spec(3, 3)), data, cfg), InputError);
  cfg.mode = FitMode::k3d;
  data.targets.reset();
  CHECK_THROWS_AS(fit(VoxelField(data.spec), data, cfg), InputError);
}

TEST_CASE("combined objective of the true field beats the prior") {
  auto cfg = small_cfg();
  cfg.mode = FitMode::k2d3d;
  auto data = small_data(cfg);
  const auto& gt = small_world().labels;
  VoxelField truth(gt.spec);
  for (std::size_t v = 0; v < gt.labels.size(); ++v) {
    truth.density_logits()[v] = gt.is_free(v) ? -6.0f : 6.0f;
    if (!gt.is_free(v)) truth.semantic_logits()[v * 3 + gt.labels[v]] = 6.0f;
  }
  const double t = combined_objective(truth, data, cfg);
  const double p = combined_objective(VoxelField(gt.spec), data, cfg);
  CHECK(std::isfinite(t));
  CHECK(t < p);
  CHECK(combined_objective(truth, data, cfg) == t);
}

TEST_CASE("held-out depth error is finite and thread independent") {
  auto cfg = small_cfg();
  auto data = small_data(cfg);
  const double mae = depth_mae(VoxelField(data.spec), data.heldout_rays, cfg.sampling, 0, 1);
  CHECK(std::isfinite(mae));
  CHECK(mae > 0.0);
  CHECK(depth_mae(VoxelField(data.spec), data.heldout_rays, cfg.sampling, 0, 3) == mae);
}

}  // TEST_SUITE
