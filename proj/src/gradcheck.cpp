#include "occfit/gradcheck.hpp"

#include "occfit/flow.hpp"
#include "occfit/parallel.hpp"
#include "occfit/render.hpp"
#include "occfit/sampling.hpp"
#include "occfit/supervise2d.hpp"
#include "occfit/supervise3d.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>

namespace occ {
namespace {

class Checker {
 public:
  Checker(std::string name, const GradcheckOptions& opts) : opts_(opts) { suite_.name = std::move(name); }

  void compare(double analytic, double numeric) {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (!(scale > opts_.min_grad) && std::isfinite(analytic) && std::isfinite(numeric)) return;
    double rel = std::abs(analytic - numeric) / scale;
    if (std::isnan(rel)) rel = std::numeric_limits<double>::infinity();
    ++suite_.checked;
    suite_.max_rel_error = std::max(suite_.max_rel_error, rel);
    if (!(rel < opts_.tol)) suite_.passed = false;
  }

  GradcheckSuite finish() {
    if (suite_.checked == 0) suite_.passed = false;
    return suite_;
  }

 private:
  const GradcheckOptions& opts_;
  GradcheckSuite suite_;
};

// Central difference on an f32 parameter; the step is the representable perturbation.
double central_difference(float& param, double eps, const std::function<double()>& f) {
  const float original = param;
  const float plus = static_cast<float>(original + eps);
  const float minus = static_cast<float>(original - eps);
  param = plus;
  const double fp = f();
  param = minus;
  const double fm = f();
  param = original;
  return (fp - fm) / (static_cast<double>(plus) - static_cast<double>(minus));
}

double central_difference(double& param, double eps, const std::function<double()>& f) {
  const double original = param;
  param = original + eps;
  const double fp = f();
  param = original - eps;
  const double fm = f();
  param = original;
  return (fp - fm) / (2.0 * eps);
}

VoxelField random_field(const GridSpec& spec, CounterRng& rng) {
  VoxelField field(spec);
  for (float& x : field.density_logits()) x = static_cast<float>(6.0 * rng.uniform() - 3.0);
  for (float& x : field.semantic_logits()) x = static_cast<float>(4.0 * rng.uniform() - 2.0);
  return field;
}

Vec3 random_unit(CounterRng& rng) {
  const double z = 2.0 * rng.uniform() - 1.0;
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(phi), r * std::sin(phi), z};
}

struct FrozenRay {
  Ray ray;
  RaySpan span;
  std::vector<double> distances;
};

GradcheckSuite check_render_2d(const GradcheckOptions& opts, CounterRng& rng) {
  GridSpec spec;
  spec.dims = {opts.grid, opts.grid, opts.grid};
  spec.voxel_size = 0.5;
  spec.origin = Vec3::Constant(-0.25 * opts.grid);
  spec.num_classes = opts.classes;
  VoxelField field = random_field(spec, rng);
  const double half = 0.25 * opts.grid;

  // Rays from a sphere around the grid aimed at random interior points; sample placement is
  // drawn once from the unperturbed field and then frozen.
  std::vector<FrozenRay> frozen;
  const DensityVolume base = DensityVolume::from_field(field);
  SamplingConfig sampling;
  while (static_cast<int>(frozen.size()) < opts.rays) {
    FrozenRay fr;
    const Vec3 target = half * 0.8 * Vec3(2 * rng.uniform() - 1, 2 * rng.uniform() - 1, 2 * rng.uniform() - 1);
    fr.ray.origin = target + 2.5 * half * random_unit(rng);
    fr.ray.direction = (target - fr.ray.origin).normalized();
    fr.ray.gt_depth = (target - fr.ray.origin).norm() * (0.6 + 0.8 * rng.uniform());
    fr.ray.gt_class = static_cast<int>(rng.uniform() * opts.classes);
    fr.ray.weight = 0.5 + 1.5 * rng.uniform();
    CounterRng ray_rng(opts.seed, frozen.size());
    const auto samples = sample_ray(fr.ray.origin, fr.ray.direction, base, sampling, ray_rng);
    if (!samples) continue;
    fr.span = {samples->t_near, samples->t_far};
    fr.distances = samples->distances;
    frozen.push_back(std::move(fr));
  }

  auto loss_and_grad = [&](FieldGrad* grad) {
    const DensityVolume vol = DensityVolume::from_field(field);
    VolumeGrad vg(spec);
    double loss = 0.0;
    for (const auto& fr : frozen) {
      SampleSet s = gather_samples(fr.ray.origin, fr.ray.direction, fr.span, fr.distances, vol);
      const RenderOutput out = render_forward(s);
      const RayLoss rl = ray_loss(out, fr.ray);
      loss += rl.loss;
      if (grad) render_backward(s, rl.d_depth, rl.d_semantics, vg);
    }
    const double inv = 1.0 / static_cast<double>(frozen.size());
    if (grad) {
      chain_to_logits(field, vg, *grad);
      grad->scale(inv);
    }
    return loss * inv;
  };

  FieldGrad analytic(spec);
  loss_and_grad(&analytic);
  const double sign = opts.inject_sign_flip ? -1.0 : 1.0;
  const std::function<double()> f = [&] { return loss_and_grad(nullptr); };

  Checker check("render_2d", opts);
  auto density = field.density_logits();
  for (std::size_t i = 0; i < density.size(); ++i) {
    check.compare(sign * analytic.density_logits[i], central_difference(density[i], opts.eps, f));
  }
  auto semantic = field.semantic_logits();
  for (std::size_t i = 0; i < semantic.size(); ++i) {
    check.compare(sign * analytic.semantic_logits[i], central_difference(semantic[i], opts.eps, f));
  }
  return check.finish();
}

GradcheckSuite check_composite(const GradcheckOptions& opts, CounterRng& rng) {
  Checker check("composite", opts);
  const int c = opts.classes;
  for (int trial = 0; trial < 8; ++trial) {
    SampleSet s;
    s.num_classes = c;
    const int n = 5 + trial * 7;
    double t = 0.1 + rng.uniform();
    for (int k = 0; k < n; ++k) {
      s.distances.push_back(t);
      t += 0.02 + 0.3 * rng.uniform();
    }
    s.t_far = t;
    for (int k = 0; k < n; ++k) {
      s.deltas.push_back((k + 1 < n ? s.distances[static_cast<std::size_t>(k) + 1] : s.t_far) -
                         s.distances[static_cast<std::size_t>(k)]);
      s.sigma.push_back(rng.uniform());
      for (int j = 0; j < c; ++j) s.semantics.push_back(4.0 * rng.uniform() - 2.0);
    }
    s.weights.resize(s.size());
    std::vector<double> d_sem(static_cast<std::size_t>(c));
    for (double& x : d_sem) x = 2.0 * rng.uniform() - 1.0;
    const double d_depth = 2.0 * rng.uniform() - 1.0;

    auto objective = [&] {
      SampleSet copy = s;
      const RenderOutput out = render_forward(copy);
      double v = d_depth * out.depth;
      for (int j = 0; j < c; ++j) v += d_sem[static_cast<std::size_t>(j)] * out.semantics[static_cast<std::size_t>(j)];
      return v;
    };
    render_forward(s);
    const SampleGrad g = render_backward_samples(s, d_depth, d_sem);
    for (std::size_t k = 0; k < s.size(); ++k) {
      check.compare(g.sigma[k], central_difference(s.sigma[k], opts.eps, objective));
    }
    for (std::size_t i = 0; i < s.semantics.size(); ++i) {
      check.compare(g.semantics[i], central_difference(s.semantics[i], opts.eps, objective));
    }
  }
  return check.finish();
}

GradcheckSuite check_trilinear(const GradcheckOptions& opts, CounterRng& rng) {
  Checker check("trilinear", opts);
  GridSpec spec;
  spec.dims = {4, 3, 5};
  spec.voxel_size = 0.7;
  spec.origin = Vec3(-1.0, 0.5, 0.2);
  spec.num_classes = opts.classes;
  VoxelField field = random_field(spec, rng);
  const auto c = static_cast<std::size_t>(spec.num_classes);
  for (int trial = 0; trial < 16; ++trial) {
    const Vec3 p = spec.origin + Vec3(rng.uniform() * 4, rng.uniform() * 3, rng.uniform() * 5) * spec.voxel_size;
    const double d_density = 2.0 * rng.uniform() - 1.0;
    std::vector<double> d_sem(c);
    for (double& x : d_sem) x = 2.0 * rng.uniform() - 1.0;
    auto objective = [&] {
      const FieldSample fs = sample_trilinear(field, p);
      double v = d_density * fs.density;
      for (std::size_t j = 0; j < c; ++j) v += d_sem[j] * fs.semantics[j];
      return v;
    };
    FieldGrad g(spec);
    sample_trilinear_backward(field, p, d_density, d_sem, g);
    auto density = field.density_logits();
    for (std::size_t i = 0; i < density.size(); ++i) {
      check.compare(g.density_logits[i], central_difference(density[i], opts.eps, objective));
    }
    auto semantic = field.semantic_logits();
    for (std::size_t i = 0; i < semantic.size(); ++i) {
      check.compare(g.semantic_logits[i], central_difference(semantic[i], opts.eps, objective));
    }
  }
  return check.finish();
}

GradcheckSuite check_loss_3d(const GradcheckOptions& opts, CounterRng& rng) {
  Checker check("loss_3d", opts);
  GridSpec spec;
  spec.dims = {opts.grid, opts.grid, std::max(1, opts.grid / 2)};
  spec.num_classes = opts.classes;
  VoxelField field = random_field(spec, rng);
  OccupancyLabels labels(spec);
  for (auto& l : labels.labels) {
    const double u = rng.uniform();
    l = static_cast<std::uint16_t>(u < 0.5 ? spec.free_id() : static_cast<int>(rng.uniform() * spec.num_classes));
  }
  const VoxelTargets targets = targets_from_labels(labels);
  const Loss3d analytic = loss_3d(field, targets);
  const std::function<double()> f = [&] { return loss_3d(field, targets).loss; };
  auto density = field.density_logits();
  for (std::size_t i = 0; i < density.size(); ++i) {
    check.compare(analytic.grad.density_logits[i], central_difference(density[i], opts.eps, f));
  }
  auto semantic = field.semantic_logits();
  for (std::size_t i = 0; i < semantic.size(); ++i) {
    check.compare(analytic.grad.semantic_logits[i], central_difference(semantic[i], opts.eps, f));
  }
  return check.finish();
}

GradcheckSuite check_flow(const GradcheckOptions& opts, CounterRng& rng) {
  Checker check("flow", opts);
  GridSpec spec;
  spec.dims = {8, 6, 4};
  spec.num_classes = opts.classes;
  spec.voxel_size = 0.5;
  VoxelField field = random_field(spec, rng);
  for (float& x : field.density_logits()) x = 3.0f;

  BoxTrack track;
  track.class_id = 0;
  track.extent = Vec3(1.6, 1.1, 1.1);
  track.poses[0] = make_rigid(Mat3::Identity(), Vec3(1.4, 1.3, 1.0));
  track.poses[1] = make_rigid(yaw_rotation(0.3), Vec3(2.07, 1.71, 1.13));
  const std::vector<int> ts{0, 1};
  const FlowTable table = build_flow_table(std::span<const BoxTrack>(&track, 1), spec, ts);
  std::vector<std::vector<std::uint32_t>> sources{table.boxes[0].members};

  DensityVolume base = DensityVolume::from_field(field);
  const FlowedVolume flowed = apply_flow(base, table, sources, 1);
  VolumeGrad upstream(spec);
  for (double& x : upstream.sigma) x = 2.0 * rng.uniform() - 1.0;
  for (double& x : upstream.semantics) x = 2.0 * rng.uniform() - 1.0;
  VolumeGrad analytic(spec);
  flowed.backpropagate(upstream, analytic);

  auto objective = [&] {
    const FlowedVolume out = apply_flow(base, table, sources, 1);
    double v = 0.0;
    for (std::size_t i = 0; i < out.volume.sigma.size(); ++i) v += upstream.sigma[i] * out.volume.sigma[i];
    for (std::size_t i = 0; i < out.volume.semantics.size(); ++i) v += upstream.semantics[i] * out.volume.semantics[i];
    return v;
  };
  for (std::size_t i = 0; i < base.sigma.size(); ++i) {
    check.compare(analytic.sigma[i], central_difference(base.sigma[i], opts.eps, objective));
  }
  for (std::size_t i = 0; i < base.semantics.size(); ++i) {
    check.compare(analytic.semantics[i], central_difference(base.semantics[i], opts.eps, objective));
  }
  return check.finish();
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& opts) {
  if (opts.grid < 2 || opts.classes < 1 || opts.rays < 1 || !(opts.eps > 0.0) || !(opts.tol > 0.0)) {
    throw InputError("gradcheck: grid >= 2, classes >= 1, rays >= 1, eps > 0 and tol > 0 are required");
  }
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  CounterRng rng(opts.seed, 0x9c);
  report.suites.push_back(check_render_2d(opts, rng));
  report.suites.push_back(check_composite(opts, rng));
  report.suites.push_back(check_trilinear(opts, rng));
  report.suites.push_back(check_loss_3d(opts, rng));
  report.suites.push_back(check_flow(opts, rng));
  for (const auto& s : report.suites) {
    report.max_rel_error = std::max(report.max_rel_error, s.max_rel_error);
    report.passed = report.passed && s.passed;
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace occ
