#include "occfit/fit.hpp"

#include "occfit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>

namespace occ {

std::string to_string(FitMode mode) {
  switch (mode) {
    case FitMode::k2d:
      return "2d";
    case FitMode::k3d:
      return "3d";
    case FitMode::k2d3d:
      return "2d+3d";
  }
  return "?";
}

FitMode parse_fit_mode(const std::string& text) {
  if (text == "2d") return FitMode::k2d;
  if (text == "3d") return FitMode::k3d;
  if (text == "2d+3d") return FitMode::k2d3d;
  throw InputError("unknown fit mode '" + text + "' (expected 2d, 3d or 2d+3d)");
}

void FitConfig::validate(int num_classes) const {
  if (steps < 0) throw InputError("fit.steps must be >= 0");
  if (!(adam.step_size > 0.0)) throw InputError("fit.step_size must be > 0");
  if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0) {
    throw InputError("fit.beta1 and fit.beta2 must be in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw InputError("fit.epsilon must be > 0");
  if (tau <= 0.0 || tau >= 1.0) throw InputError("tau must be in (0, 1)");
  if (density_prior <= 0.0 || density_prior >= 1.0) throw InputError("density prior must be in (0, 1)");
  if (rays_per_step == 0) throw InputError("rays_per_step must be >= 1");
  if (threads < 1) throw InputError("threads must be >= 1");
  if (sampling.n_proposal < 1 || sampling.n_fine < 0) throw InputError("sample counts must be positive");
  if (weight_3d < 0.0 || coeffs.depth < 0.0 || coeffs.semantic < 0.0) {
    throw InputError("loss coefficients must be non-negative");
  }
  temporal.validate(num_classes);
}

FitData assemble_fit_data(const GridSpec& spec, const CameraRig& rig, std::span<const LabeledPoint> points,
                          const FitConfig& cfg, const OccupancyLabels* labels, std::span<const BoxTrack> tracks) {
  FitData data;
  data.spec = spec;
  const int c = spec.num_classes;

  std::vector<CameraFrame> train_cams;
  std::vector<CameraFrame> heldout_cams;
  for (const auto& cam : rig.cameras) {
    (cam.heldout ? heldout_cams : train_cams).push_back(cam);
  }

  std::vector<LabeledPoint> kept = select_horizon(points, cfg.temporal.horizon);
  if (cfg.temporal.dynamic_filter && !cfg.flow) kept = dynamic_ray_filter(kept, cfg.temporal);
  // Points at timesteps without training cameras cannot produce rays.
  std::erase_if(kept, [&](const LabeledPoint& p) {
    return std::none_of(train_cams.begin(), train_cams.end(), [&](const CameraFrame& cam) {
      return cam.timestep == p.timestep;
    });
  });
  for (const auto& p : kept) {
    if (p.class_id < 0 || p.class_id >= c) {
      throw InputError("point class " + std::to_string(p.class_id) + " outside [0, " + std::to_string(c) + ")");
    }
  }

  if (cfg.class_weighting) {
    data.class_weights = compute_class_weights(count_classes(kept, c));
  } else {
    data.class_weights.counts = count_classes(kept, c);
    data.class_weights.weights.assign(static_cast<std::size_t>(c), 1.0);
  }
  if (cfg.mode != FitMode::k3d) {
    data.rays = build_rays(train_cams, kept, rig.ego_poses, data.class_weights.weights);
  }

  if (!heldout_cams.empty()) {
    std::vector<LabeledPoint> current;
    for (const auto& p : points) {
      if (p.timestep == 0) current.push_back(p);
    }
    const std::vector<double> unit(static_cast<std::size_t>(c), 1.0);
    data.heldout_rays = build_rays(heldout_cams, current, rig.ego_poses, unit);
  }

  if (cfg.mode != FitMode::k2d) {
    if (labels == nullptr) throw InputError("3D supervision requested but no label grid was given");
    if (!(labels->spec == spec)) throw InputError("label grid does not match the field grid");
    data.targets = targets_from_labels(*labels);
  }
  if (cfg.flow) {
    data.flow = build_flow_table(tracks, spec, temporal_indices(cfg.temporal.horizon));
  }
  return data;
}

namespace {

std::unique_ptr<TimestepFields> make_fields(const VoxelField& field, const FitData& data, const FitConfig& cfg) {
  if (cfg.flow) {
    if (!data.flow) throw InputError("flow requested but no flow table was built");
    return std::make_unique<FlowFields>(field, *data.flow, cfg.tau, cfg.temporal);
  }
  if (cfg.temporal.horizon > 0) return std::make_unique<TemporalFields>(field, cfg.tau, cfg.temporal);
  return std::make_unique<StaticFields>(field);
}

BatchOptions batch_options(const FitConfig& cfg, std::uint64_t step) {
  BatchOptions opts;
  opts.sampling = cfg.sampling;
  opts.coeffs = cfg.coeffs;
  opts.rays_per_step = cfg.rays_per_step;
  opts.seed = cfg.seed;
  opts.step = step;
  opts.threads = cfg.threads;
  return opts;
}

class Adam {
 public:
  Adam(const AdamConfig& cfg, std::size_t n_density, std::size_t n_semantic, int total_steps)
      : cfg_(cfg),
        total_steps_(total_steps),
        m_density_(n_density, 0.0),
        v_density_(n_density, 0.0),
        m_semantic_(n_semantic, 0.0),
        v_semantic_(n_semantic, 0.0) {}

  void step(VoxelField& field, const FieldGrad& grad) {
    ++t_;
    double lr = cfg_.step_size;
    if (cfg_.cosine_decay && total_steps_ > 0) {
      lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t_ - 1) / total_steps_));
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    update(field.density_logits(), grad.density_logits, m_density_, v_density_, lr, bc1, bc2);
    update(field.semantic_logits(), grad.semantic_logits, m_semantic_, v_semantic_, lr, bc1, bc2);
  }

 private:
  void update(std::span<float> params, const std::vector<double>& g, std::vector<double>& m,
              std::vector<double>& v, double lr, double bc1, double bc2) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double step = lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.epsilon);
      params[i] = static_cast<float>(static_cast<double>(params[i]) - step);
    }
  }

  AdamConfig cfg_;
  int total_steps_;
  int t_ = 0;
  std::vector<double> m_density_, v_density_, m_semantic_, v_semantic_;
};

}  // namespace

FitResult fit(VoxelField field, const FitData& data, const FitConfig& cfg,
              const std::function<void(const StepRecord&)>& on_step) {
  if (!(field.spec() == data.spec)) throw InputError("field grid does not match the fit data grid");
  cfg.validate(data.spec.num_classes);
  const bool use_2d = cfg.mode != FitMode::k3d;
  const bool use_3d = cfg.mode != FitMode::k2d;
  if (use_2d && data.rays.empty()) throw InputError("2D supervision requested but no training rays are visible");
  if (use_3d && !data.targets) throw InputError("3D supervision requested but no targets were given");

  FitResult result{std::move(field), {}};
  VoxelField& f = result.field;
  Adam adam(cfg.adam, f.density_logits().size(), f.semantic_logits().size(), cfg.steps);
  FieldGrad grad(data.spec);

  for (int step = 0; step < cfg.steps; ++step) {
    grad.clear();
    StepRecord rec;
    rec.step = step;
    if (use_2d) {
      auto fields = make_fields(f, data, cfg);
      const auto opts = batch_options(cfg, static_cast<std::uint64_t>(step));
      const auto batch = select_batch(data.rays.size(), cfg.rays_per_step, cfg.seed, opts.step);
      BatchLoss bl = batch_loss(data.rays, batch, *fields, data.spec, opts);
      rec.loss += bl.loss;
      rec.depth_term = bl.depth_term;
      rec.semantic_term = bl.semantic_term;
      grad.add(bl.grad);
    }
    if (use_3d) {
      const Loss3d l3 = loss_3d(f, *data.targets);
      rec.loss_3d = l3.loss;
      rec.loss += cfg.weight_3d * l3.loss;
      grad.add(l3.grad, cfg.weight_3d);
    }
    if (!std::isfinite(rec.loss) || rec.loss > cfg.divergence_limit) {
      throw DivergenceError("loss diverged at step " + std::to_string(step) + ": " + std::to_string(rec.loss));
    }
    adam.step(f, grad);
    result.history.push_back(rec);
    if (on_step) on_step(rec);
  }
  return result;
}

double combined_objective(const VoxelField& field, const FitData& data, const FitConfig& cfg) {
  double total = 0.0;
  if (!data.rays.empty()) {
    auto fields = make_fields(field, data, cfg);
    BatchOptions opts = batch_options(cfg, std::numeric_limits<std::uint32_t>::max());
    std::vector<std::size_t> all(data.rays.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    total += batch_loss(data.rays, all, *fields, data.spec, opts).loss;
  }
  if (data.targets) total += cfg.weight_3d * loss_3d(field, *data.targets).loss;
  return total;
}

MetricsReport evaluate(const VoxelField& field, const OccupancyLabels& gt, double tau,
                       std::span<const int> dynamic_classes) {
  if (!(field.spec() == gt.spec)) throw InputError("evaluation grid does not match the field grid");
  const OccupancyLabels pred = decode(field, tau);
  const auto c = static_cast<std::size_t>(field.spec().num_classes);
  std::vector<std::uint64_t> inter(c, 0), uni(c, 0);
  for (std::size_t v = 0; v < gt.labels.size(); ++v) {
    const std::uint16_t p = pred.labels[v];
    const std::uint16_t g = gt.labels[v];
    if (p == g) {
      if (p < c) {
        ++inter[p];
        ++uni[p];
      }
      continue;
    }
    if (p < c) ++uni[p];
    if (g < c) ++uni[g];
  }

  MetricsReport r;
  r.class_iou.assign(c, std::numeric_limits<double>::quiet_NaN());
  double all = 0.0, stat = 0.0, dyn = 0.0;
  int n_all = 0, n_stat = 0, n_dyn = 0;
  for (std::size_t k = 0; k < c; ++k) {
    if (uni[k] == 0) continue;
    const double iou = static_cast<double>(inter[k]) / static_cast<double>(uni[k]);
    r.class_iou[k] = iou;
    all += iou;
    ++n_all;
    const bool is_dyn =
        std::find(dynamic_classes.begin(), dynamic_classes.end(), static_cast<int>(k)) != dynamic_classes.end();
    if (is_dyn) {
      dyn += iou;
      ++n_dyn;
    } else {
      stat += iou;
      ++n_stat;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.miou = n_all > 0 ? all / n_all : nan;
  r.miou_static = n_stat > 0 ? stat / n_stat : nan;
  r.miou_dynamic = n_dyn > 0 ? dyn / n_dyn : nan;
  r.heldout_depth_mae = nan;
  return r;
}

double depth_mae(const VoxelField& field, std::span<const Ray> rays, const SamplingConfig& sampling,
                 std::uint64_t seed, int threads) {
  if (rays.empty()) return std::numeric_limits<double>::quiet_NaN();
  const DensityVolume volume = DensityVolume::from_field(field);
  const std::uint64_t stream_seed = derive_seed(seed, 0xe7a1, 0x7a3);
  std::vector<double> err(rays.size());
  parallel_for(rays.size(), threads, [&](std::size_t i) {
    const RayRender rr = render_ray(rays[i], i, volume, sampling, stream_seed);
    err[i] = std::abs(rr.output.depth - rays[i].gt_depth);
  });
  return std::accumulate(err.begin(), err.end(), 0.0) / static_cast<double>(rays.size());
}

}  // namespace occ
