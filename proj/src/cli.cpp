#include "occfit/cli.hpp"

#include "occfit/config.hpp"
#include "occfit/gradcheck.hpp"
#include "occfit/image_io.hpp"
#include "occfit/parallel.hpp"
#include "occfit/synth.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace occ {
namespace {

constexpr const char* kVersion = "0.1.0";

std::string fmt(double v, int digits = 9) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

std::string safe_name(const std::string& name) {
  std::string out = name;
  for (char& ch : out) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
  }
  return out;
}

std::string version_text() {
  std::ostringstream ss;
  ss << "occfit " << kVersion << "\n"
     << "formats: VOXF v" << kFieldFormatVersion << ", OCCL v" << kLabelsFormatVersion << ", FLOW v"
     << kFlowFormatVersion << ", cameras v" << kCameraFormatVersion << ", scene_meta v" << kSceneMetaVersion;
  return ss.str();
}

// ---------------------------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string script;
  std::string out_dir;
  int threads = 1;
};

int cmd_synth(const SynthArgs& a) {
  const std::string text = read_file(a.script);
  const SceneScript scene = parse_scene_script(text, a.script);
  write_scene(scene, a.out_dir, fnv1a64(text), a.threads);
  std::cout << "wrote scene to " << a.out_dir << " (" << scene.grid.dims[0] << "x" << scene.grid.dims[1] << "x"
            << scene.grid.dims[2] << ", " << scene.grid.num_classes << " classes, horizon " << scene.horizon
            << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string config;
  std::string mode;
  std::optional<int> steps;
  std::optional<long long> seed;
  std::optional<int> threads;
  std::string out_dir;
  std::string init;
  std::optional<int> horizon;
  std::optional<bool> flow;
  std::optional<bool> filter;
  std::optional<bool> mask;
  std::optional<bool> weighting;
  std::optional<int> rays_per_step;
  std::optional<double> step_size;
  std::string scene;
  bool print_config = false;
};

void write_history(const std::filesystem::path& path, const std::vector<StepRecord>& history) {
  auto out = open_out(path);
  out << "step,loss,depth_term,semantic_term,loss_3d\n";
  for (const auto& r : history) {
    out << r.step << ',' << fmt(r.loss, 17) << ',' << fmt(r.depth_term, 17) << ',' << fmt(r.semantic_term, 17)
        << ',' << fmt(r.loss_3d, 17) << '\n';
  }
}

int cmd_fit(const FitArgs& a) {
  RunConfig rc = load_run_config(a.config);
  FitConfig& f = rc.fit;
  if (!a.mode.empty()) f.mode = parse_fit_mode(a.mode);
  if (a.steps) {
    if (*a.steps < 0) throw InputError("--steps must be >= 0");
    f.steps = *a.steps;
  }
  if (a.seed) {
    if (*a.seed < 0) throw InputError("--seed must be >= 0");
    f.seed = static_cast<std::uint64_t>(*a.seed);
  }
  if (a.threads) f.threads = *a.threads;
  if (!a.out_dir.empty()) rc.output_dir = a.out_dir;
  if (!a.init.empty()) rc.init_field = a.init;
  if (!a.scene.empty()) rc.scene_dir = a.scene;
  if (a.horizon) f.temporal.horizon = *a.horizon;
  if (a.flow) f.flow = *a.flow;
  if (a.filter) f.temporal.dynamic_filter = *a.filter;
  if (a.mask) f.temporal.disocclusion_mask = *a.mask;
  if (a.weighting) f.class_weighting = *a.weighting;
  if (a.rays_per_step) {
    if (*a.rays_per_step < 1) throw InputError("--rays-per-step must be >= 1");
    f.rays_per_step = static_cast<std::size_t>(*a.rays_per_step);
  }
  if (a.step_size) f.adam.step_size = *a.step_size;

  const SceneMeta meta = load_scene_meta(rc.scene_dir / kSceneMeta);
  f.temporal.dynamic_classes = rc.dynamic_classes.value_or(meta.dynamic_classes);
  if (f.temporal.horizon > meta.horizon) {
    throw InputError("temporal horizon " + std::to_string(f.temporal.horizon) + " exceeds the scene horizon " +
                     std::to_string(meta.horizon));
  }
  f.validate(meta.grid.num_classes);
  if (a.print_config) {
    std::cout << rc.to_json() << '\n';
    return kExitOk;
  }

  const CameraRig rig = load_camera_rig(rc.scene_dir / kSceneCameras);
  const auto points = load_points_csv(rc.scene_dir / kScenePoints);
  const OccupancyLabels labels = load_labels(rc.scene_dir / kSceneLabels);
  if (!(labels.spec == meta.grid)) throw InputError("labels.occ grid does not match scene_meta.json");
  std::vector<BoxTrack> tracks;
  if (std::filesystem::exists(rc.scene_dir / kSceneTracks)) tracks = load_tracks_csv(rc.scene_dir / kSceneTracks);

  std::filesystem::create_directories(rc.output_dir);
  FitConfig assemble_cfg = f;
  assemble_cfg.flow = false;
  // The dynamic filter stays off under flow even though the table is attached afterwards.
  if (f.flow) assemble_cfg.temporal.dynamic_filter = false;
  FitData data = assemble_fit_data(meta.grid, rig, points, assemble_cfg, &labels, tracks);
  if (f.flow) {
    const auto cache_path = rc.output_dir / "flow_table.bin";
    const std::uint64_t key = derive_seed(meta.scene_hash, static_cast<std::uint64_t>(f.temporal.horizon), 0xf10);
    std::optional<FlowTable> cached;
    if (rc.flow_cache) cached = load_flow_table(cache_path, key);
    if (cached && cached->spec == meta.grid) {
      data.flow = std::move(*cached);
    } else {
      data.flow = build_flow_table(tracks, meta.grid, temporal_indices(f.temporal.horizon));
      if (rc.flow_cache) save_flow_table(cache_path, *data.flow, key);
    }
  }

  VoxelField init = rc.init_field ? load_field(*rc.init_field) : VoxelField(meta.grid, f.density_prior);
  if (!(init.spec() == meta.grid)) throw InputError("initial field grid does not match the scene grid");

  std::cout << "fit: mode " << to_string(f.mode) << ", " << f.steps << " steps, " << data.rays.size()
            << " training rays, " << data.heldout_rays.size() << " held-out rays, config " << hex64(rc.hash())
            << '\n';
  std::vector<StepRecord> history;
  const int report_every = std::max(1, f.steps / 10);
  FitResult result{init, {}};
  try {
    result = fit(std::move(init), data, f, [&](const StepRecord& r) {
      history.push_back(r);
      if ((r.step + 1) % report_every == 0 || r.step + 1 == f.steps) {
        std::cout << "  step " << r.step + 1 << "/" << f.steps << "  loss " << fmt(r.loss, 6) << '\n';
      }
    });
  } catch (const DivergenceError&) {
    write_history(rc.output_dir / "loss.csv", history);
    throw;
  }

  save_field(rc.output_dir / "field.voxf", result.field);
  write_history(rc.output_dir / "loss.csv", result.history);

  MetricsReport report = evaluate(result.field, labels, f.tau, f.temporal.dynamic_classes);
  report.heldout_rays = data.heldout_rays.size();
  report.heldout_depth_mae = depth_mae(result.field, data.heldout_rays, f.sampling, f.seed, f.threads);

  // Objective shared by every mode: full 2D loss plus the 3D loss.
  FitData combined = data;
  if (!combined.targets) combined.targets = targets_from_labels(labels);
  if (combined.rays.empty() && f.mode == FitMode::k3d) {
    FitConfig tmp = assemble_cfg;
    tmp.mode = FitMode::k2d;
    combined.rays = assemble_fit_data(meta.grid, rig, points, tmp).rays;
  }
  const double objective = combined_objective(result.field, combined, f);

  const std::vector<std::pair<std::string, std::string>> extra{
      {"combined_objective", fmt(objective, 17)},
      {"final_step_loss", fmt(result.history.empty() ? 0.0 : result.history.back().loss, 17)},
      {"config_hash", hex64(rc.hash())}};
  write_metrics_csv(rc.output_dir / "metrics.csv", report, meta.class_names, extra);
  {
    auto out = open_out(rc.output_dir / "metrics.txt");
    print_metrics_table(out, report, meta.class_names);
  }
  {
    auto out = open_out(rc.output_dir / "run_config.json");
    out << rc.to_json() << '\n';
  }
  print_metrics_table(std::cout, report, meta.class_names);
  std::cout << "combined objective " << fmt(objective, 9) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------
// render

struct RenderArgs {
  std::string field;
  std::string cameras;
  std::string out_dir;
  std::string scene;
  double depth_scale = 1000.0;
  double opacity_threshold = 0.5;
  long long seed = 0;
  int threads = 1;
  bool ground_truth = false;
};

int cmd_render(const RenderArgs& a) {
  if (!(a.depth_scale > 0.0)) throw InputError("--depth-scale must be positive");
  if (a.seed < 0) throw InputError("--seed must be >= 0");
  VoxelField field = a.ground_truth ? field_from_labels(load_labels(a.field)) : load_field(a.field);
  if (!a.scene.empty()) {
    const SceneMeta meta = load_scene_meta(std::filesystem::path(a.scene) / kSceneMeta);
    if (!(meta.grid == field.spec())) throw InputError("grid of " + a.field + " does not match the scene grid");
  }
  const CameraRig rig = load_camera_rig(a.cameras);
  const std::filesystem::path out_dir(a.out_dir);
  std::filesystem::create_directories(out_dir);

  auto summary = open_out(out_dir / "render_summary.csv");
  summary << "camera,timestep,width,height,covered_pixels,mean_depth\n";
  for (const CameraFrame& cam : rig.cameras) {
    const RenderedImage img = render_camera(field, cam, rig.ego_poses, SamplingConfig{},
                                            static_cast<std::uint64_t>(a.seed), a.opacity_threshold, a.threads);
    const std::string stem = safe_name(cam.name);
    std::vector<std::uint16_t> depth16(img.depth.size());
    std::vector<Rgb> colors(img.depth.size());
    std::size_t covered = 0;
    double depth_sum = 0.0;
    for (std::size_t i = 0; i < img.depth.size(); ++i) {
      depth16[i] = static_cast<std::uint16_t>(std::clamp(std::lround(img.depth[i] * a.depth_scale), 0L, 65535L));
      colors[i] = img.semantics[i] < 0 ? kBackgroundColor : class_color(img.semantics[i]);
      if (img.semantics[i] >= 0) {
        ++covered;
        depth_sum += img.depth[i];
      }
    }
    write_pgm16(out_dir / (stem + "_depth.pgm"), img.width, img.height, depth16);
    write_ppm(out_dir / (stem + "_semantic.ppm"), img.width, img.height, colors);
    auto csv = open_out(out_dir / (stem + "_depth.csv"));
    for (int row = 0; row < img.height; ++row) {
      for (int col = 0; col < img.width; ++col) {
        if (col > 0) csv << ',';
        csv << fixed(img.depth[static_cast<std::size_t>(row) * static_cast<std::size_t>(img.width) +
                               static_cast<std::size_t>(col)],
                     6);
      }
      csv << '\n';
    }
    summary << cam.name << ',' << cam.timestep << ',' << img.width << ',' << img.height << ',' << covered << ','
            << fixed(covered ? depth_sum / static_cast<double>(covered) : 0.0, 6) << '\n';
  }
  std::cout << "rendered " << rig.cameras.size() << " cameras to " << a.out_dir << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string field;
  std::string labels;
  std::string scene;
  std::string out;
  double tau = 0.5;
  std::vector<int> dynamic;
};

int cmd_eval(const EvalArgs& a) {
  const VoxelField field = load_field(a.field);
  const OccupancyLabels gt = load_labels(a.labels);
  std::vector<std::string> names;
  std::vector<int> dynamic = a.dynamic;
  if (!a.scene.empty()) {
    const SceneMeta meta = load_scene_meta(std::filesystem::path(a.scene) / kSceneMeta);
    names = meta.class_names;
    if (dynamic.empty()) dynamic = meta.dynamic_classes;
  }
  if (!(a.tau > 0.0 && a.tau < 1.0)) throw InputError("--tau must be in (0, 1)");
  const MetricsReport report = evaluate(field, gt, a.tau, dynamic);
  print_metrics_table(std::cout, report, names);
  if (!a.out.empty()) write_metrics_csv(a.out, report, names, {});
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(GradcheckOptions opts) {
  const GradcheckReport report = run_gradcheck(opts);
  for (const auto& s : report.suites) {
    std::cout << (s.passed ? "PASS " : "FAIL ") << s.name << "  checked " << s.checked << "  max rel error "
              << fmt(s.max_rel_error, 3) << '\n';
  }
  std::cout << (report.passed ? "PASS" : "FAIL") << " gradcheck: max relative error " << fmt(report.max_rel_error, 3)
            << " (tol " << fmt(opts.tol, 3) << ", eps " << fmt(opts.eps, 3) << ", " << fixed(report.seconds, 2)
            << " s)\n";
  return report.passed ? kExitOk : kExitVerification;
}

// ---------------------------------------------------------------------------------------------
// flow-check

int cmd_flow_check(std::uint64_t seed) {
  CounterRng rng(seed, 0xf1);
  bool ok = true;
  auto report = [&](const std::string& name, bool pass, const std::string& detail) {
    std::cout << (pass ? "PASS " : "FAIL ") << name << "  " << detail << '\n';
    ok = ok && pass;
  };

  GridSpec spec;
  spec.dims = {12, 10, 6};
  spec.voxel_size = 0.4;
  spec.origin = Vec3(-2.0, -1.6, 0.0);
  spec.num_classes = 3;
  VoxelField field(spec);
  for (float& x : field.density_logits()) x = static_cast<float>(4.0 * rng.uniform() - 2.0);
  for (float& x : field.semantic_logits()) x = static_cast<float>(2.0 * rng.uniform() - 1.0);

  BoxTrack track;
  track.class_id = 2;
  track.extent = Vec3(1.6, 1.2, 0.8);
  const Vec3 c0 = spec.voxel_center(4, 4, 2) + Vec3(0.2, 0.0, 0.2);
  const std::array<int, 3> shift{3, -2, 1};
  track.poses[0] = make_rigid(Mat3::Identity(), c0);
  track.poses[1] = make_rigid(Mat3::Identity(), c0 + spec.voxel_size * Vec3(shift[0], shift[1], shift[2]));
  const std::vector<int> ts{0, 1};
  const FlowTable table = build_flow_table(std::span<const BoxTrack>(&track, 1), spec, ts);
  // Make every member a confident box-class voxel so all of them move.
  for (std::uint32_t v : table.boxes[0].members) {
    field.density_logits()[v] = 3.0f;
    for (int k = 0; k < 3; ++k) field.semantic_logits()[v * 3 + static_cast<std::size_t>(k)] = k == 2 ? 2.0f : -1.0f;
  }
  const DensityVolume base = DensityVolume::from_field(field);

  // t = 0 identity.
  {
    const FlowedVolume out = apply_flow(field, table, 0.5, 0);
    const bool same = out.volume.sigma == base.sigma && out.volume.semantics == base.semantics;
    report("identity_t0", same, "members " + std::to_string(table.boxes[0].members.size()));
  }
  // Integer translation: permutation oracle.
  {
    const FlowedVolume out = apply_flow(field, table, 0.5, 1);
    DensityVolume expect = base;
    for (std::uint32_t v : table.boxes[0].members) expect.sigma[v] = 0.0;
    for (std::uint32_t v : table.boxes[0].members) {
      const auto xyz = spec.coords(v);
      const std::size_t d = spec.index(xyz[0] + shift[0], xyz[1] + shift[1], xyz[2] + shift[2]);
      expect.sigma[d] = base.sigma[v];
      for (std::size_t k = 0; k < 3; ++k) expect.semantics[d * 3 + k] = base.semantics[v * 3 + k];
    }
    double max_err = 0.0;
    for (std::size_t i = 0; i < expect.sigma.size(); ++i) max_err = std::max(max_err, std::abs(expect.sigma[i] - out.volume.sigma[i]));
    for (std::size_t i = 0; i < expect.semantics.size(); ++i) {
      max_err = std::max(max_err, std::abs(expect.semantics[i] - out.volume.semantics[i]));
    }
    report("integer_translation", max_err <= 1e-6, "max abs error " + fmt(max_err, 3));
  }
  // IDW weights sum to one.
  {
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const Vec3 p = spec.origin + Vec3(rng.uniform() * 12, rng.uniform() * 10, rng.uniform() * 6) * spec.voxel_size;
      const IdwStencil s = idw_stencil(spec, p);
      double sum = 0.0;
      for (double w : s.weights) sum += w;
      worst = std::max(worst, std::abs(sum - 1.0));
    }
    report("idw_partition_of_unity", worst <= 1e-12, "max |sum - 1| " + fmt(worst, 3));
  }
  if (!ok) throw VerificationError("flow-check failed");
  return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------------------------

VoxelField field_from_labels(const OccupancyLabels& labels) {
  labels.validate();
  VoxelField field(labels.spec);
  const auto c = static_cast<std::size_t>(labels.spec.num_classes);
  const auto occupied = static_cast<float>(logit(1.0 - 1e-6));
  auto density = field.density_logits();
  auto semantics = field.semantic_logits();
  for (std::size_t v = 0; v < labels.labels.size(); ++v) {
    const bool free = labels.is_free(v);
    density[v] = free ? -occupied : occupied;
    for (std::size_t k = 0; k < c; ++k) {
      semantics[v * c + k] = !free && k == labels.labels[v] ? 10.0f : -10.0f;
    }
  }
  return field;
}

RenderedImage render_camera(const VoxelField& field, const CameraFrame& cam, const EgoPoses& ego_poses,
                            const SamplingConfig& sampling, std::uint64_t seed, double opacity_threshold,
                            int threads) {
  cam.validate();
  RenderedImage img;
  img.camera = cam.name;
  img.width = cam.width;
  img.height = cam.height;
  const std::size_t n = static_cast<std::size_t>(cam.width) * static_cast<std::size_t>(cam.height);
  img.depth.assign(n, 0.0);
  img.opacity.assign(n, 0.0);
  img.semantics.assign(n, -1);
  const DensityVolume volume = DensityVolume::from_field(field);
  const Mat4 to_grid = frame_to_current(ego_poses, cam.timestep);
  const std::uint64_t stream_seed = derive_seed(seed, fnv1a64(cam.name), 0x7e4);
  parallel_for(static_cast<std::size_t>(cam.height), threads, [&](std::size_t row) {
    for (std::size_t col = 0; col < static_cast<std::size_t>(cam.width); ++col) {
      const std::size_t i = row * static_cast<std::size_t>(cam.width) + col;
      const auto od = pixel_ray(cam, static_cast<double>(col), static_cast<double>(row));
      Ray ray;
      ray.origin = transform_point(to_grid, od.origin);
      ray.direction = transform_direction(to_grid, od.direction);
      const RayRender rr = render_ray(ray, i, volume, sampling, stream_seed);
      img.depth[i] = rr.output.depth;
      img.opacity[i] = rr.output.opacity;
      if (rr.hit && rr.output.opacity >= opacity_threshold) img.semantics[i] = argmax_class(rr.output.semantics);
    }
  });
  return img;
}

void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& report,
                       std::span<const std::string> class_names,
                       std::span<const std::pair<std::string, std::string>> extra) {
  auto out = open_out(path);
  out << "metric,class,value\n";
  for (std::size_t k = 0; k < report.class_iou.size(); ++k) {
    const std::string name = k < class_names.size() ? class_names[k] : std::to_string(k);
    out << "iou," << name << ',' << fmt(report.class_iou[k]) << '\n';
  }
  out << "miou,," << fmt(report.miou) << '\n';
  out << "miou_static,," << fmt(report.miou_static) << '\n';
  out << "miou_dynamic,," << fmt(report.miou_dynamic) << '\n';
  out << "heldout_depth_mae,," << fmt(report.heldout_depth_mae) << '\n';
  out << "heldout_rays,," << report.heldout_rays << '\n';
  for (const auto& [key, value] : extra) out << key << ",," << value << '\n';
}

void print_metrics_table(std::ostream& out, const MetricsReport& report, std::span<const std::string> class_names) {
  char line[128];
  out << "class                 IoU\n";
  for (std::size_t k = 0; k < report.class_iou.size(); ++k) {
    const std::string name = k < class_names.size() ? class_names[k] : "class " + std::to_string(k);
    std::snprintf(line, sizeof(line), "%-2zu %-16s %7s\n", k, name.c_str(),
                  std::isnan(report.class_iou[k]) ? "-" : fixed(report.class_iou[k], 4).c_str());
    out << line;
  }
  auto row = [&](const char* label, double v, const char* unit) {
    std::snprintf(line, sizeof(line), "%-19s %7s%s\n", label, std::isnan(v) ? "-" : fixed(v, 4).c_str(), unit);
    out << line;
  };
  row("mIoU", report.miou, "");
  row("mIoU static", report.miou_static, "");
  row("mIoU dynamic", report.miou_dynamic, "");
  row("held-out depth MAE", report.heldout_depth_mae, report.heldout_rays ? " m" : "");
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& s : args) argv.push_back(s.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Voxel occupancy fitting from rendered depth and semantics"};
  app.name("occfit");
  app.set_version_flag("--version", version_text());
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic scene from a scene script");
  synth_cmd->add_option("script", synth.script, "Scene script (JSON)")->required();
  synth_cmd->add_option("out_dir", synth.out_dir, "Output directory")->required();
  synth_cmd->add_option("--threads", synth.threads, "Worker threads")->check(CLI::PositiveNumber);

  FitArgs fit_args;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a voxel field to a scene");
  fit_cmd->add_option("config", fit_args.config, "Run configuration (JSON)")->required();
  fit_cmd->add_option("--mode", fit_args.mode, "2d, 3d or 2d+3d");
  fit_cmd->add_option("--steps", fit_args.steps, "Optimization steps");
  fit_cmd->add_option("--seed", fit_args.seed, "Random seed");
  fit_cmd->add_option("--threads", fit_args.threads, "Worker threads")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--out", fit_args.out_dir, "Output directory");
  fit_cmd->add_option("--init", fit_args.init, "Initial field (VOXF)");
  fit_cmd->add_option("--scene", fit_args.scene, "Scene directory (overrides paths.scene)");
  fit_cmd->add_option("--horizon", fit_args.horizon, "Temporal horizon O");
  fit_cmd->add_flag("--flow,!--no-flow", fit_args.flow, "Occupancy flow");
  fit_cmd->add_flag("--filter,!--no-filter", fit_args.filter, "Dynamic ray filter");
  fit_cmd->add_flag("--mask,!--no-mask", fit_args.mask, "Disocclusion masking");
  fit_cmd->add_flag("--weighting,!--no-weighting", fit_args.weighting, "Class-frequency ray weights");
  fit_cmd->add_option("--rays-per-step", fit_args.rays_per_step, "Rays per step");
  fit_cmd->add_option("--step-size", fit_args.step_size, "Adam step size");
  fit_cmd->add_flag("--print-config", fit_args.print_config, "Print the resolved configuration and exit");

  RenderArgs render;
  auto* render_cmd = app.add_subcommand("render", "Render depth and semantic images");
  render_cmd->add_option("field", render.field, "Field (VOXF), or labels (OCCL) with --ground-truth")->required();
  render_cmd->add_option("cameras", render.cameras, "Camera rig (JSON)")->required();
  render_cmd->add_option("out_dir", render.out_dir, "Output directory")->required();
  render_cmd->add_option("--scene", render.scene, "Scene directory whose grid the field must match");
  render_cmd->add_option("--depth-scale", render.depth_scale, "PGM units per meter");
  render_cmd->add_option("--opacity-threshold", render.opacity_threshold, "Minimum opacity for a semantic label");
  render_cmd->add_option("--seed", render.seed, "Sampling seed");
  render_cmd->add_option("--threads", render.threads, "Worker threads")->check(CLI::PositiveNumber);
  render_cmd->add_flag("--ground-truth", render.ground_truth, "Render a label grid as a saturated field");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Per-class IoU of a field against labels");
  eval_cmd->add_option("field", eval.field, "Field (VOXF)")->required();
  eval_cmd->add_option("labels", eval.labels, "Labels (OCCL)")->required();
  eval_cmd->add_option("--scene", eval.scene, "Scene directory for class names and dynamic classes");
  eval_cmd->add_option("--tau", eval.tau, "Occupancy threshold");
  eval_cmd->add_option("--dynamic", eval.dynamic, "Dynamic class ids")->delimiter(',');
  eval_cmd->add_option("--out", eval.out, "Metrics CSV");

  GradcheckOptions gc;
  long long gc_seed = 0;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  gc_cmd->add_option("--seed", gc_seed, "Random seed");
  gc_cmd->add_option("--grid", gc.grid, "Grid edge length");
  gc_cmd->add_option("--classes", gc.classes, "Class count");
  gc_cmd->add_option("--rays", gc.rays, "Ray count");
  gc_cmd->add_option("--eps", gc.eps, "Finite-difference step");
  gc_cmd->add_option("--tol", gc.tol, "Relative error tolerance");
  gc_cmd->add_flag("--inject-sign-flip", gc.inject_sign_flip, "Negate the analytic 2D gradient (negative control)");

  long long flow_seed = 0;
  auto* flow_cmd = app.add_subcommand("flow-check", "Exactness checks of occupancy flow");
  flow_cmd->add_option("--seed", flow_seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth);
    if (*fit_cmd) return cmd_fit(fit_args);
    if (*render_cmd) return cmd_render(render);
    if (*eval_cmd) return cmd_eval(eval);
    if (*gc_cmd) {
      if (gc_seed < 0) throw InputError("--seed must be >= 0");
      gc.seed = static_cast<std::uint64_t>(gc_seed);
      return cmd_gradcheck(gc);
    }
    if (*flow_cmd) {
      if (flow_seed < 0) throw InputError("--seed must be >= 0");
      return cmd_flow_check(static_cast<std::uint64_t>(flow_seed));
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const VerificationError& e) {
    std::cerr << "verification failed: " << e.what() << '\n';
    return kExitVerification;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return kExitInput;
}

}  // namespace occ
