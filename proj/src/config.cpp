#include "occfit/config.hpp"

#include "json_doc.hpp"

#include <fstream>

namespace occ {
namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

int to_int(const JsonDoc& doc, const std::string& ptr, long long lo, long long hi) {
  const long long v = doc.integer(ptr);
  if (v < lo || v > hi) doc.fail(ptr, "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                                          std::to_string(hi) + "]");
  return static_cast<int>(v);
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& source_name,
                           const std::filesystem::path& base_dir) {
  const JsonDoc doc(text, source_name);
  doc.check_keys("", {"paths", "seed", "threads", "grid", "sampling", "supervision", "temporal", "flow", "fit",
                      "render"});
  RunConfig rc;
  FitConfig& f = rc.fit;

  doc.check_keys("/paths", {"scene", "output", "init"});
  rc.scene_dir = resolve(base_dir, doc.string("/paths/scene"));
  if (doc.has("/paths/output")) rc.output_dir = resolve(base_dir, doc.string("/paths/output"));
  if (doc.has("/paths/init")) rc.init_field = resolve(base_dir, doc.string("/paths/init"));

  if (doc.has("/seed")) {
    const long long seed = doc.integer("/seed");
    if (seed < 0) doc.fail("/seed", "seed must be non-negative");
    f.seed = static_cast<std::uint64_t>(seed);
  }
  if (doc.has("/threads")) f.threads = to_int(doc, "/threads", 1, 1024);

  if (doc.has("/grid")) {
    doc.check_keys("/grid", {"tau", "density_prior"});
    f.tau = doc.number_or("/grid/tau", f.tau);
    f.density_prior = doc.number_or("/grid/density_prior", f.density_prior);
  }
  if (doc.has("/sampling")) {
    doc.check_keys("/sampling", {"n_proposal", "n_fine", "t_near_min", "weight_floor"});
    if (doc.has("/sampling/n_proposal")) f.sampling.n_proposal = to_int(doc, "/sampling/n_proposal", 1, 100000);
    if (doc.has("/sampling/n_fine")) f.sampling.n_fine = to_int(doc, "/sampling/n_fine", 0, 100000);
    f.sampling.t_near_min = doc.number_or("/sampling/t_near_min", f.sampling.t_near_min);
    f.sampling.weight_floor = doc.number_or("/sampling/weight_floor", f.sampling.weight_floor);
    if (f.sampling.t_near_min < 0.0) doc.fail("/sampling/t_near_min", "must be non-negative");
    if (f.sampling.weight_floor < 0.0) doc.fail("/sampling/weight_floor", "must be non-negative");
  }
  if (doc.has("/supervision")) {
    doc.check_keys("/supervision",
                   {"mode", "depth_coeff", "semantic_coeff", "weight_3d", "class_weighting", "rays_per_step"});
    if (doc.has("/supervision/mode")) {
      try {
        f.mode = parse_fit_mode(doc.string("/supervision/mode"));
      } catch (const InputError& e) {
        doc.fail("/supervision/mode", e.what());
      }
    }
    f.coeffs.depth = doc.number_or("/supervision/depth_coeff", f.coeffs.depth);
    f.coeffs.semantic = doc.number_or("/supervision/semantic_coeff", f.coeffs.semantic);
    f.weight_3d = doc.number_or("/supervision/weight_3d", f.weight_3d);
    f.class_weighting = doc.boolean_or("/supervision/class_weighting", f.class_weighting);
    if (doc.has("/supervision/rays_per_step")) {
      f.rays_per_step = static_cast<std::size_t>(to_int(doc, "/supervision/rays_per_step", 1, 1 << 30));
    }
  }
  if (doc.has("/temporal")) {
    doc.check_keys("/temporal", {"horizon", "dynamic_filter", "disocclusion_mask", "dynamic_classes"});
    if (doc.has("/temporal/horizon")) f.temporal.horizon = to_int(doc, "/temporal/horizon", 0, 64);
    f.temporal.dynamic_filter = doc.boolean_or("/temporal/dynamic_filter", f.temporal.dynamic_filter);
    f.temporal.disocclusion_mask = doc.boolean_or("/temporal/disocclusion_mask", f.temporal.disocclusion_mask);
    if (doc.has("/temporal/dynamic_classes")) {
      const json& arr = doc.at("/temporal/dynamic_classes");
      if (!arr.is_array()) doc.fail("/temporal/dynamic_classes", "expected an array of class ids");
      std::vector<int> dyn;
      for (std::size_t i = 0; i < arr.size(); ++i) {
        dyn.push_back(to_int(doc, "/temporal/dynamic_classes/" + std::to_string(i), 0, 0xFFFE));
      }
      rc.dynamic_classes = dyn;
    }
  }
  if (doc.has("/flow")) {
    doc.check_keys("/flow", {"enabled", "cache"});
    f.flow = doc.boolean_or("/flow/enabled", f.flow);
    rc.flow_cache = doc.boolean_or("/flow/cache", rc.flow_cache);
  }
  if (doc.has("/fit")) {
    doc.check_keys("/fit",
                   {"steps", "step_size", "beta1", "beta2", "epsilon", "cosine_decay", "divergence_limit"});
    if (doc.has("/fit/steps")) f.steps = to_int(doc, "/fit/steps", 0, 100000000);
    f.adam.step_size = doc.number_or("/fit/step_size", f.adam.step_size);
    f.adam.beta1 = doc.number_or("/fit/beta1", f.adam.beta1);
    f.adam.beta2 = doc.number_or("/fit/beta2", f.adam.beta2);
    f.adam.epsilon = doc.number_or("/fit/epsilon", f.adam.epsilon);
    f.adam.cosine_decay = doc.boolean_or("/fit/cosine_decay", f.adam.cosine_decay);
    f.divergence_limit = doc.number_or("/fit/divergence_limit", f.divergence_limit);
  }
  if (doc.has("/render")) {
    doc.check_keys("/render", {"depth_scale"});
    rc.depth_scale = doc.number_or("/render/depth_scale", rc.depth_scale);
    if (!(rc.depth_scale > 0.0)) doc.fail("/render/depth_scale", "depth_scale must be positive");
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text, path.string(), path.parent_path());
}

std::string RunConfig::to_json() const {
  const FitConfig& f = fit;
  json j;
  // Output directory and thread count are left out: neither changes any result.
  j["paths"] = {{"scene", scene_dir.generic_string()}};
  if (init_field) j["paths"]["init"] = init_field->generic_string();
  j["seed"] = f.seed;
  j["grid"] = {{"tau", f.tau}, {"density_prior", f.density_prior}};
  j["sampling"] = {{"n_proposal", f.sampling.n_proposal},
                   {"n_fine", f.sampling.n_fine},
                   {"t_near_min", f.sampling.t_near_min},
                   {"weight_floor", f.sampling.weight_floor}};
  j["supervision"] = {{"mode", to_string(f.mode)},
                      {"depth_coeff", f.coeffs.depth},
                      {"semantic_coeff", f.coeffs.semantic},
                      {"weight_3d", f.weight_3d},
                      {"class_weighting", f.class_weighting},
                      {"rays_per_step", f.rays_per_step}};
  j["temporal"] = {{"horizon", f.temporal.horizon},
                   {"dynamic_filter", f.temporal.dynamic_filter},
                   {"disocclusion_mask", f.temporal.disocclusion_mask}};
  if (dynamic_classes) j["temporal"]["dynamic_classes"] = *dynamic_classes;
  j["flow"] = {{"enabled", f.flow}, {"cache", flow_cache}};
  j["fit"] = {{"steps", f.steps},
              {"step_size", f.adam.step_size},
              {"beta1", f.adam.beta1},
              {"beta2", f.adam.beta2},
              {"epsilon", f.adam.epsilon},
              {"cosine_decay", f.adam.cosine_decay},
              {"divergence_limit", f.divergence_limit}};
  j["render"] = {{"depth_scale", depth_scale}};
  return j.dump(2);
}

std::uint64_t RunConfig::hash() const { return fnv1a64(to_json()); }

}  // namespace occ
