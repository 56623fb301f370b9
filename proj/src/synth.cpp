#include "occfit/synth.hpp"

#include "occfit/parallel.hpp"

#include "json_doc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace occ {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

bool inside_aabb(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  return (p.array() >= lo.array()).all() && (p.array() < hi.array()).all();
}

bool inside_box(const Mat4& pose, const Vec3& size, const Vec3& p) {
  const Vec3 local = transform_point(rigid_inverse(pose), p);
  return (local.cwiseAbs().array() < 0.5 * size.array()).all();
}

// Inclusive voxel index range whose centers can fall in [lo, hi], padded by one voxel.
std::array<std::array<int, 2>, 3> voxel_range(const GridSpec& spec, const Vec3& lo, const Vec3& hi) {
  std::array<std::array<int, 2>, 3> r{};
  for (int a = 0; a < 3; ++a) {
    const double l = (lo[a] - spec.origin[a]) / spec.voxel_size;
    const double h = (hi[a] - spec.origin[a]) / spec.voxel_size;
    r[a][0] = std::max(0, static_cast<int>(std::floor(l)) - 1);
    r[a][1] = std::min(spec.dims[a] - 1, static_cast<int>(std::floor(h)) + 1);
  }
  return r;
}

Mat4 translation(const Vec3& t) { return make_rigid(Mat3::Identity(), t); }

GridSpec parse_grid(const JsonDoc& doc, int num_classes) {
  doc.check_keys("/grid", {"dims", "origin", "voxel_size"});
  GridSpec g;
  const json& dims = doc.at("/grid/dims");
  if (!dims.is_array() || dims.size() != 3) doc.fail("/grid/dims", "expected an array of 3 integers");
  for (int a = 0; a < 3; ++a) {
    const long long d = doc.integer("/grid/dims/" + std::to_string(a));
    if (d < 1 || d > 4096) doc.fail("/grid/dims/" + std::to_string(a), "grid dimension must be in [1, 4096]");
    g.dims[static_cast<std::size_t>(a)] = static_cast<int>(d);
  }
  g.origin = doc.vec3("/grid/origin");
  g.voxel_size = doc.number("/grid/voxel_size");
  if (g.voxel_size <= 0.0) doc.fail("/grid/voxel_size", "voxel_size must be positive");
  g.num_classes = num_classes;
  return g;
}

int parse_class(const JsonDoc& doc, const std::string& ptr, int num_classes) {
  const long long c = doc.integer(ptr);
  if (c < 0 || c >= num_classes) {
    doc.fail(ptr, "class " + std::to_string(c) + " outside [0, " + std::to_string(num_classes) + ")");
  }
  return static_cast<int>(c);
}

}  // namespace

Mat4 DynamicBox::pose(int timestep) const {
  return make_rigid(yaw_rotation(yaw + yaw_rate * timestep), center + velocity * timestep);
}

Mat4 EgoMotion::pose(int timestep) const {
  return make_rigid(yaw_rotation(yaw_rate * timestep), velocity * timestep);
}

Mat3 CameraMount::intrinsics() const {
  Mat3 k = Mat3::Identity();
  k(0, 0) = fx;
  k(1, 1) = fy;
  k(0, 2) = cx;
  k(1, 2) = cy;
  return k;
}

Mat4 CameraMount::extrinsics() const {
  const Vec3 forward(std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw), -std::sin(pitch));
  const Vec3 right(std::sin(yaw), -std::cos(yaw), 0.0);
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  return make_rigid(r, position);
}

std::vector<int> SceneScript::timesteps() const {
  std::vector<int> t;
  for (int i = -horizon; i <= horizon; ++i) t.push_back(i);
  return t;
}

SceneScript parse_scene_script(const std::string& text, const std::string& source_name) {
  const JsonDoc doc(text, source_name);
  doc.check_keys("", {"grid", "classes", "dynamic_classes", "horizon", "seed", "static", "dynamic", "ego", "cameras",
                      "lidar"});
  SceneScript s;

  const json& classes = doc.at("/classes");
  if (!classes.is_array() || classes.empty() || classes.size() > 0xFFFE) {
    doc.fail("/classes", "expected a non-empty array of class names");
  }
  for (std::size_t i = 0; i < classes.size(); ++i) s.class_names.push_back(doc.string("/classes/" + std::to_string(i)));
  const int c = static_cast<int>(s.class_names.size());
  s.grid = parse_grid(doc, c);
  s.horizon = static_cast<int>(doc.integer_or("/horizon", 0));
  if (s.horizon < 0 || s.horizon > 64) doc.fail("/horizon", "horizon must be in [0, 64]");
  const long long seed = doc.integer_or("/seed", 0);
  if (seed < 0) doc.fail("/seed", "seed must be non-negative");
  s.seed = static_cast<std::uint64_t>(seed);

  if (doc.has("/dynamic_classes")) {
    const json& dyn = doc.at("/dynamic_classes");
    if (!dyn.is_array()) doc.fail("/dynamic_classes", "expected an array of class ids");
    for (std::size_t i = 0; i < dyn.size(); ++i) {
      s.dynamic_classes.push_back(parse_class(doc, "/dynamic_classes/" + std::to_string(i), c));
    }
  }

  const Vec3 grid_lo = s.grid.origin;
  const Vec3 grid_hi = s.grid.max_corner();
  const double eps = 1e-9 * s.grid.voxel_size;

  if (doc.has("/static")) {
    const json& arr = doc.at("/static");
    if (!arr.is_array()) doc.fail("/static", "expected an array of primitives");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string p = "/static/" + std::to_string(i);
      doc.check_keys(p, {"kind", "min", "max", "class"});
      StaticPrimitive prim;
      prim.kind = doc.string_or(p + "/kind", "box");
      prim.min = doc.vec3(p + "/min");
      prim.max = doc.vec3(p + "/max");
      prim.class_id = parse_class(doc, p + "/class", c);
      if ((prim.min.array() >= prim.max.array()).any()) doc.fail(p, "primitive min must be below max");
      if ((prim.min.array() < grid_lo.array() - eps).any() || (prim.max.array() > grid_hi.array() + eps).any()) {
        doc.fail(p, "primitive extends outside the grid");
      }
      if (std::find(s.dynamic_classes.begin(), s.dynamic_classes.end(), prim.class_id) != s.dynamic_classes.end()) {
        doc.fail(p + "/class", "static primitive uses a dynamic class");
      }
      s.statics.push_back(prim);
    }
  }

  if (doc.has("/dynamic")) {
    const json& arr = doc.at("/dynamic");
    if (!arr.is_array()) doc.fail("/dynamic", "expected an array of boxes");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string p = "/dynamic/" + std::to_string(i);
      doc.check_keys(p, {"id", "class", "center", "size", "yaw_deg", "velocity", "yaw_rate_deg"});
      DynamicBox box;
      box.id = static_cast<int>(doc.integer_or(p + "/id", static_cast<long long>(i)));
      box.class_id = parse_class(doc, p + "/class", c);
      if (std::find(s.dynamic_classes.begin(), s.dynamic_classes.end(), box.class_id) == s.dynamic_classes.end()) {
        doc.fail(p + "/class", "dynamic box class is not listed in dynamic_classes");
      }
      box.center = doc.vec3(p + "/center");
      box.size = doc.vec3(p + "/size");
      if ((box.size.array() <= 0.0).any()) doc.fail(p + "/size", "box size must be positive");
      box.yaw = doc.number_or(p + "/yaw_deg", 0.0) * kDeg;
      box.velocity = doc.has(p + "/velocity") ? doc.vec3(p + "/velocity") : Vec3::Zero();
      box.yaw_rate = doc.number_or(p + "/yaw_rate_deg", 0.0) * kDeg;
      for (const DynamicBox& other : s.dynamics) {
        if (other.id == box.id) doc.fail(p + "/id", "duplicate box id");
      }
      s.dynamics.push_back(box);
    }
  }

  if (doc.has("/ego")) {
    doc.check_keys("/ego", {"velocity", "yaw_rate_deg"});
    s.ego.velocity = doc.has("/ego/velocity") ? doc.vec3("/ego/velocity") : Vec3::Zero();
    s.ego.yaw_rate = doc.number_or("/ego/yaw_rate_deg", 0.0) * kDeg;
  }

  const json& cams = doc.at("/cameras");
  if (!cams.is_array() || cams.empty()) doc.fail("/cameras", "expected a non-empty array of cameras");
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const std::string p = "/cameras/" + std::to_string(i);
    doc.check_keys(p, {"name", "position", "yaw_deg", "pitch_deg", "fx", "fy", "cx", "cy", "width", "height",
                       "heldout"});
    CameraMount cam;
    cam.name = doc.string(p + "/name");
    cam.position = doc.vec3(p + "/position");
    cam.yaw = doc.number_or(p + "/yaw_deg", 0.0) * kDeg;
    cam.pitch = doc.number_or(p + "/pitch_deg", 0.0) * kDeg;
    cam.width = static_cast<int>(doc.integer(p + "/width"));
    cam.height = static_cast<int>(doc.integer(p + "/height"));
    if (cam.width < 1 || cam.height < 1) doc.fail(p, "image size must be positive");
    cam.fx = doc.number(p + "/fx");
    cam.fy = doc.number_or(p + "/fy", cam.fx);
    cam.cx = doc.number_or(p + "/cx", 0.5 * (cam.width - 1));
    cam.cy = doc.number_or(p + "/cy", 0.5 * (cam.height - 1));
    if (cam.fx <= 0.0 || cam.fy <= 0.0) doc.fail(p, "focal lengths must be positive");
    cam.heldout = doc.boolean_or(p + "/heldout", false);
    for (const CameraMount& other : s.cameras) {
      if (other.name == cam.name) doc.fail(p + "/name", "duplicate camera name");
    }
    s.cameras.push_back(cam);
  }

  if (doc.has("/lidar")) {
    doc.check_keys("/lidar", {"position", "positions", "azimuth_steps", "elevation_min_deg", "elevation_max_deg",
                              "elevation_steps", "max_range", "depth_noise"});
    LidarSpec& l = s.lidar;
    if (doc.has("/lidar/position") && doc.has("/lidar/positions")) {
      doc.fail("/lidar/positions", "give either position or positions");
    }
    if (doc.has("/lidar/position")) l.positions = {doc.vec3("/lidar/position")};
    if (doc.has("/lidar/positions")) {
      const json& arr = doc.at("/lidar/positions");
      if (!arr.is_array() || arr.empty()) doc.fail("/lidar/positions", "expected a non-empty array of positions");
      l.positions.clear();
      for (std::size_t i = 0; i < arr.size(); ++i) l.positions.push_back(doc.vec3("/lidar/positions/" + std::to_string(i)));
    }
    l.azimuth_steps = static_cast<int>(doc.integer_or("/lidar/azimuth_steps", l.azimuth_steps));
    l.elevation_steps = static_cast<int>(doc.integer_or("/lidar/elevation_steps", l.elevation_steps));
    l.elevation_min_deg = doc.number_or("/lidar/elevation_min_deg", l.elevation_min_deg);
    l.elevation_max_deg = doc.number_or("/lidar/elevation_max_deg", l.elevation_max_deg);
    l.max_range = doc.number_or("/lidar/max_range", l.max_range);
    l.depth_noise = doc.number_or("/lidar/depth_noise", l.depth_noise);
    if (l.azimuth_steps < 1 || l.elevation_steps < 1) doc.fail("/lidar", "beam counts must be positive");
    if (l.elevation_min_deg > l.elevation_max_deg) doc.fail("/lidar", "elevation_min_deg exceeds elevation_max_deg");
    if (l.max_range <= 0.0) doc.fail("/lidar/max_range", "max_range must be positive");
    if (l.depth_noise < 0.0) doc.fail("/lidar/depth_noise", "depth_noise must be non-negative");
  }
  return s;
}

SceneScript load_scene_script(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_scene_script(text, path.string());
}

OccupancyLabels voxelize(const SceneScript& scene, int timestep) {
  const GridSpec& g = scene.grid;
  OccupancyLabels out(g);
  auto paint = [&](const Vec3& lo, const Vec3& hi, int cls, auto&& inside) {
    const auto r = voxel_range(g, lo, hi);
    for (int z = r[2][0]; z <= r[2][1]; ++z) {
      for (int y = r[1][0]; y <= r[1][1]; ++y) {
        for (int x = r[0][0]; x <= r[0][1]; ++x) {
          if (inside(g.voxel_center(x, y, z))) out.labels[g.index(x, y, z)] = static_cast<std::uint16_t>(cls);
        }
      }
    }
  };
  for (const StaticPrimitive& p : scene.statics) {
    paint(p.min, p.max, p.class_id, [&](const Vec3& c) { return inside_aabb(c, p.min, p.max); });
  }
  for (const DynamicBox& b : scene.dynamics) {
    const Mat4 pose = b.pose(timestep);
    const Vec3 half = pose.topLeftCorner<3, 3>().cwiseAbs() * (0.5 * b.size);
    const Vec3 c = pose.topRightCorner<3, 1>();
    paint(c - half, c + half, b.class_id, [&](const Vec3& p) { return inside_box(pose, b.size, p); });
  }
  return out;
}

std::vector<LabeledPoint> simulate_lidar(const SceneScript& scene, const OccupancyLabels& world,
                                         const Mat4& sensor_pose, int timestep, int threads) {
  const GridSpec& g = world.spec;
  const LidarSpec& l = scene.lidar;
  const Vec3 o = sensor_pose.topRightCorner<3, 1>();
  const Mat3 r = sensor_pose.topLeftCorner<3, 3>();
  const double step = 0.25 * g.voxel_size;
  const auto n_az = static_cast<std::size_t>(l.azimuth_steps);
  const std::uint64_t noise_seed = derive_seed(scene.seed, static_cast<std::uint64_t>(timestep + 1024), fnv1a64(o.data(), 3 * sizeof(double)));

  std::vector<std::vector<LabeledPoint>> rows(static_cast<std::size_t>(l.elevation_steps));
  parallel_for(rows.size(), threads, [&](std::size_t row) {
    const double el =
        l.elevation_steps == 1
            ? l.elevation_min_deg * kDeg
            : (l.elevation_min_deg + (l.elevation_max_deg - l.elevation_min_deg) * static_cast<double>(row) /
                                         (l.elevation_steps - 1)) *
                  kDeg;
    for (std::size_t j = 0; j < n_az; ++j) {
      const double az = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n_az);
      const Vec3 d = r * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      for (double t = step; t <= l.max_range; t += step) {
        const Vec3 p = o + t * d;
        if (!g.contains(p)) continue;
        std::array<int, 3> v{};
        for (int a = 0; a < 3; ++a) {
          v[static_cast<std::size_t>(a)] = std::clamp(
              static_cast<int>(std::floor((p[a] - g.origin[a]) / g.voxel_size)), 0, g.dims[static_cast<std::size_t>(a)] - 1);
        }
        const std::uint16_t label = world.labels[g.index(v[0], v[1], v[2])];
        if (label == g.free_id()) continue;

        // Entry face of the hit voxel along the beam.
        double t_entry = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < 3; ++a) {
          if (d[a] == 0.0) continue;
          const double lo = g.origin[a] + v[static_cast<std::size_t>(a)] * g.voxel_size;
          const double hi = lo + g.voxel_size;
          t_entry = std::max(t_entry, std::min((lo - o[a]) / d[a], (hi - o[a]) / d[a]));
        }
        double range = std::clamp(t_entry, std::max(0.0, t - step), t);
        if (l.depth_noise > 0.0) {
          CounterRng rng(noise_seed, row * n_az + j);
          const double u1 = 1.0 - rng.uniform();
          const double u2 = rng.uniform();
          range += l.depth_noise * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
        }
        rows[row].push_back({o + range * d, label, timestep});
        break;
      }
    }
  });
  std::vector<LabeledPoint> points;
  for (auto& row : rows) points.insert(points.end(), row.begin(), row.end());
  return points;
}

std::vector<LabeledPoint> simulate_lidar(const SceneScript& scene, const Mat4& sensor_pose, int timestep,
                                         int threads) {
  return simulate_lidar(scene, voxelize(scene, timestep), sensor_pose, timestep, threads);
}

std::vector<LabeledPoint> simulate_scans(const SceneScript& scene, int threads) {
  std::vector<LabeledPoint> all;
  for (int t : scene.timesteps()) {
    const Mat4 ego = scene.ego.pose(t);
    const Mat4 world_to_ego = rigid_inverse(ego);
    const OccupancyLabels world = voxelize(scene, t);
    for (const Vec3& mount : scene.lidar.positions) {
      auto pts = simulate_lidar(scene, world, ego * translation(mount), t, threads);
      for (auto& p : pts) p.position = transform_point(world_to_ego, p.position);
      all.insert(all.end(), pts.begin(), pts.end());
    }
  }
  return all;
}

CameraRig build_camera_rig(const SceneScript& scene) {
  CameraRig rig;
  for (int t : scene.timesteps()) rig.ego_poses[t] = scene.ego.pose(t);
  for (int t : scene.timesteps()) {
    for (const CameraMount& m : scene.cameras) {
      if (m.heldout && t != 0) continue;
      CameraFrame cam;
      cam.name = scene.horizon == 0 ? m.name : m.name + "@" + std::to_string(t);
      cam.intrinsics = m.intrinsics();
      cam.cam_to_world = m.extrinsics();
      cam.width = m.width;
      cam.height = m.height;
      cam.timestep = t;
      cam.heldout = m.heldout;
      rig.cameras.push_back(cam);
    }
  }
  return rig;
}

std::vector<BoxTrack> build_tracks(const SceneScript& scene) {
  std::vector<BoxTrack> tracks;
  for (const DynamicBox& b : scene.dynamics) {
    BoxTrack track;
    track.box_id = b.id;
    track.class_id = b.class_id;
    track.extent = b.size;
    for (int t : scene.timesteps()) track.poses[t] = b.pose(t);
    tracks.push_back(std::move(track));
  }
  return tracks;
}

void write_scene(const SceneScript& scene, const std::filesystem::path& out_dir, std::uint64_t scene_hash,
                 int threads) {
  std::filesystem::create_directories(out_dir);
  save_camera_rig(out_dir / kSceneCameras, build_camera_rig(scene));
  const auto points = simulate_scans(scene, threads);
  save_points_csv(out_dir / kScenePoints, points);
  save_tracks_csv(out_dir / kSceneTracks, build_tracks(scene));
  save_labels(out_dir / kSceneLabels, voxelize(scene, 0));

  json meta;
  meta["format_version"] = kSceneMetaVersion;
  meta["scene_hash"] = hex64(scene_hash);
  meta["grid"] = {{"dims", scene.grid.dims},
                  {"origin", {scene.grid.origin.x(), scene.grid.origin.y(), scene.grid.origin.z()}},
                  {"voxel_size", scene.grid.voxel_size},
                  {"num_classes", scene.grid.num_classes}};
  meta["classes"] = scene.class_names;
  meta["dynamic_classes"] = scene.dynamic_classes;
  meta["horizon"] = scene.horizon;
  meta["timesteps"] = scene.timesteps();
  meta["points"] = points.size();
  meta["files"] = {kSceneCameras, kScenePoints, kSceneTracks, kSceneLabels};
  std::ofstream out(out_dir / kSceneMeta);
  if (!out) throw InputError("cannot write " + (out_dir / kSceneMeta).string());
  out << meta.dump(1) << '\n';
}

SceneMeta load_scene_meta(const std::filesystem::path& path) {
  const JsonDoc doc = JsonDoc::load(path);
  SceneMeta m;
  if (doc.integer("/format_version") != kSceneMetaVersion) doc.fail("/format_version", "unsupported version");
  const json& classes = doc.at("/classes");
  if (!classes.is_array() || classes.empty()) doc.fail("/classes", "expected a non-empty array");
  for (std::size_t i = 0; i < classes.size(); ++i) m.class_names.push_back(doc.string("/classes/" + std::to_string(i)));
  for (int a = 0; a < 3; ++a) {
    m.grid.dims[static_cast<std::size_t>(a)] = static_cast<int>(doc.integer("/grid/dims/" + std::to_string(a)));
  }
  m.grid.origin = doc.vec3("/grid/origin");
  m.grid.voxel_size = doc.number("/grid/voxel_size");
  m.grid.num_classes = static_cast<int>(doc.integer("/grid/num_classes"));
  m.grid.validate();
  if (m.grid.num_classes != static_cast<int>(m.class_names.size())) doc.fail("/grid/num_classes", "class count mismatch");
  const json& dyn = doc.at("/dynamic_classes");
  for (std::size_t i = 0; i < dyn.size(); ++i) {
    m.dynamic_classes.push_back(static_cast<int>(doc.integer("/dynamic_classes/" + std::to_string(i))));
  }
  m.horizon = static_cast<int>(doc.integer("/horizon"));
  m.scene_hash = std::stoull(doc.string("/scene_hash"), nullptr, 16);
  return m;
}

}  // namespace occ
