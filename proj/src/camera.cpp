#include "occfit/camera.hpp"

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>

namespace occ {

using nlohmann::json;

void CameraFrame::validate() const {
  const Mat3& k = intrinsics;
  if (!k.allFinite() || k(1, 0) != 0.0 || k(2, 0) != 0.0 || k(2, 1) != 0.0 || k(2, 2) != 1.0) {
    throw InputError("camera '" + name + "': K must be upper-triangular with K[2][2] = 1");
  }
  if (!(k(0, 0) > 0.0) || !(k(1, 1) > 0.0)) {
    throw InputError("camera '" + name + "': focal lengths must be positive");
  }
  if (!is_rigid(cam_to_world)) {
    throw InputError("camera '" + name + "': E is not a rigid transform");
  }
  if (height < 1 || width < 1) {
    throw InputError("camera '" + name + "': image size must be positive");
  }
}

RayOriginDirection pixel_ray(const CameraFrame& cam, double u, double v) {
  const Vec3 back = cam.intrinsics.triangularView<Eigen::Upper>().solve(Vec3(u, v, 1.0));
  return {cam.center(), transform_direction(cam.cam_to_world, back).normalized()};
}

std::optional<PixelProjection> project_point(const CameraFrame& cam, const Vec3& world_point) {
  const Vec3 pc = transform_point(rigid_inverse(cam.cam_to_world), world_point);
  if (pc.z() <= 1e-6) {
    return std::nullopt;
  }
  const Vec3 h = cam.intrinsics * (pc / pc.z());
  const double u = h.x();
  const double v = h.y();
  if (u < -0.5 || v < -0.5 || u >= cam.width - 0.5 || v >= cam.height - 0.5) {
    return std::nullopt;
  }
  return PixelProjection{u, v, pc.z()};
}

std::optional<PixelProjection> project_point(const CameraFrame& cam, const LabeledPoint& point) {
  return project_point(cam, point.position);
}

Mat4 frame_to_current(const EgoPoses& poses, int timestep) {
  const auto it_t = poses.find(timestep);
  const auto it_0 = poses.find(0);
  if (it_t == poses.end()) {
    throw InputError("missing ego pose for timestep " + std::to_string(timestep));
  }
  if (it_0 == poses.end()) {
    throw InputError("missing ego pose for the current timestep 0");
  }
  if (timestep == 0) {
    return Mat4::Identity();
  }
  return rigid_inverse(it_0->second) * it_t->second;
}

std::vector<Ray> build_rays(std::span<const CameraFrame> cams, std::span<const LabeledPoint> points,
                            const EgoPoses& ego_poses, std::span<const double> class_weights) {
  std::map<int, std::vector<const CameraFrame*>> by_time;
  for (const auto& cam : cams) {
    by_time[cam.timestep].push_back(&cam);
  }
  std::map<int, Mat4> to_current;
  std::vector<Ray> rays;
  for (const auto& p : points) {
    const auto cams_t = by_time.find(p.timestep);
    if (cams_t == by_time.end()) {
      throw InputError("no camera for timestep " + std::to_string(p.timestep));
    }
    auto tc = to_current.find(p.timestep);
    if (tc == to_current.end()) {
      tc = to_current.emplace(p.timestep, frame_to_current(ego_poses, p.timestep)).first;
    }
    if (p.class_id < 0 || static_cast<std::size_t>(p.class_id) >= class_weights.size()) {
      throw InputError("point class " + std::to_string(p.class_id) + " has no class weight");
    }
    for (const CameraFrame* cam : cams_t->second) {
      if (!project_point(*cam, p.position)) {
        continue;
      }
      const Vec3 origin = cam->center();
      const Vec3 offset = p.position - origin;
      const double range = offset.norm();
      Ray r;
      r.origin = transform_point(tc->second, origin);
      r.direction = transform_direction(tc->second, offset / range);
      r.gt_depth = range;
      r.gt_class = p.class_id;
      r.weight = class_weights[static_cast<std::size_t>(p.class_id)];
      r.timestep = p.timestep;
      rays.push_back(r);
    }
  }
  return rays;
}

// ---------------------------------------------------------------------------------------------
// Files

std::vector<LabeledPoint> load_points_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("x,y,z,class,t", 0) != 0) {
    throw InputError(path.string() + ":1: expected header 'x,y,z,class,t'");
  }
  std::vector<LabeledPoint> points;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::istringstream ss(line);
    LabeledPoint p;
    char c1 = 0, c2 = 0, c3 = 0, c4 = 0;
    if (!(ss >> p.position.x() >> c1 >> p.position.y() >> c2 >> p.position.z() >> c3 >> p.class_id >> c4 >>
          p.timestep) ||
        c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',') {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": malformed point row");
    }
    if (p.class_id < 0) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": negative class id");
    }
    points.push_back(p);
  }
  return points;
}

void save_points_csv(const std::filesystem::path& path, std::span<const LabeledPoint> points) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out << "x,y,z,class,t\n" << std::setprecision(17);
  for (const auto& p : points) {
    out << p.position.x() << ',' << p.position.y() << ',' << p.position.z() << ',' << p.class_id << ','
        << p.timestep << '\n';
  }
}

namespace {

template <int R, int C>
Eigen::Matrix<double, R, C> matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(R * C)) {
    throw InputError(what + ": expected " + std::to_string(R * C) + " reals");
  }
  Eigen::Matrix<double, R, C> m;
  for (int r = 0; r < R; ++r) {
    for (int c = 0; c < C; ++c) {
      m(r, c) = j.at(static_cast<std::size_t>(r * C + c)).get<double>();
    }
  }
  return m;
}

template <typename Derived>
json matrix_to_json(const Eigen::MatrixBase<Derived>& m) {
  json arr = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) {
      arr.push_back(m(r, c));
    }
  }
  return arr;
}

}  // namespace

CameraRig load_camera_rig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  CameraRig rig;
  try {
    const json doc = json::parse(in);
    const int version = doc.value("format_version", kCameraFormatVersion);
    if (version != kCameraFormatVersion) {
      throw InputError("unsupported camera format version " + std::to_string(version));
    }
    for (const auto& e : doc.at("ego_poses")) {
      const int t = e.at("t").get<int>();
      const Mat4 pose = matrix_from_json<4, 4>(e.at("pose"), "ego pose");
      if (!is_rigid(pose)) {
        throw InputError("ego pose for t=" + std::to_string(t) + " is not rigid");
      }
      rig.ego_poses[t] = pose;
    }
    for (const auto& c : doc.at("cameras")) {
      CameraFrame cam;
      cam.name = c.value("name", std::string("cam"));
      cam.intrinsics = matrix_from_json<3, 3>(c.at("K"), "camera K");
      cam.cam_to_world = matrix_from_json<4, 4>(c.at("E"), "camera E");
      cam.height = c.at("height").get<int>();
      cam.width = c.at("width").get<int>();
      cam.timestep = c.at("t").get<int>();
      const std::string split = c.value("split", std::string("train"));
      if (split != "train" && split != "heldout") {
        throw InputError("camera split must be 'train' or 'heldout'");
      }
      cam.heldout = split == "heldout";
      cam.validate();
      rig.cameras.push_back(cam);
    }
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return rig;
}

void save_camera_rig(const std::filesystem::path& path, const CameraRig& rig) {
  json doc;
  doc["format_version"] = kCameraFormatVersion;
  doc["ego_poses"] = json::array();
  for (const auto& [t, pose] : rig.ego_poses) {
    doc["ego_poses"].push_back({{"t", t}, {"pose", matrix_to_json(pose)}});
  }
  doc["cameras"] = json::array();
  for (const auto& cam : rig.cameras) {
    doc["cameras"].push_back({{"name", cam.name},
                              {"K", matrix_to_json(cam.intrinsics)},
                              {"E", matrix_to_json(cam.cam_to_world)},
                              {"height", cam.height},
                              {"width", cam.width},
                              {"t", cam.timestep},
                              {"split", cam.heldout ? "heldout" : "train"}});
  }
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out << doc.dump(1) << '\n';
}

}  // namespace occ
