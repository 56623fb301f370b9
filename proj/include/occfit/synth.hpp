#pragma once

#include "occfit/camera.hpp"
#include "occfit/flow.hpp"
#include "occfit/grid.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace occ {

/// Axis-aligned static geometry (ground slab, wall, pillar). Covers [min, max).
struct StaticPrimitive {
  std::string kind = "box";
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();
  int class_id = 0;
};

/// Oriented box moving at constant velocity and yaw rate in the grid frame.
struct DynamicBox {
  int id = 0;
  int class_id = 0;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  double yaw = 0.0;
  Vec3 velocity = Vec3::Zero();
  double yaw_rate = 0.0;

  Mat4 pose(int timestep) const;
};

/// Ego motion of the vehicle; the t = 0 ego frame is the grid frame.
struct EgoMotion {
  Vec3 velocity = Vec3::Zero();
  double yaw_rate = 0.0;

  Mat4 pose(int timestep) const;
};

/// Camera mounted on the ego vehicle. Yaw about +z, pitch positive looking down; camera axes are
/// x right, y down, z forward.
struct CameraMount {
  std::string name;
  Vec3 position = Vec3::Zero();
  double yaw = 0.0;
  double pitch = 0.0;
  double fx = 100.0, fy = 100.0, cx = 50.0, cy = 50.0;
  int width = 100, height = 100;
  bool heldout = false;

  Mat3 intrinsics() const;
  Mat4 extrinsics() const;
};

struct LidarSpec {
  /// Sensor mounts in the ego frame; every mount sweeps the full beam pattern.
  std::vector<Vec3> positions{Vec3(0.0, 0.0, 1.6)};
  int azimuth_steps = 360;
  double elevation_min_deg = -60.0;
  double elevation_max_deg = 10.0;
  int elevation_steps = 48;
  double max_range = 40.0;
  /// Standard deviation of Gaussian range jitter in meters; 0 disables it.
  double depth_noise = 0.0;
};

struct SceneScript {
  GridSpec grid;
  std::vector<std::string> class_names;
  std::vector<int> dynamic_classes;
  int horizon = 0;
  std::uint64_t seed = 0;
  std::vector<StaticPrimitive> statics;
  std::vector<DynamicBox> dynamics;
  std::vector<CameraMount> cameras;
  LidarSpec lidar;
  EgoMotion ego;

  std::vector<int> timesteps() const;
};

/// Throws InputError with a "<source>:<line>: " prefix on malformed or inconsistent scripts.
SceneScript parse_scene_script(const std::string& text, const std::string& source_name);
SceneScript load_scene_script(const std::filesystem::path& path);

/// Labels voxels whose centers fall inside a primitive; dynamic boxes override static geometry and
/// later primitives override earlier ones.
OccupancyLabels voxelize(const SceneScript& scene, int timestep);

/// Casts every beam from `sensor_pose` (sensor -> grid frame) through the voxelization at
/// `timestep`, marching at quarter-voxel steps. A hit is snapped to the entry face of the first
/// occupied voxel. Points are returned in the grid frame.
std::vector<LabeledPoint> simulate_lidar(const SceneScript& scene, const Mat4& sensor_pose, int timestep,
                                         int threads = 1);
std::vector<LabeledPoint> simulate_lidar(const SceneScript& scene, const OccupancyLabels& world,
                                         const Mat4& sensor_pose, int timestep, int threads = 1);

/// Every training camera at every timestep of the horizon; held-out cameras at t = 0 only.
CameraRig build_camera_rig(const SceneScript& scene);
std::vector<BoxTrack> build_tracks(const SceneScript& scene);

/// Full scan set: one LiDAR sweep per timestep, points in the ego frame of their timestep.
std::vector<LabeledPoint> simulate_scans(const SceneScript& scene, int threads = 1);

/// Files written by `write_scene`, relative to the output directory.
inline constexpr const char* kSceneCameras = "cameras.json";
inline constexpr const char* kScenePoints = "points.csv";
inline constexpr const char* kSceneTracks = "tracks.csv";
inline constexpr const char* kSceneLabels = "labels.occ";
inline constexpr const char* kSceneMeta = "scene_meta.json";
inline constexpr int kSceneMetaVersion = 1;

/// Writes the five scene artifacts. `scene_hash` identifies the script in the metadata.
void write_scene(const SceneScript& scene, const std::filesystem::path& out_dir, std::uint64_t scene_hash,
                 int threads = 1);

/// What downstream commands need from scene_meta.json.
struct SceneMeta {
  GridSpec grid;
  std::vector<std::string> class_names;
  std::vector<int> dynamic_classes;
  int horizon = 0;
  std::uint64_t scene_hash = 0;
};
SceneMeta load_scene_meta(const std::filesystem::path& path);

}  // namespace occ
