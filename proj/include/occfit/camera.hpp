#pragma once

#include "occfit/common.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace occ {

/// Pinhole camera at one timestep.
///
/// Frames: camera axes are x right, y down, z forward. `cam_to_world` maps camera coordinates
/// into the ego frame of the camera's own timestep ("world" of that frame). Pixel coordinates
/// are measured at pixel centers: pixel (col, row) has its center at (u, v) = (col, row), so the
/// image covers u in [-0.5, width - 0.5) and v in [-0.5, height - 0.5).
struct CameraFrame {
  std::string name;
  Mat3 intrinsics = Mat3::Identity();
  Mat4 cam_to_world = Mat4::Identity();
  int height = 1;
  int width = 1;
  int timestep = 0;
  /// Held-out cameras are only used for evaluation rays.
  bool heldout = false;

  /// Throws InputError unless K is upper-triangular with positive focal entries, E is rigid,
  /// and the image size is positive.
  void validate() const;

  Vec3 center() const { return cam_to_world.topRightCorner<3, 1>(); }
};

struct LabeledPoint {
  Vec3 position = Vec3::Zero();
  int class_id = 0;
  int timestep = 0;

  bool operator==(const LabeledPoint& other) const = default;
};

/// A supervision ray in the current-frame (t = 0) grid coordinates. `gt_depth` is the range
/// along the unit direction, so origin + gt_depth * direction is the labeled point.
struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double gt_depth = 1.0;
  int gt_class = 0;
  double weight = 1.0;
  int timestep = 0;
};

struct RayOriginDirection {
  Vec3 origin;
  Vec3 direction;
};

RayOriginDirection pixel_ray(const CameraFrame& cam, double u, double v);

struct PixelProjection {
  double u = 0.0;
  double v = 0.0;
  /// Camera-frame z of the point.
  double depth = 0.0;
};

/// Empty when the point is behind the camera (z <= 1e-6 m) or outside the image.
std::optional<PixelProjection> project_point(const CameraFrame& cam, const Vec3& world_point);
std::optional<PixelProjection> project_point(const CameraFrame& cam, const LabeledPoint& point);

/// ego_t -> world transforms keyed by timestep.
using EgoPoses = std::map<int, Mat4>;

/// Cameras plus ego poses: everything needed to place rays in the current frame.
struct CameraRig {
  std::vector<CameraFrame> cameras;
  EgoPoses ego_poses;
};

/// Maps ego frame t into the current (t = 0) frame: ego_0^-1 * ego_t.
Mat4 frame_to_current(const EgoPoses& poses, int timestep);

/// One ray per (point, camera) pair with the point visible in that camera of the point's
/// timestep. `class_weights[c]` becomes the ray weight. Occlusion between points is not resolved.
/// Throws InputError when a point references a timestep without an ego pose or without cameras.
std::vector<Ray> build_rays(std::span<const CameraFrame> cams, std::span<const LabeledPoint> points,
                            const EgoPoses& ego_poses, std::span<const double> class_weights);

// Point cloud CSV: header `x,y,z,class,t`.
std::vector<LabeledPoint> load_points_csv(const std::filesystem::path& path);
void save_points_csv(const std::filesystem::path& path, std::span<const LabeledPoint> points);

// Camera JSON:
//   {"format_version": 1,
//    "ego_poses": [{"t": 0, "pose": [16 reals, row-major]}, ...],
//    "cameras": [{"name": "...", "K": [9 reals], "E": [16 reals], "height": H, "width": W,
//                 "t": 0, "split": "train" | "heldout"}, ...]}
inline constexpr int kCameraFormatVersion = 1;
CameraRig load_camera_rig(const std::filesystem::path& path);
void save_camera_rig(const std::filesystem::path& path, const CameraRig& rig);

}  // namespace occ
