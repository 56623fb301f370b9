#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace occ {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Malformed or inconsistent input (files, configs, scene scripts). CLI exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Optimization blew up (loss above the divergence guard). CLI exit code 3.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A verification run (gradcheck, flow-check) found a mismatch. CLI exit code 4.
class VerificationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// True when the upper-left 3x3 block is orthonormal with det +1 and the last row is (0,0,0,1).
bool is_rigid(const Mat4& m, double tol = 1e-9);

Mat4 rigid_inverse(const Mat4& m);

inline Vec3 transform_point(const Mat4& m, const Vec3& p) {
  return m.topLeftCorner<3, 3>() * p + m.topRightCorner<3, 1>();
}

inline Vec3 transform_direction(const Mat4& m, const Vec3& d) { return m.topLeftCorner<3, 3>() * d; }

Mat4 make_rigid(const Mat3& rotation, const Vec3& translation);

/// Rotation about +z by `yaw` radians.
Mat3 yaw_rotation(double yaw);

/// 64-bit FNV-1a, used for content hashes recorded next to outputs.
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(const std::string& s);

std::string hex64(std::uint64_t value);

}  // namespace occ
