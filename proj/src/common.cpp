#include "occfit/common.hpp"

#include <cstdio>

namespace occ {

bool is_rigid(const Mat4& m, double tol) {
  if (!m.allFinite()) {
    return false;
  }
  const Mat3 r = m.topLeftCorner<3, 3>();
  if (((r.transpose() * r) - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) {
    return false;
  }
  if (std::abs(r.determinant() - 1.0) > tol * 10.0) {
    return false;
  }
  const Eigen::RowVector4d last = m.row(3);
  return (last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() <= tol;
}

Mat4 rigid_inverse(const Mat4& m) {
  const Mat3 rt = m.topLeftCorner<3, 3>().transpose();
  return make_rigid(rt, -rt * m.topRightCorner<3, 1>());
}

Mat4 make_rigid(const Mat3& rotation, const Vec3& translation) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Mat3 yaw_rotation(double yaw) {
  return Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace occ
