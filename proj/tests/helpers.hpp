#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>

#include "geometry.hpp"
#include "random.hpp"

namespace itnet::test {

inline constexpr double kPi = std::numbers::pi;

inline double deg(double d) { return d * kPi / 180.0; }

inline Mat3 rx(double a) { return rotation_from_axis_angle({1, 0, 0}, a); }
inline Mat3 ry(double a) { return rotation_from_axis_angle({0, 1, 0}, a); }
inline Mat3 rz(double a) { return rotation_from_axis_angle({0, 0, 1}, a); }

inline UnitQuaternion random_quat(Rng& rng) {
  return quat_normalize(rng.normal(), rng.normal(), rng.normal(), rng.normal());
}

inline RigidTransform random_transform(Rng& rng, double trans = 1.0) {
  return RigidTransform(random_quat(rng), {rng.uniform(-trans, trans), rng.uniform(-trans, trans),
                                           rng.uniform(-trans, trans)});
}

inline PointCloud random_cloud(Rng& rng, std::size_t n, double scale = 1.0) {
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i)
    c.points.push_back({scale * rng.uniform(-1, 1), scale * rng.uniform(-1, 1), scale * rng.uniform(-1, 1)});
  return c;
}

inline double max_abs_diff(const Mat4& a, const Mat4& b) {
  double m = 0;
  for (std::size_t i = 0; i < 16; ++i) m = std::max(m, std::abs(a.m[i] - b.m[i]));
  return m;
}

inline double max_abs_diff(const Mat3& a, const Mat3& b) {
  double m = 0;
  for (std::size_t i = 0; i < 9; ++i) m = std::max(m, std::abs(a.m[i] - b.m[i]));
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("itnet_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace itnet::test
