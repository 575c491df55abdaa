#pragma once

// Rigid-body math on plain values. Conventions: quaternions are scalar-first
// (w, x, y, z), rotations act on column vectors, p' = R p + t.

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace itnet {

using Vec3 = std::array<double, 3>;

/// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{};

  double& operator()(int r, int c) { return m[static_cast<std::size_t>(3 * r + c)]; }
  double operator()(int r, int c) const { return m[static_cast<std::size_t>(3 * r + c)]; }

  static Mat3 identity();
  static Mat3 diag(double a, double b, double c);
  Mat3 transposed() const;
  double trace() const { return m[0] + m[4] + m[8]; }
  double determinant() const;
};

/// Row-major 4x4 homogeneous matrix.
struct Mat4 {
  std::array<double, 16> m{};

  double& operator()(int r, int c) { return m[static_cast<std::size_t>(4 * r + c)]; }
  double operator()(int r, int c) const { return m[static_cast<std::size_t>(4 * r + c)]; }

  static Mat4 identity();
  Mat3 rotation_block() const;
  Vec3 translation() const { return {m[3], m[7], m[11]}; }
};

Mat3 operator*(const Mat3& a, const Mat3& b);
Vec3 operator*(const Mat3& a, const Vec3& v);
Mat4 operator*(const Mat4& a, const Mat4& b);
Vec3 operator+(const Vec3& a, const Vec3& b);
Vec3 operator-(const Vec3& a, const Vec3& b);
Vec3 operator*(double s, const Vec3& v);
double dot(const Vec3& a, const Vec3& b);
Vec3 cross(const Vec3& a, const Vec3& b);
double norm(const Vec3& v);
double frobenius_distance(const Mat3& a, const Mat3& b);

struct UnitQuaternion {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  UnitQuaternion operator-() const { return {-w, -x, -y, -z}; }
  double norm() const;
};

struct AxisAngle {
  Vec3 axis{0.0, 0.0, 1.0};
  double angle = 0.0;  // radians, [0, pi]

  /// axis * angle
  Vec3 vector() const { return angle * axis; }
};

class RigidTransform {
 public:
  RigidTransform() = default;
  RigidTransform(const UnitQuaternion& q, const Vec3& t);

  static RigidTransform identity() { return {}; }
  static RigidTransform from_matrix(const Mat4& m);
  static RigidTransform from_rotation(const Mat3& r, const Vec3& t);
  static RigidTransform translation(const Vec3& t) { return {UnitQuaternion{}, t}; }

  const UnitQuaternion& q() const { return q_; }
  const Vec3& t() const { return t_; }
  const Mat3& rotation() const { return r_; }
  Mat4 matrix() const;

  Vec3 apply(const Vec3& p) const;

 private:
  UnitQuaternion q_{};
  Vec3 t_{0.0, 0.0, 0.0};
  Mat3 r_ = Mat3::identity();
};

/// Unconstrained linear map with zero translation.
struct AffineTransform {
  Mat3 a = Mat3::identity();
};

struct PointCloud {
  std::vector<Vec3> points;
  std::string frame = "sensor";

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

UnitQuaternion quat_normalize(std::span<const double, 4> raw);
UnitQuaternion quat_normalize(double w, double x, double y, double z);
Mat3 quat_to_rotmat(const UnitQuaternion& q);
/// Matrix to quaternion using the largest-diagonal branch; result has w >= 0.
UnitQuaternion rotmat_to_quat(const Mat3& r);

UnitQuaternion quat_from_axis_angle(const Vec3& axis, double angle);
Mat3 rotation_from_axis_angle(const Vec3& axis, double angle);

/// Throws NotARotation if R is not orthonormal within `tol` or has det < 0.
AxisAngle rotation_to_axis_angle(const Mat3& r, double tol = 1e-6);

RigidTransform rigid_compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform rigid_inverse(const RigidTransform& t);

PointCloud transform_points(const RigidTransform& t, const PointCloud& cloud);
PointCloud transform_points(const AffineTransform& a, const PointCloud& cloud);
PointCloud transform_points(const Mat4& m, const PointCloud& cloud);

struct Svd3 {
  Mat3 u;
  Vec3 s;  // descending
  Mat3 v;
};

/// One-sided Jacobi SVD, a = u * diag(s) * v^T with u, v orthonormal.
Svd3 svd3(const Mat3& a);

/// Closest proper rotation in the Frobenius sense.
Mat3 nearest_rotation(const Mat3& a);

/// "qw qx qy qz tx ty tz" with round-trip precision.
std::string format_pose(const RigidTransform& t, char sep = ' ');
RigidTransform parse_pose(std::string_view text);

}  // namespace itnet
