#include "geometry.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "error.hpp"

namespace itnet {

Mat3 Mat3::identity() { return diag(1.0, 1.0, 1.0); }

Mat3 Mat3::diag(double a, double b, double c) {
  Mat3 r;
  r.m = {a, 0, 0, 0, b, 0, 0, 0, c};
  return r;
}

Mat3 Mat3::transposed() const {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
  return r;
}

double Mat3::determinant() const {
  const auto& a = *this;
  return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
         a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
         a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
}

Mat4 Mat4::identity() {
  Mat4 r;
  r.m = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  return r;
}

Mat3 Mat4::rotation_block() const {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = (*this)(i, j);
  return r;
}

Mat3 operator*(const Mat3& a, const Mat3& b) {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = a(i, 0) * b(0, j) + a(i, 1) * b(1, j) + a(i, 2) * b(2, j);
  return r;
}

Vec3 operator*(const Mat3& a, const Vec3& v) {
  return {a(0, 0) * v[0] + a(0, 1) * v[1] + a(0, 2) * v[2],
          a(1, 0) * v[0] + a(1, 1) * v[1] + a(1, 2) * v[2],
          a(2, 0) * v[0] + a(2, 1) * v[1] + a(2, 2) * v[2]};
}

Mat4 operator*(const Mat4& a, const Mat4& b) {
  Mat4 r;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
      r(i, j) = s;
    }
  return r;
}

Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 operator*(double s, const Vec3& v) { return {s * v[0], s * v[1], s * v[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

double frobenius_distance(const Mat3& a, const Mat3& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < 9; ++i) s += (a.m[i] - b.m[i]) * (a.m[i] - b.m[i]);
  return std::sqrt(s);
}

double UnitQuaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

UnitQuaternion quat_normalize(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (!(n > 1e-12)) throw Error(ErrorCode::DegenerateQuaternion, "quaternion norm <= 1e-12");
  return {w / n, x / n, y / n, z / n};
}

UnitQuaternion quat_normalize(std::span<const double, 4> raw) {
  return quat_normalize(raw[0], raw[1], raw[2], raw[3]);
}

Mat3 quat_to_rotmat(const UnitQuaternion& q) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 r;
  r.m = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
         2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
  return r;
}

UnitQuaternion rotmat_to_quat(const Mat3& r) {
  const double tr = r.trace();
  double w, x, y, z;
  if (tr >= r(0, 0) && tr >= r(1, 1) && tr >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(std::max(0.0, 1.0 + tr));
    w = 0.25 * s;
    x = (r(2, 1) - r(1, 2)) / s;
    y = (r(0, 2) - r(2, 0)) / s;
    z = (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) >= r(1, 1) && r(0, 0) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(std::max(0.0, 1.0 + r(0, 0) - r(1, 1) - r(2, 2)));
    w = (r(2, 1) - r(1, 2)) / s;
    x = 0.25 * s;
    y = (r(0, 1) + r(1, 0)) / s;
    z = (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(std::max(0.0, 1.0 + r(1, 1) - r(0, 0) - r(2, 2)));
    w = (r(0, 2) - r(2, 0)) / s;
    x = (r(0, 1) + r(1, 0)) / s;
    y = 0.25 * s;
    z = (r(1, 2) + r(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(std::max(0.0, 1.0 + r(2, 2) - r(0, 0) - r(1, 1)));
    w = (r(1, 0) - r(0, 1)) / s;
    x = (r(0, 2) + r(2, 0)) / s;
    y = (r(1, 2) + r(2, 1)) / s;
    z = 0.25 * s;
  }
  UnitQuaternion q = quat_normalize(w, x, y, z);
  return q.w < 0.0 ? -q : q;
}

UnitQuaternion quat_from_axis_angle(const Vec3& axis, double angle) {
  const double n = norm(axis);
  if (!(n > 0.0)) return {};
  const double s = std::sin(0.5 * angle) / n;
  return quat_normalize(std::cos(0.5 * angle), axis[0] * s, axis[1] * s, axis[2] * s);
}

Mat3 rotation_from_axis_angle(const Vec3& axis, double angle) {
  return quat_to_rotmat(quat_from_axis_angle(axis, angle));
}

AxisAngle rotation_to_axis_angle(const Mat3& r, double tol) {
  const Mat3 rrt = r * r.transposed();
  if (frobenius_distance(rrt, Mat3::identity()) > tol || std::abs(r.determinant() - 1.0) > tol) {
    throw Error(ErrorCode::NotARotation, "matrix is not orthonormal with det +1");
  }
  AxisAngle out;
  out.angle = std::acos(std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0));
  if (out.angle < 1e-7) return out;
  const UnitQuaternion q = rotmat_to_quat(r);
  const Vec3 v{q.x, q.y, q.z};
  const double n = norm(v);
  if (n > 0.0) out.axis = (1.0 / n) * v;
  return out;
}

RigidTransform::RigidTransform(const UnitQuaternion& q, const Vec3& t)
    : q_(quat_normalize(q.w, q.x, q.y, q.z)), t_(t), r_(quat_to_rotmat(q_)) {}

RigidTransform RigidTransform::from_rotation(const Mat3& r, const Vec3& t) {
  return RigidTransform(rotmat_to_quat(r), t);
}

RigidTransform RigidTransform::from_matrix(const Mat4& m) {
  return from_rotation(m.rotation_block(), m.translation());
}

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::identity();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m(i, j) = r_(i, j);
    m(i, 3) = t_[static_cast<std::size_t>(i)];
  }
  return m;
}

Vec3 RigidTransform::apply(const Vec3& p) const { return r_ * p + t_; }

RigidTransform rigid_compose(const RigidTransform& a, const RigidTransform& b) {
  return RigidTransform::from_matrix(a.matrix() * b.matrix());
}

RigidTransform rigid_inverse(const RigidTransform& t) {
  const Mat3 rt = t.rotation().transposed();
  const Vec3 ti = -1.0 * (rt * t.t());
  const UnitQuaternion& q = t.q();
  return RigidTransform(UnitQuaternion{q.w, -q.x, -q.y, -q.z}, ti);
}

PointCloud transform_points(const RigidTransform& t, const PointCloud& cloud) {
  PointCloud out;
  out.frame = cloud.frame;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(t.apply(p));
  return out;
}

PointCloud transform_points(const AffineTransform& a, const PointCloud& cloud) {
  PointCloud out;
  out.frame = cloud.frame;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(a.a * p);
  return out;
}

PointCloud transform_points(const Mat4& m, const PointCloud& cloud) {
  const Mat3 r = m.rotation_block();
  const Vec3 t = m.translation();
  PointCloud out;
  out.frame = cloud.frame;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(r * p + t);
  return out;
}

std::string format_pose(const RigidTransform& t, char sep) {
  const double v[7] = {t.q().w, t.q().x, t.q().y, t.q().z, t.t()[0], t.t()[1], t.t()[2]};
  std::string out;
  char buf[32];
  for (int i = 0; i < 7; ++i) {
    if (i) out.push_back(sep);
    std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
    out += buf;
  }
  return out;
}

RigidTransform parse_pose(std::string_view text) {
  double v[7];
  std::size_t pos = 0;
  for (int i = 0; i < 7; ++i) {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
    const auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + text.size(), v[i]);
    if (ec != std::errc{}) throw Error(ErrorCode::Format, "malformed pose: '" + std::string(text) + "'");
    pos = static_cast<std::size_t>(ptr - text.data());
  }
  while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
  if (pos != text.size()) throw Error(ErrorCode::Format, "trailing data in pose: '" + std::string(text) + "'");
  return RigidTransform(quat_normalize(v[0], v[1], v[2], v[3]), {v[4], v[5], v[6]});
}

}  // namespace itnet

namespace itnet {

Svd3 svd3(const Mat3& a) {
  Mat3 w = a;
  Mat3 v = Mat3::identity();
  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (int i = 0; i < 3; ++i) {
          alpha += w(i, p) * w(i, p);
          beta += w(i, q) * w(i, q);
          gamma += w(i, p) * w(i, q);
        }
        if (std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int i = 0; i < 3; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::array<int, 3> order{0, 1, 2};
  Vec3 sigma;
  for (int j = 0; j < 3; ++j) sigma[static_cast<std::size_t>(j)] = std::sqrt(w(0, j) * w(0, j) + w(1, j) * w(1, j) + w(2, j) * w(2, j));
  std::sort(order.begin(), order.end(), [&](int x, int y) { return sigma[static_cast<std::size_t>(x)] > sigma[static_cast<std::size_t>(y)]; });

  Svd3 out;
  std::array<Vec3, 3> ucols{};
  const double scale = std::max(sigma[static_cast<std::size_t>(order[0])], 1e-300);
  for (int k = 0; k < 3; ++k) {
    const int j = order[static_cast<std::size_t>(k)];
    const double s = sigma[static_cast<std::size_t>(j)];
    out.s[static_cast<std::size_t>(k)] = s;
    for (int i = 0; i < 3; ++i) out.v(i, k) = v(i, j);
    if (s > 1e-13 * scale) {
      ucols[static_cast<std::size_t>(k)] = {w(0, j) / s, w(1, j) / s, w(2, j) / s};
    } else if (k == 0) {
      ucols[0] = {1, 0, 0};
    } else if (k == 1) {
      const Vec3& u0 = ucols[0];
      const Vec3 c = cross(u0, std::abs(u0[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0});
      ucols[1] = (1.0 / norm(c)) * c;
    } else {
      ucols[2] = cross(ucols[0], ucols[1]);
    }
  }
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 3; ++i) out.u(i, k) = ucols[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
  return out;
}

Mat3 nearest_rotation(const Mat3& a) {
  const Svd3 d = svd3(a);
  const double det = (d.u * d.v.transposed()).determinant();
  const Mat3 fix = Mat3::diag(1.0, 1.0, det < 0.0 ? -1.0 : 1.0);
  return d.u * fix * d.v.transposed();
}

}  // namespace itnet
