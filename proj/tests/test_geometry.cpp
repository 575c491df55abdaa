#include <doctest.h>

#include <cmath>

#include "error.hpp"
#include "geometry.hpp"
#include "helpers.hpp"

using namespace itnet;
using namespace itnet::test;

namespace {

// Independent 4x4 product used as the composition oracle.
Mat4 product(const Mat4& a, const Mat4& b) {
  Mat4 c;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0;
      for (int k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

double orthonormality_residual(const Mat3& r) {
  const Mat3 p = r * r.transposed();
  return frobenius_distance(p, Mat3::identity());
}

}  // namespace

TEST_CASE("quat_normalize") {
  auto q = quat_normalize(2, 0, 0, 0);
  CHECK(q.w == doctest::Approx(1.0));
  q = quat_normalize(0, 0, 0, 3);
  CHECK(q.z == doctest::Approx(1.0));
  q = quat_normalize(1, 1, 1, 1);
  CHECK(q.w == doctest::Approx(0.5));
  CHECK(q.x == doctest::Approx(0.5));
  CHECK(q.y == doctest::Approx(0.5));
  CHECK(q.z == doctest::Approx(0.5));
  CHECK(q.norm() == doctest::Approx(1.0).epsilon(1e-15));
  try {
    quat_normalize(0, 0, 1e-13, 0);
    FAIL("expected DegenerateQuaternion");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateQuaternion);
  }
}

TEST_CASE("quat_to_rotmat examples") {
  CHECK(max_abs_diff(quat_to_rotmat({}), Mat3::identity()) < 1e-15);
  CHECK(max_abs_diff(quat_to_rotmat({0, 0, 0, 1}), Mat3::diag(-1, -1, 1)) < 1e-15);
  const double h = std::sqrt(0.5);
  const Vec3 p = quat_to_rotmat({h, h, 0, 0}) * Vec3{0, 1, 0};
  CHECK(std::abs(p[0]) < 1e-15);
  CHECK(std::abs(p[1]) < 1e-15);
  CHECK(p[2] == doctest::Approx(1.0));
  // Axis-angle oracle on basis vectors.
  CHECK(max_abs_diff(quat_to_rotmat({0, 0, 0, 1}), rz(kPi)) < 1e-15);
}

TEST_CASE("random rotations are orthonormal and double-cover invariant") {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const auto q = random_quat(rng);
    const Mat3 r = quat_to_rotmat(q);
    CHECK_LT(orthonormality_residual(r), 1e-7);
    CHECK_LT(std::abs(r.determinant() - 1.0), 1e-7);
    CHECK_LT(max_abs_diff(r, quat_to_rotmat(-q)), 1e-15);
  }
}

TEST_CASE("rigid_compose matches the matrix product") {
  const RigidTransform a = RigidTransform::from_rotation(rx(kPi / 2), {0, 0, 0});
  const RigidTransform b = rigid_compose(a, a);
  CHECK(max_abs_diff(b.rotation(), rx(kPi)) < 1e-12);

  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto x = random_transform(rng), y = random_transform(rng), z = random_transform(rng);
    const auto xy = rigid_compose(x, y);
    CHECK_LT(max_abs_diff(xy.matrix(), product(x.matrix(), y.matrix())), 1e-9);
    CHECK_LT(std::abs(xy.q().norm() - 1.0), 1e-14);
    CHECK_LT(max_abs_diff(rigid_compose(xy, z).matrix(), rigid_compose(x, rigid_compose(y, z)).matrix()), 1e-8);
    CHECK_LT(max_abs_diff(rigid_compose(x, RigidTransform::identity()).matrix(), x.matrix()), 1e-15);
  }
}

TEST_CASE("rigid_inverse") {
  CHECK(max_abs_diff(rigid_inverse(RigidTransform::identity()).matrix(), Mat4::identity()) < 1e-15);
  const auto t = rigid_inverse(RigidTransform::translation({1, -2, 3}));
  CHECK(t.t()[0] == doctest::Approx(-1));
  CHECK(t.t()[1] == doctest::Approx(2));
  CHECK(t.t()[2] == doctest::Approx(-3));
  const double h = std::sqrt(0.5);
  const RigidTransform u({h, 0, 0, h}, {1, 2, 3});
  CHECK(max_abs_diff(product(u.matrix(), rigid_inverse(u).matrix()), Mat4::identity()) < 1e-9);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const auto x = random_transform(rng, 5.0);
    CHECK_LT(max_abs_diff(rigid_compose(x, rigid_inverse(x)).matrix(), Mat4::identity()), 1e-9);
  }
}

TEST_CASE("transform_points") {
  PointCloud c;
  c.points = {{1, 0, 0}};
  auto out = transform_points(RigidTransform::from_rotation(rz(kPi / 2), {0, 0, 0}), c);
  CHECK(std::abs(out.points[0][0]) < 1e-15);
  CHECK(out.points[0][1] == doctest::Approx(1.0));
  c.points = {{0, 0, 0}};
  out = transform_points(RigidTransform::translation({1, 0, 0}), c);
  CHECK(out.points[0][0] == 1.0);

  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_transform(rng), b = random_transform(rng);
    const auto x = random_cloud(rng, 16);
    const auto lhs = transform_points(rigid_compose(a, b), x);
    const auto rhs = transform_points(a, transform_points(b, x));
    REQUIRE(lhs.size() == x.size());
    for (std::size_t k = 0; k < x.size(); ++k)
      for (std::size_t d = 0; d < 3; ++d) CHECK_LT(std::abs(lhs.points[k][d] - rhs.points[k][d]), 1e-7);
  }

  AffineTransform a;
  a.a = Mat3::diag(2, 3, 4);
  c.points = {{1, 1, 1}};
  out = transform_points(a, c);
  CHECK(out.points[0] == Vec3{2, 3, 4});
}

TEST_CASE("rotation_to_axis_angle") {
  CHECK(rotation_to_axis_angle(Mat3::identity()).angle == 0.0);
  const auto half = rotation_to_axis_angle(Mat3::diag(-1, -1, 1));
  CHECK(half.angle == doctest::Approx(kPi));
  CHECK(std::abs(std::abs(half.axis[2]) - 1.0) < 1e-12);
  CHECK(std::abs(rotation_to_axis_angle(rz(deg(30))).angle - kPi / 6) < 1e-9);

  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
    const double angle = rng.uniform(0.0, kPi);
    const auto q = quat_from_axis_angle(axis, angle);
    CHECK_LT(std::abs(rotation_to_axis_angle(quat_to_rotmat(q)).angle - angle), 1e-6);
    CHECK_LT(std::abs(rotation_to_axis_angle(quat_to_rotmat(-q)).angle - angle), 1e-6);
  }

  try {
    rotation_to_axis_angle(Mat3::diag(1, 1, 1.1));
    FAIL("expected NotARotation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotARotation);
  }
  try {
    rotation_to_axis_angle(Mat3::diag(1, 1, -1));
    FAIL("expected NotARotation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotARotation);
  }
}

TEST_CASE("rotmat_to_quat round trip near pi") {
  Rng rng(6);
  for (int i = 0; i < 500; ++i) {
    const Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
    const double angle = kPi - rng.uniform(0.0, 1e-6);
    const Mat3 r = rotation_from_axis_angle(axis, angle);
    const auto q = rotmat_to_quat(r);
    CHECK(q.w >= 0.0);
    CHECK_LT(max_abs_diff(quat_to_rotmat(q), r), 1e-12);
  }
}

TEST_CASE("svd3 and nearest_rotation") {
  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    Mat3 a;
    for (auto& v : a.m) v = rng.normal();
    const auto s = svd3(a);
    CHECK(s.s[0] >= s.s[1]);
    CHECK(s.s[1] >= s.s[2]);
    CHECK_LT(orthonormality_residual(s.u), 1e-10);
    CHECK_LT(orthonormality_residual(s.v), 1e-10);
    const Mat3 back = s.u * Mat3::diag(s.s[0], s.s[1], s.s[2]) * s.v.transposed();
    CHECK_LT(max_abs_diff(back, a), 1e-10);
    const Mat3 r = nearest_rotation(a);
    CHECK_LT(orthonormality_residual(r), 1e-10);
    CHECK(r.determinant() == doctest::Approx(1.0));
  }
}

TEST_CASE("pose text round trip") {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const auto t = random_transform(rng);
    const auto back = parse_pose(format_pose(t));
    CHECK_LT(max_abs_diff(back.matrix(), t.matrix()), 1e-15);
    CHECK(back.t() == t.t());
  }
  CHECK_THROWS_AS(parse_pose("1 0 0"), Error);
  CHECK_THROWS_AS(parse_pose("1 0 0 0 a 0 0"), Error);
}
