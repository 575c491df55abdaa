#include <doctest.h>

#include <cmath>
#include <sstream>

#include "error.hpp"
#include "helpers.hpp"
#include "metrics.hpp"
#include "regressor.hpp"

using namespace itnet;
using namespace itnet::test;

namespace {

Mat4 rot4(const Mat3& r) { return RigidTransform::from_rotation(r, {0, 0, 0}).matrix(); }

}  // namespace

TEST_CASE("ploss hand evaluations") {
  PointCloud origin;
  origin.points = {{0, 0, 0}};
  CHECK(ploss(RigidTransform::translation({1, 0, 0}).matrix(), Mat4::identity(), origin) == 1.0);

  PointCloud x;
  x.points = {{1, 0, 0}};
  CHECK(ploss(rot4(rz(kPi)), Mat4::identity(), x) == doctest::Approx(4.0).epsilon(1e-14));

  Rng rng(1);
  const auto t = random_transform(rng);
  const auto cloud = random_cloud(rng, 30);
  CHECK(ploss(t.matrix(), t.matrix(), cloud) == 0.0);

  // The graph version agrees with the plain one and is symmetric.
  const auto u = random_transform(rng);
  ag::Graph g;
  ag::Tensor pts(30, 3), a(1, 16), b(1, 16);
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t k = 0; k < 3; ++k) pts(i, k) = cloud.points[i][k];
  const Mat4 tm = t.matrix(), um = u.matrix();
  std::copy(tm.m.begin(), tm.m.end(), a.data());
  std::copy(um.m.begin(), um.m.end(), b.data());
  const double v = ploss(g.constant(a), g.constant(b), g.constant(pts)).value().item();
  CHECK(v == doctest::Approx(ploss(tm, um, cloud)).epsilon(1e-12));
  CHECK(ploss(um, tm, cloud) == doctest::Approx(ploss(tm, um, cloud)).epsilon(1e-12));
}

TEST_CASE("ploss vanishes only for equal transforms on independent points") {
  PointCloud x;
  x.points = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_transform(rng), b = random_transform(rng);
    CHECK(ploss(a.matrix(), b.matrix(), x) > 0.0);
  }
}

TEST_CASE("ploss gradient through assemble_rigid") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(10 + seed);
    ag::ParamStore s;
    ag::Tensor raw(2, 7);
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = rng.normal();
    s.set("raw", raw);
    ag::Tensor truth(2, 16), pts(2 * 5, 3);
    for (std::size_t b = 0; b < 2; ++b) {
      const Mat4 m = random_transform(rng).matrix();
      std::copy(m.m.begin(), m.m.end(), &truth(b, 0));
    }
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = rng.uniform(-1, 1);
    const auto build = [&](ag::Graph& g) {
      return ploss(assemble_rigid(g.param(s, "raw")), g.constant(truth), g.constant(pts));
    };
    CHECK_LT(ag::finite_difference_check(build, s, 1e-6), 1e-4);
  }
}

TEST_CASE("rotation and translation trade off at comparable scale") {
  // Unit RMS radius cloud.
  Rng rng(3);
  PointCloud x = random_cloud(rng, 500);
  double ss = 0;
  for (const auto& p : x.points) ss += dot(p, p);
  const double s = 1.0 / std::sqrt(ss / static_cast<double>(x.size()));
  for (auto& p : x.points) p = s * p;
  const double rot = ploss(rot4(rotation_from_axis_angle({0.3, -0.5, 0.8}, deg(2))), Mat4::identity(), x);
  const double trans = ploss(RigidTransform::translation({0.035, 0, 0}).matrix(), Mat4::identity(), x);
  CHECK(rot / trans < 10.0);
  CHECK(trans / rot < 10.0);
}

TEST_CASE("rotation_error_deg") {
  CHECK(rotation_error_deg(Mat3::identity(), Mat3::identity()) == 0.0);
  CHECK(std::abs(rotation_error_deg(Mat3::identity(), rz(deg(30))) - 30.0) < 1e-6);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const auto q = random_quat(rng), p = random_quat(rng);
    const double e = rotation_error_deg(quat_to_rotmat(q), quat_to_rotmat(p));
    CHECK(e >= 0.0);
    CHECK(e <= 180.0);
    CHECK(std::abs(e - rotation_error_deg(quat_to_rotmat(-q), quat_to_rotmat(p))) < 1e-9);
  }
  CHECK_THROWS_AS(rotation_error_deg(Mat3::diag(2, 1, 1), Mat3::identity()), Error);
}

TEST_CASE("pose_accuracy") {
  std::vector<PoseError> zero(5);
  CHECK(pose_accuracy(zero, 10, 0.1) == 100.0);
  std::vector<PoseError> e{{1, 0.01}, {9.9, 0.09}, {10.5, 0.01}, {2, 0.05}};
  CHECK(pose_accuracy(e, 10, 0.1) == 75.0);
  CHECK(pose_accuracy(e, 5, 0.1) == 50.0);
  CHECK(pose_accuracy(e, 10, 0.06) == 50.0);
  CHECK(pose_accuracy(e, 10, 0.05) == 25.0);
  CHECK_THROWS_AS(pose_accuracy(std::vector<PoseError>{}, 10, 0.1), Error);

  Rng rng(5);
  std::vector<PoseError> r;
  for (int i = 0; i < 300; ++i) r.push_back({rng.uniform(0, 30), rng.uniform(0, 0.3)});
  double prev = 101.0;
  for (double th = 30; th >= 0; th -= 1.0) {
    const double a = pose_accuracy(r, th, 0.2);
    CHECK(a <= prev);
    prev = a;
  }
}

TEST_CASE("pose_error") {
  const RigidTransform truth(quat_from_axis_angle({0, 0, 1}, deg(20)), {0.1, 0.2, 0.3});
  const auto e = pose_error(truth.matrix(), truth);
  CHECK(e.rotation_deg < 1e-6);
  CHECK(e.translation == 0.0);
  const auto f = pose_error(RigidTransform::translation({0.1, 0.2, 0.0}).matrix(), truth);
  CHECK(f.rotation_deg == doctest::Approx(20.0));
  CHECK(f.translation == doctest::Approx(0.3));
}

TEST_CASE("error_cdf") {
  auto one = error_cdf({2.5});
  REQUIRE(one.size() == 1);
  CHECK(one[0].value == 2.5);
  CHECK(one[0].fraction == 1.0);
  const auto c = error_cdf({4, 1, 3, 2});
  CHECK(cdf_at(c, 2.5) == 0.5);
  CHECK(cdf_at(c, 0.5) == 0.0);
  CHECK(cdf_at(c, 4.0) == 1.0);

  Rng rng(6);
  std::vector<double> v;
  for (int i = 0; i < 1000; ++i) v.push_back(rng.normal());
  const auto big = error_cdf(v);
  for (std::size_t i = 1; i < big.size(); ++i) {
    CHECK(big[i].value >= big[i - 1].value);
    CHECK(big[i].fraction >= big[i - 1].fraction);
  }
  CHECK(big.back().fraction == 1.0);
}

TEST_CASE("export_pose_clusters") {
  const RigidTransform truth(quat_from_axis_angle({1, 2, 3}, 0.7), {0.1, 0, 0});
  // Perfect estimate at iteration 1, off by Rz(pi/2) at iteration 2.
  std::vector<std::vector<Mat4>> est{{truth.matrix()},
                                     {rigid_compose(RigidTransform::from_rotation(rz(kPi / 2), {0, 0, 0}), truth)
                                          .matrix()}};
  const auto at1 = export_pose_clusters(est, {truth}, 1);
  REQUIRE(at1.size() == 1);
  CHECK(norm(at1[0]) < 1e-7);
  const auto at2 = export_pose_clusters(est, {truth}, 2);
  CHECK(std::abs(at2[0][0]) < 1e-6);
  CHECK(std::abs(at2[0][1]) < 1e-6);
  CHECK(std::abs(at2[0][2] - kPi / 2) < 1e-6);
  // k = 0: the untransformed input, i.e. the inverse truth rotation.
  const auto at0 = export_pose_clusters(est, {truth}, 0);
  CHECK(std::abs(norm(at0[0]) - 0.7) < 1e-9);
}

TEST_CASE("csv renderers") {
  std::vector<PoseError> e{{1.0, 0.01}, {20.0, 0.5}};
  const std::string report = eval_report_csv({"a", "b"}, e, 10, 0.1);
  std::istringstream in(report);
  std::string header, row1, row2;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row2);
  CHECK(header == "id,rot_err_deg,trans_err,hit");
  CHECK(row1.rfind("a,", 0) == 0);
  CHECK(row1.back() == '1');
  CHECK(row2.back() == '0');
  const std::string clusters = clusters_csv(std::vector<Vec3>{{1, 2, 3}});
  CHECK(clusters.rfind("ax,ay,az\n", 0) == 0);
}
