#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "error.hpp"
#include "helpers.hpp"
#include "icp.hpp"
#include "metrics.hpp"
#include "scanner.hpp"

using namespace itnet;
using namespace itnet::test;

namespace {

std::pair<std::size_t, double> brute_nearest(const Vec3& q, const PointCloud& c) {
  std::size_t best = 0;
  double bd = INFINITY;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Vec3 d = c.points[i] - q;
    const double s = dot(d, d);
    if (s < bd) {
      bd = s;
      best = i;
    }
  }
  return {best, bd};
}

double rot_err(const RigidTransform& a, const RigidTransform& b) {
  return rotation_error_deg(a.rotation(), b.rotation());
}

}  // namespace

TEST_CASE("kd-tree nearest neighbours match brute force") {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto target = random_cloud(rng, 200);
    const auto source = random_cloud(rng, 200, 1.5);
    const auto nn = nearest_neighbors(source, target);
    REQUIRE(nn.size() == source.size());
    for (std::size_t i = 0; i < source.size(); ++i) {
      const auto [idx, d2] = brute_nearest(source.points[i], target);
      CHECK(nn[i].source == i);
      CHECK(nn[i].target == idx);
      CHECK(nn[i].distance == doctest::Approx(std::sqrt(d2)).epsilon(1e-14));
    }
  }
  // Identical clouds pair with themselves.
  const auto c = random_cloud(rng, 50);
  for (const auto& m : nearest_neighbors(c, c)) {
    CHECK(m.target == m.source);
    CHECK(m.distance == 0.0);
  }
  // Far-away query still resolves.
  KdTree tree(c.points);
  const auto hit = tree.nearest({100, 100, 100});
  CHECK(std::isfinite(hit.squared_distance));
  // Ties resolve to the lowest index.
  KdTree dup(std::vector<Vec3>{{1, 0, 0}, {0, 0, 0}, {1, 0, 0}, {1, 0, 0}});
  CHECK(dup.nearest({1, 0, 0}).index == 0);
}

TEST_CASE("best_rigid_fit") {
  Rng rng(2);
  const auto target = random_cloud(rng, 40);
  // Aligned input -> identity.
  const auto id = best_rigid_fit(target.points, target.points);
  CHECK(max_abs_diff(id.matrix(), Mat4::identity()) < 1e-12);

  // source = Rz(40) target + (0.1, 0, 0): the fit source -> target is the inverse.
  const RigidTransform forward = RigidTransform::from_rotation(rz(deg(40)), {0.1, 0, 0});
  const auto source = transform_points(forward, target);
  const auto fit = best_rigid_fit(source.points, target.points);
  CHECK(max_abs_diff(fit.matrix(), rigid_inverse(forward).matrix()) < 1e-9);

  // Order invariance.
  std::vector<std::size_t> perm(40);
  for (std::size_t i = 0; i < 40; ++i) perm[i] = i;
  rng.shuffle(perm.begin(), perm.end());
  std::vector<Vec3> ps, pt;
  for (auto i : perm) {
    ps.push_back(source.points[i]);
    pt.push_back(target.points[i]);
  }
  CHECK(max_abs_diff(best_rigid_fit(ps, pt).matrix(), fit.matrix()) < 1e-12);

  // Mirrored correspondences: the unconstrained optimum is a reflection.
  std::vector<Vec3> mirrored;
  for (const auto& p : target.points) mirrored.push_back({-p[0], p[1], p[2]});
  const auto proper = best_rigid_fit(target.points, mirrored);
  CHECK(proper.rotation().determinant() == doctest::Approx(1.0).epsilon(1e-12));

  // Residual never exceeds that of the identity.
  const auto noisy = random_cloud(rng, 40);
  const auto f2 = best_rigid_fit(noisy.points, target.points);
  double r_fit = 0, r_id = 0;
  for (std::size_t i = 0; i < 40; ++i) {
    const Vec3 a = f2.apply(noisy.points[i]) - target.points[i];
    const Vec3 b = noisy.points[i] - target.points[i];
    r_fit += dot(a, a);
    r_id += dot(b, b);
  }
  CHECK(r_fit <= r_id);

  auto degenerate = [](const std::vector<Vec3>& s) {
    try {
      best_rigid_fit(s, s);
      return false;
    } catch (const Error& e) {
      return e.code() == ErrorCode::DegenerateCorrespondences;
    }
  };
  CHECK(degenerate({{0, 0, 0}, {1, 0, 0}}));
  CHECK(degenerate({{0, 0, 0}, {1, 1, 1}, {2, 2, 2}, {3, 3, 3}}));
  CHECK(degenerate({{1, 1, 1}, {1, 1, 1}, {1, 1, 1}}));
}

TEST_CASE("icp on identical clouds stays at the identity") {
  Rng rng(3);
  const auto c = random_cloud(rng, 100);
  const auto r = icp_align(c, c, RigidTransform::identity());
  CHECK(max_abs_diff(r.transform.matrix(), Mat4::identity()) < 1e-9);
  CHECK(r.converged);
}

TEST_CASE("icp converges in at most two iterations on exact correspondences") {
  Rng rng(4);
  const auto target = random_cloud(rng, 80);
  const RigidTransform truth = RigidTransform::from_rotation(rz(deg(3)), {0.01, 0.02, 0});
  const auto source = transform_points(rigid_inverse(truth), target);
  // Initialised at the answer: correspondences are exact from the start.
  const auto r = icp_align(source, target, truth);
  CHECK(r.converged);
  CHECK(r.history.size() <= 2);
}

TEST_CASE("icp recovers a 5 degree perturbation on full overlap") {
  const auto shape = generate_shape(ShapeFamily::Chair, 11, 1024);
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
    const RigidTransform truth(quat_from_axis_angle(axis, deg(5)), {0.02, -0.01, 0.01});
    const auto source = transform_points(rigid_inverse(truth), shape);
    const auto r = icp_align(source, shape, RigidTransform::identity());
    CHECK(rot_err(r.transform, truth) < 0.1);
    // Trimmed mean distance never increases.
    for (std::size_t i = 1; i < r.history.size(); ++i)
      CHECK(r.history[i].trimmed_mean <= r.history[i - 1].trimmed_mean + 1e-12);
  }
}

TEST_CASE("icp from identity fails on a 180 degree rotation") {
  const auto shape = generate_shape(ShapeFamily::Chair, 12, 1024);
  const RigidTransform truth = RigidTransform::from_rotation(ry(kPi), {0, 0, 0});
  const auto source = transform_points(rigid_inverse(truth), shape);
  const auto r = icp_align(source, shape, RigidTransform::identity());
  CHECK(rot_err(r.transform, truth) > 90.0);
}

TEST_CASE("icp config validation and diagnostics") {
  IcpConfig bad;
  bad.trim_fraction = 0.7;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.trim_fraction = 0.1;
  bad.convergence_tol = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  const std::string csv = icp_history_csv({{0.5, 0.6, 10}, {0.25, 0.3, 10}});
  CHECK(csv.rfind("iteration,trimmed_mean,trimmed_rms,inliers\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
