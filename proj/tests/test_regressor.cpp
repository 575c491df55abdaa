#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "error.hpp"
#include "helpers.hpp"
#include "model.hpp"
#include "regressor.hpp"

using namespace itnet;
using namespace itnet::ag;
using namespace itnet::test;

namespace {

PointNetArch small_arch(std::size_t out) {
  PointNetArch a;
  a.per_point_widths = {16, 24, 48};
  a.global_widths = {32, 16};
  a.output_dim = out;
  return a;
}

Tensor cloud_tensor(Rng& rng, std::size_t rows) {
  Tensor t(rows, 3);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1, 1);
  return t;
}

/// Eval-mode statistics that are not the identity map, so permutation tests
/// exercise the normalization too.
void perturb_running_stats(ParamStore& s, Rng& rng) {
  for (auto& [name, entry] : s.entries()) {
    if (entry.trainable) continue;
    Tensor& v = s.value(name);
    const bool is_var = name.find("var") != std::string::npos;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = is_var ? 0.5 + rng.uniform() : 0.1 * rng.normal();
  }
}

}  // namespace

TEST_CASE("identity initialization emits the identity transform exactly") {
  Rng rng(1);
  ParamStore s;
  const auto arch = small_arch(7);
  init_pointnet(s, arch, "r", FinalLayerInit::Identity, rng);
  for (Mode mode : {Mode::Eval, Mode::Train}) {
    Graph g(mode);
    Var raw = pose_regress(g, s, arch, "r", g.constant(cloud_tensor(rng, 3 * 20)), 3);
    REQUIRE(raw.rows() == 3);
    REQUIRE(raw.cols() == 7);
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t k = 0; k < 7; ++k) CHECK(raw.value()(b, k) == (k == 0 ? 1.0 : 0.0));
  }
  CHECK(identity_output(7) == std::vector<double>{1, 0, 0, 0, 0, 0, 0});
  CHECK(identity_output(9) == std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
}

TEST_CASE("affine head has nine outputs") {
  Rng rng(2);
  ParamStore s;
  const auto arch = small_arch(9);
  init_pointnet(s, arch, "r", FinalLayerInit::Identity, rng);
  Graph g;
  Var raw = pose_regress(g, s, arch, "r", g.constant(cloud_tensor(rng, 2 * 10)), 2);
  CHECK(raw.cols() == 9);
  CHECK(raw.value()(1, 4) == 1.0);
}

TEST_CASE("both heads are point-permutation invariant") {
  Rng rng(3);
  for (auto init : {FinalLayerInit::Random, FinalLayerInit::Logits}) {
    ParamStore s;
    const auto arch = small_arch(init == FinalLayerInit::Random ? 7 : 5);
    init_pointnet(s, arch, "r", init, rng);
    perturb_running_stats(s, rng);
    const std::size_t n = 50;
    const Tensor x = cloud_tensor(rng, n);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm.begin(), perm.end());
    Tensor xp(n, 3);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < 3; ++d) xp(i, d) = x(perm[i], d);
    Graph g;
    const Tensor a = pointnet_forward(g, s, arch, "r", g.constant(x), 1).value();
    const Tensor b = pointnet_forward(g, s, arch, "r", g.constant(xp), 1).value();
    REQUIRE(a.cols() == arch.output_dim);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) < 1e-9);
  }
}

TEST_CASE("assemble_rigid") {
  Graph g;
  Var t = assemble_rigid(g.constant(Tensor(2, 7, {1, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0, 1, 2, 3})));
  REQUIRE(t.cols() == 16);
  const Mat4 a = row_matrix(t.value(), 0);
  CHECK(max_abs_diff(a, Mat4::identity()) == 0.0);
  const Mat4 b = row_matrix(t.value(), 1);
  CHECK(max_abs_diff(b.rotation_block(), Mat3::identity()) == 0.0);
  CHECK(b.translation() == Vec3{1, 2, 3});
  CHECK(b(3, 3) == 1.0);
  CHECK(b(3, 0) == 0.0);

  try {
    assemble_rigid(g.constant(Tensor(2, 7, {1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 2, 3})));
    FAIL("expected DegenerateQuaternion");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateQuaternion);
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }

  // The assembled rotation matches the geometry module's conversion.
  Rng rng(4);
  Tensor raw(1, 7);
  for (std::size_t i = 0; i < 7; ++i) raw[i] = rng.normal();
  Graph h;
  const Mat4 m = row_matrix(assemble_rigid(h.constant(raw)).value(), 0);
  const Mat3 r = quat_to_rotmat(quat_normalize(raw[0], raw[1], raw[2], raw[3]));
  CHECK(max_abs_diff(m.rotation_block(), r) < 1e-14);
}

TEST_CASE("assemble_rigid gradient") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    ParamStore s;
    Tensor raw(3, 7);
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = rng.normal();
    s.set("raw", raw);
    Tensor w(3, 16);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal();
    const auto build = [&](Graph& g) {
      return reduce_mean(mul(assemble_rigid(g.param(s, "raw")), g.constant(w)));
    };
    CHECK_LT(finite_difference_check(build, s, 1e-6), 1e-4);
  }
}

TEST_CASE("assemble_affine") {
  Graph g;
  Var id = assemble_affine(g.constant(Tensor(1, 9, identity_output(9))));
  CHECK(max_abs_diff(row_matrix(id.value(), 0), Mat4::identity()) == 0.0);
  Var zero = assemble_affine(g.constant(Tensor(1, 9, 0.0)));
  const Mat4 z = row_matrix(zero.value(), 0);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) CHECK(z(r, c) == 0.0);
  CHECK(z(3, 3) == 1.0);

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor raw(2, 9);
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = rng.normal();
    const Tensor out = assemble_affine(g.constant(raw)).value();
    for (std::size_t b = 0; b < 2; ++b) {
      const Mat4 m = row_matrix(out, b);
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) CHECK(m(r, c) == raw(b, static_cast<std::size_t>(3 * r + c)));
        CHECK(m(r, 3) == 0.0);
      }
    }
  }
}

TEST_CASE("untrained classifier is near-uniform") {
  const int classes = 6;
  Rng rng(6);
  double total = 0.0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    ParamStore s;
    auto arch = small_arch(classes);
    init_pointnet(s, arch, "c", FinalLayerInit::Logits, rng);
    Graph g;
    Var logits = classify(g, s, arch, "c", g.constant(cloud_tensor(rng, 4 * 32)), 4);
    REQUIRE(logits.cols() == static_cast<std::size_t>(classes));
    const std::vector<int> labels{0, 1, 2, 3};
    total += softmax_cross_entropy(logits, labels).value().item();
  }
  const double mean = total / trials;
  CHECK(std::abs(mean - std::log(classes)) < 0.1 * std::log(classes));
}

TEST_CASE("width multiplier scales hidden widths") {
  PointNetArch a;
  a.width_multiplier = 0.25;
  CHECK(a.hidden_widths() == std::vector<std::size_t>{16, 32, 256, 128, 64});
  CHECK(a.pooled_width() == 256);
}
