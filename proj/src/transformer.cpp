#include "transformer.hpp"

#include <algorithm>
#include <chrono>

#include "error.hpp"

namespace itnet {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Rigid: return "rigid";
    case Variant::Affine: return "affine";
    case Variant::AffineRegularized: return "affine_regularized";
  }
  return "rigid";
}

Variant parse_variant(const std::string& s) {
  if (s == "rigid") return Variant::Rigid;
  if (s == "affine") return Variant::Affine;
  if (s == "affine_regularized") return Variant::AffineRegularized;
  throw Error(ErrorCode::Config, "unknown variant '" + s + "' (rigid | affine | affine_regularized)");
}

void init_transformer(ag::ParamStore& store, const PointNetArch& arch_in, const UnfoldConfig& cfg,
                      const std::string& prefix, Rng& rng) {
  PointNetArch arch = arch_in;
  arch.output_dim = cfg.output_dim();
  std::vector<std::string> slots{""};
  if (cfg.per_iteration_bn_stats) {
    slots.clear();
    for (int i = 1; i <= cfg.train_iterations; ++i) slots.push_back("@" + std::to_string(i));
  }
  init_pointnet(store, arch, prefix, cfg.identity_init ? FinalLayerInit::Identity : FinalLayerInit::Random, rng,
                slots);
}

IterativeTransformer::IterativeTransformer(ag::Graph& g, const ag::ParamStore& store, const PointNetArch& arch,
                                           const UnfoldConfig& cfg, std::string prefix, ag::Var points,
                                           std::size_t groups, bool retain_clouds)
    : g_(g), store_(store), arch_(arch), cfg_(cfg), prefix_(std::move(prefix)), points_(points),
      groups_(groups), retain_(retain_clouds) {
  arch_.output_dim = cfg_.output_dim();
}

std::string IterativeTransformer::bn_slot(int iteration) const {
  if (!cfg_.per_iteration_bn_stats) return "";
  return "@" + std::to_string(std::min(iteration, cfg_.train_iterations));
}

ag::Var IterativeTransformer::transformed_points() {
  if (trace_.composed.empty()) return points_;
  return ag::transform_points(points_, trace_.composed.back());
}

ag::Var IterativeTransformer::step() {
  const int iteration = iterations() + 1;
  ag::Var input = points_;
  if (!trace_.composed.empty()) {
    input = ag::transform_points(points_, trace_.composed.back());
    if (cfg_.stop_input_gradient) input = ag::stop_gradient(input);
  }
  if (retain_) trace_.clouds.push_back(input);

  ag::Var raw = pose_regress(g_, store_, arch_, prefix_, input, groups_, bn_slot(iteration));
  ag::Var delta;
  try {
    delta = cfg_.variant == Variant::Rigid ? assemble_rigid(raw) : assemble_affine(raw);
  } catch (const Error& e) {
    throw Error(e.code(), "iteration " + std::to_string(iteration) + ": " + e.what());
  }
  ag::Var composed = trace_.composed.empty() ? delta : ag::compose(delta, trace_.composed.back());
  trace_.raw.push_back(raw);
  trace_.deltas.push_back(delta);
  trace_.composed.push_back(composed);
  return composed;
}

IterationTrace itnet_forward(ag::Graph& g, const ag::ParamStore& store, const PointNetArch& arch,
                             const UnfoldConfig& cfg, const std::string& prefix, ag::Var points,
                             std::size_t groups, int iterations, bool retain_clouds) {
  if (iterations < 1) throw Error(ErrorCode::Config, "iteration count must be >= 1");
  IterativeTransformer tf(g, store, arch, cfg, prefix, points, groups, retain_clouds);
  for (int i = 0; i < iterations; ++i) tf.step();
  return tf.trace();
}

ag::Var affine_regularizer(ag::Var raw_affine) { return ag::reduce_mean(ag::orthogonality_residual(raw_affine)); }

Mat4 row_matrix(const ag::Tensor& t, std::size_t row) {
  if (t.cols() != 16) throw Error(ErrorCode::ShapeMismatch, "transform rows must have 16 entries");
  Mat4 m;
  std::copy_n(&t(row, 0), 16, m.m.begin());
  return m;
}

namespace {

ag::Tensor stack_clouds(const std::vector<PointCloud>& clouds) {
  if (clouds.empty()) throw Error(ErrorCode::ShapeMismatch, "no clouds to stack");
  const std::size_t n = clouds.front().size();
  if (n == 0) throw Error(ErrorCode::ShapeMismatch, "empty point cloud");
  ag::Tensor out(clouds.size() * n, 3);
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    if (clouds[b].size() != n)
      throw Error(ErrorCode::ShapeMismatch, "batched clouds must have equal point counts");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < 3; ++k) out(b * n + i, k) = clouds[b].points[i][k];
  }
  return out;
}

}  // namespace

AnytimeResult anytime_infer(const std::vector<PointCloud>& clouds, const ag::ParamStore& store,
                            const PointNetArch& arch, const UnfoldConfig& cfg, const std::string& prefix,
                            int max_iters, std::size_t chunk) {
  if (max_iters < 1) throw Error(ErrorCode::Config, "max_iters must be >= 1");
  if (clouds.empty()) throw Error(ErrorCode::EmptyEvaluation, "no clouds to infer");
  chunk = std::max<std::size_t>(1, chunk);
  AnytimeResult out;
  out.estimates.assign(static_cast<std::size_t>(max_iters), {});
  out.iteration_ms.assign(static_cast<std::size_t>(max_iters), 0.0);
  // Eval-mode rows are independent, so chunking does not change the estimates.
  for (std::size_t begin = 0; begin < clouds.size(); begin += chunk) {
    const std::size_t end = std::min(clouds.size(), begin + chunk);
    const std::vector<PointCloud> part(clouds.begin() + static_cast<std::ptrdiff_t>(begin),
                                       clouds.begin() + static_cast<std::ptrdiff_t>(end));
    ag::Graph g(ag::Mode::Eval);
    ag::Var points = g.constant(stack_clouds(part));
    IterativeTransformer tf(g, store, arch, cfg, prefix, points, part.size());
    for (int k = 0; k < max_iters; ++k) {
      const auto start = std::chrono::steady_clock::now();
      ag::Var t = tf.step();
      const auto stop = std::chrono::steady_clock::now();
      out.iteration_ms[static_cast<std::size_t>(k)] += std::chrono::duration<double, std::milli>(stop - start).count();
      auto& est = out.estimates[static_cast<std::size_t>(k)];
      for (std::size_t b = 0; b < part.size(); ++b) est.push_back(row_matrix(t.value(), b));
    }
  }
  return out;
}

}  // namespace itnet
