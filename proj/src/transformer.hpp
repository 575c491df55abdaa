#pragma once

// Iterative transformer: one shared regressor applied repeatedly. Iteration i
// regresses a transform on the input moved by the running estimate T_{i-1},
// and T_i = dT_i * T_{i-1}, so T_n maps the input frame to the canonical frame.

#include <string>
#include <vector>

#include "autograd.hpp"
#include "geometry.hpp"
#include "regressor.hpp"

namespace itnet {

enum class Variant { Rigid, Affine, AffineRegularized };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& s);

struct UnfoldConfig {
  int train_iterations = 1;
  int eval_iterations = 1;
  bool stop_input_gradient = true;
  bool identity_init = true;
  Variant variant = Variant::Rigid;
  /// One set of batch-norm running statistics per unfolded iteration instead
  /// of a single shared set.
  bool per_iteration_bn_stats = false;

  std::size_t output_dim() const { return variant == Variant::Rigid ? 7 : 9; }
};

struct IterationTrace {
  std::vector<ag::Var> raw;       // B x M regressor outputs
  std::vector<ag::Var> deltas;    // B x 16
  std::vector<ag::Var> composed;  // B x 16, T_1..T_n
  std::vector<ag::Var> clouds;    // inputs seen by each iteration (when retained)
};

/// Parameter names of the regressor live under `prefix`.
void init_transformer(ag::ParamStore& store, const PointNetArch& arch, const UnfoldConfig& cfg,
                      const std::string& prefix, Rng& rng);

/// Builds the unfolded graph incrementally; step() appends one iteration.
class IterativeTransformer {
 public:
  IterativeTransformer(ag::Graph& g, const ag::ParamStore& store, const PointNetArch& arch,
                       const UnfoldConfig& cfg, std::string prefix, ag::Var points, std::size_t groups,
                       bool retain_clouds = false);

  /// Runs one more regressor pass and returns the new composed transform.
  ag::Var step();
  int iterations() const { return static_cast<int>(trace_.composed.size()); }
  const IterationTrace& trace() const { return trace_; }
  /// Input cloud moved by the latest composed transform.
  ag::Var transformed_points();

 private:
  std::string bn_slot(int iteration) const;

  ag::Graph& g_;
  const ag::ParamStore& store_;
  PointNetArch arch_;
  UnfoldConfig cfg_;
  std::string prefix_;
  ag::Var points_;
  std::size_t groups_;
  bool retain_;
  IterationTrace trace_;
};

IterationTrace itnet_forward(ag::Graph& g, const ag::ParamStore& store, const PointNetArch& arch,
                             const UnfoldConfig& cfg, const std::string& prefix, ag::Var points,
                             std::size_t groups, int iterations, bool retain_clouds = false);

/// Mean over rows of ||A A^T - I||_F for B x 9 raw affine outputs.
ag::Var affine_regularizer(ag::Var raw_affine);

/// Row b of a B x 16 tensor as a 4x4 matrix.
Mat4 row_matrix(const ag::Tensor& t, std::size_t row);

struct AnytimeResult {
  /// estimates[k][b]: composed transform after k+1 iterations for cloud b.
  std::vector<std::vector<Mat4>> estimates;
  std::vector<double> iteration_ms;
};

/// Eval-mode streaming inference over equally sized clouds, `chunk` clouds
/// per graph. iteration_ms sums the per-iteration time over chunks.
AnytimeResult anytime_infer(const std::vector<PointCloud>& clouds, const ag::ParamStore& store,
                            const PointNetArch& arch, const UnfoldConfig& cfg, const std::string& prefix,
                            int max_iters, std::size_t chunk = 32);

}  // namespace itnet
