#pragma once

// A trained model: an optional iterative transformer followed, for the
// classification task, by a PointNet classifier on the transformed cloud.

#include <string>
#include <vector>

#include "autograd.hpp"
#include "geometry.hpp"
#include "regressor.hpp"
#include "transformer.hpp"

namespace itnet {

enum class Task { Pose, Classify };
const char* task_name(Task t);
Task parse_task(const std::string& s);

inline constexpr const char* kTransformerPrefix = "tnet";
inline constexpr const char* kClassifierPrefix = "cls";

struct ModelSpec {
  Task task = Task::Pose;
  /// Always true for the pose task; false gives the plain PointNet classifier.
  bool has_transformer = true;
  PointNetArch transformer_arch;
  UnfoldConfig unfold;
  PointNetArch classifier_arch;
  int num_classes = 0;

  void validate() const;
};

void init_model(ag::ParamStore& store, const ModelSpec& spec, Rng& rng);

struct ModelOutputs {
  IterationTrace trace;  // empty without a transformer
  ag::Var transformed;   // input moved by T_n (the input itself without a transformer)
  ag::Var logits;        // classification only
};

ModelOutputs model_forward(ag::Graph& g, const ag::ParamStore& store, const ModelSpec& spec, ag::Var points,
                           std::size_t groups, int iterations);

struct ClassifyAnytime {
  /// predictions[k][b] after k transformer iterations, k = 0..max_iters
  /// (only k = 0 without a transformer).
  std::vector<std::vector<int>> predictions;
  /// Transformer estimates, AnytimeResult layout.
  std::vector<std::vector<Mat4>> estimates;
};

ClassifyAnytime classify_anytime(const std::vector<PointCloud>& clouds, const ag::ParamStore& store,
                                 const ModelSpec& spec, int max_iters, std::size_t chunk = 32);

ag::Tensor stack_points(const std::vector<const PointCloud*>& clouds);

}  // namespace itnet
