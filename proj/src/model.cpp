#include "model.hpp"

#include <algorithm>

#include "error.hpp"

namespace itnet {

const char* task_name(Task t) { return t == Task::Pose ? "pose" : "classify"; }

Task parse_task(const std::string& s) {
  if (s == "pose") return Task::Pose;
  if (s == "classify") return Task::Classify;
  throw Error(ErrorCode::Config, "unknown task '" + s + "' (pose | classify)");
}

void ModelSpec::validate() const {
  if (task == Task::Pose) {
    if (!has_transformer) throw Error(ErrorCode::Config, "the pose task needs a transformer");
    if (unfold.variant != Variant::Rigid) throw Error(ErrorCode::Config, "the pose task needs the rigid variant");
  } else if (num_classes < 2) {
    throw Error(ErrorCode::Config, "classification needs at least 2 classes");
  }
  if (has_transformer && (unfold.train_iterations < 1 || unfold.eval_iterations < 1))
    throw Error(ErrorCode::Config, "iteration counts must be >= 1");
}

void init_model(ag::ParamStore& store, const ModelSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.has_transformer) init_transformer(store, spec.transformer_arch, spec.unfold, kTransformerPrefix, rng);
  if (spec.task == Task::Classify) {
    PointNetArch arch = spec.classifier_arch;
    arch.output_dim = static_cast<std::size_t>(spec.num_classes);
    init_pointnet(store, arch, kClassifierPrefix, FinalLayerInit::Logits, rng);
  }
}

ModelOutputs model_forward(ag::Graph& g, const ag::ParamStore& store, const ModelSpec& spec, ag::Var points,
                           std::size_t groups, int iterations) {
  ModelOutputs out;
  out.transformed = points;
  if (spec.has_transformer) {
    IterativeTransformer tf(g, store, spec.transformer_arch, spec.unfold, kTransformerPrefix, points, groups);
    for (int i = 0; i < iterations; ++i) tf.step();
    out.trace = tf.trace();
    out.transformed = tf.transformed_points();
  }
  if (spec.task == Task::Classify) {
    PointNetArch arch = spec.classifier_arch;
    arch.output_dim = static_cast<std::size_t>(spec.num_classes);
    out.logits = classify(g, store, arch, kClassifierPrefix, out.transformed, groups);
  }
  return out;
}

ag::Tensor stack_points(const std::vector<const PointCloud*>& clouds) {
  if (clouds.empty()) throw Error(ErrorCode::ShapeMismatch, "no clouds to stack");
  const std::size_t n = clouds.front()->size();
  if (n == 0) throw Error(ErrorCode::ShapeMismatch, "empty point cloud");
  ag::Tensor out(clouds.size() * n, 3);
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    if (clouds[b]->size() != n) throw Error(ErrorCode::ShapeMismatch, "batched clouds must have equal point counts");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < 3; ++k) out(b * n + i, k) = clouds[b]->points[i][k];
  }
  return out;
}

namespace {

std::vector<int> argmax_rows(const ag::Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace

ClassifyAnytime classify_anytime(const std::vector<PointCloud>& clouds, const ag::ParamStore& store,
                                 const ModelSpec& spec, int max_iters, std::size_t chunk) {
  if (spec.task != Task::Classify) throw Error(ErrorCode::Config, "classify_anytime needs a classification model");
  if (clouds.empty()) throw Error(ErrorCode::EmptyEvaluation, "no clouds to classify");
  const int kmax = spec.has_transformer ? max_iters : 0;
  if (kmax < 0) throw Error(ErrorCode::Config, "max_iters must be >= 0");
  ClassifyAnytime out;
  out.predictions.assign(static_cast<std::size_t>(kmax) + 1, {});
  out.estimates.assign(static_cast<std::size_t>(kmax), {});
  PointNetArch cls_arch = spec.classifier_arch;
  cls_arch.output_dim = static_cast<std::size_t>(spec.num_classes);
  chunk = std::max<std::size_t>(1, chunk);
  for (std::size_t begin = 0; begin < clouds.size(); begin += chunk) {
    const std::size_t end = std::min(clouds.size(), begin + chunk);
    std::vector<const PointCloud*> part;
    for (std::size_t i = begin; i < end; ++i) part.push_back(&clouds[i]);
    ag::Graph g(ag::Mode::Eval);
    ag::Var points = g.constant(stack_points(part));
    auto predict = [&](ag::Var pts, int k) {
      const auto labels = argmax_rows(classify(g, store, cls_arch, kClassifierPrefix, pts, part.size()).value());
      auto& dst = out.predictions[static_cast<std::size_t>(k)];
      dst.insert(dst.end(), labels.begin(), labels.end());
    };
    predict(points, 0);
    if (kmax == 0) continue;
    IterativeTransformer tf(g, store, spec.transformer_arch, spec.unfold, kTransformerPrefix, points, part.size());
    for (int k = 1; k <= kmax; ++k) {
      ag::Var t = tf.step();
      for (std::size_t b = 0; b < part.size(); ++b)
        out.estimates[static_cast<std::size_t>(k - 1)].push_back(row_matrix(t.value(), b));
      predict(tf.transformed_points(), k);
    }
  }
  return out;
}

}  // namespace itnet
