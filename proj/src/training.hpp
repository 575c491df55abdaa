#pragma once

// Optimization: Adam with step-decayed learning rate, optional global-norm
// gradient clipping, and batch-norm running statistics whose decay rises
// linearly from bn_decay_start to bn_decay_end over the run.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "checkpoint.hpp"
#include "geometry.hpp"
#include "io.hpp"
#include "model.hpp"

namespace itnet {

struct TrainConfig {
  ModelSpec model;
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  double lr_initial = 1e-3;
  double lr_decay_factor = 0.7;
  std::size_t lr_decay_every = 100;
  double grad_clip_norm = 30.0;
  /// Clipping is on for classification and off for pose unless forced.
  bool clip_pose_gradients = false;
  double bn_decay_start = 0.5;
  double bn_decay_end = 0.99;
  double reg_weight = 1e-3;
  std::uint64_t seed = 0;

  bool clipping_enabled() const { return model.task == Task::Classify || clip_pose_gradients; }
  void validate() const;
};

/// Named regimes: "paper" (paper-scale schedules) and "desk" (shrunk steps
/// and widths, schedule proportions kept). `train_size` converts the
/// classification epoch count into steps.
TrainConfig preset_config(const std::string& name, Task task, std::size_t train_size);

double learning_rate(const TrainConfig& cfg, std::size_t step);
double bn_decay(const TrainConfig& cfg, std::size_t step);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update; `t` is the 1-based step count. Moments
/// are created on first use. Throws ShapeMismatch.
void adam_step(ag::ParamStore& params, const ag::GradMap& grads, ag::GradMap& m, ag::GradMap& v, std::uint64_t t,
               double lr, const AdamConfig& adam = {});

double global_norm(const ag::GradMap& grads);
/// Rescales to max_norm when the global norm exceeds it; returns the norm
/// before clipping.
double clip_grad_norm(ag::GradMap& grads, double max_norm);

/// running <- decay * running + (1 - decay) * batch, in recording order.
void apply_bn_updates(ag::ParamStore& params, const std::vector<ag::BnStatUpdate>& updates, double decay);

struct TrainSet {
  std::vector<PointCloud> clouds;
  std::vector<Mat4> poses;  // pose task only
  std::vector<int> labels;  // classification only
  int num_classes = 0;
};

/// Classification loads never read the pose column.
TrainSet load_train_set(const std::filesystem::path& manifest, Task task);

struct LogRow {
  std::size_t step;
  double loss;
  double lr;
  double grad_norm;
  double wall_ms;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LogRow> log;
};

/// Deterministic given (data, cfg). NonFiniteGradient names the step.
TrainResult train(const TrainSet& data, const TrainConfig& cfg);

/// step,loss,lr,grad_norm,wall_ms
std::string training_log_csv(const std::vector<LogRow>& log);

}  // namespace itnet
