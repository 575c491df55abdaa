#pragma once

// Evaluation of trained models and the relative-pose alignment benchmark.

#include <filesystem>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "icp.hpp"
#include "io.hpp"
#include "metrics.hpp"

namespace itnet {

struct EvalConfig {
  /// Transformer iterations to run; 0 uses the model's eval_iterations.
  int iterations = 0;
  double rot_thresh_deg = 10.0;
  double trans_thresh = 0.1;
  /// Iteration whose axis-angle pose clusters are exported; -1 disables.
  int clusters_k = -1;
};

struct EvalReport {
  Task task = Task::Pose;
  std::vector<std::string> ids;
  /// Pose: errors[k][i] after k+1 iterations.
  std::vector<std::vector<PoseError>> errors;
  /// Classification: predictions[k][i] after k iterations (k = 0..K).
  std::vector<std::vector<int>> predictions;
  std::vector<int> labels;
  /// Pose: accuracy after k+1 iterations. Classification: after k iterations.
  std::vector<double> accuracy;
  double ms_per_instance = 0.0;
  std::vector<double> iteration_ms_per_instance;
  std::vector<Vec3> clusters;
};

struct EvalSet {
  Manifest manifest;
  std::vector<PointCloud> clouds;
};
EvalSet load_eval_set(const std::filesystem::path& manifest);

EvalReport evaluate(const Checkpoint& model, const EvalSet& data, const EvalConfig& cfg);

/// report.csv, anytime.csv, timing.csv and, for the pose task, rot_cdf.csv and
/// trans_cdf.csv; clusters.csv when requested.
void write_eval_outputs(const EvalReport& report, const EvalConfig& cfg, const std::filesystem::path& out_dir);

struct AlignPair {
  std::size_t a;
  std::size_t b;
};

/// Pairs of distinct records that scan the same shape (equal shape_seed), in
/// manifest order, at most max_pairs.
std::vector<AlignPair> same_shape_pairs(const Manifest& manifest, std::size_t max_pairs);
/// "index_a index_b" per line ('#' comments allowed).
std::vector<AlignPair> read_pairs(const std::filesystem::path& path, std::size_t record_count);

struct AlignConfig {
  int iterations = 0;
  IcpConfig icp;
  double rot_thresh_deg = 10.0;
};

struct AlignReport {
  std::vector<AlignPair> pairs;
  /// Rotation angle of the true relative transform, degrees.
  std::vector<double> true_rotation_deg;
  std::vector<PoseError> learned;
  std::vector<PoseError> icp;
  double learned_ms_per_pair = 0.0;
  double icp_ms_per_pair = 0.0;
};

/// Relative transform mapping cloud b onto cloud a: learned as T_a^-1 T_b from
/// the two predicted poses, ICP from identity with b as source.
AlignReport align_benchmark(const Checkpoint& model, const std::vector<PointCloud>& clouds,
                            const std::vector<RigidTransform>& poses, const std::vector<AlignPair>& pairs,
                            const AlignConfig& cfg);

/// align_report.csv, {learned,icp}_{rot,trans}_cdf.csv, timing.csv.
void write_align_outputs(const AlignReport& report, const std::filesystem::path& out_dir);

}  // namespace itnet
