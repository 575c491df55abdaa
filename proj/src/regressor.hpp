#pragma once

// PointNet-style trunk: a shared per-point MLP, max-pool over points, and a
// global MLP. The same trunk backs the pose regressor (7 or 9 outputs) and the
// classifier (C outputs).

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "random.hpp"

namespace itnet {

struct PointNetArch {
  std::vector<std::size_t> per_point_widths{64, 128, 1024};
  std::vector<std::size_t> global_widths{512, 256};
  std::size_t output_dim = 7;
  bool use_batch_norm = true;
  /// Scales every hidden width (desk-scale presets use < 1).
  double width_multiplier = 1.0;

  std::vector<std::size_t> hidden_widths() const;
  std::size_t pooled_width() const;
};

enum class FinalLayerInit {
  /// Zero weights, bias equal to the identity transform.
  Identity,
  /// Fan-in scaled random weights, zero bias.
  Random,
  /// Small random weights, zero bias (classification logits).
  Logits,
};

/// Creates all parameters under `prefix`. `bn_stat_slots` lists the running-
/// statistics suffixes to allocate ("" for shared statistics).
void init_pointnet(ag::ParamStore& store, const PointNetArch& arch, const std::string& prefix,
                   FinalLayerInit final_init, Rng& rng,
                   const std::vector<std::string>& bn_stat_slots = {""});

/// points: (groups * N) x 3 -> groups x output_dim. Batch-norm running
/// statistics are read from / reported to the names suffixed by `bn_slot`.
ag::Var pointnet_forward(ag::Graph& g, const ag::ParamStore& store, const PointNetArch& arch,
                         const std::string& prefix, ag::Var points, std::size_t groups,
                         const std::string& bn_slot = "");

inline ag::Var pose_regress(ag::Graph& g, const ag::ParamStore& store, const PointNetArch& arch,
                            const std::string& prefix, ag::Var points, std::size_t groups,
                            const std::string& bn_slot = "") {
  return pointnet_forward(g, store, arch, prefix, points, groups, bn_slot);
}

inline ag::Var classify(ag::Graph& g, const ag::ParamStore& store, const PointNetArch& arch,
                        const std::string& prefix, ag::Var points, std::size_t groups) {
  return pointnet_forward(g, store, arch, prefix, points, groups);
}

/// raw: B x 7 -> B x 16 homogeneous transforms. The quaternion part is
/// l2-normalized inside the graph. Throws DegenerateQuaternion naming the row.
ag::Var assemble_rigid(ag::Var raw);

/// raw: B x 9 (row-major A) -> B x 16 with zero translation.
ag::Var assemble_affine(ag::Var raw);

/// Identity transform rows: (1,0,0,0,0,0,0) for M=7, row-major I for M=9.
std::vector<double> identity_output(std::size_t output_dim);

}  // namespace itnet
