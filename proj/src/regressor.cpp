#include "regressor.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace itnet {

namespace {

std::size_t scaled(std::size_t w, double mult) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(w) * mult)));
}

std::string layer_name(const std::string& prefix, const char* kind, std::size_t i) {
  return prefix + "/" + kind + std::to_string(i);
}

ag::Tensor fan_in_normal(std::size_t in, std::size_t out, double gain, Rng& rng) {
  ag::Tensor w(in, out);
  const double std_dev = std::sqrt(gain / static_cast<double>(in));
  for (auto& v : w.span()) v = std_dev * rng.normal();
  return w;
}

}  // namespace

std::vector<std::size_t> PointNetArch::hidden_widths() const {
  std::vector<std::size_t> out;
  for (auto w : per_point_widths) out.push_back(scaled(w, width_multiplier));
  for (auto w : global_widths) out.push_back(scaled(w, width_multiplier));
  return out;
}

std::size_t PointNetArch::pooled_width() const {
  if (per_point_widths.empty()) return 3;
  return scaled(per_point_widths.back(), width_multiplier);
}

std::vector<double> identity_output(std::size_t output_dim) {
  if (output_dim == 7) return {1, 0, 0, 0, 0, 0, 0};
  if (output_dim == 9) return {1, 0, 0, 0, 1, 0, 0, 0, 1};
  throw Error(ErrorCode::Config, "identity output defined only for M = 7 or 9");
}

void init_pointnet(ag::ParamStore& store, const PointNetArch& arch, const std::string& prefix,
                   FinalLayerInit final_init, Rng& rng, const std::vector<std::string>& bn_stat_slots) {
  auto hidden_layer = [&](const std::string& name, std::size_t in, std::size_t out) {
    store.set(name + "/w", fan_in_normal(in, out, 2.0, rng));
    if (arch.use_batch_norm) {
      store.set(name + "/bn_gamma", ag::Tensor(1, out, 1.0));
      store.set(name + "/bn_beta", ag::Tensor(1, out, 0.0));
      for (const auto& slot : bn_stat_slots) {
        store.set(name + "/bn_mean" + slot, ag::Tensor(1, out, 0.0), false);
        store.set(name + "/bn_var" + slot, ag::Tensor(1, out, 1.0), false);
      }
    } else {
      store.set(name + "/b", ag::Tensor(1, out, 0.0));
    }
  };

  std::size_t in = 3;
  for (std::size_t i = 0; i < arch.per_point_widths.size(); ++i) {
    const std::size_t out = scaled(arch.per_point_widths[i], arch.width_multiplier);
    hidden_layer(layer_name(prefix, "pp", i), in, out);
    in = out;
  }
  for (std::size_t i = 0; i < arch.global_widths.size(); ++i) {
    const std::size_t out = scaled(arch.global_widths[i], arch.width_multiplier);
    hidden_layer(layer_name(prefix, "fc", i), in, out);
    in = out;
  }

  const std::size_t m = arch.output_dim;
  const std::string out_name = prefix + "/out";
  switch (final_init) {
    case FinalLayerInit::Identity: {
      store.set(out_name + "/w", ag::Tensor(in, m, 0.0));
      store.set(out_name + "/b", ag::Tensor(1, m, identity_output(m)));
      break;
    }
    case FinalLayerInit::Random:
      store.set(out_name + "/w", fan_in_normal(in, m, 1.0, rng));
      store.set(out_name + "/b", ag::Tensor(1, m, 0.0));
      break;
    case FinalLayerInit::Logits:
      store.set(out_name + "/w", fan_in_normal(in, m, 0.01, rng));
      store.set(out_name + "/b", ag::Tensor(1, m, 0.0));
      break;
  }
}

ag::Var pointnet_forward(ag::Graph& g, const ag::ParamStore& store, const PointNetArch& arch,
                         const std::string& prefix, ag::Var points, std::size_t groups,
                         const std::string& bn_slot) {
  if (points.cols() != 3 || points.rows() == 0)
    throw Error(ErrorCode::ShapeMismatch, "point input must be non-empty (B*N) x 3");

  auto hidden_layer = [&](const std::string& name, ag::Var x) {
    ag::Var h = ag::matmul(x, g.param(store, name + "/w"));
    if (arch.use_batch_norm) {
      ag::BatchNormParams bn;
      bn.gamma = g.param(store, name + "/bn_gamma");
      bn.beta = g.param(store, name + "/bn_beta");
      bn.store = &store;
      bn.mean_name = name + "/bn_mean" + bn_slot;
      bn.var_name = name + "/bn_var" + bn_slot;
      h = ag::batch_norm(h, bn);
    } else {
      h = ag::add_bias(h, g.param(store, name + "/b"));
    }
    return ag::relu(h);
  };

  ag::Var x = points;
  for (std::size_t i = 0; i < arch.per_point_widths.size(); ++i) x = hidden_layer(layer_name(prefix, "pp", i), x);
  x = ag::reduce_max_over_points(x, groups);
  for (std::size_t i = 0; i < arch.global_widths.size(); ++i) x = hidden_layer(layer_name(prefix, "fc", i), x);
  const std::string out_name = prefix + "/out";
  return ag::add_bias(ag::matmul(x, g.param(store, out_name + "/w")), g.param(store, out_name + "/b"));
}

ag::Var assemble_rigid(ag::Var raw) {
  const ag::Tensor& rv = raw.value();
  if (rv.cols() != 7) throw Error(ErrorCode::ShapeMismatch, "assemble_rigid expects B x 7");
  for (std::size_t b = 0; b < rv.rows(); ++b) {
    const double n = std::sqrt(rv(b, 0) * rv(b, 0) + rv(b, 1) * rv(b, 1) + rv(b, 2) * rv(b, 2) + rv(b, 3) * rv(b, 3));
    if (!(n > 1e-12))
      throw Error(ErrorCode::DegenerateQuaternion, "row " + std::to_string(b) + " has quaternion norm <= 1e-12");
  }
  ag::Var q = ag::normalize_l2(ag::slice_cols(raw, 0, 4));
  ag::Var t = ag::slice_cols(raw, 4, 7);
  return ag::homogeneous(ag::quat_to_rotmat(q), t);
}

ag::Var assemble_affine(ag::Var raw) {
  if (raw.cols() != 9) throw Error(ErrorCode::ShapeMismatch, "assemble_affine expects B x 9");
  ag::Var zero_t = raw.graph->constant(ag::Tensor(raw.rows(), 3, 0.0));
  return ag::homogeneous(raw, zero_t);
}

}  // namespace itnet
