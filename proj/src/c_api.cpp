#include "itnet/itnet.h"

#include <exception>
#include <memory>
#include <new>
#include <string>

#include "checkpoint.hpp"
#include "commands.hpp"
#include "error.hpp"
#include "icp.hpp"
#include "model.hpp"
#include "run_config.hpp"
#include "transformer.hpp"

struct itnet_config {
  itnet::RunConfig cfg;
};

struct itnet_model {
  itnet::Checkpoint ck;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_message;

template <class F>
int guarded(F&& f) {
  try {
    g_error.clear();
    f();
    return ITNET_OK;
  } catch (const itnet::Error& e) {
    g_error = e.what();
    return itnet::exit_code_for(e.code());
  } catch (const std::bad_alloc&) {
    g_error = "out of memory";
    return ITNET_ERR_NUMERIC;
  } catch (const std::exception& e) {
    g_error = e.what();
    return ITNET_ERR_IO;
  }
}

int null_arg(const char* what) {
  g_error = std::string("Config: null argument: ") + what;
  return ITNET_ERR_CONFIG;
}

itnet::PointCloud to_cloud(const double* xyz, size_t n) {
  itnet::PointCloud c;
  c.points.resize(n);
  for (size_t i = 0; i < n; ++i) c.points[i] = {xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]};
  return c;
}

void write_pose(const itnet::RigidTransform& t, double out[7]) {
  out[0] = t.q().w;
  out[1] = t.q().x;
  out[2] = t.q().y;
  out[3] = t.q().z;
  out[4] = t.t()[0];
  out[5] = t.t()[1];
  out[6] = t.t()[2];
}

itnet::Command to_command(itnet_command c) {
  switch (c) {
    case ITNET_CMD_GENERATE: return itnet::Command::Generate;
    case ITNET_CMD_TRAIN: return itnet::Command::Train;
    case ITNET_CMD_EVAL: return itnet::Command::Eval;
    case ITNET_CMD_ALIGN: return itnet::Command::Align;
  }
  throw itnet::Error(itnet::ErrorCode::Config, "unknown command code");
}

}  // namespace

extern "C" {

const char* itnet_version(void) { return "1.0.0"; }
const char* itnet_last_error(void) { return g_error.c_str(); }
const char* itnet_last_message(void) { return g_message.c_str(); }

size_t itnet_key_count(void) { return itnet::key_table().size(); }

const char* itnet_key_name(size_t i) { return i < itnet_key_count() ? itnet::key_table()[i].name : nullptr; }
const char* itnet_key_default(size_t i) { return i < itnet_key_count() ? itnet::key_table()[i].default_value : nullptr; }
const char* itnet_key_help(size_t i) { return i < itnet_key_count() ? itnet::key_table()[i].help : nullptr; }

int itnet_key_applies(size_t i, itnet_command command) {
  if (i >= itnet_key_count()) return 0;
  try {
    return itnet::key_applies(itnet::key_table()[i], to_command(command)) ? 1 : 0;
  } catch (...) {
    return 0;
  }
}

itnet_config* itnet_config_create(void) { return new (std::nothrow) itnet_config(); }
void itnet_config_free(itnet_config* cfg) { delete cfg; }

int itnet_config_set(itnet_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return null_arg("itnet_config_set");
  return guarded([&] { cfg->cfg.set(key, value); });
}

int itnet_config_load_file(itnet_config* cfg, const char* path) {
  if (!cfg || !path) return null_arg("itnet_config_load_file");
  return guarded([&] { cfg->cfg.load_file(path); });
}

int itnet_run(itnet_command command, const itnet_config* cfg) {
  if (!cfg) return null_arg("itnet_run");
  return guarded([&] { g_message = itnet::run_command(to_command(command), cfg->cfg); });
}

int itnet_model_load(const char* checkpoint_path, itnet_model** out) {
  if (!checkpoint_path || !out) return null_arg("itnet_model_load");
  *out = nullptr;
  return guarded([&] {
    auto m = std::make_unique<itnet_model>();
    m->ck = itnet::load_checkpoint(checkpoint_path);
    m->ck.spec.validate();
    *out = m.release();
  });
}

void itnet_model_free(itnet_model* model) { delete model; }

int itnet_model_is_pose(const itnet_model* model) { return model && model->ck.spec.task == itnet::Task::Pose; }

int itnet_model_predict_pose(const itnet_model* model, const double* xyz, size_t n_points, int iterations,
                             double pose_out[7]) {
  if (!model || !xyz || !pose_out) return null_arg("itnet_model_predict_pose");
  return guarded([&] {
    const auto& spec = model->ck.spec;
    if (!spec.has_transformer) throw itnet::Error(itnet::ErrorCode::Config, "model has no transformer");
    if (spec.unfold.variant != itnet::Variant::Rigid)
      throw itnet::Error(itnet::ErrorCode::Config, "affine transformers have no rigid pose");
    if (n_points == 0) throw itnet::Error(itnet::ErrorCode::EmptyScan, "empty point cloud");
    const int iters = iterations > 0 ? iterations : spec.unfold.eval_iterations;
    const auto res = itnet::anytime_infer({to_cloud(xyz, n_points)}, model->ck.params, spec.transformer_arch,
                                          spec.unfold, itnet::kTransformerPrefix, iters);
    write_pose(itnet::RigidTransform::from_matrix(res.estimates.back()[0]), pose_out);
  });
}

int itnet_model_classify(const itnet_model* model, const double* xyz, size_t n_points, int iterations,
                         int* label_out) {
  if (!model || !xyz || !label_out) return null_arg("itnet_model_classify");
  return guarded([&] {
    const auto& spec = model->ck.spec;
    if (spec.task != itnet::Task::Classify) throw itnet::Error(itnet::ErrorCode::Config, "not a classification model");
    if (n_points == 0) throw itnet::Error(itnet::ErrorCode::EmptyScan, "empty point cloud");
    const int iters = iterations > 0 ? iterations : spec.unfold.eval_iterations;
    const auto res = itnet::classify_anytime({to_cloud(xyz, n_points)}, model->ck.params, spec, iters);
    *label_out = res.predictions.back()[0];
  });
}

int itnet_icp_align(const double* source, size_t n_source, const double* target, size_t n_target,
                    const double init[7], int max_iterations, double tol, double trim_fraction, double pose_out[7],
                    int* iterations_out) {
  if (!source || !target || !pose_out) return null_arg("itnet_icp_align");
  return guarded([&] {
    itnet::IcpConfig cfg;
    cfg.max_iterations = max_iterations;
    cfg.convergence_tol = tol;
    cfg.trim_fraction = trim_fraction;
    itnet::RigidTransform start;
    if (init) start = itnet::RigidTransform({init[0], init[1], init[2], init[3]}, {init[4], init[5], init[6]});
    const auto res = itnet::icp_align(to_cloud(source, n_source), to_cloud(target, n_target), start, cfg);
    write_pose(res.transform, pose_out);
    if (iterations_out) *iterations_out = static_cast<int>(res.history.size());
  });
}

}  // extern "C"
