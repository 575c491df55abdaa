#include "commands.hpp"

#include <cstdio>
#include <filesystem>

#include "checkpoint.hpp"
#include "evaluation.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "training.hpp"

namespace itnet {

namespace fs = std::filesystem;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Config:
    case ErrorCode::UnknownFamily:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::EmptyEvaluation:
      return 2;
    case ErrorCode::Io:
    case ErrorCode::Format:
      return 3;
    default:
      return 4;
  }
}

namespace {

fs::path required_path(const RunConfig& cfg, const char* key) {
  const std::string v = cfg.get(key);
  if (v.empty()) throw Error(ErrorCode::Config, std::string("--") + key + " is required");
  return v;
}

fs::path existing_file(const RunConfig& cfg, const char* key) {
  const fs::path p = required_path(cfg, key);
  if (!fs::is_regular_file(p)) throw Error(ErrorCode::Io, std::string("--") + key + ": no such file: " + p.string());
  return p;
}

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorCode::Io, "cannot create directory " + dir.string());
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

}  // namespace

std::string run_generate(const RunConfig& cfg) {
  cfg.check_applicable(Command::Generate);
  const DatasetSpec spec = cfg.dataset_spec();
  const fs::path out = required_path(cfg, "out");
  ensure_dir(out);
  const auto records = build_dataset(spec, out, worker_count());
  return "wrote " + std::to_string(records.size()) + " clouds and " + (out / "manifest.tsv").string();
}

std::string run_train(const RunConfig& cfg) {
  cfg.check_applicable(Command::Train);
  const fs::path manifest = existing_file(cfg, "manifest");
  const fs::path out = required_path(cfg, "out");
  const fs::path log = cfg.get("log").empty() ? fs::path(out.string() + ".log.csv") : fs::path(cfg.get("log"));
  const Task task = parse_task(cfg.get("task"));
  (void)cfg.train_config(1);  // reject bad keys before loading data
  ensure_dir(out.parent_path());
  ensure_dir(log.parent_path());
  const TrainSet data = load_train_set(manifest, task);
  const TrainConfig tc = cfg.train_config(data.clouds.size());
  const TrainResult res = train(data, tc);
  save_checkpoint(out, res.checkpoint);
  atomic_write(log, training_log_csv(res.log));
  return "trained " + std::to_string(res.log.size()) + " steps, final loss " + fmt("%.6g", res.log.back().loss) +
         ", checkpoint " + out.string();
}

std::string run_eval(const RunConfig& cfg) {
  cfg.check_applicable(Command::Eval);
  const fs::path ckpt = existing_file(cfg, "checkpoint");
  const fs::path manifest = existing_file(cfg, "manifest");
  const fs::path out = required_path(cfg, "out");
  const EvalConfig ec = cfg.eval_config();
  ensure_dir(out);
  const Checkpoint model = load_checkpoint(ckpt);
  const EvalSet data = load_eval_set(manifest);
  const EvalReport rep = evaluate(model, data, ec);
  write_eval_outputs(rep, ec, out);
  std::string s = "evaluated " + std::to_string(data.clouds.size()) + " instances; accuracy";
  for (std::size_t k = 0; k < rep.accuracy.size(); ++k) s += (k ? " " : ": ") + fmt("%.2f", rep.accuracy[k]);
  return s;
}

std::string run_align(const RunConfig& cfg) {
  cfg.check_applicable(Command::Align);
  const fs::path ckpt = existing_file(cfg, "checkpoint");
  const fs::path manifest = existing_file(cfg, "manifest");
  const fs::path out = required_path(cfg, "out");
  const AlignConfig ac = cfg.align_config();
  if (!cfg.get("pairs").empty()) (void)existing_file(cfg, "pairs");
  ensure_dir(out);
  const Checkpoint model = load_checkpoint(ckpt);
  const EvalSet data = load_eval_set(manifest);
  const auto pairs = cfg.get("pairs").empty() ? same_shape_pairs(data.manifest, cfg.get_size("max_pairs"))
                                              : read_pairs(cfg.get("pairs"), data.clouds.size());
  if (pairs.empty()) throw Error(ErrorCode::EmptyEvaluation, "manifest holds no same-shape pairs");
  std::vector<RigidTransform> poses;
  for (const auto& r : data.manifest.records) poses.push_back(r.pose);
  const AlignReport rep = align_benchmark(model, data.clouds, poses, pairs, ac);
  write_align_outputs(rep, out);
  std::size_t learned = 0, icp = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    learned += rep.learned[i].rotation_deg < ac.rot_thresh_deg;
    icp += rep.icp[i].rotation_deg < ac.rot_thresh_deg;
  }
  const double n = static_cast<double>(pairs.size());
  return std::to_string(pairs.size()) + " pairs; rotation < " + fmt("%g", ac.rot_thresh_deg) + " deg: learned " +
         fmt("%.1f%%", 100.0 * static_cast<double>(learned) / n) + ", icp " + fmt("%.1f%%", 100.0 * static_cast<double>(icp) / n);
}

std::string run_command(Command c, const RunConfig& cfg) {
  switch (c) {
    case Command::Generate: return run_generate(cfg);
    case Command::Train: return run_train(cfg);
    case Command::Eval: return run_eval(cfg);
    case Command::Align: return run_align(cfg);
  }
  throw Error(ErrorCode::Config, "unknown command");
}

}  // namespace itnet
