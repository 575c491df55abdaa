#include "evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <sstream>

#include "error.hpp"

namespace itnet {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

EvalSet load_eval_set(const std::filesystem::path& manifest) {
  EvalSet set;
  set.manifest = read_manifest(manifest);
  if (set.manifest.records.empty()) throw Error(ErrorCode::EmptyEvaluation, "manifest has no records: " + manifest.string());
  set.clouds.resize(set.manifest.records.size());
  parallel_for(set.clouds.size(), worker_count(),
               [&](std::size_t i) { set.clouds[i] = read_cloud(set.manifest.cloud_path(set.manifest.records[i])); });
  return set;
}

EvalReport evaluate(const Checkpoint& model, const EvalSet& data, const EvalConfig& cfg) {
  const ModelSpec& spec = model.spec;
  const int iters = cfg.iterations > 0 ? cfg.iterations : spec.unfold.eval_iterations;
  const auto& records = data.manifest.records;
  EvalReport rep;
  rep.task = spec.task;
  for (const auto& r : records) rep.ids.push_back(r.path);
  const double count = static_cast<double>(records.size());
  std::vector<std::vector<Mat4>> estimates;

  const auto start = Clock::now();
  if (spec.task == Task::Pose) {
    const AnytimeResult any = anytime_infer(data.clouds, model.params, spec.transformer_arch, spec.unfold,
                                            kTransformerPrefix, iters);
    rep.ms_per_instance = elapsed_ms(start, Clock::now()) / count;
    for (double ms : any.iteration_ms) rep.iteration_ms_per_instance.push_back(ms / count);
    for (const auto& row : any.estimates) {
      std::vector<PoseError> errs;
      for (std::size_t i = 0; i < records.size(); ++i) errs.push_back(pose_error(row[i], records[i].pose));
      rep.accuracy.push_back(pose_accuracy(errs, cfg.rot_thresh_deg, cfg.trans_thresh));
      rep.errors.push_back(std::move(errs));
    }
    estimates = any.estimates;
  } else {
    ClassifyAnytime any = classify_anytime(data.clouds, model.params, spec, iters);
    rep.ms_per_instance = elapsed_ms(start, Clock::now()) / count;
    for (const auto& r : records) rep.labels.push_back(r.label);
    for (const auto& pred : any.predictions) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == rep.labels[i];
      rep.accuracy.push_back(100.0 * static_cast<double>(hits) / count);
    }
    rep.predictions = std::move(any.predictions);
    estimates = std::move(any.estimates);
  }
  if (cfg.clusters_k >= 0) {
    std::vector<RigidTransform> truths;
    for (const auto& r : records) truths.push_back(r.pose);
    rep.clusters = export_pose_clusters(estimates, truths, cfg.clusters_k);
  }
  return rep;
}

void write_eval_outputs(const EvalReport& rep, const EvalConfig& cfg, const std::filesystem::path& out_dir) {
  std::string anytime;
  if (rep.task == Task::Pose) {
    const auto& last = rep.errors.back();
    atomic_write(out_dir / "report.csv", eval_report_csv(rep.ids, last, cfg.rot_thresh_deg, cfg.trans_thresh));
    std::vector<double> rot, trans;
    for (const auto& e : last) {
      rot.push_back(e.rotation_deg);
      trans.push_back(e.translation);
    }
    atomic_write(out_dir / "rot_cdf.csv", cdf_csv(error_cdf(rot)));
    atomic_write(out_dir / "trans_cdf.csv", cdf_csv(error_cdf(trans)));
    anytime = "iteration,accuracy,median_rot_err_deg,median_trans_err\n";
    for (std::size_t k = 0; k < rep.errors.size(); ++k) {
      std::vector<double> r, t;
      for (const auto& e : rep.errors[k]) {
        r.push_back(e.rotation_deg);
        t.push_back(e.translation);
      }
      anytime += std::to_string(k + 1) + "," + format_double(rep.accuracy[k]) + "," + format_double(median(r)) + "," +
                 format_double(median(t)) + "\n";
    }
  } else {
    const auto& last = rep.predictions.back();
    std::string report = "id,label,predicted,correct\n";
    for (std::size_t i = 0; i < last.size(); ++i)
      report += rep.ids[i] + "," + std::to_string(rep.labels[i]) + "," + std::to_string(last[i]) + "," +
                (last[i] == rep.labels[i] ? "1" : "0") + "\n";
    atomic_write(out_dir / "report.csv", report);
    anytime = "iteration,accuracy\n";
    for (std::size_t k = 0; k < rep.accuracy.size(); ++k)
      anytime += std::to_string(k) + "," + format_double(rep.accuracy[k]) + "\n";
  }
  atomic_write(out_dir / "anytime.csv", anytime);
  std::string timing = "stage,ms_per_instance\ntotal," + format_double(rep.ms_per_instance) + "\n";
  for (std::size_t k = 0; k < rep.iteration_ms_per_instance.size(); ++k)
    timing += "iteration_" + std::to_string(k + 1) + "," + format_double(rep.iteration_ms_per_instance[k]) + "\n";
  atomic_write(out_dir / "timing.csv", timing);
  if (cfg.clusters_k >= 0) atomic_write(out_dir / "clusters.csv", clusters_csv(rep.clusters));
}

std::vector<AlignPair> same_shape_pairs(const Manifest& manifest, std::size_t max_pairs) {
  std::vector<AlignPair> out;
  const auto& rec = manifest.records;
  for (std::size_t a = 0; a < rec.size() && out.size() < max_pairs; ++a) {
    bool first = true;
    for (std::size_t p = 0; p < a; ++p)
      if (rec[p].shape_seed == rec[a].shape_seed) first = false;
    if (!first) continue;
    for (std::size_t b = a + 1; b < rec.size() && out.size() < max_pairs; ++b)
      if (rec[b].shape_seed == rec[a].shape_seed) out.push_back({a, b});
  }
  return out;
}

std::vector<AlignPair> read_pairs(const std::filesystem::path& path, std::size_t record_count) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<AlignPair> out;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    AlignPair p{};
    if (!(ls >> p.a >> p.b) || p.a >= record_count || p.b >= record_count)
      throw Error(ErrorCode::Format, path.string() + ":" + std::to_string(line_no) + ": expected two record indices");
    out.push_back(p);
  }
  if (out.empty()) throw Error(ErrorCode::EmptyEvaluation, "no pairs in " + path.string());
  return out;
}

AlignReport align_benchmark(const Checkpoint& model, const std::vector<PointCloud>& clouds,
                            const std::vector<RigidTransform>& poses, const std::vector<AlignPair>& pairs,
                            const AlignConfig& cfg) {
  if (model.spec.task != Task::Pose) throw Error(ErrorCode::Config, "align needs a pose model");
  if (pairs.empty()) throw Error(ErrorCode::EmptyEvaluation, "no pairs to align");
  const int iters = cfg.iterations > 0 ? cfg.iterations : model.spec.unfold.eval_iterations;
  AlignReport rep;
  rep.pairs = pairs;

  std::vector<std::size_t> used;
  for (const auto& p : pairs) {
    used.push_back(p.a);
    used.push_back(p.b);
  }
  std::sort(used.begin(), used.end());
  used.erase(std::unique(used.begin(), used.end()), used.end());
  std::vector<PointCloud> subset;
  for (auto i : used) subset.push_back(clouds.at(i));
  auto t0 = Clock::now();
  const AnytimeResult any =
      anytime_infer(subset, model.params, model.spec.transformer_arch, model.spec.unfold, kTransformerPrefix, iters);
  auto t1 = Clock::now();
  auto estimate = [&](std::size_t i) {
    const auto pos = static_cast<std::size_t>(std::lower_bound(used.begin(), used.end(), i) - used.begin());
    return any.estimates.back()[pos];
  };
  // Each pair consumes two inferences.
  rep.learned_ms_per_pair = 2.0 * elapsed_ms(t0, t1) / static_cast<double>(used.size());

  rep.icp.resize(pairs.size());
  std::vector<double> icp_ms(pairs.size());
  for (const auto& p : pairs) {
    const RigidTransform truth = rigid_compose(rigid_inverse(poses.at(p.a)), poses.at(p.b));
    rep.true_rotation_deg.push_back(rotation_error_deg(Mat3::identity(), truth.rotation()));
    const RigidTransform ta = RigidTransform::from_matrix(estimate(p.a));
    const RigidTransform tb = RigidTransform::from_matrix(estimate(p.b));
    rep.learned.push_back(pose_error(rigid_compose(rigid_inverse(ta), tb).matrix(), truth));
  }
  parallel_for(pairs.size(), worker_count(), [&](std::size_t i) {
    const auto& p = pairs[i];
    const auto s = Clock::now();
    const IcpResult r = icp_align(clouds.at(p.b), clouds.at(p.a), RigidTransform::identity(), cfg.icp);
    icp_ms[i] = elapsed_ms(s, Clock::now());
    const RigidTransform truth = rigid_compose(rigid_inverse(poses.at(p.a)), poses.at(p.b));
    rep.icp[i] = pose_error(r.transform.matrix(), truth);
  });
  double total = 0.0;
  for (double ms : icp_ms) total += ms;
  rep.icp_ms_per_pair = total / static_cast<double>(pairs.size());
  return rep;
}

void write_align_outputs(const AlignReport& rep, const std::filesystem::path& out_dir) {
  std::string report = "pair,a,b,true_rot_deg,learned_rot_err_deg,learned_trans_err,icp_rot_err_deg,icp_trans_err\n";
  std::vector<double> lr, lt, ir, it;
  for (std::size_t i = 0; i < rep.pairs.size(); ++i) {
    report += std::to_string(i) + "," + std::to_string(rep.pairs[i].a) + "," + std::to_string(rep.pairs[i].b) + "," +
              format_double(rep.true_rotation_deg[i]) + "," + format_double(rep.learned[i].rotation_deg) + "," +
              format_double(rep.learned[i].translation) + "," + format_double(rep.icp[i].rotation_deg) + "," +
              format_double(rep.icp[i].translation) + "\n";
    lr.push_back(rep.learned[i].rotation_deg);
    lt.push_back(rep.learned[i].translation);
    ir.push_back(rep.icp[i].rotation_deg);
    it.push_back(rep.icp[i].translation);
  }
  atomic_write(out_dir / "align_report.csv", report);
  atomic_write(out_dir / "learned_rot_cdf.csv", cdf_csv(error_cdf(lr)));
  atomic_write(out_dir / "learned_trans_cdf.csv", cdf_csv(error_cdf(lt)));
  atomic_write(out_dir / "icp_rot_cdf.csv", cdf_csv(error_cdf(ir)));
  atomic_write(out_dir / "icp_trans_cdf.csv", cdf_csv(error_cdf(it)));
  atomic_write(out_dir / "timing.csv", "method,ms_per_pair\nlearned," + format_double(rep.learned_ms_per_pair) +
                                           "\nicp," + format_double(rep.icp_ms_per_pair) + "\n");
}

}  // namespace itnet
