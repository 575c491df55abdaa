#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "error.hpp"

namespace itnet {

ag::Var ploss(ag::Var estimate, ag::Var truth, ag::Var points) {
  ag::Var diff = ag::sub(ag::transform_points(points, estimate), ag::transform_points(points, truth));
  return ag::reduce_mean(ag::sum_cols(ag::square(diff)));
}

double ploss(const Mat4& estimate, const Mat4& truth, const PointCloud& points) {
  if (points.empty()) throw Error(ErrorCode::ShapeMismatch, "ploss on an empty point set");
  const Mat3 ra = estimate.rotation_block(), rb = truth.rotation_block();
  const Vec3 ta = estimate.translation(), tb = truth.translation();
  double s = 0.0;
  for (const auto& p : points.points) {
    const Vec3 d = (ra * p + ta) - (rb * p + tb);
    s += dot(d, d);
  }
  return s / static_cast<double>(points.size());
}

double rotation_error_deg(const Mat3& a, const Mat3& b) {
  return rotation_to_axis_angle(a.transposed() * b).angle * 180.0 / std::numbers::pi;
}

PoseError pose_error(const Mat4& estimate, const RigidTransform& truth) {
  PoseError e;
  e.rotation_deg = rotation_error_deg(estimate.rotation_block(), truth.rotation());
  e.translation = norm(estimate.translation() - truth.t());
  return e;
}

double pose_accuracy(std::span<const PoseError> errors, double rot_thresh_deg, double trans_thresh) {
  if (errors.empty()) throw Error(ErrorCode::EmptyEvaluation, "no pose errors to score");
  std::size_t hits = 0;
  for (const auto& e : errors)
    if (e.rotation_deg < rot_thresh_deg && e.translation < trans_thresh) ++hits;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(errors.size());
}

std::vector<CdfPoint> error_cdf(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::EmptyEvaluation, "CDF of no values");
  std::sort(values.begin(), values.end());
  std::vector<CdfPoint> out;
  out.reserve(values.size());
  const double n = static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out.push_back({values[i], static_cast<double>(i + 1) / n});
  return out;
}

double cdf_at(std::span<const CdfPoint> cdf, double x) {
  double f = 0.0;
  for (const auto& p : cdf) {
    if (p.value > x) break;
    f = p.fraction;
  }
  return f;
}

std::vector<Vec3> export_pose_clusters(const std::vector<std::vector<Mat4>>& estimates,
                                       const std::vector<RigidTransform>& truths, int k) {
  if (k < 0 || static_cast<std::size_t>(k) > estimates.size())
    throw Error(ErrorCode::Config, "cluster iteration " + std::to_string(k) + " out of range");
  std::vector<Vec3> out;
  out.reserve(truths.size());
  for (std::size_t b = 0; b < truths.size(); ++b) {
    Mat3 rk = Mat3::identity();
    if (k > 0) {
      const auto& row = estimates[static_cast<std::size_t>(k - 1)];
      if (row.size() != truths.size()) throw Error(ErrorCode::ShapeMismatch, "estimates not aligned with truths");
      rk = nearest_rotation(row[b].rotation_block());
    }
    const Mat3 diff = rk * truths[b].rotation().transposed();
    out.push_back(rotation_to_axis_angle(nearest_rotation(diff)).vector());
  }
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string eval_report_csv(const std::vector<std::string>& ids, std::span<const PoseError> errors,
                            double rot_thresh_deg, double trans_thresh) {
  std::string out = "id,rot_err_deg,trans_err,hit\n";
  for (std::size_t i = 0; i < errors.size(); ++i) {
    const bool hit = errors[i].rotation_deg < rot_thresh_deg && errors[i].translation < trans_thresh;
    out += ids[i] + "," + format_double(errors[i].rotation_deg) + "," + format_double(errors[i].translation) + "," +
           (hit ? "1" : "0") + "\n";
  }
  return out;
}

std::string cdf_csv(std::span<const CdfPoint> cdf) {
  std::string out = "value,cdf\n";
  for (const auto& p : cdf) out += format_double(p.value) + "," + format_double(p.fraction) + "\n";
  return out;
}

std::string clusters_csv(std::span<const Vec3> vectors) {
  std::string out = "ax,ay,az\n";
  for (const auto& v : vectors) out += format_double(v[0]) + "," + format_double(v[1]) + "," + format_double(v[2]) + "\n";
  return out;
}

}  // namespace itnet
