#pragma once

#include <span>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "geometry.hpp"

namespace itnet {

struct PoseError {
  double rotation_deg = 0.0;
  double translation = 0.0;
};

/// Mean over points of ||(R x + t) - (R~ x + t~)||^2, averaged over the batch.
/// estimate, truth: B x 16; points: (B * N) x 3.
ag::Var ploss(ag::Var estimate, ag::Var truth, ag::Var points);
double ploss(const Mat4& estimate, const Mat4& truth, const PointCloud& points);

/// Angle of Ra^T Rb in degrees.
double rotation_error_deg(const Mat3& a, const Mat3& b);
PoseError pose_error(const Mat4& estimate, const RigidTransform& truth);

/// Percentage with rotation < rot_thresh_deg and translation < trans_thresh.
double pose_accuracy(std::span<const PoseError> errors, double rot_thresh_deg, double trans_thresh);

struct CdfPoint {
  double value;
  double fraction;
};
std::vector<CdfPoint> error_cdf(std::vector<double> values);
/// Fraction of samples <= x.
double cdf_at(std::span<const CdfPoint> cdf, double x);

/// Axis-angle vectors of R_k R_truth^T per instance, where R_k is the rotation
/// part of the iteration-k estimate (k = 0 means the untransformed input).
/// estimates[i][b] follows AnytimeResult layout. Non-rigid estimates are
/// projected to the nearest rotation.
std::vector<Vec3> export_pose_clusters(const std::vector<std::vector<Mat4>>& estimates,
                                       const std::vector<RigidTransform>& truths, int k);

// CSV renderers. Headers are part of the file format.
std::string eval_report_csv(const std::vector<std::string>& ids, std::span<const PoseError> errors,
                            double rot_thresh_deg, double trans_thresh);
std::string cdf_csv(std::span<const CdfPoint> cdf);
std::string clusters_csv(std::span<const Vec3> vectors);

std::string format_double(double v);

}  // namespace itnet
