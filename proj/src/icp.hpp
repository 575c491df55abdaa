#pragma once

// Point-to-point ICP with trimming, and the closed-form rigid fit it uses.

#include <cstddef>
#include <string>
#include <vector>

#include "geometry.hpp"

namespace itnet {

/// Static 3-d tree over a point set. Queries are exact; among equidistant
/// points the lowest index wins.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points);

  struct Hit {
    std::size_t index;
    double squared_distance;
  };
  Hit nearest(const Vec3& q) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::size_t begin, end;  // range in order_
    int axis = -1;           // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
  };
  int build(std::size_t begin, std::size_t end);
  void search(int node, const Vec3& q, Hit& best) const;

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

struct Correspondence {
  std::size_t source;
  std::size_t target;
  double distance;
};

/// Nearest target point for every source point, in source order.
std::vector<Correspondence> nearest_neighbors(const PointCloud& source, const PointCloud& target);

/// Least-squares R, t minimizing sum |R s_i + t - d_i|^2. Throws
/// DegenerateCorrespondences for fewer than 3 pairs or collinear sets.
RigidTransform best_rigid_fit(const std::vector<Vec3>& src, const std::vector<Vec3>& dst);

struct IcpConfig {
  int max_iterations = 100;
  /// Stop when the trimmed mean distance changes by less than this, or is
  /// itself below it.
  double convergence_tol = 1e-7;
  double trim_fraction = 0.1;

  void validate() const;
};

struct IcpIteration {
  double trimmed_mean = 0.0;
  double trimmed_rms = 0.0;
  std::size_t inliers = 0;
};

struct IcpResult {
  /// Maps source coordinates onto the target.
  RigidTransform transform;
  std::vector<IcpIteration> history;
  bool converged = false;
};

IcpResult icp_align(const PointCloud& source, const PointCloud& target, const RigidTransform& init,
                    const IcpConfig& cfg = {});

/// iteration,trimmed_mean,trimmed_rms,inliers
std::string icp_history_csv(const std::vector<IcpIteration>& history);

}  // namespace itnet
