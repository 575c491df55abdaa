#include "icp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "error.hpp"
#include "metrics.hpp"

namespace itnet {

namespace {
constexpr std::size_t kLeafSize = 8;
}

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)), order_(points_.size()) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (!points_.empty()) build(0, points_.size());
}

int KdTree::build(std::size_t begin, std::size_t end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;
  Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity()};
  Vec3 hi{-lo[0], -lo[1], -lo[2]};
  for (std::size_t i = begin; i < end; ++i)
    for (std::size_t k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], points_[order_[i]][k]);
      hi[k] = std::max(hi[k], points_[order_[i]][k]);
    }
  int axis = 0;
  for (int k = 1; k < 3; ++k)
    if (hi[static_cast<std::size_t>(k)] - lo[static_cast<std::size_t>(k)] >
        hi[static_cast<std::size_t>(axis)] - lo[static_cast<std::size_t>(axis)])
      axis = k;
  if (hi[static_cast<std::size_t>(axis)] == lo[static_cast<std::size_t>(axis)]) return id;
  const std::size_t mid = begin + (end - begin) / 2;
  const auto ax = static_cast<std::size_t>(axis);
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) { return points_[a][ax] < points_[b][ax]; });
  const double split = points_[order_[mid]][ax];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  Node& n = nodes_[static_cast<std::size_t>(id)];
  n.axis = axis;
  n.split = split;
  n.left = left;
  n.right = right;
  return id;
}

void KdTree::search(int node, const Vec3& q, Hit& best) const {
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.axis < 0) {
    for (std::size_t i = n.begin; i < n.end; ++i) {
      const std::size_t idx = order_[i];
      const Vec3 d = points_[idx] - q;
      const double d2 = dot(d, d);
      if (d2 < best.squared_distance || (d2 == best.squared_distance && idx < best.index)) best = {idx, d2};
    }
    return;
  }
  // Left holds coordinates <= split, right holds coordinates >= split.
  const double diff = q[static_cast<std::size_t>(n.axis)] - n.split;
  const int near = diff <= 0.0 ? n.left : n.right;
  const int far = diff <= 0.0 ? n.right : n.left;
  search(near, q, best);
  if (diff * diff <= best.squared_distance) search(far, q, best);
}

KdTree::Hit KdTree::nearest(const Vec3& q) const {
  if (points_.empty()) throw Error(ErrorCode::EmptyScan, "nearest-neighbour query on an empty set");
  Hit best{std::numeric_limits<std::size_t>::max(), std::numeric_limits<double>::infinity()};
  search(0, q, best);
  return best;
}

std::vector<Correspondence> nearest_neighbors(const PointCloud& source, const PointCloud& target) {
  if (source.empty() || target.empty()) throw Error(ErrorCode::EmptyScan, "nearest_neighbors needs two non-empty clouds");
  const KdTree tree(target.points);
  std::vector<Correspondence> out;
  out.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    const auto hit = tree.nearest(source.points[i]);
    out.push_back({i, hit.index, std::sqrt(hit.squared_distance)});
  }
  return out;
}

RigidTransform best_rigid_fit(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  if (src.size() != dst.size()) throw Error(ErrorCode::ShapeMismatch, "correspondence lists differ in length");
  if (src.size() < 3) throw Error(ErrorCode::DegenerateCorrespondences, "need at least 3 correspondences");
  const double n = static_cast<double>(src.size());
  Vec3 cs{0, 0, 0}, cd{0, 0, 0};
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs = cs + src[i];
    cd = cd + dst[i];
  }
  cs = (1.0 / n) * cs;
  cd = (1.0 / n) * cd;
  Mat3 h;
  double spread = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec3 a = src[i] - cs, b = dst[i] - cd;
    spread += dot(a, a);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) h(r, c) += a[static_cast<std::size_t>(r)] * b[static_cast<std::size_t>(c)];
  }
  const Svd3 svd = svd3(h);
  // Rank <= 1 cross-covariance: rotation about the common line is unobservable.
  if (spread <= 1e-24 * n || svd.s[1] <= 1e-12 * std::max(svd.s[0], 1e-300))
    throw Error(ErrorCode::DegenerateCorrespondences, "correspondences are collinear or coincident");
  // R = V diag(1, 1, d) U^T
  const Mat3 vut = svd.v * svd.u.transposed();
  const double d = vut.determinant() < 0.0 ? -1.0 : 1.0;
  const Mat3 r = svd.v * Mat3::diag(1.0, 1.0, d) * svd.u.transposed();
  return RigidTransform::from_rotation(r, cd - r * cs);
}

void IcpConfig::validate() const {
  if (max_iterations < 1) throw Error(ErrorCode::Config, "icp max_iterations must be >= 1");
  if (!(convergence_tol > 0.0)) throw Error(ErrorCode::Config, "icp convergence_tol must be > 0");
  if (!(trim_fraction >= 0.0 && trim_fraction <= 0.5)) throw Error(ErrorCode::Config, "icp trim_fraction must lie in [0, 0.5]");
}

IcpResult icp_align(const PointCloud& source, const PointCloud& target, const RigidTransform& init,
                    const IcpConfig& cfg) {
  cfg.validate();
  if (source.empty() || target.empty()) throw Error(ErrorCode::EmptyScan, "icp_align needs two non-empty clouds");
  const KdTree tree(target.points);
  const std::size_t n = source.size();
  const std::size_t keep =
      std::min(n, std::max<std::size_t>(3, static_cast<std::size_t>(std::ceil((1.0 - cfg.trim_fraction) * static_cast<double>(n)))));

  IcpResult res;
  res.transform = init;
  std::vector<std::pair<double, std::size_t>> matches(n);
  std::vector<std::size_t> match_target(n);
  std::vector<Vec3> src, dst;
  src.reserve(keep);
  dst.reserve(keep);
  for (int it = 0; it < cfg.max_iterations; ++it) {
    const PointCloud moved = transform_points(res.transform, source);
    for (std::size_t i = 0; i < n; ++i) {
      const auto hit = tree.nearest(moved.points[i]);
      matches[i] = {hit.squared_distance, i};
      match_target[i] = hit.index;
    }
    std::sort(matches.begin(), matches.end());
    IcpIteration diag;
    diag.inliers = keep;
    double sum = 0.0, sum2 = 0.0;
    src.clear();
    dst.clear();
    for (std::size_t j = 0; j < keep; ++j) {
      const auto [d2, i] = matches[j];
      sum += std::sqrt(d2);
      sum2 += d2;
      src.push_back(moved.points[i]);
      dst.push_back(target.points[match_target[i]]);
    }
    diag.trimmed_mean = sum / static_cast<double>(keep);
    diag.trimmed_rms = std::sqrt(sum2 / static_cast<double>(keep));
    const bool small = diag.trimmed_mean < cfg.convergence_tol;
    const bool stalled = !res.history.empty() &&
                         std::abs(res.history.back().trimmed_mean - diag.trimmed_mean) < cfg.convergence_tol;
    res.history.push_back(diag);
    if (small || stalled) {
      res.converged = true;
      break;
    }
    res.transform = rigid_compose(best_rigid_fit(src, dst), res.transform);
  }
  return res;
}

std::string icp_history_csv(const std::vector<IcpIteration>& history) {
  std::string out = "iteration,trimmed_mean,trimmed_rms,inliers\n";
  for (std::size_t i = 0; i < history.size(); ++i)
    out += std::to_string(i + 1) + "," + format_double(history[i].trimmed_mean) + "," +
           format_double(history[i].trimmed_rms) + "," + std::to_string(history[i].inliers) + "\n";
  return out;
}

}  // namespace itnet
