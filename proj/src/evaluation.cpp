/// @file
/// Absolute trajectory error with nearest-timestamp association and a
/// closed-form rigid alignment.

#include "miliom/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace miliom {
namespace {

// Index of the ground-truth record nearest in time to t; truth is sorted.
size_t nearest_index(const std::vector<TrajectoryRecord>& truth, double t) {
  const auto it = std::lower_bound(
      truth.begin(), truth.end(), t,
      [](const TrajectoryRecord& r, double value) { return r.t < value; });
  if (it == truth.begin()) return 0;
  if (it == truth.end()) return truth.size() - 1;
  const size_t hi = static_cast<size_t>(it - truth.begin());
  return (t - truth[hi - 1].t) <= (truth[hi].t - t) ? hi - 1 : hi;
}

RigidTransform best_rigid_fit(const std::vector<Vec3>& from,
                              const std::vector<Vec3>& to) {
  const double n = static_cast<double>(from.size());
  Vec3 from_mean = Vec3::Zero();
  Vec3 to_mean = Vec3::Zero();
  for (size_t i = 0; i < from.size(); ++i) {
    from_mean += from[i];
    to_mean += to[i];
  }
  from_mean /= n;
  to_mean /= n;

  Mat3 cross = Mat3::Zero();
  for (size_t i = 0; i < from.size(); ++i) {
    cross += (to[i] - to_mean) * (from[i] - from_mean).transpose();
  }
  Eigen::JacobiSVD<Mat3> svd(cross,
                             Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 flip = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
    flip(2, 2) = -1.0;
  }
  const Mat3 R = svd.matrixU() * flip * svd.matrixV().transpose();

  RigidTransform fit;
  fit.q = UnitQuaternion::from_matrix(R);
  fit.t = to_mean - R * from_mean;
  return fit;
}

}  // namespace

AteResult evaluate_ate(const std::vector<TrajectoryRecord>& estimate,
                       const std::vector<TrajectoryRecord>& ground_truth,
                       const AteOptions& options) {
  std::vector<const TrajectoryRecord*> est_matched;
  std::vector<const TrajectoryRecord*> gt_matched;
  for (const TrajectoryRecord& r : estimate) {
    if (ground_truth.empty()) break;
    const size_t k = nearest_index(ground_truth, r.t);
    if (std::abs(ground_truth[k].t - r.t) > options.max_gap) continue;
    est_matched.push_back(&r);
    gt_matched.push_back(&ground_truth[k]);
  }
  if (est_matched.size() < 10) {
    throw std::runtime_error(
        "trajectory evaluation needs at least 10 associated poses, found " +
        std::to_string(est_matched.size()));
  }

  AteResult result;
  result.pairs = est_matched.size();
  if (options.align) {
    std::vector<Vec3> from, to;
    from.reserve(est_matched.size());
    to.reserve(gt_matched.size());
    for (size_t i = 0; i < est_matched.size(); ++i) {
      from.push_back(est_matched[i]->p);
      to.push_back(gt_matched[i]->p);
    }
    result.alignment = best_rigid_fit(from, to);
  }

  double sum_sq = 0.0;
  double sum = 0.0;
  double orient_sum_sq = 0.0;
  result.times.reserve(result.pairs);
  result.per_axis_error.reserve(result.pairs);
  for (size_t i = 0; i < est_matched.size(); ++i) {
    const Vec3 aligned_p = result.alignment(est_matched[i]->p);
    const UnitQuaternion aligned_q = result.alignment.q * est_matched[i]->q;
    const Vec3 err = aligned_p - gt_matched[i]->p;
    const double norm = err.norm();
    const double angle_deg =
        aligned_q.angle_to(gt_matched[i]->q) * 180.0 / M_PI;
    sum_sq += norm * norm;
    sum += norm;
    orient_sum_sq += angle_deg * angle_deg;
    result.max = std::max(result.max, norm);
    result.orientation_max_deg = std::max(result.orientation_max_deg, angle_deg);
    result.times.push_back(est_matched[i]->t);
    result.per_axis_error.push_back(err);
  }
  const double n = static_cast<double>(result.pairs);
  result.rmse = std::sqrt(sum_sq / n);
  result.mean = sum / n;
  result.orientation_rmse_deg = std::sqrt(orient_sum_sq / n);
  return result;
}

}  // namespace miliom
