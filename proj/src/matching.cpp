#include "miliom/matching.hpp"

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <thread>

namespace miliom {

namespace {

// Unit normal of the dominant plane through `self` within its patch, found by
// exhausting plane hypotheses (self, b, c) and keeping the one most patch
// points lie on. A straight PCA normal would tilt wherever the patch spans
// two surfaces meeting at a corner; the consensus plane stays on the surface
// that actually contains the point. Zero when no hypothesis reaches four
// points with a two-dimensional spread.
Vec3 consensus_normal(const Vec3& self, const std::vector<Vec3>& patch, double tol,
                      double spread_ratio) {
  int best_inliers = 0;
  Vec3 best_normal = Vec3::Zero();
  for (size_t b = 0; b < patch.size(); ++b) {
    for (size_t c = b + 1; c < patch.size(); ++c) {
      const Vec3 u = patch[b] - self;
      const Vec3 v = patch[c] - self;
      Vec3 n = u.cross(v);
      const double norm = n.norm();
      if (norm * norm < 1e-12 * u.squaredNorm() * v.squaredNorm()) continue;
      n /= norm;
      int inliers = 0;
      for (const Vec3& x : patch) {
        if (std::abs(n.dot(x - self)) <= tol) ++inliers;
      }
      if (inliers > best_inliers) {
        best_inliers = inliers;
        best_normal = n;
      }
    }
  }
  if (best_inliers < 4) return Vec3::Zero();
  // Refit over the winning plane's inliers; a consensus that is really a line
  // through the corner cannot orient a surface.
  Vec3 centroid = Vec3::Zero();
  int count = 0;
  for (const Vec3& x : patch) {
    if (std::abs(best_normal.dot(x - self)) <= tol) {
      centroid += x;
      ++count;
    }
  }
  centroid /= static_cast<double>(count);
  Mat3 scatter = Mat3::Zero();
  for (const Vec3& x : patch) {
    if (std::abs(best_normal.dot(x - self)) <= tol) {
      const Vec3 d = x - centroid;
      scatter += d * d.transpose();
    }
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
  if (eig.eigenvalues()(1) < spread_ratio * eig.eigenvalues()(2)) return Vec3::Zero();
  return eig.eigenvectors().col(0);
}

}  // namespace

// Medoid voxels keep map points on measured surfaces; a centroid straddling a
// wall junction would sit off both walls and poison the plane fits around it.
LocalMap::LocalMap(const std::vector<Vec3>& plane_points, const std::vector<Vec3>& edge_points,
                   double plane_leaf, double edge_leaf, double normal_spread_ratio,
                   double normal_fit_tol)
    : planes_(voxel_medoid_downsample(voxel_medoid_downsample(plane_points, plane_leaf), 0.01)),
      edges_(voxel_medoid_downsample(voxel_medoid_downsample(edge_points, edge_leaf), 0.01)) {
  // The second pass merges near-duplicates that the first cannot see: a
  // surface lying on a voxel boundary splits sub-millimeter pairs across two
  // cells, and such pairs would count twice in every neighbor set.
  // Patch normals over a neighborhood wider than the voxel pitch, so parallel
  // scan rows on one surface merge into a single oriented patch. Points whose
  // patch cannot name one surface keep a zero normal.
  const double radius = 1.6 * plane_leaf;
  plane_normals_.assign(planes_.size(), Vec3::Zero());
  std::vector<Vec3> patch;
  for (size_t i = 0; i < planes_.size(); ++i) {
    const Vec3& self = planes_.point(static_cast<int>(i));
    const auto idx = planes_.knn(self, 10, radius);
    if (idx.size() < 4) continue;
    patch.clear();
    for (int j : idx) patch.push_back(planes_.point(j));
    plane_normals_[i] = consensus_normal(self, patch, normal_fit_tol, normal_spread_ratio);
  }
}

LocalMap assemble_local_map(const KeyframeStore& store, const Vec3& predicted_p,
                            const std::vector<CfcCloud>& bootstrap_clouds,
                            const MatcherConfig& cfg) {
  std::vector<Vec3> planes, edges;
  auto take = [&](const CfcCloud& cloud, const RigidTransform* pose) {
    for (const auto& f : cloud.features) {
      Vec3 x = pose ? (*pose)(f.xyz) : f.xyz;
      (f.kind == FeatureKind::kPlane ? planes : edges).push_back(x);
    }
  };
  for (int i : store.knn_indices(predicted_p, cfg.map_keyframes))
    take(store.at(i).cloud, &store.at(i).pose);
  if (store.size() < static_cast<size_t>(cfg.map_keyframes)) {
    for (const auto& cloud : bootstrap_clouds) {
      if (cloud.frame != CloudFrame::kLocal)
        throw std::invalid_argument("bootstrap clouds must be in the local frame");
      take(cloud, nullptr);
    }
  }
  if (planes.empty() && edges.empty()) throw std::runtime_error("no local-map sources");
  return LocalMap(planes, edges, cfg.plane_leaf, cfg.edge_leaf, cfg.plane_spread_ratio,
                  cfg.plane_fit_max_dist);
}

std::optional<Vec3> fit_plane_hesse(const std::vector<Vec3>& neighbors) {
  if (neighbors.size() < 3) return std::nullopt;
  Eigen::MatrixXd X(neighbors.size(), 3);
  for (size_t i = 0; i < neighbors.size(); ++i) X.row(i) = neighbors[i].transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv(0) <= 0.0 || sv(2) < 1e-8 * sv(0)) return std::nullopt;
  return Vec3(svd.solve(Eigen::VectorXd::Constant(neighbors.size(), -1.0)));
}

std::optional<std::pair<Vec3, Vec3>> fit_edge_line(const std::vector<Vec3>& neighbors,
                                                   double eigen_ratio) {
  if (neighbors.empty()) return std::nullopt;
  Vec3 centroid = Vec3::Zero();
  for (const auto& x : neighbors) centroid += x;
  centroid /= static_cast<double>(neighbors.size());
  Mat3 scatter = Mat3::Zero();
  for (const auto& x : neighbors) scatter += (x - centroid) * (x - centroid).transpose();
  scatter /= static_cast<double>(neighbors.size());
  Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
  double l_max = eig.eigenvalues()(2), l_mid = eig.eigenvalues()(1);
  if (l_max < eigen_ratio * l_mid || l_max <= 0.0) return std::nullopt;
  Vec3 dir = eig.eigenvectors().col(2);
  int major = 0;
  dir.cwiseAbs().maxCoeff(&major);
  if (dir(major) < 0.0) dir = -dir;
  return std::make_pair(centroid, dir);
}

namespace {

void match_plane(const Vec3& f_local, const Vec3& f_body, const LocalMap& map,
                 const MatcherConfig& cfg, FmmSet& out) {
  auto idx = map.planes().knn(f_local, cfg.knn, cfg.max_neighbor_radius);
  if (static_cast<int>(idx.size()) < cfg.knn) {
    ++out.skipped_knn;
    return;
  }
  // The nearest mapped point names the surface being matched; neighbors whose
  // patch normal disagrees (the wall points around a floor corner) are dropped
  // before the fit instead of bending it toward a junction diagonal.
  std::vector<Vec3> neighbors;
  neighbors.reserve(idx.size());
  if (cfg.normal_max_angle_deg < 90.0) {
    const Vec3& ref = map.plane_normal(idx[0]);
    if (ref.isZero()) {
      ++out.skipped_normal;
      return;
    }
    const double min_dot = std::cos(cfg.normal_max_angle_deg * M_PI / 180.0);
    for (int i : idx) {
      const Vec3& ni = map.plane_normal(i);
      if (!ni.isZero() && std::abs(ni.dot(ref)) >= min_dot) {
        neighbors.push_back(map.planes().point(i));
      }
    }
    if (neighbors.size() < 3) {
      ++out.skipped_normal;
      return;
    }
  } else {
    for (int i : idx) neighbors.push_back(map.planes().point(i));
  }
  // Thin sets (a surface crossed by a single scan ring) leave the fitted
  // plane free to pivot about the line; only a two-dimensional spread pins
  // it down.
  {
    Vec3 centroid = Vec3::Zero();
    for (const Vec3& x : neighbors) centroid += x;
    centroid /= static_cast<double>(neighbors.size());
    Mat3 scatter = Mat3::Zero();
    for (const Vec3& x : neighbors)
      scatter += (x - centroid) * (x - centroid).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
    if (eig.eigenvalues()(1) < cfg.plane_spread_ratio * eig.eigenvalues()(2)) {
      ++out.skipped_fit;
      return;
    }
  }
  auto n_bar = fit_plane_hesse(neighbors);
  if (!n_bar) {
    ++out.skipped_fit;
    return;
  }
  double norm_n = n_bar->norm(), norm_f = f_local.norm();
  if (norm_f <= 0.0 || norm_n <= 0.0) {
    ++out.skipped_fit;
    return;
  }
  // A fit that leaves any neighbor far off the plane straddles two surfaces
  // (typical at wall junctions) and would bias the residual at the true pose.
  for (const Vec3& x : neighbors) {
    if (std::abs(n_bar->dot(x) + 1.0) > cfg.plane_fit_max_dist * norm_n) {
      ++out.skipped_fit;
      return;
    }
  }
  const double dist = std::abs(n_bar->dot(f_local) + 1.0) / norm_n;
  if (dist > cfg.max_match_dist) {
    ++out.skipped_distance;
    return;
  }
  double s = 1.0 - 0.9 * dist / norm_f;
  if (s <= cfg.min_fitness) {
    ++out.skipped_fitness;
    return;
  }
  double g = s / norm_n;
  if (std::getenv("MILIOM_DUMP_FIT")) {
    const Vec3 nh = *n_bar / norm_n;
    const double axis_dev =
        1.0 - nh.cwiseAbs().maxCoeff();
    if (axis_dev > 0.06) {
      std::printf("  FIT f=(%6.2f %6.2f %6.2f) nh=(%5.2f %5.2f %5.2f) d=%.4f\n",
                  f_local.x(), f_local.y(), f_local.z(), nh.x(), nh.y(), nh.z(),
                  dist);
      for (int i : idx) {
        const Vec3& x = map.planes().point(i);
        const Vec3& n = map.plane_normal(i);
        std::printf("    nb (%7.3f %7.3f %7.3f) n=(%5.2f %5.2f %5.2f)\n", x.x(),
                    x.y(), x.z(), n.x(), n.y(), n.z());
      }
    }
  }
  out.coeffs.push_back({f_body, g * (*n_bar), g});
}

void match_edge(const Vec3& f_local, const Vec3& f_body, const LocalMap& map,
                const MatcherConfig& cfg, FmmSet& out) {
  auto idx = map.edges().knn(f_local, cfg.knn, cfg.max_neighbor_radius);
  if (static_cast<int>(idx.size()) < cfg.knn) {
    ++out.skipped_knn;
    return;
  }
  std::vector<Vec3> neighbors;
  neighbors.reserve(idx.size());
  for (int i : idx) neighbors.push_back(map.edges().point(i));
  auto line = fit_edge_line(neighbors, cfg.edge_eigen_ratio);
  if (!line) {
    ++out.skipped_fit;
    return;
  }
  const auto& [centroid, dir] = *line;
  Vec3 x0 = f_local;
  Vec3 x1 = centroid + 0.1 * dir;
  Vec3 x2 = centroid - 0.1 * dir;
  Vec3 v01 = x0 - x1, v02 = x0 - x2, v12 = x1 - x2, v10 = -v01;
  Vec3 cross = v10.cross(v02);
  // A feature exactly on the line leaves the first plane's orientation free;
  // any direction perpendicular to the line closes the construction.
  Vec3 n1 = cross.squaredNorm() < 1e-18 * v10.squaredNorm() * v02.squaredNorm()
                ? Vec3(v12.unitOrthogonal())
                : Vec3(v12.cross(cross).normalized());
  Vec3 n2 = v12.cross(n1);
  Vec3 f_perp = f_local - n1 * n1.dot(v01);
  double c1 = -n1.dot(f_perp);
  double c2 = -n2.dot(f_perp);
  const double dist = v01.cross(v02).norm() / v12.norm();
  if (dist > cfg.max_match_dist) {
    ++out.skipped_distance;
    return;
  }
  double s = 1.0 - 0.9 * dist;
  if (s <= cfg.min_fitness) {
    ++out.skipped_fitness;
    return;
  }
  double g = s / 2.0;
  out.coeffs.push_back({f_body, g * n1, g * c1});
  out.coeffs.push_back({f_body, g * n2, g * c2});
}

}  // namespace

FmmSet fmm_coefficients(const CfcCloud& cfc, const LocalMap& map, const RigidTransform& pose,
                        const MatcherConfig& cfg) {
  if (cfc.frame != CloudFrame::kLocal)
    throw std::invalid_argument("matching expects a local-frame cloud");
  FmmSet out;
  RigidTransform inv = pose.inverse();
  for (const auto& f : cfc.features) {
    Vec3 f_body = inv(f.xyz);
    if (f.kind == FeatureKind::kPlane)
      match_plane(f.xyz, f_body, map, cfg, out);
    else
      match_edge(f.xyz, f_body, map, cfg, out);
  }
  return out;
}

std::vector<FmmSet> fmm_coefficients_parallel(const std::vector<CfcCloud>& cfcs,
                                              const LocalMap& map,
                                              const std::vector<RigidTransform>& poses,
                                              const MatcherConfig& cfg, int threads) {
  if (cfcs.size() != poses.size())
    throw std::invalid_argument("one pose per cloud required");
  std::vector<FmmSet> results(cfcs.size());
  threads = std::max(1, threads);
  if (threads == 1 || cfcs.size() <= 1) {
    for (size_t i = 0; i < cfcs.size(); ++i)
      results[i] = fmm_coefficients(cfcs[i], map, poses[i], cfg);
    return results;
  }
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (size_t i = next.fetch_add(1); i < cfcs.size(); i = next.fetch_add(1))
      results[i] = fmm_coefficients(cfcs[i], map, poses[i], cfg);
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min<int>(threads, cfcs.size()); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return results;
}

double lidar_residual(const RigidTransform& pose, const FmmCoeff& coeff,
                      Eigen::Matrix<double, 1, 6>* jacobian) {
  Vec3 rotated = pose.q.rotate(coeff.f);
  double r = coeff.n.dot(rotated + pose.t) + coeff.c;
  if (jacobian) {
    jacobian->block<1, 3>(0, 0) = -coeff.n.transpose() * pose.q.matrix() * skew(coeff.f);
    jacobian->block<1, 3>(0, 3) = coeff.n.transpose();
  }
  return r;
}

}  // namespace miliom
