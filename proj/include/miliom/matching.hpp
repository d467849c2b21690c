/// @file matching.hpp
/// Local-map assembly and feature-to-map matching coefficients.
#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "miliom/cloud.hpp"
#include "miliom/geometry.hpp"
#include "miliom/keyframes.hpp"
#include "miliom/spatial.hpp"

namespace miliom {

struct MatcherConfig {
  int knn = 5;
  double max_neighbor_radius = 2.0;  // meters; guards against cross-structure matches
  double min_fitness = 0.1;
  double plane_fit_max_dist = 0.015;  // meters; any neighbor farther off the fit rejects it
  double plane_spread_ratio = 0.02;  // mid/major eigenvalue floor; a neighbor set
                                     // this close to a line cannot pin a plane
  double max_match_dist = 0.1;       // meters; feature-to-primitive gate against
                                     // associating a surface just grazing into view
                                     // with a mapped surface behind it
  double normal_max_angle_deg = 30.0;  // neighbors whose map normal deviates more
                                       // than this from the nearest neighbor's are
                                       // dropped from plane fits; 90 or more
                                       // disables the filter
  double edge_eigen_ratio = 3.0;     // largest/second-largest eigenvalue gate
  double plane_leaf = 0.4;           // meters
  double edge_leaf = 0.2;            // meters
  int map_keyframes = 10;
};

/// One matched feature: body-frame point, fitness-weighted plane normal, and
/// fitness-weighted offset. The residual at pose (q, p) is n'(R(q) f + p) + c.
struct FmmCoeff {
  Vec3 f = Vec3::Zero();
  Vec3 n = Vec3::Zero();
  double c = 0.0;
};

struct FmmSet {
  std::vector<FmmCoeff> coeffs;
  int skipped_knn = 0;       // fewer than K neighbors in radius
  int skipped_normal = 0;    // surface direction unknown or neighbors disagree
  int skipped_fit = 0;       // rank-deficient plane or isotropic edge cluster
  int skipped_fitness = 0;   // fitness at or below the threshold
  int skipped_distance = 0;  // feature too far from the fitted primitive
};

/// Immutable matching target: downsampled plane and edge clouds in the local
/// frame with a neighbor index over each. Every plane point carries the normal
/// of its surrounding surface patch, or zero where the patch is too close to
/// a line to orient one.
class LocalMap {
 public:
  LocalMap() = default;
  LocalMap(const std::vector<Vec3>& plane_points, const std::vector<Vec3>& edge_points,
           double plane_leaf, double edge_leaf, double normal_spread_ratio = 0.02,
           double normal_fit_tol = 0.015);

  const KdTree3& planes() const { return planes_; }
  const KdTree3& edges() const { return edges_; }
  const Vec3& plane_normal(int i) const { return plane_normals_[static_cast<size_t>(i)]; }
  bool empty() const { return planes_.empty() && edges_.empty(); }

 private:
  KdTree3 planes_;
  KdTree3 edges_;
  std::vector<Vec3> plane_normals_;
};

/// Merges map sources and downsamples. The map_keyframes keyframes nearest to
/// predicted_p are placed by their key poses; while the store holds fewer than
/// map_keyframes the bootstrap clouds (local frame) supplement them. Throws
/// when the selected sources hold no points.
LocalMap assemble_local_map(const KeyframeStore& store, const Vec3& predicted_p,
                            const std::vector<CfcCloud>& bootstrap_clouds,
                            const MatcherConfig& cfg);

/// Least-squares Hesse form X n = -1; the plane is {x : n'x + 1 = 0}.
/// Fails on rank-deficient neighborhoods, including planes through the origin.
std::optional<Vec3> fit_plane_hesse(const std::vector<Vec3>& neighbors);

/// Principal line through the neighbors: (centroid, unit direction). Fails
/// when the largest scatter eigenvalue is below ratio times the second.
std::optional<std::pair<Vec3, Vec3>> fit_edge_line(const std::vector<Vec3>& neighbors,
                                                   double eigen_ratio);

/// Matches every feature of a local-frame CFC against the map. pose is the
/// estimate that placed the cloud into the local frame; stored points are its
/// body-frame coordinates. Plane features yield one coefficient, edge
/// features two (the intersecting-plane pair), each gated on fitness.
FmmSet fmm_coefficients(const CfcCloud& cfc, const LocalMap& map, const RigidTransform& pose,
                        const MatcherConfig& cfg);

/// Runs fmm_coefficients for each cloud on a pool of `threads` workers.
/// Results are positionally identical for any thread count.
std::vector<FmmSet> fmm_coefficients_parallel(const std::vector<CfcCloud>& cfcs,
                                              const LocalMap& map,
                                              const std::vector<RigidTransform>& poses,
                                              const MatcherConfig& cfg, int threads);

/// Signed weighted point-to-plane distance. Optional Jacobian row over the
/// pose error [dtheta(0..2), dp(3..5)] with q boxplus q*E(dtheta), p + dp.
double lidar_residual(const RigidTransform& pose, const FmmCoeff& coeff,
                      Eigen::Matrix<double, 1, 6>* jacobian = nullptr);

}  // namespace miliom
