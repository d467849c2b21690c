#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "miliom/matching.hpp"

using namespace miliom;

namespace {

std::vector<int> brute_knn(const std::vector<Vec3>& pts, const Vec3& q, int k, double max_r) {
  std::vector<int> idx(pts.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    double da = (pts[a] - q).squaredNorm(), db = (pts[b] - q).squaredNorm();
    return da != db ? da < db : a < b;
  });
  std::vector<int> out;
  for (int i : idx) {
    if (static_cast<int>(out.size()) == k) break;
    if ((pts[i] - q).norm() <= max_r) out.push_back(i);
  }
  return out;
}

std::vector<Vec3> random_points(int n, double span, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-span, span);
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  return pts;
}

// Dense grid of plane-map points on z = height.
std::vector<Vec3> plane_grid(double height, double span, double step) {
  std::vector<Vec3> pts;
  for (double x = -span; x <= span + 1e-12; x += step)
    for (double y = -span; y <= span + 1e-12; y += step) pts.emplace_back(x, y, height);
  return pts;
}

CfcCloud local_cloud(std::vector<std::pair<Vec3, FeatureKind>> features) {
  CfcCloud c;
  c.frame = CloudFrame::kLocal;
  for (auto& [p, k] : features) c.features.push_back({p, k, 0.0, 0});
  return c;
}

MatcherConfig tight_cfg() {
  MatcherConfig cfg;
  cfg.plane_leaf = 0.01;  // keep synthetic maps intact
  cfg.edge_leaf = 0.01;
  return cfg;
}

}  // namespace

TEST_CASE("kd-tree KNN matches the exhaustive oracle") {
  auto pts = random_points(300, 10.0, 3);
  KdTree3 tree(pts);
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(-11.0, 11.0);
  for (int trial = 0; trial < 50; ++trial) {
    Vec3 q(u(rng), u(rng), u(rng));
    for (double radius : {0.8, 2.0, 1e9}) {
      auto got = tree.knn(q, 5, radius);
      auto want = brute_knn(pts, q, 5, radius);
      REQUIRE(got.size() == want.size());
      for (size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
    }
  }
}

TEST_CASE("kd-tree breaks exact distance ties by index") {
  std::vector<Vec3> pts = {{1, 0, 0}, {0, 1, 0}, {1, 0, 0}, {0, 0, 1}, {1, 0, 0}};
  KdTree3 tree(pts);
  auto got = tree.knn(Vec3(1, 0, 0), 3, 10.0);
  REQUIRE(got.size() == 3);
  CHECK(got[0] == 0);
  CHECK(got[1] == 2);
  CHECK(got[2] == 4);
}

TEST_CASE("voxel downsample replaces voxels by centroids") {
  std::vector<Vec3> pts = {{0.1, 0.1, 0.1}, {0.3, 0.3, 0.3}, {1.1, 0.2, 0.0}};
  auto out = voxel_downsample(pts, 0.5);
  REQUIRE(out.size() == 2);
  CHECK((out[0] - Vec3(0.2, 0.2, 0.2)).norm() < 1e-12);
  CHECK((out[1] - pts[2]).norm() == 0.0);
  CHECK_THROWS_AS(voxel_downsample(pts, 0.0), std::invalid_argument);
}

TEST_CASE("voxel downsample centroids reproduce a per-cell oracle") {
  auto pts = random_points(500, 3.0, 9);
  double leaf = 0.7;
  auto out = voxel_downsample(pts, leaf);
  CHECK(out.size() <= pts.size());
  auto cell_of = [&](const Vec3& p) {
    return std::array<long long, 3>{static_cast<long long>(std::floor(p.x() / leaf)),
                                    static_cast<long long>(std::floor(p.y() / leaf)),
                                    static_cast<long long>(std::floor(p.z() / leaf))};
  };
  for (const auto& c : out) {
    auto key = cell_of(c);
    Vec3 sum = Vec3::Zero();
    int count = 0;
    for (const auto& p : pts)
      if (cell_of(p) == key) {
        sum += p;
        ++count;
      }
    REQUIRE(count > 0);
    CHECK((c - sum / count).norm() < 1e-9);
  }
  for (size_t i = 0; i < out.size(); ++i)
    for (size_t j = i + 1; j < out.size(); ++j) CHECK(cell_of(out[i]) != cell_of(out[j]));
}

TEST_CASE("Hesse plane fit reproduces axis-aligned planes exactly") {
  std::vector<Vec3> z1 = {{0, 0, 1}, {1, 0, 1}, {0, 1, 1}, {2, 3, 1}, {-1, 4, 1}};
  auto n = fit_plane_hesse(z1);
  REQUIRE(n.has_value());
  CHECK((*n - Vec3(0, 0, -1)).norm() < 1e-12);

  std::vector<Vec3> x2 = {{2, 0, 0}, {2, 1, 0}, {2, 0, 1}, {2, 5, -3}, {2, -2, 2}};
  n = fit_plane_hesse(x2);
  REQUIRE(n.has_value());
  CHECK((*n - Vec3(-0.5, 0, 0)).norm() < 1e-12);
}

TEST_CASE("Hesse plane fit matches a normal-equations oracle on noisy data") {
  std::mt19937 rng(21);
  std::normal_distribution<double> noise(0.0, 0.01);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Vec3 normal = Vec3(u(rng), u(rng), u(rng)).normalized();
    double d = 1.5 + trial * 0.1;  // plane n'x = d, away from the origin
    std::vector<Vec3> pts;
    for (int i = 0; i < 50; ++i) {
      Vec3 in_plane = normal.unitOrthogonal() * u(rng) * 2.0 +
                      normal.cross(normal.unitOrthogonal()) * u(rng) * 2.0;
      pts.push_back(normal * d + in_plane + normal * noise(rng));
    }
    auto n = fit_plane_hesse(pts);
    REQUIRE(n.has_value());
    Eigen::MatrixXd X(pts.size(), 3);
    for (size_t i = 0; i < pts.size(); ++i) X.row(i) = pts[i].transpose();
    Vec3 oracle = (X.transpose() * X).ldlt().solve(-X.transpose() * Eigen::VectorXd::Ones(pts.size()));
    CHECK((*n - oracle).norm() < 1e-9);
  }
}

TEST_CASE("degenerate neighborhoods fail the plane fit") {
  std::vector<Vec3> collinear;
  for (int i = 0; i < 5; ++i) collinear.emplace_back(1.0 + i, 2.0 + i, 3.0);
  collinear.back() = Vec3(1.0 + 4, 2.0 + 4, 3.0);
  CHECK_FALSE(fit_plane_hesse(collinear).has_value());

  std::vector<Vec3> through_origin = {{1, 1, 0}, {-1, -1, 0}, {2, 2, 1}, {0, 0, 3}, {1, 1, 2}};
  CHECK_FALSE(fit_plane_hesse(through_origin).has_value());  // plane x = y

  CHECK_FALSE(fit_plane_hesse({{1, 0, 0}, {0, 1, 0}}).has_value());
}

TEST_CASE("edge line fit recovers exact lines with canonical sign") {
  std::vector<Vec3> along_x;
  for (int i = 0; i < 5; ++i) along_x.emplace_back(i * 0.1, 2.0, 3.0);
  auto line = fit_edge_line(along_x, 3.0);
  REQUIRE(line.has_value());
  CHECK((line->second - Vec3(1, 0, 0)).norm() < 1e-12);
  CHECK((line->first - Vec3(0.2, 2.0, 3.0)).norm() < 1e-12);

  std::vector<Vec3> diag;
  for (int i = -2; i <= 2; ++i) diag.push_back(Vec3(1, 1, 0).normalized() * (0.05 * i));
  line = fit_edge_line(diag, 3.0);
  REQUIRE(line.has_value());
  CHECK((line->second - Vec3(1, 1, 0).normalized()).norm() < 1e-9);
}

TEST_CASE("edge line fit matches a power-iteration oracle") {
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> lateral(0.0, 0.01);
  for (int trial = 0; trial < 20; ++trial) {
    Vec3 dir = Vec3(u(rng), u(rng), u(rng)).normalized();
    Vec3 base(u(rng), u(rng), u(rng));
    std::vector<Vec3> pts;
    for (int i = 0; i < 12; ++i)
      pts.push_back(base + dir * u(rng) + Vec3(lateral(rng), lateral(rng), lateral(rng)));
    auto line = fit_edge_line(pts, 3.0);
    REQUIRE(line.has_value());

    Vec3 centroid = Vec3::Zero();
    for (const auto& p : pts) centroid += p;
    centroid /= pts.size();
    Mat3 scatter = Mat3::Zero();
    for (const auto& p : pts) scatter += (p - centroid) * (p - centroid).transpose();
    scatter /= pts.size();
    Vec3 v = Vec3(1, 1, 1).normalized();
    for (int it = 0; it < 3000; ++it) v = (scatter * v).normalized();
    if (v.dot(line->second) < 0) v = -v;
    CHECK((line->second - v).norm() < 1e-8);
  }
}

TEST_CASE("isotropic clusters fail the edge gate") {
  std::vector<Vec3> blob = {{0.1, 0, 0}, {-0.1, 0, 0}, {0, 0.1, 0},
                            {0, -0.1, 0}, {0, 0, 0.1}, {0, 0, -0.1}};
  CHECK_FALSE(fit_edge_line(blob, 3.0).has_value());
}

TEST_CASE("a plane feature on a mapped plane yields a perfect-fitness factor") {
  LocalMap map(plane_grid(1.0, 1.0, 0.1), {}, 0.01, 0.01);
  Vec3 f(0.05, 0.05, 1.0);
  auto cfc = local_cloud({{f, FeatureKind::kPlane}});
  auto set = fmm_coefficients(cfc, map, RigidTransform::identity(), tight_cfg());
  REQUIRE(set.coeffs.size() == 1);
  const auto& L = set.coeffs[0];
  CHECK((L.f - f).norm() < 1e-12);
  CHECK(L.c == doctest::Approx(1.0).epsilon(1e-9));  // g = s / ||n|| = 1 / 1
  CHECK(lidar_residual(RigidTransform::identity(), L) == doctest::Approx(0.0).epsilon(1e-12));

  // Translating along the plane normal changes the residual by g * d.
  RigidTransform lifted{UnitQuaternion::identity(), Vec3(0, 0, 0.25)};
  CHECK(std::abs(lidar_residual(lifted, L)) == doctest::Approx(L.c * 0.25).epsilon(1e-9));
  // In-plane translation leaves it unchanged.
  RigidTransform slid{UnitQuaternion::identity(), Vec3(0.3, -0.2, 0)};
  CHECK(std::abs(lidar_residual(slid, L)) < 1e-12);
}

TEST_CASE("fitness decreases with relative point-to-plane deviation and gates admission") {
  LocalMap map(plane_grid(1.0, 1.0, 0.1), {}, 0.01, 0.01);
  MatcherConfig cfg = tight_cfg();

  auto fitness_of = [&](double z) {
    auto set = fmm_coefficients(local_cloud({{Vec3(0.05, 0.05, z), FeatureKind::kPlane}}), map,
                                RigidTransform::identity(), cfg);
    REQUIRE(set.coeffs.size() == 1);
    return set.coeffs[0].c;  // g = s for this unit-norm map normal
  };
  double s_near = fitness_of(0.98);
  double s_far = fitness_of(0.90);
  CHECK(s_near > s_far);
  CHECK(s_near < 1.0);

  auto rejected = fmm_coefficients(local_cloud({{Vec3(0, 0, 0.4), FeatureKind::kPlane}}), map,
                                   RigidTransform::identity(), cfg);
  CHECK(rejected.coeffs.empty());
  CHECK(rejected.skipped_fitness == 1);
}

TEST_CASE("an edge feature on a mapped line yields two orthogonal factors") {
  std::vector<Vec3> edge_pts;
  for (int i = 0; i <= 40; ++i) edge_pts.emplace_back(0.0, 0.0, i * 0.05);
  LocalMap map({}, edge_pts, 0.01, 0.01);
  Vec3 f(0.0, 0.0, 0.37);
  auto set = fmm_coefficients(local_cloud({{f, FeatureKind::kEdge}}), map,
                              RigidTransform::identity(), tight_cfg());
  REQUIRE(set.coeffs.size() == 2);
  const auto& a = set.coeffs[0];
  const auto& b = set.coeffs[1];
  CHECK(std::abs(lidar_residual(RigidTransform::identity(), a)) < 1e-9);
  CHECK(std::abs(lidar_residual(RigidTransform::identity(), b)) < 1e-9);
  CHECK(std::abs(a.n.dot(b.n)) < 1e-9);
  // s = 1 on the line: g = 0.5, ||n1|| = 1, ||n2|| = 0.2.
  CHECK(a.n.norm() == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(b.n.norm() == doctest::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("each edge feature contributes zero or two factors, planes zero or one") {
  std::vector<Vec3> edge_pts;
  for (int i = 0; i <= 40; ++i) edge_pts.emplace_back(0.0, 0.0, i * 0.05);
  LocalMap map(plane_grid(1.0, 1.0, 0.1), edge_pts, 0.01, 0.01);
  auto cfc = local_cloud({{Vec3(0.02, 0.03, 0.5), FeatureKind::kEdge},
                          {Vec3(0.1, 0.1, 1.0), FeatureKind::kPlane},
                          {Vec3(0.05, -0.04, 1.2), FeatureKind::kEdge},
                          {Vec3(5.0, 5.0, 5.0), FeatureKind::kPlane}});
  auto set = fmm_coefficients(cfc, map, RigidTransform::identity(), tight_cfg());
  int edges = 0, planes = 0;
  for (size_t i = 0; i < cfc.features.size(); ++i)
    (cfc.features[i].kind == FeatureKind::kEdge ? edges : planes)++;
  CHECK(set.coeffs.size() <= static_cast<size_t>(planes) + 2 * edges);
  CHECK(set.skipped_knn == 1);  // the far-away plane feature has no neighbors
  // Edge admissions come in pairs.
  size_t plane_admits = 0;
  for (const auto& L : set.coeffs) plane_admits += (std::abs(L.c) > 0.4) ? 1 : 0;
  CHECK((set.coeffs.size() - plane_admits) % 2 == 0);
}

TEST_CASE("matching skips features with too few neighbors and survives an empty map") {
  LocalMap map(std::vector<Vec3>{{0, 0, 1}, {0.1, 0, 1}, {0, 0.1, 1}}, {}, 0.01, 0.01);
  auto set = fmm_coefficients(local_cloud({{Vec3(0, 0, 1), FeatureKind::kPlane}}), map,
                              RigidTransform::identity(), tight_cfg());
  CHECK(set.coeffs.empty());
  CHECK(set.skipped_knn == 1);

  LocalMap empty({}, {}, 0.1, 0.1);
  auto nothing = fmm_coefficients(local_cloud({{Vec3(0, 0, 1), FeatureKind::kPlane},
                                               {Vec3(1, 0, 0), FeatureKind::kEdge}}),
                                  empty, RigidTransform::identity(), tight_cfg());
  CHECK(nothing.coeffs.empty());
  CHECK(nothing.skipped_knn == 2);
}

TEST_CASE("matching leaves the local map untouched and is thread-count invariant") {
  auto planes = plane_grid(1.0, 2.0, 0.1);
  std::vector<Vec3> edges;
  for (int i = 0; i <= 100; ++i) edges.emplace_back(0.0, 0.0, i * 0.05);
  LocalMap map(planes, edges, 0.01, 0.01);

  std::vector<Vec3> before;
  for (size_t i = 0; i < map.planes().size(); ++i) before.push_back(map.planes().point(i));

  std::mt19937 rng(77);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<CfcCloud> cfcs;
  std::vector<RigidTransform> poses;
  for (int c = 0; c < 6; ++c) {
    std::vector<std::pair<Vec3, FeatureKind>> feats;
    for (int i = 0; i < 40; ++i)
      feats.push_back({Vec3(u(rng), u(rng), 1.0 + 0.02 * u(rng)), FeatureKind::kPlane});
    for (int i = 0; i < 20; ++i)
      feats.push_back({Vec3(0.01 * u(rng), 0.01 * u(rng), 2.0 + u(rng)), FeatureKind::kEdge});
    cfcs.push_back(local_cloud(feats));
    poses.push_back({exp_rotvec(Vec3(0.01 * c, 0, 0.02 * c)), Vec3(0.1 * c, 0, 0)});
  }

  auto one = fmm_coefficients_parallel(cfcs, map, poses, tight_cfg(), 1);
  auto two = fmm_coefficients_parallel(cfcs, map, poses, tight_cfg(), 2);
  auto eight = fmm_coefficients_parallel(cfcs, map, poses, tight_cfg(), 8);
  REQUIRE(one.size() == cfcs.size());
  size_t total = 0;
  for (size_t i = 0; i < one.size(); ++i) {
    REQUIRE(one[i].coeffs.size() == two[i].coeffs.size());
    REQUIRE(one[i].coeffs.size() == eight[i].coeffs.size());
    total += one[i].coeffs.size();
    for (size_t j = 0; j < one[i].coeffs.size(); ++j) {
      CHECK((one[i].coeffs[j].f - two[i].coeffs[j].f).norm() == 0.0);
      CHECK((one[i].coeffs[j].n - eight[i].coeffs[j].n).norm() == 0.0);
      CHECK(one[i].coeffs[j].c == eight[i].coeffs[j].c);
    }
  }
  CHECK(total > 0);

  for (size_t i = 0; i < map.planes().size(); ++i)
    CHECK((map.planes().point(i) - before[i]).norm() == 0.0);
}

TEST_CASE("local map assembly selects bootstrap clouds then nearest keyframes") {
  MatcherConfig cfg;
  cfg.map_keyframes = 5;
  cfg.plane_leaf = 0.01;
  cfg.edge_leaf = 0.01;

  KeyframeConfig kf_cfg;
  kf_cfg.min_distance = 0.9;
  KeyframeStore store(kf_cfg);

  CfcCloud boot;
  boot.frame = CloudFrame::kLocal;
  boot.features.push_back({Vec3(1, 2, 3), FeatureKind::kPlane, 0.0, 0});
  auto bootstrap_map = assemble_local_map(store, Vec3::Zero(), {boot}, cfg);
  CHECK(bootstrap_map.planes().size() == 1);
  CHECK((bootstrap_map.planes().point(0) - Vec3(1, 2, 3)).norm() == 0.0);

  CfcCloud body_feature;
  body_feature.frame = CloudFrame::kBody;
  body_feature.features.push_back({Vec3(0, 0, 0.2), FeatureKind::kPlane, 0.0, 0});
  for (int i = 0; i < 20; ++i)
    store.consider_admit(i, {UnitQuaternion::identity(), Vec3(1.0 * i, 0, 0)}, body_feature);
  REQUIRE(store.size() == 20);

  auto map = assemble_local_map(store, Vec3(10.2, 0, 0), {}, cfg);
  REQUIRE(map.planes().size() == 5);
  std::vector<double> xs;
  for (size_t i = 0; i < 5; ++i) xs.push_back(map.planes().point(i).x());
  std::sort(xs.begin(), xs.end());
  for (int i = 0; i < 5; ++i) CHECK(xs[i] == doctest::Approx(8.0 + i).epsilon(1e-12));
  CHECK(map.planes().point(0).z() == doctest::Approx(0.2).epsilon(1e-12));

  CHECK_THROWS_AS(assemble_local_map(KeyframeStore{}, Vec3::Zero(), {}, cfg), std::runtime_error);

  CfcCloud wrong = boot;
  wrong.frame = CloudFrame::kBody;
  CHECK_THROWS_AS(assemble_local_map(KeyframeStore{}, Vec3::Zero(), {wrong}, cfg),
                  std::invalid_argument);
}

TEST_CASE("lidar residual Jacobians match finite differences") {
  std::mt19937 rng(55);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    RigidTransform pose{exp_rotvec(Vec3(u(rng), u(rng), u(rng))), Vec3(u(rng), u(rng), u(rng))};
    FmmCoeff L{Vec3(u(rng), u(rng), u(rng)), Vec3(u(rng), u(rng), u(rng)) * 0.7, u(rng)};
    Eigen::Matrix<double, 1, 6> jac;
    lidar_residual(pose, L, &jac);
    const double h = 1e-7;
    for (int col = 0; col < 6; ++col) {
      Vec3 delta = Vec3::Zero();
      delta(col % 3) = h;
      RigidTransform plus = pose, minus = pose;
      if (col < 3) {
        plus.q = pose.q * exp_rotvec(delta);
        minus.q = pose.q * exp_rotvec(-delta);
      } else {
        plus.t = pose.t + delta;
        minus.t = pose.t - delta;
      }
      double fd = (lidar_residual(plus, L) - lidar_residual(minus, L)) / (2 * h);
      CHECK(jac(0, col) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}
