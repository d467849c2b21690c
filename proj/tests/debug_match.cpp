#include <algorithm>
#include <cstdio>

#include "miliom/config.hpp"
#include "miliom/frontend.hpp"
#include "miliom/keyframes.hpp"
#include "miliom/matching.hpp"
#include "miliom/simulator.hpp"

using namespace miliom;

namespace {

RigidTransform truth_pose(const SimulatedDataset& data, double t) {
  const size_t i = static_cast<size_t>(t / 0.005 + 0.5);
  const TimedState& s = data.ground_truth[i];
  return RigidTransform{s.q, s.p};
}

// Deskews a sweep with the truth motion and expresses it at the local frame
// defined by the truth pose at the first primary sweep start.
CfcCloud local_cloud_at_truth(const SimulatedDataset& data, const RawScan& scan,
                              const RigidTransform& origin, const FrontendConfig& cfg) {
  const FeatureCloud feats = extract_features(scan, cfg);
  ScfcCloud scfc;
  scfc.t_start = feats.t_start;
  scfc.t_end = feats.t_end;
  scfc.features = feats.features;
  const RigidTransform start = truth_pose(data, scan.t_start);
  const RigidTransform rel = start.inverse() * truth_pose(data, scan.t_end);
  CfcCloud body = deskew(scfc, rel);
  return transform_to_local(body, origin.inverse() * start);
}

}  // namespace

int main(int argc, char** argv) {
  const double probe_t = argc > 1 ? std::atof(argv[1]) : 0.3;
  ScenarioConfig scenario;
  scenario.duration = 3.0;
  scenario.seed = 5;
  scenario.with_noise = false;
  const SimulatedDataset data = simulate_scenario(ScenarioKind::kRoom, scenario);

  const PipelineConfig cfg = default_config();
  const RigidTransform origin = truth_pose(data, 0.3);

  // Map: the first primary sweep placed exactly, like the pipeline bootstrap.
  const CfcCloud map_cloud =
      local_cloud_at_truth(data, data.scans[0][0], origin, cfg.extraction);
  KeyframeStore store;
  const LocalMap map =
      assemble_local_map(store, Vec3::Zero(), {map_cloud}, cfg.matcher);

  // Probe sweep at its truth pose.
  const RawScan* probe = nullptr;
  for (const RawScan& s : data.scans[0])
    if (std::abs(s.t_start - probe_t) < 1e-9) probe = &s;
  if (!probe) {
    std::printf("no primary sweep starts at %.2f\n", probe_t);
    return 1;
  }
  const CfcCloud local =
      local_cloud_at_truth(data, *probe, origin, cfg.extraction);

  FmmSet set = fmm_coefficients(local, map, RigidTransform{}, cfg.matcher);
  std::vector<std::pair<double, size_t>> ranked;
  double cost = 0.0;
  for (size_t i = 0; i < set.coeffs.size(); ++i) {
    const double r =
        std::abs(lidar_residual(RigidTransform{}, set.coeffs[i], nullptr));
    ranked.push_back({r, i});
    const double w = r / 0.05;
    cost += w <= 1.0 ? 0.5 * w * w : w - 0.5;
  }
  std::sort(ranked.begin(), ranked.end(), std::greater<>());
  std::printf(
      "t=%.2f features=%zu coeffs=%zu skip(knn/fit/fitness)=%d/%d/%d cost=%.1f\n",
      probe_t, local.features.size(), set.coeffs.size(), set.skipped_knn,
      set.skipped_fit, set.skipped_fitness, cost);
  const Vec3 at = (origin.inverse() * truth_pose(data, probe_t)).t;
  std::printf("sensor at local p=(%.2f %.2f %.2f)\n", at.x(), at.y(), at.z());
  for (size_t k = 0; k < std::min<size_t>(15, ranked.size()); ++k) {
    const auto& [r, i] = ranked[k];
    const FmmCoeff& co = set.coeffs[i];
    const Vec3 n_hat = co.n.normalized();
    std::printf(
        "  |r|=%.4f  f_local=(%6.2f %6.2f %6.2f)  n_hat=(%5.2f %5.2f %5.2f)\n",
        r, co.f.x(), co.f.y(), co.f.z(), n_hat.x(), n_hat.y(), n_hat.z());
  }
  return 0;
}
