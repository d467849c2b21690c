#include "miliom/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace miliom {

namespace {

enum PointMark : uint8_t { kFree = 0, kUnreliable = 1, kSuppressed = 2, kPicked = 3 };

struct RingBuffer {
  std::vector<const RawScan::Point*> pts;
  std::vector<double> range;
  std::vector<double> smooth;
  std::vector<uint8_t> mark;
};

void mark_unreliable(RingBuffer& ring, const FrontendConfig& cfg) {
  int n = static_cast<int>(ring.pts.size());
  for (int i = 0; i + 1 < n; ++i) {
    double gap2 = (ring.pts[i + 1]->xyz - ring.pts[i]->xyz).squaredNorm();
    if (gap2 > cfg.occlusion_gap * cfg.occlusion_gap) {
      // Points on the farther side of an occluding boundary are unstable.
      if (ring.range[i + 1] > ring.range[i]) {
        for (int j = i + 1; j < std::min(n, i + 1 + cfg.half_window); ++j)
          ring.mark[j] = kUnreliable;
      } else {
        for (int j = std::max(0, i - cfg.half_window + 1); j <= i; ++j)
          ring.mark[j] = kUnreliable;
      }
    }
  }
  for (int i = 1; i + 1 < n; ++i) {
    double prev2 = (ring.pts[i - 1]->xyz - ring.pts[i]->xyz).squaredNorm();
    double next2 = (ring.pts[i + 1]->xyz - ring.pts[i]->xyz).squaredNorm();
    double limit = cfg.parallel_ratio * ring.range[i] * ring.range[i];
    if (prev2 > limit && next2 > limit) ring.mark[i] = kUnreliable;
  }
}

void suppress_neighbors(RingBuffer& ring, int i, int half_window) {
  int n = static_cast<int>(ring.pts.size());
  for (int j = std::max(0, i - half_window); j < std::min(n, i + half_window + 1); ++j) {
    if (ring.mark[j] == kFree) ring.mark[j] = kSuppressed;
  }
  ring.mark[i] = kPicked;
}

}  // namespace

FeatureCloud extract_features(const RawScan& scan, const FrontendConfig& cfg) {
  if (scan.channel_count <= 0) throw std::invalid_argument("extract_features: no channels");

  std::vector<RingBuffer> rings(scan.channel_count);
  for (const auto& pt : scan.points) {
    if (pt.ring < 0 || pt.ring >= scan.channel_count)
      throw std::invalid_argument("extract_features: ring id out of range");
    RingBuffer& ring = rings[pt.ring];
    if (!ring.pts.empty() && pt.dt < ring.pts.back()->dt)
      throw std::invalid_argument("extract_features: ring points not ordered by time");
    ring.pts.push_back(&pt);
  }

  FeatureCloud out;
  out.lidar_id = scan.lidar_id;
  out.t_start = scan.t_start;
  out.t_end = scan.t_end;

  const int hw = cfg.half_window;
  for (int ring_id = 0; ring_id < scan.channel_count; ++ring_id) {
    RingBuffer& ring = rings[ring_id];
    int n = static_cast<int>(ring.pts.size());
    if (n < 2 * hw + 1) continue;

    ring.range.resize(n);
    ring.smooth.assign(n, 0.0);
    ring.mark.assign(n, kFree);
    for (int i = 0; i < n; ++i) {
      ring.range[i] = ring.pts[i]->xyz.norm();
      if (ring.range[i] < cfg.min_range) ring.mark[i] = kUnreliable;
    }
    if (cfg.reject_unreliable) mark_unreliable(ring, cfg);

    for (int i = hw; i < n - hw; ++i) {
      Vec3 sum = Vec3::Zero();
      for (int j = i - hw; j <= i + hw; ++j) {
        if (j != i) sum += ring.pts[j]->xyz - ring.pts[i]->xyz;
      }
      ring.smooth[i] = sum.norm() / (2.0 * hw * std::max(ring.range[i], 1e-9));
    }

    int valid = n - 2 * hw;
    std::vector<int> picked_edges, picked_planes;
    for (int sector = 0; sector < cfg.sectors; ++sector) {
      int begin = hw + valid * sector / cfg.sectors;
      int end = hw + valid * (sector + 1) / cfg.sectors;
      if (begin >= end) continue;
      std::vector<int> by_smooth(end - begin);
      for (int i = begin; i < end; ++i) by_smooth[i - begin] = i;
      std::sort(by_smooth.begin(), by_smooth.end(), [&](int a, int b) {
        return ring.smooth[a] < ring.smooth[b] || (ring.smooth[a] == ring.smooth[b] && a < b);
      });

      int edges = 0;
      for (auto it = by_smooth.rbegin(); it != by_smooth.rend(); ++it) {
        if (edges >= cfg.max_edges_per_sector || ring.smooth[*it] <= cfg.edge_threshold) break;
        if (ring.mark[*it] != kFree) continue;
        suppress_neighbors(ring, *it, hw);
        picked_edges.push_back(*it);
        ++edges;
      }
      int planes = 0;
      for (int idx : by_smooth) {
        if (planes >= cfg.max_planes_per_sector || ring.smooth[idx] >= cfg.plane_threshold) break;
        if (ring.mark[idx] != kFree) continue;
        suppress_neighbors(ring, idx, hw);
        picked_planes.push_back(idx);
        ++planes;
      }
    }

    std::sort(picked_edges.begin(), picked_edges.end());
    std::sort(picked_planes.begin(), picked_planes.end());
    for (int i : picked_edges)
      out.features.push_back({ring.pts[i]->xyz, FeatureKind::kEdge, ring.pts[i]->dt, scan.lidar_id});
    for (int i : picked_planes)
      out.features.push_back(
          {ring.pts[i]->xyz, FeatureKind::kPlane, ring.pts[i]->dt, scan.lidar_id});
  }
  return out;
}

ScfcCloud merge_scfc(const std::vector<FeatureCloud>& clouds, int primary_lidar_id,
                     double window_start, double window_end) {
  constexpr double kTimeTol = 1e-9;
  if (window_end <= window_start) throw std::invalid_argument("merge_scfc: empty window");

  std::vector<const FeatureCloud*> members;
  bool primary_found = false;
  for (const auto& c : clouds) {
    if (c.t_start >= window_start - kTimeTol && c.t_start < window_end - kTimeTol) {
      members.push_back(&c);
      if (c.lidar_id == primary_lidar_id && std::abs(c.t_start - window_start) <= kTimeTol)
        primary_found = true;
    }
  }
  if (!primary_found)
    throw std::invalid_argument("merge_scfc: no primary cloud at the window start");

  std::sort(members.begin(), members.end(), [](const FeatureCloud* a, const FeatureCloud* b) {
    return a->t_start < b->t_start || (a->t_start == b->t_start && a->lidar_id < b->lidar_id);
  });

  ScfcCloud out;
  out.t_start = window_start;
  out.t_end = window_start;
  for (const FeatureCloud* c : members) {
    double offset = c->t_start - window_start;
    out.t_end = std::max(out.t_end, c->t_end);
    for (FeaturePoint f : c->features) {
      f.dt += offset;
      out.features.push_back(f);
    }
  }
  return out;
}

CfcCloud deskew(const ScfcCloud& scfc, const RigidTransform& rel) {
  CfcCloud out;
  out.frame = CloudFrame::kBody;
  out.t = scfc.t_start;
  out.features.reserve(scfc.features.size());
  double span = scfc.t_end - scfc.t_start;
  for (FeaturePoint f : scfc.features) {
    double s = span > 0.0 ? f.dt / span : 0.0;
    if (s < 0.0 || s > 1.0) {
      s = std::clamp(s, 0.0, 1.0);
      ++out.clamped_points;
    }
    UnitQuaternion q = slerp(UnitQuaternion::identity(), rel.q, s);
    f.xyz = q.rotate(f.xyz) + s * rel.t;
    out.features.push_back(f);
  }
  return out;
}

CfcCloud transform_to_local(const CfcCloud& cfc, const RigidTransform& pose) {
  if (cfc.frame != CloudFrame::kBody)
    throw std::logic_error("transform_to_local: cloud is already in the local frame");
  CfcCloud out = cfc;
  out.frame = CloudFrame::kLocal;
  for (FeaturePoint& f : out.features) f.xyz = pose(f.xyz);
  return out;
}

}  // namespace miliom
