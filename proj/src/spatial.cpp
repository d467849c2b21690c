#include "miliom/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>

namespace miliom {

KdTree3::KdTree3(std::vector<Vec3> points) : pts_(std::move(points)) {
  order_.resize(pts_.size());
  for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
  nodes_.reserve(pts_.size());
  root_ = build(0, static_cast<int>(pts_.size()), 0);
}

int KdTree3::build(int begin, int end, int depth) {
  if (begin >= end) return -1;
  int axis = depth % 3;
  int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) {
                     double va = pts_[a][axis], vb = pts_[b][axis];
                     return va < vb || (va == vb && a < b);
                   });
  int id = static_cast<int>(nodes_.size());
  nodes_.push_back({order_[mid], axis, -1, -1});
  int left = build(begin, mid, depth + 1);
  int right = build(mid + 1, end, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree3::search(int node, const Vec3& query, int k, double max_r2,
                     std::vector<std::pair<double, int>>& heap) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const Vec3& p = pts_[n.index];
  double d2 = (p - query).squaredNorm();
  if (d2 <= max_r2) {
    std::pair<double, int> cand{d2, n.index};
    if (static_cast<int>(heap.size()) < k) {
      heap.push_back(cand);
      std::push_heap(heap.begin(), heap.end());
    } else if (cand < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = cand;
      std::push_heap(heap.begin(), heap.end());
    }
  }
  double delta = query[n.axis] - p[n.axis];
  int near = delta < 0.0 ? n.left : n.right;
  int far = delta < 0.0 ? n.right : n.left;
  search(near, query, k, max_r2, heap);
  double d2_axis = delta * delta;
  if (d2_axis > max_r2) return;
  if (static_cast<int>(heap.size()) == k && d2_axis > heap.front().first) return;
  search(far, query, k, max_r2, heap);
}

std::vector<int> KdTree3::knn(const Vec3& query, int k, double max_radius) const {
  std::vector<int> out;
  if (k <= 0 || pts_.empty()) return out;
  std::vector<std::pair<double, int>> heap;
  heap.reserve(k);
  search(root_, query, k, max_radius * max_radius, heap);
  std::sort(heap.begin(), heap.end());
  out.reserve(heap.size());
  for (const auto& [d2, idx] : heap) out.push_back(idx);
  return out;
}

namespace {

struct CellKey {
  int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  size_t operator()(const CellKey& k) const {
    uint64_t h = static_cast<uint64_t>(k.x) * 73856093u;
    h ^= static_cast<uint64_t>(k.y) * 19349669u;
    h ^= static_cast<uint64_t>(k.z) * 83492791u;
    return static_cast<size_t>(h);
  }
};

}  // namespace

std::vector<Vec3> voxel_downsample(const std::vector<Vec3>& points, double leaf) {
  if (leaf <= 0.0) throw std::invalid_argument("voxel_downsample: leaf must be positive");
  struct Slot {
    Vec3 sum = Vec3::Zero();
    int count = 0;
  };
  auto cell = [leaf](double v) { return static_cast<int64_t>(std::floor(v / leaf)); };
  std::unordered_map<CellKey, int, CellHash> index;
  std::vector<Slot> slots;
  for (const Vec3& p : points) {
    CellKey key{cell(p.x()), cell(p.y()), cell(p.z())};
    auto [it, inserted] = index.try_emplace(key, static_cast<int>(slots.size()));
    if (inserted) slots.push_back({});
    Slot& s = slots[it->second];
    s.sum += p;
    s.count += 1;
  }
  std::vector<Vec3> out;
  out.reserve(slots.size());
  for (const Slot& s : slots) out.push_back(s.sum / s.count);
  return out;
}

std::vector<Vec3> voxel_medoid_downsample(const std::vector<Vec3>& points, double leaf) {
  if (leaf <= 0.0) throw std::invalid_argument("voxel_medoid_downsample: leaf must be positive");
  struct Slot {
    Vec3 sum = Vec3::Zero();
    int count = 0;
    int pick = -1;
    double best = 0.0;
  };
  auto cell = [leaf](double v) { return static_cast<int64_t>(std::floor(v / leaf)); };
  std::unordered_map<CellKey, int, CellHash> index;
  std::vector<Slot> slots;
  for (const Vec3& p : points) {
    CellKey key{cell(p.x()), cell(p.y()), cell(p.z())};
    auto [it, inserted] = index.try_emplace(key, static_cast<int>(slots.size()));
    if (inserted) slots.push_back({});
    Slot& s = slots[it->second];
    s.sum += p;
    s.count += 1;
  }
  for (int i = 0; i < static_cast<int>(points.size()); ++i) {
    const Vec3& p = points[i];
    CellKey key{cell(p.x()), cell(p.y()), cell(p.z())};
    Slot& s = slots[index.find(key)->second];
    const double d = (p - s.sum / s.count).squaredNorm();
    if (s.pick < 0 || d < s.best) {
      s.pick = i;
      s.best = d;
    }
  }
  std::vector<Vec3> out;
  out.reserve(slots.size());
  for (const Slot& s : slots) out.push_back(points[s.pick]);
  return out;
}

}  // namespace miliom
