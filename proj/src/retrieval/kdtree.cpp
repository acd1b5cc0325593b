#include "compose/kdtree.hpp"

#include <algorithm>
#include <queue>

#include "compose/errors.hpp"

namespace compose {

double KdTree::squared_distance(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc;
}

KdTree::KdTree(std::vector<float> rows, int dim, std::vector<std::int64_t> ids, int leaf_size)
    : rows_(std::move(rows)), dim_(dim), ids_(std::move(ids)), leaf_size_(std::max(1, leaf_size)) {
  if (dim <= 0) throw InvalidArgument("kd-tree dimension must be positive");
  if (rows_.size() != ids_.size() * static_cast<std::size_t>(dim)) {
    throw InvalidArgument("kd-tree rows do not match ids");
  }
  order_.resize(ids_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (!order_.empty()) build(0, order_.size());
}

int KdTree::build(std::size_t begin, std::size_t end) {
  const int index = static_cast<int>(nodes_.size());
  nodes_.push_back({-1, 0.0f, -1, -1, begin, end});
  if (end - begin <= static_cast<std::size_t>(leaf_size_)) return index;

  int best_dim = -1;
  float best_spread = 0.0f;
  for (int d = 0; d < dim_; ++d) {
    float lo = row(order_[begin])[static_cast<std::size_t>(d)], hi = lo;
    for (std::size_t i = begin + 1; i < end; ++i) {
      const float v = row(order_[i])[static_cast<std::size_t>(d)];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo > best_spread) {
      best_spread = hi - lo;
      best_dim = d;
    }
  }
  if (best_dim < 0) return index;  // all points identical

  const std::size_t mid = begin + (end - begin) / 2;
  const auto d = static_cast<std::size_t>(best_dim);
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) { return row(a)[d] < row(b)[d]; });
  const float split = row(order_[mid])[d];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[static_cast<std::size_t>(index)].split_dim = best_dim;
  nodes_[static_cast<std::size_t>(index)].split = split;
  nodes_[static_cast<std::size_t>(index)].left = left;
  nodes_[static_cast<std::size_t>(index)].right = right;
  return index;
}

namespace {

struct Ranked {
  double distance2;
  std::int64_t id;
  std::size_t row;
  bool operator<(const Ranked& o) const { return distance2 != o.distance2 ? distance2 < o.distance2 : id < o.id; }
};

std::vector<KdTree::Neighbor> drain(std::priority_queue<Ranked>& heap) {
  std::vector<KdTree::Neighbor> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = {heap.top().row, heap.top().distance2};
    heap.pop();
  }
  return out;
}

}  // namespace

std::vector<KdTree::Neighbor> KdTree::knn(std::span<const float> query, int k,
                                          const std::function<bool(std::size_t)>& accept) const {
  if (query.size() != static_cast<std::size_t>(dim_)) throw InvalidArgument("query dimension mismatch");
  visited_ = 0;
  if (k <= 0 || nodes_.empty()) return {};
  const auto cap = static_cast<std::size_t>(k);
  std::priority_queue<Ranked> heap;  // max-heap: worst kept neighbor on top

  std::function<void(int)> visit = [&](int n) {
    ++visited_;
    const Node& node = nodes_[static_cast<std::size_t>(n)];
    if (node.split_dim < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t r = order_[i];
        if (accept && !accept(r)) continue;
        const Ranked cand{squared_distance(query, row(r)), ids_[r], r};
        if (heap.size() < cap) {
          heap.push(cand);
        } else if (cand < heap.top()) {
          heap.pop();
          heap.push(cand);
        }
      }
      return;
    }
    const double diff = static_cast<double>(query[static_cast<std::size_t>(node.split_dim)]) - node.split;
    const int near = diff < 0 ? node.left : node.right;
    const int far = diff < 0 ? node.right : node.left;
    visit(near);
    // Every point beyond the plane is at least diff^2 away; equality may still win on id.
    if (heap.size() < cap || diff * diff <= heap.top().distance2) visit(far);
  };
  visit(0);
  return drain(heap);
}

}  // namespace compose
