#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace compose {

/// Exact k-nearest-neighbor index over float rows under squared Euclidean distance. Equal distances
/// are ordered by the caller-supplied id, so results do not depend on row order.
class KdTree {
 public:
  struct Neighbor {
    std::size_t row = 0;
    double distance2 = 0.0;
  };

  KdTree() = default;
  /// rows: count x dim, row-major. ids: one per row.
  KdTree(std::vector<float> rows, int dim, std::vector<std::int64_t> ids, int leaf_size = 8);

  /// Up to k nearest rows among those accepted by the predicate, ascending by (distance, id).
  std::vector<Neighbor> knn(std::span<const float> query, int k,
                            const std::function<bool(std::size_t)>& accept = {}) const;

  std::size_t size() const { return ids_.size(); }
  int dim() const { return dim_; }
  std::span<const float> row(std::size_t i) const {
    return {rows_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
  }
  /// Number of nodes visited by the last knn call (diagnostics).
  std::size_t last_visited() const { return visited_; }

  static double squared_distance(std::span<const float> a, std::span<const float> b);

 private:
  struct Node {
    int split_dim = -1;  // -1: leaf
    float split = 0.0f;
    int left = -1, right = -1;
    std::size_t begin = 0, end = 0;  // range in order_
  };
  int build(std::size_t begin, std::size_t end);

  std::vector<float> rows_;
  int dim_ = 0;
  std::vector<std::int64_t> ids_;
  int leaf_size_ = 8;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  mutable std::size_t visited_ = 0;
};

}  // namespace compose
