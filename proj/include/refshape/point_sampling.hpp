#pragma once

#include "refshape/surface.hpp"

#include <array>
#include <span>
#include <vector>

namespace refshape {

/// Furthest point sampling result, indices in selection order.
struct SampleResult {
  std::vector<int> indices;
};

/// Fixed-radius neighbourhoods, padded to `max_k` entries per center.
///
/// `neighbors` is row-major (num_centers x max_k). Real neighbours come first
/// in (distance, index) order; the remaining slots repeat the nearest one so
/// that max-pooling over a row is unaffected by the padding.
struct BallGroups {
  int max_k = 0;
  std::vector<int> neighbors;
  std::vector<int> counts;       // real neighbours per center, >= 1
  std::vector<int> center_index; // nearest input point to each center

  std::size_t num_centers() const { return counts.size(); }
  std::span<const int> row(std::size_t c) const {
    return {neighbors.data() + c * static_cast<std::size_t>(max_k), static_cast<std::size_t>(max_k)};
  }
};

/// Three-nearest inverse-distance interpolation weights, row-major (Q x 3).
struct InterpWeights {
  std::vector<int> indices;
  std::vector<double> weights;

  std::size_t num_queries() const { return indices.size() / 3; }
};

/// Greedy max-min sampling from `seed`; ties go to the smallest index.
SampleResult furthest_point_sampling(std::span<const Vec3> points, int n_sub, int seed = 0);

/// Seed index that does not depend on storage order: the point furthest from
/// the centroid (smallest index on exact ties).
int invariant_seed(std::span<const Vec3> points);

/// Up to `max_k` points within `radius` of each center, nearest first. An
/// empty ball falls back to the single nearest point.
BallGroups ball_query(std::span<const Vec3> centers, std::span<const Vec3> points, double radius, int max_k);

/// Exact k nearest sources per query, row-major (Q x k), (distance, index) order.
std::vector<int> knn(std::span<const Vec3> queries, std::span<const Vec3> sources, int k);

InterpWeights interpolation_weights(std::span<const Vec3> queries, std::span<const Vec3> sources);

/// Gathers `points[indices[i]]`.
std::vector<Vec3> gather_points(std::span<const Vec3> points, std::span<const int> indices);

}  // namespace refshape
