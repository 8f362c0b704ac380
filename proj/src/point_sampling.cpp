#include "refshape/point_sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <unordered_map>

namespace refshape {

namespace {

inline double sq_dist(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x(), dy = a.y() - b.y(), dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

struct Candidate {
  double d2;
  int index;
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};

int nearest_index(const Vec3& q, std::span<const Vec3> points) {
  Candidate best{std::numeric_limits<double>::infinity(), -1};
  for (std::size_t i = 0; i < points.size(); ++i) {
    Candidate c{sq_dist(q, points[i]), static_cast<int>(i)};
    if (c < best) best = c;
  }
  return best.index;
}

// Uniform hash grid with cell size >= radius; exact radius queries visit the
// 27 surrounding cells.
class CellGrid {
 public:
  CellGrid(std::span<const Vec3> points, double cell) : points_(points), cell_(cell) {
    for (std::size_t i = 0; i < points.size(); ++i) cells_[key(cell_of(points[i]))].push_back(static_cast<int>(i));
  }

  template <typename Fn>
  void for_each_near(const Vec3& q, Fn&& fn) const {
    const auto c = cell_of(q);
    for (long dx = -1; dx <= 1; ++dx)
      for (long dy = -1; dy <= 1; ++dy)
        for (long dz = -1; dz <= 1; ++dz) {
          auto it = cells_.find(key({c[0] + dx, c[1] + dy, c[2] + dz}));
          if (it == cells_.end()) continue;
          for (int i : it->second) fn(i);
        }
  }

 private:
  std::array<long, 3> cell_of(const Vec3& p) const {
    return {static_cast<long>(std::floor(p.x() / cell_)), static_cast<long>(std::floor(p.y() / cell_)),
            static_cast<long>(std::floor(p.z() / cell_))};
  }
  static std::uint64_t key(const std::array<long, 3>& c) {
    auto part = [](long v) { return static_cast<std::uint64_t>(v + (1L << 20)) & ((1ULL << 21) - 1); };
    return (part(c[0]) << 42) | (part(c[1]) << 21) | part(c[2]);
  }

  std::span<const Vec3> points_;
  double cell_;
  std::unordered_map<std::uint64_t, std::vector<int>> cells_;
};

}  // namespace

SampleResult furthest_point_sampling(std::span<const Vec3> points, int n_sub, int seed) {
  const int n = static_cast<int>(points.size());
  if (n == 0) throw std::invalid_argument("furthest_point_sampling: empty input");
  if (n_sub < 1 || n_sub > n)
    throw std::invalid_argument("furthest_point_sampling: n_sub=" + std::to_string(n_sub) + " outside [1, " +
                                std::to_string(n) + "]");
  if (seed < 0 || seed >= n) throw std::invalid_argument("furthest_point_sampling: seed out of range");

  SampleResult out;
  out.indices.reserve(static_cast<std::size_t>(n_sub));
  std::vector<double> min_d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  int current = seed;
  for (int s = 0; s < n_sub; ++s) {
    out.indices.push_back(current);
    min_d2[static_cast<std::size_t>(current)] = -1.0;
    const Vec3 c = points[static_cast<std::size_t>(current)];
    int best = -1;
    double best_d2 = -1.0;
    for (int i = 0; i < n; ++i) {
      auto& d = min_d2[static_cast<std::size_t>(i)];
      d = std::min(d, sq_dist(points[static_cast<std::size_t>(i)], c));
      if (d > best_d2) {
        best_d2 = d;
        best = i;
      }
    }
    current = best;
  }
  return out;
}

int invariant_seed(std::span<const Vec3> points) {
  if (points.empty()) throw std::invalid_argument("invariant_seed: empty input");
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  int best = 0;
  double best_d2 = -1.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double d = sq_dist(points[i], centroid);
    if (d > best_d2) {
      best_d2 = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

BallGroups ball_query(std::span<const Vec3> centers, std::span<const Vec3> points, double radius, int max_k) {
  if (points.empty()) throw std::invalid_argument("ball_query: empty point set");
  if (!(radius > 0.0)) throw std::invalid_argument("ball_query: radius must be positive");
  if (max_k < 1) throw std::invalid_argument("ball_query: max_k must be >= 1");

  BallGroups g;
  g.max_k = max_k;
  g.neighbors.resize(centers.size() * static_cast<std::size_t>(max_k));
  g.counts.resize(centers.size());
  g.center_index.resize(centers.size());
  const double r2 = radius * radius;
  const bool use_grid = points.size() * centers.size() > 65536;
  std::optional<CellGrid> grid;
  if (use_grid) grid.emplace(points, radius);

  std::vector<Candidate> found;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const Vec3& q = centers[c];
    found.clear();
    auto consider = [&](int i) {
      const double d2 = sq_dist(q, points[static_cast<std::size_t>(i)]);
      if (d2 <= r2) found.push_back({d2, i});
    };
    if (grid) grid->for_each_near(q, consider);
    else
      for (std::size_t i = 0; i < points.size(); ++i) consider(static_cast<int>(i));

    int* row = g.neighbors.data() + c * static_cast<std::size_t>(max_k);
    if (found.empty()) {
      const int nearest = nearest_index(q, points);
      std::fill(row, row + max_k, nearest);
      g.counts[c] = 1;
      g.center_index[c] = nearest;
      continue;
    }
    const auto take = std::min<std::size_t>(found.size(), static_cast<std::size_t>(max_k));
    std::partial_sort(found.begin(), found.begin() + static_cast<long>(take), found.end());
    for (std::size_t k = 0; k < take; ++k) row[k] = found[k].index;
    std::fill(row + take, row + max_k, found[0].index);
    g.counts[c] = static_cast<int>(take);
    g.center_index[c] = found[0].index;
  }
  return g;
}

std::vector<int> knn(std::span<const Vec3> queries, std::span<const Vec3> sources, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > sources.size())
    throw std::invalid_argument("knn: k=" + std::to_string(k) + " with " + std::to_string(sources.size()) +
                                " sources");
  std::vector<int> out(queries.size() * static_cast<std::size_t>(k));
  std::vector<Candidate> all(sources.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t i = 0; i < sources.size(); ++i) all[i] = {sq_dist(queries[q], sources[i]), static_cast<int>(i)};
    std::partial_sort(all.begin(), all.begin() + k, all.end());
    for (int j = 0; j < k; ++j) out[q * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)] = all[static_cast<std::size_t>(j)].index;
  }
  return out;
}

InterpWeights interpolation_weights(std::span<const Vec3> queries, std::span<const Vec3> sources) {
  if (sources.size() < 3) throw std::invalid_argument("interpolation_weights: needs at least 3 sources");
  InterpWeights w;
  w.indices = knn(queries, sources, 3);
  w.weights.resize(w.indices.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    double d[3];
    int exact = -1;
    for (int j = 0; j < 3; ++j) {
      d[j] = std::sqrt(sq_dist(queries[q], sources[static_cast<std::size_t>(w.indices[q * 3 + static_cast<std::size_t>(j)])]));
      if (exact < 0 && d[j] < 1e-10) exact = j;
    }
    double* out = w.weights.data() + q * 3;
    if (exact >= 0) {
      for (int j = 0; j < 3; ++j) out[j] = j == exact ? 1.0 : 0.0;
      continue;
    }
    const double total = 1.0 / d[0] + 1.0 / d[1] + 1.0 / d[2];
    for (int j = 0; j < 3; ++j) out[j] = (1.0 / d[j]) / total;
  }
  return w;
}

std::vector<Vec3> gather_points(std::span<const Vec3> points, std::span<const int> indices) {
  std::vector<Vec3> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(points[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace refshape
