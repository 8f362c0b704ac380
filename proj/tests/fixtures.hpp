#pragma once

// Shared generators and oracles for the test suites.

#include "refshape/surface.hpp"
#include "refshape/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace fixtures {

using refshape::LabeledSurface;
using refshape::Region;
using refshape::Vec3;

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Vec3 random_vec(std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

inline std::vector<Vec3> random_cloud(std::mt19937_64& rng, std::size_t n, double lo = 0.0, double hi = 1.0) {
  std::vector<Vec3> out(n);
  for (auto& p : out) p = random_vec(rng, lo, hi);
  return out;
}

/// Jittered (rows x cols) grid triangulated with alternating diagonals; the
/// lower half is labeled JAW.
inline LabeledSurface grid_surface(std::mt19937_64& rng, int rows, int cols, int landmarks, double jitter = 0.1) {
  LabeledSurface s;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      s.vertices.emplace_back(c + uniform(rng, -jitter, jitter), r + uniform(rng, -jitter, jitter),
                              uniform(rng, -jitter, jitter));
      s.region.push_back(r < rows / 2 ? Region::Jaw : Region::Midface);
    }
  for (int r = 0; r + 1 < rows; ++r)
    for (int c = 0; c + 1 < cols; ++c) {
      const int a = r * cols + c, b = a + 1, d = a + cols, e = d + 1;
      if ((r + c) % 2 == 0) {
        s.faces.push_back({a, b, e});
        s.faces.push_back({a, e, d});
      } else {
        s.faces.push_back({a, b, d});
        s.faces.push_back({b, e, d});
      }
    }
  std::uniform_int_distribution<int> pick(0, rows * cols - 1);
  for (int k = 0; k < landmarks; ++k) s.landmarks.push_back(pick(rng));
  return s;
}

/// UV sphere with `rings` latitude bands and `segments` longitudes; vertices
/// below z = 0 are JAW.
inline LabeledSurface uv_sphere(int rings, int segments, double radius = 1.0) {
  LabeledSurface s;
  const double pi = std::acos(-1.0);
  s.vertices.emplace_back(0, 0, radius);
  for (int r = 1; r < rings; ++r) {
    const double theta = pi * r / rings;
    for (int k = 0; k < segments; ++k) {
      const double phi = 2 * pi * k / segments;
      s.vertices.emplace_back(radius * std::sin(theta) * std::cos(phi), radius * std::sin(theta) * std::sin(phi),
                              radius * std::cos(theta));
    }
  }
  s.vertices.emplace_back(0, 0, -radius);
  const int south = static_cast<int>(s.vertices.size()) - 1;
  auto ring = [&](int r, int k) { return 1 + (r - 1) * segments + ((k % segments) + segments) % segments; };
  for (int k = 0; k < segments; ++k) s.faces.push_back({0, ring(1, k), ring(1, k + 1)});
  for (int r = 1; r + 1 < rings; ++r)
    for (int k = 0; k < segments; ++k) {
      s.faces.push_back({ring(r, k), ring(r + 1, k), ring(r + 1, k + 1)});
      s.faces.push_back({ring(r, k), ring(r + 1, k + 1), ring(r, k + 1)});
    }
  for (int k = 0; k < segments; ++k) s.faces.push_back({south, ring(rings - 1, k + 1), ring(rings - 1, k)});
  for (const auto& v : s.vertices) s.region.push_back(v.z() < 0 ? Region::Jaw : Region::Midface);
  s.landmarks = {0, south, ring(rings / 2, 0), ring(rings / 2, segments / 4)};
  return s;
}

/// Subdivided icosahedron projected onto a sphere: 12, 42, 162, 642, 2562
/// vertices for levels 0..4. Vertices below z = 0 are JAW.
inline LabeledSurface icosphere(int level, double radius = 1.0) {
  LabeledSurface s;
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  s.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  s.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
             {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::make_pair(std::min(a, b), std::max(a, b));
      if (auto it = mid.find(key); it != mid.end()) return it->second;
      s.vertices.push_back(0.5 * (s.vertices[static_cast<std::size_t>(a)] + s.vertices[static_cast<std::size_t>(b)]));
      return mid[key] = static_cast<int>(s.vertices.size()) - 1;
    };
    std::vector<std::array<int, 3>> next;
    for (const auto& f : s.faces) {
      const int a = midpoint(f[0], f[1]), b = midpoint(f[1], f[2]), c = midpoint(f[2], f[0]);
      next.push_back({f[0], a, c});
      next.push_back({f[1], b, a});
      next.push_back({f[2], c, b});
      next.push_back({a, b, c});
    }
    s.faces = std::move(next);
  }
  for (auto& v : s.vertices) v = radius * v.normalized();
  for (const auto& v : s.vertices) s.region.push_back(v.z() < 0 ? Region::Jaw : Region::Midface);
  s.landmarks = {0, 3, 4, 8};
  return s;
}

/// Applies a vertex permutation: output vertex i is input vertex perm[i].
inline LabeledSurface permute(const LabeledSurface& s, const std::vector<int>& perm) {
  std::vector<int> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inverse[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  LabeledSurface out;
  for (int p : perm) {
    out.vertices.push_back(s.vertices[static_cast<std::size_t>(p)]);
    out.region.push_back(s.region[static_cast<std::size_t>(p)]);
  }
  for (const auto& f : s.faces)
    out.faces.push_back({inverse[static_cast<std::size_t>(f[0])], inverse[static_cast<std::size_t>(f[1])],
                         inverse[static_cast<std::size_t>(f[2])]});
  for (int lm : s.landmarks) out.landmarks.push_back(inverse[static_cast<std::size_t>(lm)]);
  return out;
}

inline std::vector<int> random_permutation(std::mt19937_64& rng, std::size_t n) {
  std::vector<int> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<int>(i);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("refshape_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Relative error ||g_analytic - g_numeric|| / max(||g_analytic||, ||g_numeric||)
/// between the gradient of `loss` w.r.t. `input` and central differences.
inline double gradient_check(refshape::ag::Tensor& input, const std::function<refshape::ag::Tensor()>& loss,
                             double h = 1e-5) {
  input.zero_grad();
  refshape::ag::backward(loss());
  std::vector<double> analytic(input.grad().begin(), input.grad().end());
  if (analytic.empty()) analytic.assign(input.numel(), 0.0);
  input.zero_grad();
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  auto values = input.mutable_values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    double plus = 0.0, minus = 0.0;
    {
      refshape::ag::NoGradGuard guard;
      values[i] = saved + h;
      plus = loss().item();
      values[i] = saved - h;
      minus = loss().item();
    }
    values[i] = saved;
    const double numeric = (plus - minus) / (2 * h);
    diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
    a2 += analytic[i] * analytic[i];
    n2 += numeric * numeric;
  }
  const double denom = std::sqrt(std::max(a2, n2));
  return denom == 0.0 ? 0.0 : std::sqrt(diff2) / denom;
}

}  // namespace fixtures
