#include <doctest.h>

#include "fixtures.hpp"
#include "refshape/registration.hpp"

#include <Eigen/Geometry>

#include <set>

using namespace refshape;

namespace {

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  return q.normalized().toRotationMatrix();
}

double nearest_distance(const Vec3& p, const std::vector<Vec3>& cloud) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : cloud) best = std::min(best, (p - q).norm());
  return best;
}

/// Ellipsoid-like blob with a bump; diameter about 1.
LabeledSurface blob(int level) {
  auto s = fixtures::icosphere(level, 0.5);
  for (auto& v : s.vertices) {
    v.x() *= 1.2;
    v.z() *= 0.8;
    v += 0.08 * std::exp(-((v - Vec3(0, 0.5, 0)).squaredNorm()) / 0.05) * v.normalized();
  }
  return s;
}

/// Smooth low-frequency deformation with known correspondences.
Vec3 smooth_warp(const Vec3& v) {
  return v + Vec3(0.04 * std::sin(3 * v.z()), 0.05 * std::cos(2 * v.x()) - 0.05, 0.03 * v.x() * v.y() * 4);
}

}  // namespace

TEST_CASE("procrustes_align recovers constructed transforms") {
  const std::vector<Vec3> src{{0, 0, 0}, {1, 0, 0}, {0, 2, 0}, {0, 0, 3}, {1, 1, 1}};
  SUBCASE("identity") {
    const auto t = procrustes_align(src, src);
    CHECK((t.rotation - Eigen::Matrix3d::Identity()).norm() <= 1e-9);
    CHECK(t.translation.norm() <= 1e-9);
    CHECK(std::abs(t.scale - 1.0) <= 1e-9);
  }
  SUBCASE("90 degrees about z plus translation") {
    Eigen::Matrix3d rz;
    rz << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    std::vector<Vec3> dst;
    for (const auto& p : src) dst.push_back(rz * p + Vec3(1, 2, 3));
    const auto t = procrustes_align(src, dst);
    CHECK((t.rotation - rz).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((t.translation - Vec3(1, 2, 3)).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(std::abs(t.scale - 1.0) <= 1e-9);
    CHECK(std::abs(t.rotation.determinant() - 1.0) <= 1e-9);
  }
  SUBCASE("random similarity transforms") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
      const auto pts = fixtures::random_cloud(rng, 6, -1, 1);
      const Eigen::Matrix3d r = random_rotation(rng);
      const double s = fixtures::uniform(rng, 0.5, 2.0);
      const Vec3 tr = fixtures::random_vec(rng, -3, 3);
      std::vector<Vec3> dst;
      for (const auto& p : pts) dst.push_back(s * r * p + tr);
      const auto t = procrustes_align(pts, dst);
      CHECK((t.rotation - r).cwiseAbs().maxCoeff() <= 1e-9);
      CHECK(std::abs(t.scale - s) <= 1e-9);
      CHECK((t.translation - tr).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }
  SUBCASE("degenerate landmark sets") {
    const std::vector<Vec3> line{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    CHECK_THROWS_AS(procrustes_align(line, line), NumericalError);
    const std::vector<Vec3> same{{1, 1, 1}, {1, 1, 1}, {1, 1, 1}};
    CHECK_THROWS_AS(procrustes_align(same, same), NumericalError);
    CHECK_THROWS_AS(procrustes_align(std::vector<Vec3>(src.begin(), src.begin() + 2),
                                     std::vector<Vec3>(src.begin(), src.begin() + 2)),
                    std::invalid_argument);
  }
}

TEST_CASE("procrustes_align is optimal against random search") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = fixtures::random_cloud(rng, 8, -1, 1);
    const Eigen::Matrix3d r = random_rotation(rng);
    const Vec3 shift = fixtures::random_vec(rng);
    auto b = a;
    for (auto& p : b) p = r * p + shift + 0.3 * fixtures::random_vec(rng);
    const auto best = procrustes_align(a, b);
    const double residual = alignment_residual(best, a, b);
    for (int k = 0; k < 1000; ++k) {
      RigidTransform t;
      t.rotation = random_rotation(rng);
      t.scale = fixtures::uniform(rng, 0.5, 1.5);
      t.translation = fixtures::random_vec(rng, -0.5, 0.5);
      // Perturbations of the optimum are included so the search is not trivial.
      if (k % 2 == 0) {
        t.rotation = best.rotation * Eigen::AngleAxisd(0.05 * fixtures::uniform(rng, -1, 1),
                                                      fixtures::random_vec(rng).normalized())
                                         .toRotationMatrix();
        t.scale = best.scale * fixtures::uniform(rng, 0.95, 1.05);
        t.translation = best.translation + 0.02 * fixtures::random_vec(rng);
      }
      CHECK(residual <= alignment_residual(t, a, b) + 1e-12);
    }
  }
}

TEST_CASE("procrustes residual is invariant to pre-rotating the source") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = fixtures::random_cloud(rng, 7, -1, 1);
    auto b = a;
    for (auto& p : b) p += 0.2 * fixtures::random_vec(rng);
    const Eigen::Matrix3d r = random_rotation(rng);
    std::vector<Vec3> rotated;
    for (const auto& p : a) rotated.push_back(r * p);
    const double r0 = alignment_residual(procrustes_align(a, b), a, b);
    const double r1 = alignment_residual(procrustes_align(rotated, b), rotated, b);
    CHECK(std::abs(r0 - r1) <= 1e-9);
  }
}

TEST_CASE("select_template") {
  const std::vector<Vec3> lm{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  CHECK(select_template(std::vector<std::vector<Vec3>>{lm}) == 0);
  CHECK(select_template(std::vector<std::vector<Vec3>>{lm, lm, lm}) == 0);
  CHECK_THROWS_AS(select_template(std::vector<std::vector<Vec3>>{}), std::invalid_argument);

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::vector<Vec3>> sets(10);
    for (auto& s : sets) s = fixtures::random_cloud(rng, 5);
    // Oracle: sum over all other surfaces of squared landmark distance is a
    // monotone transform of the distance to the mean.
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < sets.size(); ++i) {
      double d = 0;
      for (std::size_t o = 0; o < sets.size(); ++o)
        for (std::size_t j = 0; j < 5; ++j) d += (sets[i][j] - sets[o][j]).squaredNorm();
      if (d < best_d - 1e-12) {
        best_d = d;
        best = i;
      }
    }
    CHECK(select_template(sets) == best);
  }
}

TEST_CASE("cpd_nonrigid") {
  const auto templ = blob(2);  // 162 vertices
  const double diameter = compute_box(templ).diagonal();

  SUBCASE("self-registration is the identity") {
    const auto scaled = [&] {
      auto s = templ;
      for (auto& v : s.vertices) v /= diameter;
      return s;
    }();
    const auto r = cpd_nonrigid(scaled, scaled.vertices);
    for (std::size_t i = 0; i < scaled.size(); ++i) CHECK((r.warped.vertices[i] - scaled.vertices[i]).norm() <= 1e-3);
    CHECK(r.warped.faces == scaled.faces);
    CHECK(r.warped.landmarks == scaled.landmarks);
  }
  SUBCASE("translated target") {
    std::vector<Vec3> target;
    for (const auto& v : templ.vertices) target.push_back(v + Vec3(0.1, 0, 0));
    const auto r = cpd_nonrigid(templ, target);
    double mean = 0;
    for (const auto& v : r.warped.vertices) mean += nearest_distance(v, target);
    mean /= static_cast<double>(templ.size());
    CHECK(mean < 0.01 * diameter);
  }
  SUBCASE("known smooth deformation") {
    const auto dense = blob(3);  // 642 vertices as the target
    std::vector<Vec3> target;
    for (const auto& v : dense.vertices) target.push_back(smooth_warp(v));
    const auto r = cpd_nonrigid(templ, target);
    double err = 0;
    // Level-2 icosphere vertices are the first 162 vertices of level 3.
    for (std::size_t i = 0; i < templ.size(); ++i) err += (r.warped.vertices[i] - smooth_warp(templ.vertices[i])).norm();
    err /= static_cast<double>(templ.size());
    MESSAGE("cpd mean correspondence error / diameter = " << err / diameter);
    CHECK(err < 0.05 * diameter);
    CHECK(r.warped.faces == templ.faces);
  }
  SUBCASE("configuration errors") {
    CpdConfig bad;
    bad.w = 1.0;
    CHECK_THROWS_AS(cpd_nonrigid(templ, templ.vertices, bad), std::invalid_argument);
    CHECK_THROWS_AS(cpd_nonrigid(templ, std::vector<Vec3>{}), std::invalid_argument);
  }
  SUBCASE("iteration cap is reported") {
    CpdConfig one;
    one.max_iterations = 1;
    std::vector<Vec3> target;
    for (const auto& v : templ.vertices) target.push_back(smooth_warp(v));
    const auto r = cpd_nonrigid(templ, target, one);
    CHECK_FALSE(r.converged);
    CHECK(r.iterations == 1);
  }
}

TEST_CASE("qem_simplify") {
  SUBCASE("target above the vertex count leaves the surface unchanged") {
    const auto s = fixtures::icosphere(1);
    const auto r = qem_simplify(s, 100);
    CHECK(r.surface.vertices == s.vertices);
    CHECK(r.surface.faces == s.faces);
    CHECK_FALSE(r.stopped_early);
    CHECK_THROWS_AS(qem_simplify(s, 3), std::invalid_argument);
  }
  SUBCASE("flat square stays planar") {
    std::mt19937_64 rng(5);
    auto grid = fixtures::grid_surface(rng, 12, 12, 3, 0.0);
    for (auto& v : grid.vertices) v.z() = 0.25;
    const auto r = qem_simplify(grid, 4);
    CHECK(r.surface.size() < grid.size());
    for (const auto& v : r.surface.vertices) CHECK(std::abs(v.z() - 0.25) <= 1e-9);
    CHECK_NOTHROW(validate(r.surface, 3));
  }
  SUBCASE("sphere 2562 -> 642 keeps radial error under 2%") {
    const auto sphere = fixtures::icosphere(4);
    REQUIRE(sphere.size() == 2562);
    const auto r = qem_simplify(sphere, 642);
    CHECK(r.surface.size() <= 642);
    CHECK_FALSE(r.stopped_early);
    double mean = 0;
    for (const auto& v : r.surface.vertices) mean += std::abs(v.norm() - 1.0);
    mean /= static_cast<double>(r.surface.size());
    MESSAGE("mean radial deviation = " << mean);
    CHECK(mean < 0.02);
    CHECK_NOTHROW(validate(r.surface, 4));
  }
}

TEST_CASE("qem_simplify never grows and keeps K distinct landmarks") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 8; ++trial) {
    auto s = fixtures::icosphere(2 + trial % 2);
    for (auto& v : s.vertices) v *= fixtures::uniform(rng, 0.9, 1.1);
    s.landmarks.clear();
    std::set<int> picks;
    while (picks.size() < 6) picks.insert(static_cast<int>(rng() % s.size()));
    s.landmarks.assign(picks.begin(), picks.end());
    const int target = static_cast<int>(s.size()) / (2 + trial % 3);
    const auto r = qem_simplify(s, target);
    CHECK(r.surface.size() <= s.size());
    CHECK(r.surface.landmarks.size() == 6);
    CHECK(std::set<int>(r.surface.landmarks.begin(), r.surface.landmarks.end()).size() == 6);
    CHECK_NOTHROW(validate(r.surface, 6));
    if (!r.stopped_early) CHECK(static_cast<int>(r.surface.size()) <= target);
  }
}

TEST_CASE("closest_point_on_triangle") {
  const Vec3 a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
  CHECK(closest_point_on_triangle({0.2, 0.2, 5}, a, b, c).isApprox(Vec3(0.2, 0.2, 0)));
  CHECK(closest_point_on_triangle({-1, -1, 0}, a, b, c) == a);
  CHECK(closest_point_on_triangle({2, -1, 1}, a, b, c) == b);
  CHECK(closest_point_on_triangle({1, 1, 0}, a, b, c).isApprox(Vec3(0.5, 0.5, 0)));

  // Oracle: dense barycentric sampling never beats the analytic projection.
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 p = fixtures::random_vec(rng, -2, 2), x = fixtures::random_vec(rng), y = fixtures::random_vec(rng),
               z = fixtures::random_vec(rng);
    const double d = (closest_point_on_triangle(p, x, y, z) - p).norm();
    for (int i = 0; i <= 40; ++i)
      for (int j = 0; i + j <= 40; ++j) {
        const Vec3 q = x + (y - x) * (i / 40.0) + (z - x) * (j / 40.0);
        CHECK(d <= (q - p).norm() + 1e-12);
      }
  }
}

TEST_CASE("correspondence_remesh") {
  const auto sphere = fixtures::icosphere(2);
  SUBCASE("identity") {
    const auto r = correspondence_remesh(sphere, sphere);
    for (std::size_t i = 0; i < sphere.size(); ++i) CHECK((r.vertices[i] - sphere.vertices[i]).norm() <= 1e-12);
    CHECK(r.faces == sphere.faces);
  }
  SUBCASE("plane translated along its normal") {
    std::mt19937_64 rng(8);
    auto plane = fixtures::grid_surface(rng, 6, 6, 2, 0.0);
    auto moved = plane;
    for (auto& v : moved.vertices) v += Vec3(0, 0, 0.3);
    const auto r = correspondence_remesh(plane, moved);
    for (std::size_t i = 0; i < plane.size(); ++i)
      CHECK((r.vertices[i] - (plane.vertices[i] + Vec3(0, 0, 0.3))).norm() <= 1e-12);
  }
  SUBCASE("outputs lie on target triangles") {
    std::mt19937_64 rng(9);
    const auto target = blob(1);
    auto ref = fixtures::icosphere(2, 0.7);
    for (auto& v : ref.vertices) v += 0.1 * fixtures::random_vec(rng);
    const auto r = correspondence_remesh(ref, target);
    for (const auto& v : r.vertices) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& f : target.faces)
        best = std::min(best, (closest_point_on_triangle(v, target.vertices[static_cast<std::size_t>(f[0])],
                                                         target.vertices[static_cast<std::size_t>(f[1])],
                                                         target.vertices[static_cast<std::size_t>(f[2])]) -
                               v)
                                  .norm());
      CHECK(best <= 1e-9);
    }
    CHECK(r.landmarks == ref.landmarks);
    CHECK(r.region == ref.region);
  }
  CHECK_THROWS_AS(correspondence_remesh(sphere, std::vector<Vec3>{}), std::invalid_argument);
}
