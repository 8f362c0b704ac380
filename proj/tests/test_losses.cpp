#include <doctest.h>

#include "fixtures.hpp"
#include "refshape/losses.hpp"
#include "refshape/nets.hpp"

using namespace refshape;
using ag::Tensor;

namespace {

LabeledSurface two_vertex(Vec3 a, Vec3 b, Region ra, Region rb) {
  LabeledSurface s;
  s.vertices = {a, b};
  s.region = {ra, rb};
  return s;
}

// Loop oracles written directly from the formulas.
double jaw_oracle(const LabeledSurface& def, const LabeledSurface& sim) {
  double total = 0;
  int n_jaw = 0;
  for (std::size_t i = 0; i < def.size(); ++i) {
    if (def.region[i] != Region::Jaw) continue;
    ++n_jaw;
    for (int lm : def.landmarks) {
      const Vec3 rd = def.vertices[i] - def.vertices[static_cast<std::size_t>(lm)];
      const Vec3 rs = sim.vertices[i] - sim.vertices[static_cast<std::size_t>(lm)];
      total += (rd - rs).norm();
    }
  }
  return total / n_jaw;
}

double smooth_oracle(const std::vector<Vec3>& u, const Adjacency& adj) {
  double total = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (adj[i].empty()) continue;
    double s = 0;
    for (int j : adj[i]) s += (u[i] - u[static_cast<std::size_t>(j)]).norm();
    total += s / static_cast<double>(adj[i].size());
  }
  return total / static_cast<double>(u.size());
}

std::vector<Vec3> random_field(std::mt19937_64& rng, std::size_t n) {
  std::vector<Vec3> u(n);
  for (auto& v : u) v = fixtures::random_vec(rng);
  return u;
}

}  // namespace

TEST_CASE("relative_coords") {
  LabeledSurface s = two_vertex({1, 2, 3}, {0, 0, 1}, Region::Jaw, Region::Midface);
  s.landmarks = {1, 0};
  const auto r = relative_coords(s);
  CHECK(r.shape() == ag::Shape{1, 2, 3});
  CHECK(r.values()[0] == 1.0);
  CHECK(r.values()[1] == 2.0);
  CHECK(r.values()[2] == 2.0);
  for (int c = 3; c < 6; ++c) CHECK(r.values()[static_cast<std::size_t>(c)] == 0.0);

  LabeledSurface no_jaw = two_vertex({0, 0, 0}, {1, 0, 0}, Region::Midface, Region::Midface);
  no_jaw.landmarks = {0};
  CHECK_THROWS_AS(relative_coords(no_jaw), std::invalid_argument);

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = fixtures::grid_surface(rng, 4, 5, 3, 0.3);
    const auto rel = relative_coords(g);
    const auto jaw = g.indices_of(Region::Jaw);
    std::size_t k = 0;
    for (int i : jaw)
      for (int lm : g.landmarks) {
        const Vec3 expect = g.vertices[static_cast<std::size_t>(i)] - g.vertices[static_cast<std::size_t>(lm)];
        for (int c = 0; c < 3; ++c) CHECK(rel.values()[k++] == expect[c]);
      }
  }
}

TEST_CASE("jaw_loss") {
  LabeledSurface def = two_vertex({1, 0, 0}, {0, 0, 0}, Region::Jaw, Region::Midface);
  def.landmarks = {1};
  LabeledSurface sim = def;
  sim.vertices[0] = {0, 0, 0};
  CHECK(jaw_loss(def, sim).item() == 1.0);

  // Rigidly shifted simulation has identical relative coordinates.
  LabeledSurface shifted = def;
  for (auto& v : shifted.vertices) v += Vec3(3, -2, 7);
  CHECK(jaw_loss(def, shifted).item() == doctest::Approx(0.0));

  LabeledSurface other = def;
  other.landmarks = {0};
  CHECK_THROWS_AS(jaw_loss(def, other), std::invalid_argument);

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = fixtures::grid_surface(rng, 5, 4, 4, 0.3);
    auto b = a;
    for (auto& v : b.vertices) v += 0.2 * fixtures::random_vec(rng);
    CHECK(std::abs(jaw_loss(a, b).item() - jaw_oracle(a, b)) <= 1e-9);
  }
}

TEST_CASE("jaw_loss is invariant to rigid translation of the simulated surface") {
  std::mt19937_64 rng(3);
  const auto def = fixtures::grid_surface(rng, 5, 5, 5, 0.3);
  auto sim = def;
  for (auto& v : sim.vertices) v += 0.3 * fixtures::random_vec(rng);
  const double base = jaw_loss(def, sim).item();
  for (int trial = 0; trial < 20; ++trial) {
    auto moved = sim;
    const Vec3 t = fixtures::random_vec(rng, -5, 5);
    for (auto& v : moved.vertices) v += t;
    CHECK(std::abs(jaw_loss(def, moved).item() - base) <= 1e-9);
  }
}

TEST_CASE("midface_loss") {
  LabeledSurface normal = two_vertex({0, 0, 0}, {4, 4, 4}, Region::Midface, Region::Jaw);
  LabeledSurface sim = normal;
  CHECK(midface_loss(normal, sim).item() == 0.0);
  sim.vertices[0] += Vec3(1, 0, 0);
  CHECK(midface_loss(normal, sim).item() == 1.0);

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = fixtures::grid_surface(rng, 4, 4, 0, 0.3);
    auto b = a;
    for (auto& v : b.vertices) v += fixtures::random_vec(rng);
    double total = 0;
    int n = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a.region[i] == Region::Midface) {
        total += (a.vertices[i] - b.vertices[i]).norm();
        ++n;
      }
    CHECK(std::abs(midface_loss(a, b).item() - total / n) <= 1e-9);
  }
}

TEST_CASE("smooth_loss") {
  const Adjacency edge{{1}, {0}};
  CHECK(smooth_loss(DisplacementField{{{0, 0, 0}, {1, 0, 0}}}, edge).item() == 1.0);
  CHECK(smooth_loss(DisplacementField{{{5, -1, 2}, {5, -1, 2}}}, edge).item() == 0.0);
  CHECK_THROWS_AS(smooth_loss(DisplacementField{{{0, 0, 0}}}, edge), std::invalid_argument);
  // Isolated vertices contribute nothing but still count in N.
  const Adjacency with_isolated{{1}, {0}, {}};
  CHECK(smooth_loss(DisplacementField{{{0, 0, 0}, {1, 0, 0}, {9, 9, 9}}}, with_isolated).item() ==
        doctest::Approx(2.0 / 3.0));

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = fixtures::grid_surface(rng, 3 + trial % 4, 4, 0);
    const auto adj = one_ring(s);
    const auto u = random_field(rng, s.size());
    CHECK(std::abs(smooth_loss(DisplacementField{u}, adj).item() - smooth_oracle(u, adj)) <= 1e-9);
  }
}

TEST_CASE("smooth_loss vanishes exactly for componentwise-constant fields") {
  std::mt19937_64 rng(6);
  // Two disjoint triangles.
  LabeledSurface s;
  s.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 0, 0}, {6, 0, 0}, {5, 1, 0}};
  s.region.assign(6, Region::Jaw);
  s.faces = {{0, 1, 2}, {3, 4, 5}};
  const auto adj = one_ring(s);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec3 a = fixtures::random_vec(rng), b = fixtures::random_vec(rng);
    std::vector<Vec3> u{a, a, a, b, b, b};
    CHECK(smooth_loss(DisplacementField{u}, adj).item() == 0.0);
    // Changing one vertex breaks constancy on its component.
    u[static_cast<std::size_t>(trial % 6)] += Vec3(0, 0, 0.5);
    CHECK(smooth_loss(DisplacementField{u}, adj).item() > 0.0);
  }
}

TEST_CASE("l2_reg") {
  ag::ParameterStore empty;
  CHECK(l2_reg(empty).item() == 0.0);

  ag::ParameterStore one;
  auto w = one.weight("w", 1, 1, 0);
  w.mutable_values()[0] = 3.0;
  auto b = one.bias("b", 4);
  for (auto& v : b.mutable_values()) v = 100.0;
  CHECK(l2_reg(one).item() == 9.0);

  ag::ParameterStore zero;
  auto z = zero.weight("z", 3, 3, 0);
  for (auto& v : z.mutable_values()) v = 0.0;
  CHECK(l2_reg(zero).item() == 0.0);

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    ag::ParameterStore store;
    double expect = 0;
    for (int p = 0; p < 4; ++p) {
      auto t = store.weight("w" + std::to_string(p), 2 + p, 3, rng());
      for (double v : t.values()) expect += v * v;
      store.bias("b" + std::to_string(p), 3);
    }
    CHECK(std::abs(l2_reg(store).item() - expect) <= 1e-12);
  }
}

TEST_CASE("simulator_loss composition") {
  const auto scalar = [](double v) { return Tensor::constant({1}, {v}); };
  LossWeights w;
  CHECK(simulator_loss(scalar(0), scalar(0), scalar(0), scalar(0), w).total.item() == 0.0);
  CHECK(simulator_loss(scalar(1), scalar(0), scalar(2), scalar(10), w).total.item() == doctest::Approx(2.6).epsilon(1e-12));

  LossWeights bad;
  bad.alpha = -1;
  CHECK_THROWS_AS(simulator_loss(scalar(0), scalar(0), scalar(0), scalar(0), bad), std::invalid_argument);

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const double j = fixtures::uniform(rng, 0, 5), m = fixtures::uniform(rng, 0, 5);
    const double s = fixtures::uniform(rng, 0, 5), r = fixtures::uniform(rng, 0, 50);
    LossWeights lw{fixtures::uniform(rng, 0, 1), fixtures::uniform(rng, 0, 1), 0.1};
    const double expect = j + m + lw.alpha * s + lw.beta * r;
    CHECK(std::abs(simulator_loss(scalar(j), scalar(m), scalar(s), scalar(r), lw).total.item() - expect) <= 1e-12);
  }
}

TEST_CASE("full simulator_loss on a surface pair") {
  std::mt19937_64 rng(9);
  const auto normal = fixtures::grid_surface(rng, 4, 4, 3, 0.2);
  auto deformed = normal;
  for (auto& v : deformed.vertices) v += 0.1 * fixtures::random_vec(rng);
  auto simulated = normal;
  std::vector<Vec3> u(normal.size(), Vec3::Zero());
  for (std::size_t i = 0; i < normal.size(); ++i)
    if (normal.region[i] == Region::Jaw) {
      u[i] = 0.05 * fixtures::random_vec(rng);
      simulated.vertices[i] += u[i];
    }
  ag::ParameterStore store;
  store.weight("w", 2, 2, 3);
  const auto adj = one_ring(normal);
  const LossWeights lw;
  const auto out = simulator_loss(deformed, normal, positions_tensor(simulated.vertices), positions_tensor(u),
                                  SmoothnessStencil(adj), store, lw);
  double reg = 0;
  for (double v : store.params()[0].tensor.values()) reg += v * v;
  const double expect = jaw_oracle(deformed, simulated) + lw.alpha * smooth_oracle(u, adj) + lw.beta * reg;
  CHECK(out.midface.item() == 0.0);
  CHECK(std::abs(out.total.item() - expect) <= 1e-9);
}

TEST_CASE("corrector_loss") {
  ag::ParameterStore none;
  LabeledSurface one;
  one.vertices = {{0, 0, 0}};
  one.region = {Region::Jaw};
  LabeledSurface moved = one;
  moved.vertices[0] = {3, 4, 0};
  CHECK(corrector_loss(moved, one, none, 0.1).item() == 5.0);
  CHECK(corrector_loss(one, one, none, 0.1).item() == 0.0);
  CHECK_THROWS_AS(corrector_loss(one, one, none, -1.0), std::invalid_argument);

  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = fixtures::grid_surface(rng, 3, 4, 0);
    auto b = a;
    for (auto& v : b.vertices) v += fixtures::random_vec(rng);
    ag::ParameterStore store;
    auto w = store.weight("w", 3, 2, rng());
    double reg = 0;
    for (double v : w.values()) reg += v * v;
    double data = 0;
    for (std::size_t i = 0; i < a.size(); ++i) data += (a.vertices[i] - b.vertices[i]).norm();
    const double expect = data / static_cast<double>(a.size()) + 0.1 * reg;
    CHECK(std::abs(corrector_loss(b, a, store, 0.1).item() - expect) <= 1e-9);
  }
}

TEST_CASE("losses are nonnegative and pass finite-difference checks") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = fixtures::grid_surface(rng, 4, 4, 3, 0.2);
    const auto jaw = s.indices_of(Region::Jaw);
    const auto mid = s.indices_of(Region::Midface);
    const auto target = positions_tensor(s.vertices);
    std::vector<double> moved(target.values().begin(), target.values().end());
    for (auto& v : moved) v += fixtures::uniform(rng, -0.3, 0.3);
    auto sim = Tensor::leaf({s.size(), 3}, moved);
    const SmoothnessStencil stencil(one_ring(s));

    CHECK(jaw_loss(target, sim, jaw, s.landmarks).item() >= 0.0);
    CHECK(midface_loss(target, sim, mid).item() >= 0.0);
    CHECK(smooth_loss(sim, stencil).item() >= 0.0);
    CHECK(corrector_data_loss(sim, target).item() >= 0.0);

    CHECK(fixtures::gradient_check(sim, [&] { return jaw_loss(target, sim, jaw, s.landmarks); }) < 1e-4);
    CHECK(fixtures::gradient_check(sim, [&] { return midface_loss(target, sim, mid); }) < 1e-4);
    CHECK(fixtures::gradient_check(sim, [&] { return smooth_loss(sim, stencil); }) < 1e-4);
    CHECK(fixtures::gradient_check(sim, [&] { return corrector_data_loss(sim, target); }) < 1e-4);

    ag::ParameterStore store;
    auto w = store.weight("w", 3, 3, rng());
    CHECK(fixtures::gradient_check(w, [&] { return l2_reg(store); }) < 1e-4);
    CHECK(fixtures::gradient_check(w, [&] {
            return corrector_loss(ag::matmul(sim, w), target, store, 0.1);
          }) < 1e-4);
  }
}
