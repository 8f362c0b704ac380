#include <doctest.h>

#include "fixtures.hpp"
#include "refshape/synth.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

using namespace refshape;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool bitwise_equal(const Vec3& a, const Vec3& b) { return std::memcmp(a.data(), b.data(), 3 * sizeof(double)) == 0; }

}  // namespace

TEST_CASE("make_template") {
  AnatomyParams p;
  const auto a = make_template(p);
  const auto b = make_template(p);
  CHECK(a.vertices == b.vertices);
  CHECK(a.faces == b.faces);
  CHECK(a.landmarks == b.landmarks);
  CHECK(a.size() >= 1024);
  CHECK(a.size() <= 1100);
  CHECK_NOTHROW(validate(a, 12));
  CHECK(a.count(Region::Jaw) == static_cast<std::size_t>(std::lround(0.4 * static_cast<double>(a.size()))));

  // Every jaw vertex lies below every midface vertex.
  double jaw_top = -1e9, mid_bottom = 1e9;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.region[i] == Region::Jaw) jaw_top = std::max(jaw_top, a.vertices[i].z());
    else mid_bottom = std::min(mid_bottom, a.vertices[i].z());
  }
  CHECK(jaw_top <= mid_bottom);

  for (int n : {64, 300, 2048, 4724}) {
    AnatomyParams q;
    q.n_points = n;
    q.landmarks = 51;
    const auto t = make_template(q);
    CHECK(static_cast<int>(t.size()) >= n);
    CHECK(static_cast<double>(t.size()) < n + std::round(std::sqrt(n)));
    CHECK_NOTHROW(validate(t, 51));
  }
  AnatomyParams bad;
  bad.jaw_fraction = 1.0;
  CHECK_THROWS_AS(make_template(bad), std::invalid_argument);
}

TEST_CASE("sample_normal") {
  AnatomyParams p;
  const auto templ = make_template(p);
  const double diameter = compute_box(templ).diagonal();

  AnatomyParams flat = p;
  flat.normal_amplitude = 0.0;
  CHECK(sample_normal(flat, 7).vertices == templ.vertices);

  const auto a = sample_normal(p, 1), b = sample_normal(p, 2);
  double max_diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) max_diff = std::max(max_diff, (a.vertices[i] - b.vertices[i]).norm());
  CHECK(max_diff > 0.0);
  CHECK(same_correspondence(a, templ));
  CHECK(a.faces == templ.faces);
  CHECK(sample_normal(p, 1).vertices == a.vertices);

  double mean = 0;
  for (int s = 0; s < 100; ++s) {
    const auto n = sample_normal(p, static_cast<std::uint64_t>(1000 + s));
    double d = 0;
    for (std::size_t i = 0; i < n.size(); ++i) d += (n.vertices[i] - templ.vertices[i]).norm();
    mean += d / static_cast<double>(n.size());
  }
  mean /= 100;
  CHECK(mean <= 3 * p.normal_amplitude * diameter);
  CHECK(mean > 0.0);
}

TEST_CASE("apply_deformity") {
  AnatomyParams p;
  const auto normal = sample_normal(p, 3);
  const double diameter = compute_box(normal).diagonal();

  CHECK(apply_deformity(normal, DeformityFamily::Protrusion, 0.0).vertices == normal.vertices);
  CHECK_THROWS_AS(apply_deformity(normal, DeformityFamily::Protrusion, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(parse_family("overbite"), std::invalid_argument);
  CHECK(parse_family("Asymmetry") == DeformityFamily::Asymmetry);

  for (auto family : {DeformityFamily::Protrusion, DeformityFamily::Retrusion, DeformityFamily::Asymmetry}) {
    for (double m : {0.01, 0.08, 0.2}) {
      const auto d = apply_deformity(normal, family, m);
      CHECK(same_correspondence(d, normal));
      bool jaw_moved = false;
      for (std::size_t i = 0; i < normal.size(); ++i) {
        if (normal.region[i] == Region::Midface) CHECK(bitwise_equal(d.vertices[i], normal.vertices[i]));
        else jaw_moved |= d.vertices[i] != normal.vertices[i];
      }
      CHECK(jaw_moved);
    }
  }

  // Full-weight jaw vertices move rigidly by about the requested magnitude.
  const double m = 0.08;
  const auto d = apply_deformity(normal, DeformityFamily::Protrusion, m);
  const auto w = jaw_weight(normal);
  double mean = 0;
  int count = 0;
  for (std::size_t i = 0; i < normal.size(); ++i)
    if (w[i] == 1.0) {
      mean += (d.vertices[i] - normal.vertices[i]).norm();
      ++count;
    }
  REQUIRE(count > 0);
  mean /= count;
  CHECK(mean >= 0.5 * m * diameter);
  CHECK(mean <= 1.5 * m * diameter);
}

TEST_CASE("jaw_weight is zero on the midface and ramps within the jaw") {
  const auto t = make_template(AnatomyParams{});
  const auto w = jaw_weight(t);
  bool any_full = false, any_partial = false;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.region[i] == Region::Midface) CHECK(w[i] == 0.0);
    CHECK(w[i] >= 0.0);
    CHECK(w[i] <= 1.0);
    any_full |= w[i] == 1.0;
    any_partial |= w[i] > 0.0 && w[i] < 1.0;
  }
  CHECK(any_full);
  CHECK(any_partial);
}

TEST_CASE("generate_dataset") {
  AnatomyParams p;
  p.n_points = 256;
  p.seed = 17;
  const auto dir_a = fixtures::temp_dir("synth_a");
  const auto dir_b = fixtures::temp_dir("synth_b");
  const auto m = generate_dataset(p, 5, 4, dir_a);
  generate_dataset(p, 5, 4, dir_b);

  int top_level_ply = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir_a))
    if (e.path().extension() == ".ply") ++top_level_ply;
  CHECK(top_level_ply == 9);
  CHECK(m.pair_count() == 20);

  const auto loaded = load_manifest(dir_a / "manifest.json");
  CHECK(loaded.normals == m.normals);
  CHECK(loaded.patients.size() == 4);
  CHECK(loaded.seed == 17);
  CHECK(slurp(dir_a / "manifest.json") == slurp(dir_b / "manifest.json"));
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir_a))
    if (e.is_regular_file()) CHECK(slurp(e.path()) == slurp(dir_b / std::filesystem::relative(e.path(), dir_a)));

  const auto templ = load_surface(loaded.resolve(loaded.templ));
  for (const auto& name : loaded.normals) CHECK(same_correspondence(load_surface(loaded.resolve(name)), templ));
  for (const auto& rec : loaded.patients) {
    const auto patient = load_surface(loaded.resolve(rec.file));
    const auto truth = load_surface(loaded.resolve(rec.ground_truth));
    CHECK(same_correspondence(patient, templ));
    for (std::size_t i = 0; i < patient.size(); ++i)
      if (patient.region[i] == Region::Midface) CHECK(patient.vertices[i] == truth.vertices[i]);
    for (const auto& name : loaded.normals) CHECK(load_surface(loaded.resolve(name)).vertices != truth.vertices);
  }
  CHECK_THROWS_AS(generate_dataset(p, 0, 4, dir_a), std::invalid_argument);
  CHECK_THROWS_AS(load_manifest(dir_a / "missing.json"), ParseError);
}
