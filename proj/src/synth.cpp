#include "refshape/synth.hpp"

#include "refshape/seeding.hpp"

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>

namespace refshape {

namespace {

constexpr double kPi = 3.14159265358979323846;

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// Uniform [0, 1) and Box-Muller normals built directly on mt19937_64 bits so
// the stream does not depend on the standard library's distributions.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double gaussian(std::mt19937_64& rng) {
  const double u1 = 1.0 - unit(rng);
  const double u2 = unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

std::vector<Vec3> fibonacci_directions(int n) {
  std::vector<Vec3> out;
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    out.emplace_back(r * std::cos(golden * i), r * std::sin(golden * i), z);
  }
  return out;
}

int extremal_vertex(const std::vector<Vec3>& pts, const std::vector<int>& candidates, const Vec3& center,
                    const Vec3& dir, const std::set<int>& taken) {
  int best = -1;
  double best_d = -std::numeric_limits<double>::infinity();
  for (int i : candidates) {
    if (taken.count(i)) continue;
    const double d = (pts[static_cast<std::size_t>(i)] - center).dot(dir);
    if (d > best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

std::vector<int> place_landmarks(const LabeledSurface& s, int k) {
  std::vector<int> all(s.size());
  std::iota(all.begin(), all.end(), 0);
  Vec3 center = Vec3::Zero();
  for (const auto& v : s.vertices) center += v;
  center /= static_cast<double>(s.size());

  // Border landmarks: jaw vertices touching the midface, extremal along
  // horizontal directions starting at the front.
  const auto adj = one_ring(s);
  std::vector<int> border;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.region[i] != Region::Jaw) continue;
    for (int j : adj[i])
      if (s.region[static_cast<std::size_t>(j)] == Region::Midface) {
        border.push_back(static_cast<int>(i));
        break;
      }
  }
  const int n_border = std::min<int>(k / 4, static_cast<int>(border.size()));
  std::set<int> taken;
  std::vector<int> out;
  for (int j = 0; j < n_border; ++j) {
    const double a = kPi / 2 + 2 * kPi * j / n_border;
    const int v = extremal_vertex(s.vertices, border, center, Vec3(std::cos(a), std::sin(a), 0), taken);
    taken.insert(v);
    out.push_back(v);
  }
  for (const auto& dir : fibonacci_directions(k - n_border)) {
    const int v = extremal_vertex(s.vertices, all, center, dir, taken);
    taken.insert(v);
    out.push_back(v);
  }
  return out;
}

}  // namespace

std::string family_name(DeformityFamily f) {
  switch (f) {
    case DeformityFamily::Protrusion: return "protrusion";
    case DeformityFamily::Retrusion: return "retrusion";
    case DeformityFamily::Asymmetry: return "asymmetry";
  }
  throw std::invalid_argument("unknown deformity family");
}

DeformityFamily parse_family(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "protrusion") return DeformityFamily::Protrusion;
  if (lower == "retrusion") return DeformityFamily::Retrusion;
  if (lower == "asymmetry") return DeformityFamily::Asymmetry;
  throw std::invalid_argument("unknown deformity family '" + name + "'");
}

void AnatomyParams::check() const {
  if (n_points < 16) throw std::invalid_argument("AnatomyParams: n_points must be >= 16");
  if (landmarks < 1) throw std::invalid_argument("AnatomyParams: need at least one landmark");
  if (!(jaw_fraction > 0.0 && jaw_fraction < 1.0)) throw std::invalid_argument("AnatomyParams: jaw_fraction must be in (0, 1)");
  if (!(normal_amplitude >= 0.0)) throw std::invalid_argument("AnatomyParams: normal_amplitude must be >= 0");
  if (!(magnitude >= 0.0)) throw std::invalid_argument("AnatomyParams: magnitude must be >= 0");
}

LabeledSurface make_template(const AnatomyParams& params) {
  params.check();
  const int n = params.n_points;
  const int segments = std::max(3, static_cast<int>(std::lround(std::sqrt(static_cast<double>(n)))));
  const int rings = (n - 2 + segments - 1) / segments;  // latitude rings between the poles

  LabeledSurface s;
  auto shape = [](double ux, double uy, double uz) {
    const double lower = smoothstep(0.1, 0.8, -uz);
    const double lobe = lower * smoothstep(-0.2, 0.7, uy);
    return Vec3(0.42 * ux * (1.0 - 0.25 * lower), 0.5 * uy + 0.22 * lobe, 0.52 * uz - 0.10 * lobe);
  };
  s.vertices.push_back(shape(0, 0, 1));
  for (int r = 1; r <= rings; ++r) {
    const double theta = kPi * r / (rings + 1);
    for (int k = 0; k < segments; ++k) {
      const double phi = 2 * kPi * k / segments;
      s.vertices.push_back(shape(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)));
    }
  }
  s.vertices.push_back(shape(0, 0, -1));
  const int south = static_cast<int>(s.vertices.size()) - 1;
  auto ring = [&](int r, int k) { return 1 + (r - 1) * segments + k % segments; };
  for (int k = 0; k < segments; ++k) s.faces.push_back({0, ring(1, k), ring(1, k + 1)});
  for (int r = 1; r < rings; ++r)
    for (int k = 0; k < segments; ++k) {
      s.faces.push_back({ring(r, k), ring(r + 1, k), ring(r + 1, k + 1)});
      s.faces.push_back({ring(r, k), ring(r + 1, k + 1), ring(r, k + 1)});
    }
  for (int k = 0; k < segments; ++k) s.faces.push_back({south, ring(rings, k + 1), ring(rings, k)});

  std::vector<int> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return s.vertices[static_cast<std::size_t>(a)].z() < s.vertices[static_cast<std::size_t>(b)].z();
  });
  const auto n_jaw = static_cast<std::size_t>(std::lround(params.jaw_fraction * static_cast<double>(s.size())));
  s.region.assign(s.size(), Region::Midface);
  for (std::size_t i = 0; i < n_jaw; ++i) s.region[static_cast<std::size_t>(order[i])] = Region::Jaw;

  s.landmarks = place_landmarks(s, params.landmarks);
  validate(s, params.landmarks);
  return s;
}

LabeledSurface sample_normal(const AnatomyParams& params, std::uint64_t subject_seed) {
  LabeledSurface s = make_template(params);
  if (params.normal_amplitude == 0.0) return s;
  const double diameter = compute_box(s).diagonal();
  std::mt19937_64 rng(mix_seed(subject_seed, 0x6e6f726d));
  constexpr int kCenters = 10;
  const double sigma = 0.3 * diameter;
  std::vector<Vec3> centers, coeffs;
  for (int c = 0; c < kCenters; ++c) {
    centers.push_back(s.vertices[static_cast<std::size_t>(rng() % s.size())]);
    const double gx = gaussian(rng), gy = gaussian(rng), gz = gaussian(rng);
    coeffs.emplace_back(gx, gy, gz);
  }
  std::vector<Vec3> field(s.size(), Vec3::Zero());
  double sq = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (int c = 0; c < kCenters; ++c)
      field[i] += coeffs[static_cast<std::size_t>(c)] *
                  std::exp(-(s.vertices[i] - centers[static_cast<std::size_t>(c)]).squaredNorm() / (2 * sigma * sigma));
    sq += field[i].squaredNorm();
  }
  const double rms = std::sqrt(sq / static_cast<double>(s.size()));
  const double gain = rms > 0.0 ? params.normal_amplitude * diameter / rms : 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) s.vertices[i] += gain * field[i];
  return s;
}

std::vector<double> jaw_weight(const LabeledSurface& s) {
  double top = -std::numeric_limits<double>::infinity(), bottom = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.region[i] == Region::Jaw) {
      top = std::max(top, s.vertices[i].z());
      bottom = std::min(bottom, s.vertices[i].z());
    }
  std::vector<double> w(s.size(), 0.0);
  if (!(top > bottom)) return w;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.region[i] == Region::Jaw) w[i] = smoothstep(0.0, 0.5, (top - s.vertices[i].z()) / (top - bottom));
  return w;
}

LabeledSurface apply_deformity(const LabeledSurface& normal, DeformityFamily family, double magnitude) {
  if (!(magnitude >= 0.0)) throw std::invalid_argument("apply_deformity: magnitude must be >= 0");
  LabeledSurface out = normal;
  if (magnitude == 0.0) return out;
  const auto jaw = normal.indices_of(Region::Jaw);
  if (jaw.empty()) throw std::invalid_argument("apply_deformity: surface has no jaw");
  const double m = magnitude * compute_box(normal).diagonal();

  // Pivot at the upper back of the jaw, like a condyle.
  Vec3 pivot(0, std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity());
  for (int i : jaw) {
    const Vec3& v = normal.vertices[static_cast<std::size_t>(i)];
    pivot.x() += v.x() / static_cast<double>(jaw.size());
    pivot.y() = std::min(pivot.y(), v.y());
    pivot.z() = std::max(pivot.z(), v.z());
  }
  double extent = 0.0;
  for (int i : jaw) extent = std::max(extent, (normal.vertices[static_cast<std::size_t>(i)] - pivot).norm());
  const double angle = 0.25 * m / extent;

  Eigen::Matrix3d rot;
  Vec3 shift;
  switch (family) {
    case DeformityFamily::Protrusion:
      rot = Eigen::AngleAxisd(angle, Vec3::UnitX()).toRotationMatrix();
      shift = Vec3(0, m, 0);
      break;
    case DeformityFamily::Retrusion:
      rot = Eigen::AngleAxisd(-angle, Vec3::UnitX()).toRotationMatrix();
      shift = Vec3(0, -m, 0);
      break;
    case DeformityFamily::Asymmetry:
      rot = Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix();
      shift = Vec3(m, 0, 0);
      break;
    default:
      throw std::invalid_argument("apply_deformity: unknown family");
  }
  const auto w = jaw_weight(normal);
  for (int i : jaw) {
    const auto u = static_cast<std::size_t>(i);
    const Vec3& v = normal.vertices[u];
    out.vertices[u] = v + w[u] * (rot * (v - pivot) + pivot - v + shift);
  }
  return out;
}

LabeledSurface apply_deformity(const LabeledSurface& normal, const AnatomyParams& params) {
  return apply_deformity(normal, params.family, params.magnitude);
}

// ------------------------------------------------------------------ dataset

namespace {

std::string numbered(const std::string& stem, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03d.ply", stem.c_str(), i);
  return buf;
}

}  // namespace

Manifest generate_dataset(const AnatomyParams& params, int n_normals, int n_patients,
                          const std::filesystem::path& out_dir) {
  params.check();
  if (n_normals < 1 || n_patients < 1) throw std::invalid_argument("generate_dataset: counts must be >= 1");
  std::filesystem::create_directories(out_dir / "reference");

  Manifest m;
  m.root = out_dir;
  m.seed = params.seed;
  m.templ = "reference/template.ply";
  save_surface(make_template(params), out_dir / m.templ);
  for (int i = 0; i < n_normals; ++i) {
    const auto name = numbered("normal", i);
    save_surface(sample_normal(params, mix_seed(params.seed, 2 * static_cast<std::uint64_t>(i))), out_dir / name);
    m.normals.push_back(name);
  }
  for (int j = 0; j < n_patients; ++j) {
    PatientRecord rec;
    rec.file = numbered("patient", j);
    rec.ground_truth = "reference/" + numbered("truth", j);
    rec.family = params.family;
    rec.magnitude = params.magnitude;
    // Odd stream indices: the ground-truth normals never coincide with the
    // training normals.
    rec.seed = mix_seed(params.seed, 2 * static_cast<std::uint64_t>(j) + 1);
    const auto truth = sample_normal(params, rec.seed);
    save_surface(truth, out_dir / rec.ground_truth);
    save_surface(apply_deformity(truth, rec.family, rec.magnitude), out_dir / rec.file);
    m.patients.push_back(rec);
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["seed"] = m.seed;
  j["template"] = m.templ;
  j["normals"] = m.normals;
  j["patients"] = nlohmann::ordered_json::array();
  for (const auto& p : m.patients)
    j["patients"].push_back({{"file", p.file},
                             {"ground_truth", p.ground_truth},
                             {"family", family_name(p.family)},
                             {"magnitude", p.magnitude},
                             {"seed", p.seed}});
  j["pair_grid"] = {{"normals", m.normals.size()}, {"patients", m.patients.size()}, {"pairs", m.pair_count()}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  try {
    const auto j = nlohmann::json::parse(in);
    m.seed = j.value("seed", std::uint64_t{0});
    m.templ = j.value("template", std::string{});
    for (const auto& n : j.at("normals")) m.normals.push_back(n.get<std::string>());
    for (const auto& p : j.at("patients")) {
      PatientRecord rec;
      rec.file = p.at("file").get<std::string>();
      rec.ground_truth = p.value("ground_truth", std::string{});
      rec.family = parse_family(p.value("family", std::string{"protrusion"}));
      rec.magnitude = p.value("magnitude", 0.0);
      rec.seed = p.value("seed", std::uint64_t{0});
      m.patients.push_back(rec);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed manifest " + path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError("malformed manifest " + path.string() + ": " + e.what());
  }
  return m;
}

}  // namespace refshape
