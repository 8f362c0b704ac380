#include "refshape/metrics.hpp"

#include "refshape/registration.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace refshape {

namespace {

void require_vertex_match(const LabeledSurface& estimated, const LabeledSurface& truth, const char* who) {
  if (estimated.size() != truth.size())
    throw std::invalid_argument(std::string(who) + ": vertex counts differ (" + std::to_string(estimated.size()) +
                                " vs " + std::to_string(truth.size()) + "); remesh into correspondence first");
}

const char* region_name(Region r) { return r == Region::Jaw ? "jaw" : "midface"; }

// Squared distance from p to the nearest triangle of s (or vertex when s has no faces).
double nearest_sq(const LabeledSurface& s, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  if (s.faces.empty()) {
    for (const auto& v : s.vertices) best = std::min(best, (v - p).squaredNorm());
    return best;
  }
  for (const auto& f : s.faces) {
    const auto& a = s.vertices[static_cast<std::size_t>(f[0])];
    const auto& b = s.vertices[static_cast<std::size_t>(f[1])];
    const auto& c = s.vertices[static_cast<std::size_t>(f[2])];
    // Cheap reject: the triangle's bounding sphere is farther than the best hit.
    const Vec3 centre = (a + b + c) / 3.0;
    const double r = std::sqrt(std::max({(a - centre).squaredNorm(), (b - centre).squaredNorm(), (c - centre).squaredNorm()}));
    const double d = (p - centre).norm() - r;
    if (d > 0 && d * d >= best) continue;
    best = std::min(best, (closest_point_on_triangle(p, a, b, c) - p).squaredNorm());
  }
  return best;
}

nlohmann::ordered_json summary_json(const Summary& s) {
  nlohmann::ordered_json j;
  j["mean"] = s.mean;
  j["std"] = s.std;
  j["n"] = s.count;
  return j;
}

nlohmann::ordered_json region_json(const RegionSummary& r) {
  nlohmann::ordered_json j;
  j["VD"] = summary_json(r.vd);
  j["ED"] = summary_json(r.ed);
  j["SC"] = summary_json(r.sc);
  j["LD"] = r.ld.count ? summary_json(r.ld) : nlohmann::ordered_json(nullptr);
  return j;
}

nlohmann::ordered_json case_region_json(const RegionMetrics& m) {
  nlohmann::ordered_json j;
  j["VD"] = m.vd;
  j["ED"] = m.ed;
  j["SC"] = m.sc;
  j["LD"] = m.ld ? nlohmann::ordered_json(*m.ld) : nlohmann::ordered_json(nullptr);
  return j;
}

}  // namespace

double vertex_distance(const LabeledSurface& estimated, const LabeledSurface& truth, Region region) {
  require_vertex_match(estimated, truth, "vertex_distance");
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (truth.region[i] == region) {
      total += (estimated.vertices[i] - truth.vertices[i]).norm();
      ++n;
    }
  if (n == 0) throw std::invalid_argument(std::string("vertex_distance: region ") + region_name(region) + " is empty");
  return total / static_cast<double>(n);
}

std::vector<double> vertex_distances(const LabeledSurface& estimated, const LabeledSurface& truth) {
  require_vertex_match(estimated, truth, "vertex_distances");
  std::vector<double> d(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) d[i] = (estimated.vertices[i] - truth.vertices[i]).norm();
  return d;
}

double edge_length_distance(const LabeledSurface& estimated, const LabeledSurface& truth, Region region) {
  require_vertex_match(estimated, truth, "edge_length_distance");
  if (estimated.faces != truth.faces) throw std::invalid_argument("edge_length_distance: topologies differ");
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& [a, b] : unique_edges(truth.faces)) {
    const auto ia = static_cast<std::size_t>(a), ib = static_cast<std::size_t>(b);
    if (truth.region[ia] != region || truth.region[ib] != region) continue;
    const double le = (estimated.vertices[ia] - estimated.vertices[ib]).norm();
    const double lt = (truth.vertices[ia] - truth.vertices[ib]).norm();
    total += std::abs(le - lt);
    ++n;
  }
  if (n == 0) throw std::invalid_argument(std::string("edge_length_distance: region ") + region_name(region) + " has no edges");
  return total / static_cast<double>(n);
}

double surface_coverage(const LabeledSurface& estimated, const LabeledSurface& truth, Region region, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("surface_coverage: tau must be > 0");
  if (estimated.vertices.empty()) throw std::invalid_argument("surface_coverage: estimated surface is empty");
  std::size_t hit = 0, n = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth.region[i] != region) continue;
    ++n;
    if (nearest_sq(estimated, truth.vertices[i]) <= tau * tau) ++hit;
  }
  if (n == 0) throw std::invalid_argument(std::string("surface_coverage: region ") + region_name(region) + " is empty");
  return static_cast<double>(hit) / static_cast<double>(n);
}

double landmark_distance(const LabeledSurface& estimated, const LabeledSurface& truth) {
  if (estimated.landmarks.size() != truth.landmarks.size())
    throw std::invalid_argument("landmark_distance: landmark counts differ");
  if (truth.landmarks.empty()) throw std::invalid_argument("landmark_distance: no landmarks");
  double total = 0.0;
  for (std::size_t j = 0; j < truth.landmarks.size(); ++j)
    total += (estimated.landmark_position(j) - truth.landmark_position(j)).norm();
  return total / static_cast<double>(truth.landmarks.size());
}

std::optional<double> landmark_distance(const LabeledSurface& estimated, const LabeledSurface& truth, Region region) {
  if (estimated.landmarks.size() != truth.landmarks.size())
    throw std::invalid_argument("landmark_distance: landmark counts differ");
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < truth.landmarks.size(); ++j) {
    if (truth.region[static_cast<std::size_t>(truth.landmarks[j])] != region) continue;
    total += (estimated.landmark_position(j) - truth.landmark_position(j)).norm();
    ++n;
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

double default_coverage_tolerance(const std::vector<LabeledSurface>& truths) {
  if (truths.empty()) throw std::invalid_argument("default_coverage_tolerance: no surfaces");
  double total = 0.0;
  for (const auto& t : truths) total += compute_box(t).diagonal();
  return 0.02 * total / static_cast<double>(truths.size());
}

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("summarize: no values");
  Summary s;
  s.count = values.size();
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

CaseMetrics evaluate_case(const LabeledSurface& estimated, const LabeledSurface& truth, double tau,
                          const std::string& name) {
  CaseMetrics c;
  c.name = name;
  for (Region r : {Region::Jaw, Region::Midface}) {
    RegionMetrics& m = r == Region::Jaw ? c.jaw : c.midface;
    m.vd = vertex_distance(estimated, truth, r);
    m.ed = edge_length_distance(estimated, truth, r);
    m.sc = surface_coverage(estimated, truth, r, tau);
    m.ld = landmark_distance(estimated, truth, r);
  }
  return c;
}

EvaluationReport evaluate_cohort(const std::vector<LabeledSurface>& estimated, const std::vector<LabeledSurface>& truth,
                                 double tau, const std::vector<std::string>& names) {
  if (estimated.empty()) throw std::invalid_argument("evaluate_cohort: empty cohort");
  if (estimated.size() != truth.size()) throw std::invalid_argument("evaluate_cohort: estimated/truth counts differ");
  if (!names.empty() && names.size() != truth.size()) throw std::invalid_argument("evaluate_cohort: wrong number of names");
  EvaluationReport report;
  report.tau = tau;
  for (std::size_t i = 0; i < truth.size(); ++i)
    report.cases.push_back(evaluate_case(estimated[i], truth[i], tau, names.empty() ? "case_" + std::to_string(i) : names[i]));

  for (Region r : {Region::Jaw, Region::Midface}) {
    std::vector<double> vd, ed, sc, ld;
    for (const auto& c : report.cases) {
      const RegionMetrics& m = r == Region::Jaw ? c.jaw : c.midface;
      vd.push_back(m.vd);
      ed.push_back(m.ed);
      sc.push_back(m.sc);
      if (m.ld) ld.push_back(*m.ld);
    }
    RegionSummary& s = r == Region::Jaw ? report.jaw : report.midface;
    s.vd = summarize(vd);
    s.ed = summarize(ed);
    s.sc = summarize(sc);
    if (!ld.empty()) s.ld = summarize(ld);
  }
  return report;
}

std::string report_json(const EvaluationReport& report) {
  nlohmann::ordered_json j;
  j["tau"] = report.tau;
  j["cohort_size"] = report.cases.size();
  j["summary"]["jaw"] = region_json(report.jaw);
  j["summary"]["midface"] = region_json(report.midface);
  j["cases"] = nlohmann::ordered_json::array();
  for (const auto& c : report.cases) {
    nlohmann::ordered_json row;
    row["name"] = c.name;
    row["jaw"] = case_region_json(c.jaw);
    row["midface"] = case_region_json(c.midface);
    j["cases"].push_back(row);
  }
  return j.dump(2) + "\n";
}

void write_report_json(const EvaluationReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << report_json(report);
}

void write_report_csv(const EvaluationReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "name,region,VD,ED,SC,LD\n";
  char buf[128];
  for (const auto& c : report.cases)
    for (Region r : {Region::Jaw, Region::Midface}) {
      const RegionMetrics& m = r == Region::Jaw ? c.jaw : c.midface;
      std::snprintf(buf, sizeof buf, ",%s,%.12g,%.12g,%.12g,", region_name(r), m.vd, m.ed, m.sc);
      out << c.name << buf;
      if (m.ld) {
        std::snprintf(buf, sizeof buf, "%.12g", *m.ld);
        out << buf;
      }
      out << "\n";
    }
}

void write_vertex_distances_csv(const LabeledSurface& estimated, const LabeledSurface& truth,
                                const std::filesystem::path& path) {
  const auto d = vertex_distances(estimated, truth);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "vertex,region,distance\n";
  char buf[96];
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.12g\n", i, region_name(truth.region[i]), d[i]);
    out << buf;
  }
}

}  // namespace refshape
