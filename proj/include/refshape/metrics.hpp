#pragma once

#include "refshape/surface.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace refshape {

/// Mean distance between corresponding vertices of `region` (labels taken
/// from `truth`). Requires equal vertex counts.
double vertex_distance(const LabeledSurface& estimated, const LabeledSurface& truth, Region region);

/// Per-vertex distances over all vertices, for heatmap dumps.
std::vector<double> vertex_distances(const LabeledSurface& estimated, const LabeledSurface& truth);

/// Mean |len_est - len_truth| over unique edges whose endpoints both lie in
/// `region`. Requires identical faces.
double edge_length_distance(const LabeledSurface& estimated, const LabeledSurface& truth, Region region);

/// Fraction of truth vertices in `region` within `tau` of the estimated
/// surface (point-to-triangle distance).
double surface_coverage(const LabeledSurface& estimated, const LabeledSurface& truth, Region region, double tau);

/// Mean distance between corresponding landmarks.
double landmark_distance(const LabeledSurface& estimated, const LabeledSurface& truth);
/// Same, over the landmarks whose truth vertex lies in `region`; empty when
/// the region holds none.
std::optional<double> landmark_distance(const LabeledSurface& estimated, const LabeledSurface& truth, Region region);

/// 0.02 x mean bounding-box diagonal of the truths.
double default_coverage_tolerance(const std::vector<LabeledSurface>& truths);

struct RegionMetrics {
  double vd = 0.0;
  double ed = 0.0;
  double sc = 0.0;
  std::optional<double> ld;
};

struct CaseMetrics {
  std::string name;
  RegionMetrics jaw;
  RegionMetrics midface;
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t count = 0;
};

struct RegionSummary {
  Summary vd, ed, sc, ld;
};

struct EvaluationReport {
  double tau = 0.0;
  std::vector<CaseMetrics> cases;
  RegionSummary jaw;
  RegionSummary midface;
};

/// Population mean and standard deviation. Throws on an empty input.
Summary summarize(const std::vector<double>& values);

CaseMetrics evaluate_case(const LabeledSurface& estimated, const LabeledSurface& truth, double tau,
                          const std::string& name = "");

/// Metrics for every (estimated[i], truth[i]) pair plus cohort statistics.
EvaluationReport evaluate_cohort(const std::vector<LabeledSurface>& estimated, const std::vector<LabeledSurface>& truth,
                                 double tau, const std::vector<std::string>& names = {});

std::string report_json(const EvaluationReport& report);
void write_report_json(const EvaluationReport& report, const std::filesystem::path& path);
/// One row per case: name,region,VD,ED,SC,LD.
void write_report_csv(const EvaluationReport& report, const std::filesystem::path& path);
/// vertex,region,distance rows for one case.
void write_vertex_distances_csv(const LabeledSurface& estimated, const LabeledSurface& truth,
                                const std::filesystem::path& path);

}  // namespace refshape
