#pragma once

#include "refshape/surface.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace refshape {

enum class DeformityFamily { Protrusion, Retrusion, Asymmetry };

std::string family_name(DeformityFamily f);
/// Accepts "protrusion", "retrusion", "asymmetry" (any case).
DeformityFamily parse_family(const std::string& name);

/// Knobs of the synthetic generator. Amplitudes and magnitudes are fractions
/// of the template diameter (bounding-box diagonal).
struct AnatomyParams {
  std::uint64_t seed = 0;
  int n_points = 1024;
  int landmarks = 12;
  double jaw_fraction = 0.4;
  double normal_amplitude = 0.012;  // RMS of the per-subject variation field
  DeformityFamily family = DeformityFamily::Protrusion;
  double magnitude = 0.08;

  void check() const;
};

/// Ellipsoidal head with a protruding lower lobe. The lowest `jaw_fraction`
/// of the vertices (by height) is JAW. The vertex count lies in
/// [n_points, n_points + round(sqrt(n_points))).
LabeledSurface make_template(const AnatomyParams& params);

/// Template warped by a smooth random radial-basis field whose RMS over the
/// vertices is normal_amplitude * diameter.
LabeledSurface sample_normal(const AnatomyParams& params, std::uint64_t subject_seed);

/// Per-vertex jaw blend weight in [0, 1]: exactly 0 on MIDFACE, ramping from
/// the jaw/midface border to 1 in the lower half of the jaw.
std::vector<double> jaw_weight(const LabeledSurface& s);

/// Rigid motion of the jaw (translation of `magnitude` * diameter plus a small
/// rotation) blended by jaw_weight. MIDFACE vertices are copied unchanged.
LabeledSurface apply_deformity(const LabeledSurface& normal, DeformityFamily family, double magnitude);
LabeledSurface apply_deformity(const LabeledSurface& normal, const AnatomyParams& params);

struct PatientRecord {
  std::string file;
  std::string ground_truth;
  DeformityFamily family = DeformityFamily::Protrusion;
  double magnitude = 0.0;
  std::uint64_t seed = 0;
};

/// Dataset index. Paths are relative to `root` (the manifest's directory).
struct Manifest {
  std::filesystem::path root;
  std::uint64_t seed = 0;
  std::string templ;
  std::vector<std::string> normals;
  std::vector<PatientRecord> patients;

  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
  std::size_t pair_count() const { return normals.size() * patients.size(); }
};

/// Writes n_normals normals and n_patients patients into `out_dir`, the
/// ground-truth normal of each patient and the template under
/// `out_dir/reference/`, and `out_dir/manifest.json`.
Manifest generate_dataset(const AnatomyParams& params, int n_normals, int n_patients,
                          const std::filesystem::path& out_dir);

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& m, const std::filesystem::path& path);

}  // namespace refshape
