#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace refshape {

using Vec3 = Eigen::Vector3d;

enum class Region : std::uint8_t { Midface = 0, Jaw = 1 };

/// Thrown when a surface file cannot be parsed.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a surface violates a structural invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Triangle mesh with per-vertex region labels and landmark vertex indices.
///
/// Landmarks are vertex indices, not free points: after dense correspondence
/// every surface shares one indexing, so landmark positions are always
/// recoverable from vertex positions (including on simulated surfaces).
struct LabeledSurface {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<Region> region;
  std::vector<int> landmarks;

  std::size_t size() const { return vertices.size(); }

  Vec3 landmark_position(std::size_t j) const { return vertices[static_cast<std::size_t>(landmarks[j])]; }
  std::vector<int> indices_of(Region r) const;
  std::size_t count(Region r) const;
};

/// Checks every invariant of LabeledSurface. `expected_landmarks`, when
/// non-negative, pins the landmark count K.
void validate(const LabeledSurface& s, int expected_landmarks = -1);

/// True when both surfaces share vertex count, region labels and landmark
/// indices (the template-correspondence precondition used across modules).
bool same_correspondence(const LabeledSurface& a, const LabeledSurface& b);

struct DisplacementField {
  std::vector<Vec3> vectors;

  std::size_t size() const { return vectors.size(); }
  bool finite() const;
};

/// Displacement from `from` to `to`, vertex-wise. Sizes must match.
DisplacementField displacement_between(const LabeledSurface& from, const LabeledSurface& to);

/// Returns `s` with every vertex shifted by the matching field entry.
LabeledSurface apply_displacement(const LabeledSurface& s, const DisplacementField& field);

struct NormalizationBox {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  bool valid() const { return (max.array() >= min.array()).all(); }
  /// Length of the box diagonal.
  double diagonal() const { return (max - min).norm(); }
};

NormalizationBox compute_box(const LabeledSurface& s);
NormalizationBox compute_box(const std::vector<Vec3>& points);
/// Smallest box enclosing all `surfaces`.
NormalizationBox union_box(const std::vector<LabeledSurface>& surfaces);

/// Per-axis (c - min) / (max - min); degenerate axes map to 0.5.
LabeledSurface normalize(const LabeledSurface& s, const NormalizationBox& box);
LabeledSurface denormalize(const LabeledSurface& s, const NormalizationBox& box);
Vec3 normalize_point(const Vec3& p, const NormalizationBox& box);
Vec3 denormalize_point(const Vec3& p, const NormalizationBox& box);

using Adjacency = std::vector<std::vector<int>>;

/// One-ring neighbours from face edges; sorted, symmetric, no self entries.
Adjacency one_ring(const LabeledSurface& s);

/// Unique undirected edges (i < j), sorted.
std::vector<std::array<int, 2>> unique_edges(const std::vector<std::array<int, 3>>& faces);

// Labeled-PLY: ASCII PLY with a uchar `region` vertex property, plus a
// `<basename>.json` sidecar holding {"landmarks": [...]}.
LabeledSurface load_surface(const std::filesystem::path& path);
void save_surface(const LabeledSurface& s, const std::filesystem::path& path);
std::filesystem::path landmark_sidecar(const std::filesystem::path& ply_path);

/// Canonical PLY text for a surface (without the landmark sidecar).
std::string to_ply_string(const LabeledSurface& s);
LabeledSurface parse_ply_string(const std::string& text);

}  // namespace refshape
