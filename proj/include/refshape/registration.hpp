#pragma once

#include "refshape/surface.hpp"

#include <Eigen/Core>

#include <span>
#include <stdexcept>
#include <vector>

namespace refshape {

/// Raised on degenerate geometry or NaNs inside an iterative solver.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// x -> scale * rotation * x + translation.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply(const Vec3& x) const { return scale * (rotation * x) + translation; }
};

/// Least-squares similarity transform taking `source` onto `target` (closed
/// form from the SVD of the cross-covariance). Needs K >= 3 non-collinear
/// pairs.
RigidTransform procrustes_align(std::span<const Vec3> source, std::span<const Vec3> target);

/// Sum of squared distances between transformed source and target.
double alignment_residual(const RigidTransform& t, std::span<const Vec3> source, std::span<const Vec3> target);

LabeledSurface transform_surface(const LabeledSurface& s, const RigidTransform& t);

std::vector<Vec3> landmark_positions(const LabeledSurface& s);

/// Index of the surface whose landmarks are closest (sum of squared
/// distances) to the per-landmark mean; ties go to the smallest index.
std::size_t select_template(const std::vector<std::vector<Vec3>>& landmark_sets);
std::size_t select_template(const std::vector<LabeledSurface>& surfaces);

struct CpdConfig {
  double beta = 2.0;     // Gaussian kernel width of the motion field
  double lambda = 3.0;   // motion-coherence weight
  double w = 0.1;        // uniform outlier weight
  int max_iterations = 150;
  double tolerance = 1e-6;

  void check() const;
};

struct CpdResult {
  LabeledSurface warped;
  int iterations = 0;
  bool converged = false;  // false: the best iterate is returned as a warning
  double sigma2 = 0.0;
};

/// Non-rigid coherent point drift from the template vertices onto `target`.
/// Both sets are internally normalized to zero mean and unit variance; the
/// result is returned in the target's frame. Dense O(M^2) kernel.
CpdResult cpd_nonrigid(const LabeledSurface& templ, std::span<const Vec3> target, const CpdConfig& cfg = {});

struct SimplifyResult {
  LabeledSurface surface;
  bool stopped_early = false;  // no legal collapse remained above target_n
};

/// Quadric-error edge collapse down to at most `target_n` vertices. Labels
/// follow the surviving vertex; landmarks are remapped and kept distinct.
SimplifyResult qem_simplify(const LabeledSurface& s, int target_n);

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Moves every reference vertex to its closest point on the target triangles,
/// keeping the reference topology, labels and landmarks.
LabeledSurface correspondence_remesh(const LabeledSurface& reference, const LabeledSurface& target);
/// Point-cloud variant: closest target point.
LabeledSurface correspondence_remesh(const LabeledSurface& reference, std::span<const Vec3> target);

}  // namespace refshape
