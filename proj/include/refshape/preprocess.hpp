#pragma once

#include "refshape/registration.hpp"
#include "refshape/synth.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace refshape {

struct PreprocessOptions {
  CpdConfig cpd;
  int target_vertices = 0;  // QEM budget for the template; 0 keeps it as is
  int jobs = 1;
};

struct PreprocessReport {
  Manifest manifest;                  // points at the .corr.ply outputs
  std::size_t template_index = 0;     // index into the manifest's normals
  std::vector<std::string> failures;  // "<file>: <reason>"
  std::vector<std::string> warnings;  // CPD runs that hit the iteration cap
};

/// Rigid part of a landmark fit: the similarity rotation with unit scale and
/// the matching translation.
RigidTransform rigid_landmark_fit(const LabeledSurface& source, const LabeledSurface& target);

/// Dense-correspondence preprocessing of a dataset: rigid landmark alignment
/// of every surface to the first normal, template selection among the
/// normals, optional template simplification, then a CPD warp of the
/// template onto every normal, patient and ground truth (a ground truth
/// reuses its patient's alignment). Writes `<name>.corr.ply` files and a
/// manifest into `out_dir`. When any file fails, its error is listed and no
/// manifest is written.
PreprocessReport preprocess_dataset(const Manifest& input, const std::filesystem::path& out_dir,
                                    const PreprocessOptions& options);

}  // namespace refshape
