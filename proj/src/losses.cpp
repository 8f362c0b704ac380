#include "refshape/losses.hpp"

#include "refshape/nets.hpp"

#include <stdexcept>

namespace refshape {

using ag::Tensor;

void LossWeights::check() const {
  if (alpha < 0.0 || beta < 0.0 || lambda < 0.0) throw std::invalid_argument("LossWeights: weights must be >= 0");
}

Tensor relative_coords(const Tensor& positions, std::span<const int> jaw, std::span<const int> landmarks) {
  if (jaw.empty()) throw std::invalid_argument("relative_coords: surface has no jaw vertices");
  if (landmarks.empty()) throw std::invalid_argument("relative_coords: no landmarks");
  const std::size_t k = landmarks.size();
  std::vector<int> rows, lms;
  rows.reserve(jaw.size() * k);
  lms.reserve(jaw.size() * k);
  for (int i : jaw)
    for (int lm : landmarks) {
      rows.push_back(i);
      lms.push_back(lm);
    }
  Tensor rel = ag::sub(ag::gather_rows(positions, rows), ag::gather_rows(positions, lms));
  return ag::reshape(rel, {jaw.size(), k, 3});
}

Tensor relative_coords(const LabeledSurface& s) {
  return relative_coords(positions_tensor(s.vertices), s.indices_of(Region::Jaw), s.landmarks);
}

Tensor jaw_loss(const Tensor& deformed, const Tensor& simulated, std::span<const int> jaw,
                std::span<const int> landmarks) {
  if (deformed.shape() != simulated.shape()) throw std::invalid_argument("jaw_loss: position tensors differ in shape");
  const Tensor diff = ag::sub(relative_coords(deformed, jaw, landmarks), relative_coords(simulated, jaw, landmarks));
  return ag::scale(ag::sum(ag::norm_rows(diff)), 1.0 / static_cast<double>(jaw.size()));
}

Tensor jaw_loss(const LabeledSurface& deformed, const LabeledSurface& simulated) {
  if (!same_correspondence(deformed, simulated)) throw std::invalid_argument("jaw_loss: surfaces not in correspondence");
  return jaw_loss(positions_tensor(deformed.vertices), positions_tensor(simulated.vertices),
                  deformed.indices_of(Region::Jaw), deformed.landmarks);
}

Tensor midface_loss(const Tensor& normal, const Tensor& simulated, std::span<const int> midface) {
  if (normal.shape() != simulated.shape()) throw std::invalid_argument("midface_loss: position tensors differ in shape");
  if (midface.empty()) throw std::invalid_argument("midface_loss: no midface vertices");
  const Tensor d = ag::sub(ag::gather_rows(simulated, midface), ag::gather_rows(normal, midface));
  return ag::mean(ag::norm_rows(d));
}

Tensor midface_loss(const LabeledSurface& normal, const LabeledSurface& simulated) {
  if (!same_correspondence(normal, simulated)) throw std::invalid_argument("midface_loss: surfaces not in correspondence");
  return midface_loss(positions_tensor(normal.vertices), positions_tensor(simulated.vertices),
                      normal.indices_of(Region::Midface));
}

SmoothnessStencil::SmoothnessStencil(const Adjacency& adjacency) : n(adjacency.size()) {
  for (std::size_t i = 0; i < adjacency.size(); ++i) {
    const auto& nbrs = adjacency[i];
    for (int j : nbrs) {
      from.push_back(static_cast<int>(i));
      to.push_back(j);
      factor.push_back(1.0 / (static_cast<double>(n) * static_cast<double>(nbrs.size())));
    }
  }
}

Tensor smooth_loss(const Tensor& field, const SmoothnessStencil& stencil) {
  if (field.rows() != stencil.n || field.cols() != 3)
    throw std::invalid_argument("smooth_loss: field " + ag::shape_string(field.shape()) + " vs " +
                                std::to_string(stencil.n) + " vertices");
  if (stencil.from.empty()) return ag::scale(ag::sum(field), 0.0);
  const Tensor diff = ag::sub(ag::gather_rows(field, stencil.from), ag::gather_rows(field, stencil.to));
  return ag::sum(ag::scale_rows(ag::norm_rows(diff), stencil.factor));
}

Tensor smooth_loss(const DisplacementField& field, const Adjacency& adjacency) {
  if (field.size() != adjacency.size()) throw std::invalid_argument("smooth_loss: field length mismatch");
  return smooth_loss(positions_tensor(field.vectors), SmoothnessStencil(adjacency));
}

Tensor l2_reg(const ag::ParameterStore& store) {
  std::vector<Tensor> terms;
  for (const auto& p : store.params())
    if (p.is_weight) terms.push_back(ag::sum(ag::mul(p.tensor, p.tensor)));
  if (terms.empty()) return Tensor::zeros({1});
  Tensor total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = ag::add(total, terms[i]);
  return total;
}

SimulatorLoss simulator_loss(const Tensor& jaw, const Tensor& midface, const Tensor& smooth, const Tensor& reg,
                             const LossWeights& w) {
  w.check();
  SimulatorLoss out{{}, jaw, midface, smooth, reg};
  out.total = ag::add(ag::add(ag::add(jaw, midface), ag::scale(smooth, w.alpha)), ag::scale(reg, w.beta));
  return out;
}

SimulatorLoss simulator_loss(const LabeledSurface& deformed, const LabeledSurface& normal,
                             const Tensor& simulated_positions, const Tensor& displacement,
                             const SmoothnessStencil& stencil, const ag::ParameterStore& params,
                             const LossWeights& w) {
  if (!same_correspondence(deformed, normal)) throw std::invalid_argument("simulator_loss: surfaces not in correspondence");
  const auto jaw = normal.indices_of(Region::Jaw);
  const Tensor normal_pos = positions_tensor(normal.vertices);
  return simulator_loss(jaw_loss(positions_tensor(deformed.vertices), simulated_positions, jaw, normal.landmarks),
                        midface_loss(normal_pos, simulated_positions, normal.indices_of(Region::Midface)),
                        smooth_loss(displacement, stencil), l2_reg(params), w);
}

Tensor corrector_data_loss(const Tensor& corrected, const Tensor& normal) {
  if (corrected.shape() != normal.shape()) throw std::invalid_argument("corrector_loss: shapes differ");
  return ag::mean(ag::norm_rows(ag::sub(corrected, normal)));
}

Tensor corrector_loss(const Tensor& corrected, const Tensor& normal, const ag::ParameterStore& params, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("corrector_loss: lambda must be >= 0");
  return ag::add(corrector_data_loss(corrected, normal), ag::scale(l2_reg(params), lambda));
}

Tensor corrector_loss(const LabeledSurface& corrected, const LabeledSurface& normal, const ag::ParameterStore& params,
                      double lambda) {
  if (!same_correspondence(corrected, normal)) throw std::invalid_argument("corrector_loss: surfaces not in correspondence");
  return corrector_loss(positions_tensor(corrected.vertices), positions_tensor(normal.vertices), params, lambda);
}

}  // namespace refshape
