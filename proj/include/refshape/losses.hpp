#pragma once

#include "refshape/surface.hpp"
#include "refshape/tensor.hpp"

#include <span>
#include <vector>

namespace refshape {

/// Weights of the smoothness term and of the two L2 regularizers.
struct LossWeights {
  double alpha = 0.3;   // smoothness (simulator)
  double beta = 0.1;    // L2 on simulator weights
  double lambda = 0.1;  // L2 on corrector weights

  void check() const;
};

/// r(i, j) = c(jaw_i) - c(landmark_j), shape {N_jaw, K, 3}.
ag::Tensor relative_coords(const ag::Tensor& positions, std::span<const int> jaw, std::span<const int> landmarks);
ag::Tensor relative_coords(const LabeledSurface& s);

/// (1/N_jaw) sum_i sum_j || r_def(i,j) - r_sim(i,j) ||.
ag::Tensor jaw_loss(const ag::Tensor& deformed, const ag::Tensor& simulated, std::span<const int> jaw,
                    std::span<const int> landmarks);
ag::Tensor jaw_loss(const LabeledSurface& deformed, const LabeledSurface& simulated);

/// Mean distance between corresponding midface vertices. Zero whenever the
/// simulator's midface constraint holds.
ag::Tensor midface_loss(const ag::Tensor& normal, const ag::Tensor& simulated, std::span<const int> midface);
ag::Tensor midface_loss(const LabeledSurface& normal, const LabeledSurface& simulated);

/// Precomputed one-ring stencil: for every directed edge (i, j) the factor
/// 1 / (N |N(i)|).
struct SmoothnessStencil {
  std::size_t n = 0;
  std::vector<int> from;
  std::vector<int> to;
  std::vector<double> factor;

  explicit SmoothnessStencil(const Adjacency& adjacency);
};

/// (1/N) sum_i (1/|N(i)|) sum_{j in N(i)} || u(i) - u(j) ||; isolated vertices add 0.
ag::Tensor smooth_loss(const ag::Tensor& field, const SmoothnessStencil& stencil);
ag::Tensor smooth_loss(const DisplacementField& field, const Adjacency& adjacency);

/// Sum of squared entries of every weight matrix (biases excluded).
ag::Tensor l2_reg(const ag::ParameterStore& store);

struct SimulatorLoss {
  ag::Tensor total;
  ag::Tensor jaw;
  ag::Tensor midface;
  ag::Tensor smooth;
  ag::Tensor reg;
};

/// L_jaw + L_midface + alpha L_smooth + beta L_reg.
SimulatorLoss simulator_loss(const ag::Tensor& jaw, const ag::Tensor& midface, const ag::Tensor& smooth,
                             const ag::Tensor& reg, const LossWeights& w);

/// Full simulator objective for one (deformed, normal) pair given the
/// simulator's output tensors.
SimulatorLoss simulator_loss(const LabeledSurface& deformed, const LabeledSurface& normal,
                             const ag::Tensor& simulated_positions, const ag::Tensor& displacement,
                             const SmoothnessStencil& stencil, const ag::ParameterStore& params,
                             const LossWeights& w);

/// Mean vertex distance between corrected and normal (no regularizer).
ag::Tensor corrector_data_loss(const ag::Tensor& corrected, const ag::Tensor& normal);

/// (1/N) sum_i || c_correct(i) - c_norm(i) || + lambda L_reg.
ag::Tensor corrector_loss(const ag::Tensor& corrected, const ag::Tensor& normal, const ag::ParameterStore& params,
                          double lambda);
ag::Tensor corrector_loss(const LabeledSurface& corrected, const LabeledSurface& normal,
                          const ag::ParameterStore& params, double lambda);

}  // namespace refshape
