#pragma once

#include "refshape/point_sampling.hpp"
#include "refshape/surface.hpp"
#include "refshape/tensor.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace refshape {

/// Architecture hyperparameters shared by both networks.
///
/// Defaults reproduce the published configuration: four encoding levels at
/// N/4, N/16, N/64, N/128 points, decoding back through N/64, N/16, N/4, N;
/// ball radii 0.1..0.8 (encoding) and 0.8..0.1 (decoding); feature widths
/// 64..512 and 512..128.
struct NetworkConfig {
  int n_points = 4724;
  std::array<int, 8> divisors{4, 16, 64, 128, 64, 16, 4, 1};
  std::array<double, 4> enc_radii{0.1, 0.2, 0.4, 0.8};
  std::array<double, 4> dec_radii{0.8, 0.4, 0.2, 0.1};
  std::array<int, 4> enc_widths{64, 128, 256, 512};
  std::array<int, 4> dec_widths{512, 256, 128, 128};
  int max_k = 32;
  int weight_hidden = 16;  // hidden width of the PointConv weight-function MLP
  int head_hidden = 64;
  int landmarks = 51;

  /// Reduced widths and neighbourhoods for single-core CPU training.
  static NetworkConfig desk(int n_points, int landmarks = 12);

  /// Throws std::invalid_argument on an inconsistent schedule.
  void check() const;
  /// Point count of levels 0..4 for an input of `n` points (level 0 = n).
  std::array<int, 5> level_sizes(int n) const;
  /// Smallest vertex count the networks accept.
  int min_points() const;

  std::vector<double> to_vector() const;
  static NetworkConfig from_vector(const std::vector<double>& v);
  bool operator==(const NetworkConfig&) const = default;
};

/// Sampling/grouping structure of one point set across the network levels.
struct PointHierarchy {
  std::array<std::vector<Vec3>, 5> points;      // level 0 is the input
  std::array<std::vector<int>, 5> sample;       // sample[l] indexes points[l-1]
  std::array<BallGroups, 5> enc_groups;         // [1..4]: centers points[l] over points[l-1]
  std::array<BallGroups, 4> dec_groups;         // decoder d works on level 3-d
  std::array<InterpWeights, 4> dec_interp;      // level 4-d -> level 3-d
  bool has_decoder = false;
};

/// Builds the hierarchy. FPS starts at an order-independent seed unless
/// `reuse_sampling` supplies the per-level sample indices (used to keep the
/// two simulator branches in vertex correspondence).
PointHierarchy build_hierarchy(std::span<const Vec3> points, const NetworkConfig& cfg, bool with_decoder,
                               const PointHierarchy* reuse_sampling = nullptr);

struct Linear {
  ag::Tensor weight;
  ag::Tensor bias;
  ag::Tensor operator()(const ag::Tensor& x) const { return ag::add(ag::matmul(x, weight), bias); }
};

Linear make_linear(ag::ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                   std::uint64_t seed);

/// PointConv in its basic form: per neighbour, a feature MLP over
/// [offset, feature] is modulated elementwise by a weight-function MLP of the
/// offset, then max-pooled over the group.
class PointConvLayer {
 public:
  PointConvLayer() = default;
  PointConvLayer(ag::ParameterStore& store, const std::string& name, int in_width, int out_width, int weight_hidden,
                 std::uint64_t seed);

  /// `features` has one row per entry of `points` and `in_width` columns.
  ag::Tensor forward(std::span<const Vec3> centers, std::span<const Vec3> points, const ag::Tensor& features,
                     const BallGroups& groups) const;

  int in_width() const { return in_width_; }
  int out_width() const { return out_width_; }

  // Feature MLP, first (and only) layer split into offset and feature parts.
  ag::Tensor feat_offset_w;  // 3 x C
  ag::Tensor feat_w;         // in x C
  ag::Tensor feat_b;         // 1 x C
  Linear weight_in;          // 3 -> hidden
  Linear weight_out;         // hidden -> C

 private:
  int in_width_ = 0;
  int out_width_ = 0;
};

/// Offsets (neighbour - center) for every group slot, rows = centers * max_k.
ag::Tensor group_offsets(std::span<const Vec3> centers, std::span<const Vec3> points, const BallGroups& groups);

ag::Tensor positions_tensor(std::span<const Vec3> points);
std::vector<Vec3> tensor_positions(const ag::Tensor& t);

/// Four PointConv encoding levels; level-0 features are the coordinates.
class PointEncoder {
 public:
  PointEncoder() = default;
  PointEncoder(ag::ParameterStore& store, const std::string& name, const NetworkConfig& cfg, std::uint64_t seed);
  std::array<ag::Tensor, 5> forward(const PointHierarchy& h) const;

  std::array<PointConvLayer, 4> layers;
};

/// Interpolates coarse features onto the next level, concatenates the skip
/// features of that level, and applies PointConv; repeated for four levels.
class PointDecoder {
 public:
  PointDecoder() = default;
  PointDecoder(ag::ParameterStore& store, const std::string& name, const NetworkConfig& cfg,
               const std::array<int, 5>& skip_widths, std::uint64_t seed);
  ag::Tensor forward(const PointHierarchy& h, const std::array<ag::Tensor, 5>& skips) const;

  std::array<PointConvLayer, 4> layers;
};

/// Two-layer head producing per-vertex displacements (no output activation).
struct DisplacementHead {
  Linear hidden;
  Linear out;
  ag::Tensor operator()(const ag::Tensor& x) const { return out(ag::relu(hidden(x))); }
};

struct SimulatorOutput {
  ag::Tensor displacement;  // N x 3, midface rows exactly zero
  ag::Tensor positions;     // normal + displacement
};

/// Twin shared-weight encoders, per-level fusion, decoder onto the normal
/// surface, and a displacement head whose midface rows are forced to zero.
class SimulatorNet {
 public:
  explicit SimulatorNet(const NetworkConfig& cfg, std::uint64_t seed = 1);

  SimulatorOutput forward(const LabeledSurface& normal, const LabeledSurface& deformed) const;
  SimulatorOutput forward(const LabeledSurface& normal, const PointHierarchy& normal_h,
                          const LabeledSurface& deformed) const;

  const NetworkConfig& config() const { return cfg_; }
  ag::ParameterStore& store() { return store_; }
  const ag::ParameterStore& store() const { return store_; }

  PointEncoder encoder;  // shared by both branches
  std::array<Linear, 4> fusion;
  PointDecoder decoder;
  DisplacementHead head;

 private:
  NetworkConfig cfg_;
  ag::ParameterStore store_;
};

/// Encoder-decoder with concatenated skip connections and a displacement head.
class CorrectorNet {
 public:
  explicit CorrectorNet(const NetworkConfig& cfg, std::uint64_t seed = 2);

  /// Returns the N x 3 correction for `points`.
  ag::Tensor forward(std::span<const Vec3> points) const;

  const NetworkConfig& config() const { return cfg_; }
  ag::ParameterStore& store() { return store_; }
  const ag::ParameterStore& store() const { return store_; }

  PointEncoder encoder;
  PointDecoder decoder;
  DisplacementHead head;

 private:
  NetworkConfig cfg_;
  ag::ParameterStore store_;
};

/// Zeroes both layers of a displacement head (the networks become identities).
void zero_head(DisplacementHead& head);

/// Runs the simulator and returns V_simulator and the simulated surface
/// (normal's topology, labels and landmarks at shifted positions).
std::pair<DisplacementField, LabeledSurface> simulator_forward(const SimulatorNet& net, const LabeledSurface& normal,
                                                               const LabeledSurface& deformed);

/// Runs the corrector and returns the correction and the corrected surface.
std::pair<DisplacementField, LabeledSurface> corrector_forward(const CorrectorNet& net, const LabeledSurface& input);

DisplacementField field_from_tensor(const ag::Tensor& t);

}  // namespace refshape
