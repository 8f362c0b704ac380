#include "refshape/nets.hpp"

#include "refshape/seeding.hpp"

#include <stdexcept>

namespace refshape {

using ag::Tensor;

namespace {

Tensor interpolate(const Tensor& coarse, const InterpWeights& w) {
  return ag::reduce_sum_groups(ag::scale_rows(ag::gather_rows(coarse, w.indices), w.weights), 3);
}

}  // namespace

// ------------------------------------------------------------------ config

NetworkConfig NetworkConfig::desk(int n_points, int landmarks) {
  NetworkConfig c;
  c.n_points = n_points;
  c.enc_widths = {16, 32, 64, 64};
  c.dec_widths = {64, 32, 32, 16};
  c.max_k = 12;
  c.weight_hidden = 8;
  c.head_hidden = 16;
  c.landmarks = landmarks;
  return c;
}

void NetworkConfig::check() const {
  for (int d : divisors)
    if (d < 1) throw std::invalid_argument("NetworkConfig: divisors must be >= 1");
  for (int l = 1; l < 4; ++l)
    if (divisors[l] <= divisors[l - 1]) throw std::invalid_argument("NetworkConfig: encoder divisors must increase");
  if (divisors[4] != divisors[2] || divisors[5] != divisors[1] || divisors[6] != divisors[0] || divisors[7] != 1)
    throw std::invalid_argument("NetworkConfig: decoder schedule must mirror the encoder levels back to N");
  for (int l = 0; l < 4; ++l) {
    if (!(enc_radii[l] > 0.0) || !(dec_radii[l] > 0.0)) throw std::invalid_argument("NetworkConfig: radii must be > 0");
    if (enc_widths[l] < 1 || dec_widths[l] < 1) throw std::invalid_argument("NetworkConfig: widths must be >= 1");
  }
  if (max_k < 1 || weight_hidden < 1 || head_hidden < 1) throw std::invalid_argument("NetworkConfig: bad widths");
  if (landmarks < 0) throw std::invalid_argument("NetworkConfig: landmark count must be >= 0");
  if (n_points < min_points())
    throw std::invalid_argument("NetworkConfig: N=" + std::to_string(n_points) + " below minimum " +
                                std::to_string(min_points()));
}

std::array<int, 5> NetworkConfig::level_sizes(int n) const {
  return {n, n / divisors[0], n / divisors[1], n / divisors[2], n / divisors[3]};
}

int NetworkConfig::min_points() const { return 3 * divisors[3]; }

std::vector<double> NetworkConfig::to_vector() const {
  std::vector<double> v{static_cast<double>(n_points)};
  for (int d : divisors) v.push_back(d);
  for (double r : enc_radii) v.push_back(r);
  for (double r : dec_radii) v.push_back(r);
  for (int w : enc_widths) v.push_back(w);
  for (int w : dec_widths) v.push_back(w);
  v.push_back(max_k);
  v.push_back(weight_hidden);
  v.push_back(head_hidden);
  v.push_back(landmarks);
  return v;
}

NetworkConfig NetworkConfig::from_vector(const std::vector<double>& v) {
  if (v.size() != 29) throw std::invalid_argument("NetworkConfig: expected 29 values, got " + std::to_string(v.size()));
  NetworkConfig c;
  std::size_t i = 0;
  c.n_points = static_cast<int>(v[i++]);
  for (auto& d : c.divisors) d = static_cast<int>(v[i++]);
  for (auto& r : c.enc_radii) r = v[i++];
  for (auto& r : c.dec_radii) r = v[i++];
  for (auto& w : c.enc_widths) w = static_cast<int>(v[i++]);
  for (auto& w : c.dec_widths) w = static_cast<int>(v[i++]);
  c.max_k = static_cast<int>(v[i++]);
  c.weight_hidden = static_cast<int>(v[i++]);
  c.head_hidden = static_cast<int>(v[i++]);
  c.landmarks = static_cast<int>(v[i++]);
  return c;
}

// ------------------------------------------------------------------ hierarchy

PointHierarchy build_hierarchy(std::span<const Vec3> points, const NetworkConfig& cfg, bool with_decoder,
                               const PointHierarchy* reuse_sampling) {
  const int n = static_cast<int>(points.size());
  if (n < cfg.min_points())
    throw std::invalid_argument("network input has " + std::to_string(n) + " points; the deepest level needs N >= " +
                                std::to_string(cfg.min_points()));
  const auto sizes = cfg.level_sizes(n);
  PointHierarchy h;
  h.points[0].assign(points.begin(), points.end());
  for (int l = 1; l <= 4; ++l) {
    const auto& prev = h.points[static_cast<std::size_t>(l - 1)];
    auto& sample = h.sample[static_cast<std::size_t>(l)];
    if (reuse_sampling) {
      sample = reuse_sampling->sample[static_cast<std::size_t>(l)];
      if (static_cast<int>(sample.size()) != sizes[static_cast<std::size_t>(l)])
        throw std::invalid_argument("build_hierarchy: reused sampling has the wrong level sizes");
    } else {
      sample = furthest_point_sampling(prev, sizes[static_cast<std::size_t>(l)], invariant_seed(prev)).indices;
    }
    h.points[static_cast<std::size_t>(l)] = gather_points(prev, sample);
    h.enc_groups[static_cast<std::size_t>(l)] =
        ball_query(h.points[static_cast<std::size_t>(l)], prev, cfg.enc_radii[static_cast<std::size_t>(l - 1)], cfg.max_k);
  }
  if (with_decoder) {
    for (int d = 0; d < 4; ++d) {
      const auto target = static_cast<std::size_t>(3 - d);
      const auto& pts = h.points[target];
      h.dec_interp[static_cast<std::size_t>(d)] = interpolation_weights(pts, h.points[target + 1]);
      h.dec_groups[static_cast<std::size_t>(d)] = ball_query(pts, pts, cfg.dec_radii[static_cast<std::size_t>(d)], cfg.max_k);
    }
    h.has_decoder = true;
  }
  return h;
}

// ------------------------------------------------------------------ layers

Linear make_linear(ag::ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                   std::uint64_t seed) {
  return {store.weight(name + ".w", in, out, seed), store.bias(name + ".b", out)};
}

Tensor positions_tensor(std::span<const Vec3> points) {
  std::vector<double> v;
  v.reserve(points.size() * 3);
  for (const auto& p : points) v.insert(v.end(), {p.x(), p.y(), p.z()});
  return Tensor::constant({points.size(), 3}, std::move(v));
}

std::vector<Vec3> tensor_positions(const Tensor& t) {
  if (t.cols() != 3) throw std::invalid_argument("tensor_positions: expected 3 columns");
  std::vector<Vec3> out(t.rows());
  const auto v = t.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Vec3(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
  return out;
}

Tensor group_offsets(std::span<const Vec3> centers, std::span<const Vec3> points, const BallGroups& groups) {
  const auto k = static_cast<std::size_t>(groups.max_k);
  if (groups.num_centers() != centers.size()) throw std::invalid_argument("group_offsets: group/center count mismatch");
  std::vector<double> v(centers.size() * k * 3);
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const auto row = groups.row(c);
    for (std::size_t j = 0; j < k; ++j) {
      const Vec3 d = points[static_cast<std::size_t>(row[j])] - centers[c];
      double* dst = v.data() + (c * k + j) * 3;
      dst[0] = d.x();
      dst[1] = d.y();
      dst[2] = d.z();
    }
  }
  return Tensor::constant({centers.size() * k, 3}, std::move(v));
}

PointConvLayer::PointConvLayer(ag::ParameterStore& store, const std::string& name, int in_width, int out_width,
                               int weight_hidden, std::uint64_t seed)
    : in_width_(in_width), out_width_(out_width) {
  const auto c = static_cast<std::size_t>(out_width);
  // Both halves of the feature layer share one fan-in so the split matches a
  // single (3 + in) x C matrix.
  const auto fan_in = static_cast<std::size_t>(3 + in_width);
  auto full = ag::seeded_uniform(fan_in, c, mix_seed(seed, 0));
  std::vector<double> off(full.begin(), full.begin() + static_cast<long>(3 * c));
  std::vector<double> feat(full.begin() + static_cast<long>(3 * c), full.end());
  feat_offset_w = store.weight(name + ".feat_offset", 3, c, 0);
  std::copy(off.begin(), off.end(), feat_offset_w.mutable_values().begin());
  if (in_width > 0) {
    feat_w = store.weight(name + ".feat", static_cast<std::size_t>(in_width), c, 0);
    std::copy(feat.begin(), feat.end(), feat_w.mutable_values().begin());
  }
  feat_b = store.bias(name + ".feat_b", c);
  weight_in = make_linear(store, name + ".wnet0", 3, static_cast<std::size_t>(weight_hidden), mix_seed(seed, 1));
  weight_out = make_linear(store, name + ".wnet1", static_cast<std::size_t>(weight_hidden), c, mix_seed(seed, 2));
}

Tensor PointConvLayer::forward(std::span<const Vec3> centers, std::span<const Vec3> points, const Tensor& features,
                               const BallGroups& groups) const {
  if (static_cast<int>(features.cols()) != in_width_ || features.rows() != points.size())
    throw std::invalid_argument("pointconv: features " + ag::shape_string(features.shape()) + " do not match " +
                                std::to_string(points.size()) + " points x " + std::to_string(in_width_));
  const Tensor offsets = group_offsets(centers, points, groups);
  Tensor pre = ag::matmul(offsets, feat_offset_w);
  if (in_width_ > 0) {
    // Project on the source points first; gathering the projection is cheaper
    // than projecting every neighbour row.
    pre = ag::add(pre, ag::gather_rows(ag::matmul(features, feat_w), groups.neighbors));
  }
  const Tensor feat = ag::relu(ag::add(pre, feat_b));
  const Tensor weights = weight_out(ag::relu(weight_in(offsets)));
  return ag::reduce_max_groups(ag::mul(feat, weights), static_cast<std::size_t>(groups.max_k));
}

PointEncoder::PointEncoder(ag::ParameterStore& store, const std::string& name, const NetworkConfig& cfg,
                           std::uint64_t seed) {
  int in = 3;
  for (std::size_t l = 0; l < 4; ++l) {
    layers[l] = PointConvLayer(store, name + ".enc" + std::to_string(l), in, cfg.enc_widths[l], cfg.weight_hidden,
                               mix_seed(seed, l));
    in = cfg.enc_widths[l];
  }
}

std::array<Tensor, 5> PointEncoder::forward(const PointHierarchy& h) const {
  std::array<Tensor, 5> f;
  f[0] = positions_tensor(h.points[0]);
  for (std::size_t l = 1; l <= 4; ++l)
    f[l] = layers[l - 1].forward(h.points[l], h.points[l - 1], f[l - 1], h.enc_groups[l]);
  return f;
}

PointDecoder::PointDecoder(ag::ParameterStore& store, const std::string& name, const NetworkConfig& cfg,
                           const std::array<int, 5>& skip_widths, std::uint64_t seed) {
  int coarse = skip_widths[4];
  for (std::size_t d = 0; d < 4; ++d) {
    const int in = coarse + skip_widths[3 - d];
    layers[d] = PointConvLayer(store, name + ".dec" + std::to_string(d), in, cfg.dec_widths[d], cfg.weight_hidden,
                               mix_seed(seed, d));
    coarse = cfg.dec_widths[d];
  }
}

Tensor PointDecoder::forward(const PointHierarchy& h, const std::array<Tensor, 5>& skips) const {
  if (!h.has_decoder) throw std::invalid_argument("decoder: hierarchy built without decoder structure");
  Tensor x = skips[4];
  for (std::size_t d = 0; d < 4; ++d) {
    const std::size_t level = 3 - d;
    const Tensor input = ag::concat_cols({interpolate(x, h.dec_interp[d]), skips[level]});
    x = layers[d].forward(h.points[level], h.points[level], input, h.dec_groups[d]);
  }
  return x;
}

void zero_head(DisplacementHead& head) {
  for (Tensor* t : {&head.hidden.weight, &head.hidden.bias, &head.out.weight, &head.out.bias})
    for (auto& v : t->mutable_values()) v = 0.0;
}

// ------------------------------------------------------------------ networks

SimulatorNet::SimulatorNet(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.check();
  encoder = PointEncoder(store_, "sim", cfg_, mix_seed(seed, 10));
  for (std::size_t l = 0; l < 4; ++l) {
    const auto w = static_cast<std::size_t>(cfg_.enc_widths[l]);
    fusion[l] = make_linear(store_, "sim.fuse" + std::to_string(l), 2 * w, w, mix_seed(seed, 20 + l));
  }
  decoder = PointDecoder(store_, "sim", cfg_,
                         {6, cfg_.enc_widths[0], cfg_.enc_widths[1], cfg_.enc_widths[2], cfg_.enc_widths[3]},
                         mix_seed(seed, 30));
  head.hidden = make_linear(store_, "sim.head0", static_cast<std::size_t>(cfg_.dec_widths[3]),
                            static_cast<std::size_t>(cfg_.head_hidden), mix_seed(seed, 40));
  head.out = make_linear(store_, "sim.head1", static_cast<std::size_t>(cfg_.head_hidden), 3, mix_seed(seed, 41));
}

SimulatorOutput SimulatorNet::forward(const LabeledSurface& normal, const LabeledSurface& deformed) const {
  return forward(normal, build_hierarchy(normal.vertices, cfg_, true), deformed);
}

SimulatorOutput SimulatorNet::forward(const LabeledSurface& normal, const PointHierarchy& normal_h,
                                      const LabeledSurface& deformed) const {
  if (normal.size() != deformed.size() || normal.region != deformed.region)
    throw std::invalid_argument("simulator: normal and deformed surfaces are not in correspondence");
  const PointHierarchy deformed_h = build_hierarchy(deformed.vertices, cfg_, false, &normal_h);
  const auto fn = encoder.forward(normal_h);
  const auto fd = encoder.forward(deformed_h);
  std::array<Tensor, 5> fused;
  fused[0] = ag::concat_cols({fn[0], fd[0]});
  for (std::size_t l = 1; l <= 4; ++l) fused[l] = ag::relu(fusion[l - 1](ag::concat_cols({fn[l], fd[l]})));
  const Tensor raw = head(decoder.forward(normal_h, fused));

  std::vector<bool> jaw(normal.size());
  for (std::size_t i = 0; i < jaw.size(); ++i) jaw[i] = normal.region[i] == Region::Jaw;
  SimulatorOutput out;
  out.displacement = ag::mask_rows(raw, jaw);
  out.positions = ag::add(fn[0], out.displacement);
  return out;
}

CorrectorNet::CorrectorNet(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.check();
  encoder = PointEncoder(store_, "cor", cfg_, mix_seed(seed, 10));
  decoder = PointDecoder(store_, "cor", cfg_,
                         {3, cfg_.enc_widths[0], cfg_.enc_widths[1], cfg_.enc_widths[2], cfg_.enc_widths[3]},
                         mix_seed(seed, 30));
  head.hidden = make_linear(store_, "cor.head0", static_cast<std::size_t>(cfg_.dec_widths[3]),
                            static_cast<std::size_t>(cfg_.head_hidden), mix_seed(seed, 40));
  head.out = make_linear(store_, "cor.head1", static_cast<std::size_t>(cfg_.head_hidden), 3, mix_seed(seed, 41));
}

Tensor CorrectorNet::forward(std::span<const Vec3> points) const {
  const PointHierarchy h = build_hierarchy(points, cfg_, true);
  return head(decoder.forward(h, encoder.forward(h)));
}

DisplacementField field_from_tensor(const Tensor& t) { return {tensor_positions(t)}; }

std::pair<DisplacementField, LabeledSurface> simulator_forward(const SimulatorNet& net, const LabeledSurface& normal,
                                                               const LabeledSurface& deformed) {
  if (!same_correspondence(normal, deformed))
    throw std::invalid_argument("simulator_forward: surfaces differ in size, labels or landmarks");
  ag::NoGradGuard no_grad;
  const auto out = net.forward(normal, deformed);
  LabeledSurface simulated = normal;
  const auto moved = tensor_positions(out.positions);
  for (std::size_t i = 0; i < moved.size(); ++i)
    if (normal.region[i] == Region::Jaw) simulated.vertices[i] = moved[i];
  return {field_from_tensor(out.displacement), std::move(simulated)};
}

std::pair<DisplacementField, LabeledSurface> corrector_forward(const CorrectorNet& net, const LabeledSurface& input) {
  ag::NoGradGuard no_grad;
  DisplacementField correction = field_from_tensor(net.forward(input.vertices));
  return {correction, apply_displacement(input, correction)};
}

}  // namespace refshape
