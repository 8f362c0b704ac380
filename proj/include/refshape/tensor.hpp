#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace refshape::ag {

using Shape = std::vector<std::size_t>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

/// Dense row-major float64 tensor taking part in a reverse-mode graph.
///
/// Most ops treat a tensor as a matrix: `rows()` is the product of all but the
/// last dimension and `cols()` is the last dimension.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  /// Trainable leaf.
  static Tensor leaf(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }
  double item() const;
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  /// Copy of the values with no graph history.
  Tensor detach() const;

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

std::size_t numel_of(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// Forward ops. Every op checks shapes and throws std::invalid_argument.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Elementwise sum; `b` may also be a row vector broadcast over a's rows.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
/// Concatenation along the last axis; all inputs share rows().
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& x, std::span<const int> indices);
/// Max over consecutive groups of `group` rows; gradient goes to the first argmax.
Tensor reduce_max_groups(const Tensor& x, std::size_t group);
Tensor reduce_sum_groups(const Tensor& x, std::size_t group);
/// Multiplies row r by the constant factor[r].
Tensor scale_rows(const Tensor& x, std::span<const double> factor);
/// Rows with keep[r] == false become exactly +0.0.
Tensor mask_rows(const Tensor& x, const std::vector<bool>& keep);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Euclidean norm of every row, shape (rows x 1). Zero rows get zero gradient.
Tensor norm_rows(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

/// Populates gradients of every reachable node that requires them.
void backward(const Tensor& loss);

/// Deterministic uniform init in [-b, b], b = sqrt(6 / (fan_in + fan_out)),
/// for a (fan_in x fan_out) weight matrix.
std::vector<double> seeded_uniform(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed);

/// Thrown when an optimizer step finds a parameter without a gradient.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void check() const;
};

/// Trainable tensor plus its Adam moments.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool is_weight = true;  // biases are excluded from L2 regularization
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

/// Owns parameters in creation order.
class ParameterStore {
 public:
  /// Weight matrix (fan_in x fan_out) with seeded uniform init.
  Tensor weight(const std::string& name, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed);
  /// Zero-initialized bias row vector.
  Tensor bias(const std::string& name, std::size_t width);

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  Parameter& find(const std::string& name);
  const Parameter& find(const std::string& name) const;
  std::size_t total_size() const;
  void zero_grad();

 private:
  std::vector<Parameter> params_;
};

/// One bias-corrected Adam update per parameter; clears gradients afterwards.
void adam_step(ParameterStore& store, const AdamConfig& cfg);

}  // namespace refshape::ag
