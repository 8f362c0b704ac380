#include "refshape/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_set>

namespace refshape::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;

Tensor make_op(Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
               std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  const bool track = g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                                   [](const NodePtr& p) { return p->requires_grad; });
  if (track) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

std::size_t rows_of(const Shape& s) {
  if (s.empty()) return 1;
  return std::accumulate(s.begin(), s.end() - 1, std::size_t{1}, std::multiplies<>());
}
std::size_t cols_of(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace

std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (numel_of(shape) != values.size())
    throw std::invalid_argument("constant: " + std::to_string(values.size()) + " values for shape " +
                                shape_string(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) {
  const auto count = numel_of(shape);
  return constant(std::move(shape), std::vector<double>(count, 0.0));
}

Tensor Tensor::leaf(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

std::size_t Tensor::rows() const { return rows_of(node_->shape); }
std::size_t Tensor::cols() const { return cols_of(node_->shape); }

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item: tensor of shape " + shape_string(shape()) + " is not scalar");
  return node_->value[0];
}

Tensor Tensor::detach() const { return constant(node_->shape, node_->value); }

// ------------------------------------------------------------------ ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.shape().size() != 2 || b.rows() != k) shape_error("matmul", a.shape(), b.shape());
  std::vector<double> out(m * n);
  MatMap(out.data(), static_cast<long>(m), static_cast<long>(n)).noalias() =
      ConstMatMap(a.values().data(), static_cast<long>(m), static_cast<long>(k)) *
      ConstMatMap(b.values().data(), static_cast<long>(k), static_cast<long>(n));
  Shape shape = a.shape();
  if (shape.empty()) shape = {1};
  shape.back() = n;
  return make_op(std::move(shape), std::move(out), {a.node_ptr(), b.node_ptr()}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    ConstMatMap g(self.grad.data(), static_cast<long>(m), static_cast<long>(n));
    if (pa.requires_grad)
      MatMap(pa.ensure_grad().data(), static_cast<long>(m), static_cast<long>(k)).noalias() +=
          g * ConstMatMap(pb.value.data(), static_cast<long>(k), static_cast<long>(n)).transpose();
    if (pb.requires_grad)
      MatMap(pb.ensure_grad().data(), static_cast<long>(k), static_cast<long>(n)).noalias() +=
          ConstMatMap(pa.value.data(), static_cast<long>(m), static_cast<long>(k)).transpose() * g;
  });
}

namespace {

enum class Binary { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* name) {
  const bool same = a.shape() == b.shape() || (a.numel() == b.numel() && a.cols() == b.cols());
  const bool broadcast = !same && b.numel() == a.cols() && kind != Binary::Mul;
  if (!same && !broadcast) shape_error(name, a.shape(), b.shape());
  const std::size_t rows = a.rows(), cols = a.cols();
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      const double y = bv[broadcast ? c : i];
      switch (kind) {
        case Binary::Add: out[i] = av[i] + y; break;
        case Binary::Sub: out[i] = av[i] - y; break;
        case Binary::Mul: out[i] = av[i] * y; break;
      }
    }
  return make_op(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                 [kind, broadcast, rows, cols](Node& self) {
                   Node& pa = *self.parents[0];
                   Node& pb = *self.parents[1];
                   const auto& g = self.grad;
                   if (pa.requires_grad) {
                     auto& ga = pa.ensure_grad();
                     if (kind == Binary::Mul)
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb.value[i];
                     else
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                   }
                   if (pb.requires_grad) {
                     auto& gb = pb.ensure_grad();
                     const double sign = kind == Binary::Sub ? -1.0 : 1.0;
                     if (kind == Binary::Mul)
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa.value[i];
                     else if (broadcast)
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cols; ++c) gb[c] += sign * g[r * cols + c];
                     else
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
                   }
                 });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Mul, "mul"); }

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_op(x.shape(), std::move(out), {x.node_ptr()}, [](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p.value[i] > 0.0) gp[i] += self.grad[i];
  });
}

Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v *= s;
  return make_op(x.shape(), std::move(out), {x.node_ptr()}, [s](Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gp[i] += s * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& x, double s) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v += s;
  return make_op(x.shape(), std::move(out), {x.node_ptr()}, [](Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gp[i] += self.grad[i];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", parts.front().shape(), p.shape());
    widths.push_back(p.cols());
    total += p.cols();
    parents.push_back(p.node_ptr());
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    offset += widths[k];
  }
  Shape shape = parts.front().shape();
  if (shape.empty()) shape = {1};
  shape.back() = total;
  return make_op(std::move(shape), std::move(out), std::move(parents), [rows, widths, total](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      Node& p = *self.parents[k];
      if (p.requires_grad) {
        auto& gp = p.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) gp[r * widths[k] + c] += self.grad[r * total + off + c];
      }
      off += widths[k];
    }
  });
}

Tensor gather_rows(const Tensor& x, std::span<const int> indices) {
  const std::size_t cols = x.cols(), rows = x.rows();
  std::vector<double> out(indices.size() * cols);
  const auto v = x.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = static_cast<std::size_t>(indices[i]);
    if (indices[i] < 0 || src >= rows)
      throw std::invalid_argument("gather_rows: index " + std::to_string(indices[i]) + " outside " +
                                  std::to_string(rows) + " rows");
    std::copy_n(v.data() + src * cols, cols, out.data() + i * cols);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return make_op({indices.size(), cols}, std::move(out), {x.node_ptr()}, [idx = std::move(idx), cols](Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = gp.data() + static_cast<std::size_t>(idx[i]) * cols;
      const double* g = self.grad.data() + i * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += g[c];
    }
  });
}

Tensor reduce_max_groups(const Tensor& x, std::size_t group) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (group == 0 || rows % group != 0)
    throw std::invalid_argument("reduce_max_groups: " + std::to_string(rows) + " rows not divisible by " +
                                std::to_string(group));
  const std::size_t out_rows = rows / group;
  std::vector<double> out(out_rows * cols);
  std::vector<std::size_t> argmax(out_rows * cols);
  const auto v = x.values();
  for (std::size_t g = 0; g < out_rows; ++g)
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t best = g * group;
      for (std::size_t r = g * group + 1; r < (g + 1) * group; ++r)
        if (v[r * cols + c] > v[best * cols + c]) best = r;
      out[g * cols + c] = v[best * cols + c];
      argmax[g * cols + c] = best * cols + c;
    }
  return make_op({out_rows, cols}, std::move(out), {x.node_ptr()}, [argmax = std::move(argmax)](Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < argmax.size(); ++i) gp[argmax[i]] += self.grad[i];
  });
}

Tensor reduce_sum_groups(const Tensor& x, std::size_t group) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (group == 0 || rows % group != 0)
    throw std::invalid_argument("reduce_sum_groups: " + std::to_string(rows) + " rows not divisible by " +
                                std::to_string(group));
  const std::size_t out_rows = rows / group;
  std::vector<double> out(out_rows * cols, 0.0);
  const auto v = x.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[(r / group) * cols + c] += v[r * cols + c];
  return make_op({out_rows, cols}, std::move(out), {x.node_ptr()}, [group, rows, cols](Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gp[r * cols + c] += self.grad[(r / group) * cols + c];
  });
}

Tensor scale_rows(const Tensor& x, std::span<const double> factor) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (factor.size() != rows)
    throw std::invalid_argument("scale_rows: " + std::to_string(factor.size()) + " factors for " +
                                std::to_string(rows) + " rows");
  std::vector<double> out(x.numel());
  const auto v = x.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = v[r * cols + c] * factor[r];
  std::vector<double> f(factor.begin(), factor.end());
  return make_op(x.shape(), std::move(out), {x.node_ptr()}, [f = std::move(f), cols](Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < f.size(); ++r)
      for (std::size_t c = 0; c < cols; ++c) gp[r * cols + c] += self.grad[r * cols + c] * f[r];
  });
}

Tensor mask_rows(const Tensor& x, const std::vector<bool>& keep) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (keep.size() != rows)
    throw std::invalid_argument("mask_rows: mask of " + std::to_string(keep.size()) + " for " +
                                std::to_string(rows) + " rows");
  std::vector<double> out(x.numel(), 0.0);
  const auto v = x.values();
  for (std::size_t r = 0; r < rows; ++r)
    if (keep[r]) std::copy_n(v.data() + r * cols, cols, out.data() + r * cols);
  return make_op(x.shape(), std::move(out), {x.node_ptr()}, [keep, cols](Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < keep.size(); ++r)
      if (keep[r])
        for (std::size_t c = 0; c < cols; ++c) gp[r * cols + c] += self.grad[r * cols + c];
  });
}

Tensor sum(const Tensor& x) {
  const auto v = x.values();
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  return make_op({1}, {total}, {x.node_ptr()}, [](Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (auto& g : gp) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor norm_rows(const Tensor& x) {
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> out(rows);
  const auto v = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += v[r * cols + c] * v[r * cols + c];
    out[r] = std::sqrt(s);
  }
  return make_op({rows, 1}, std::move(out), {x.node_ptr()}, [rows, cols](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double n = self.value[r];
      if (n == 0.0) continue;
      const double k = self.grad[r] / n;
      for (std::size_t c = 0; c < cols; ++c) gp[r * cols + c] += k * p.value[r * cols + c];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op(std::move(shape), std::move(out), {x.node_ptr()}, [](Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i];
  });
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&loss.node(), 0}};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node().ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Interior gradients are not needed once propagated.
  for (Node* n : order)
    if (n->backward) n->grad.clear();
}

// ------------------------------------------------------------------ init / optimizer

std::vector<double> seeded_uniform(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> out(fan_in * fan_out);
  for (auto& v : out) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
    v = (2.0 * u - 1.0) * bound;
  }
  return out;
}

void AdamConfig::check() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("adam: learning rate must be > 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw std::invalid_argument("adam: betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw std::invalid_argument("adam: epsilon must be > 0");
}

Tensor ParameterStore::weight(const std::string& name, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  Tensor t = Tensor::leaf({fan_in, fan_out}, seeded_uniform(fan_in, fan_out, seed));
  params_.push_back({name, t, true, {}, {}, 0});
  return t;
}

Tensor ParameterStore::bias(const std::string& name, std::size_t width) {
  Tensor t = Tensor::leaf({1, width}, std::vector<double>(width, 0.0));
  params_.push_back({name, t, false, {}, {}, 0});
  return t;
}

Parameter& ParameterStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named '" + name + "'");
}

const Parameter& ParameterStore::find(const std::string& name) const {
  return const_cast<ParameterStore*>(this)->find(name);
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void adam_step(ParameterStore& store, const AdamConfig& cfg) {
  cfg.check();
  for (const auto& p : store.params())
    if (!p.tensor.has_grad()) throw StateError("adam_step: parameter '" + p.name + "' has no gradient");
  for (auto& p : store.params()) {
    const std::size_t n = p.tensor.numel();
    if (p.m.empty()) p.m.assign(n, 0.0);
    if (p.v.empty()) p.v.assign(n, 0.0);
    ++p.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
    auto theta = p.tensor.mutable_values();
    const auto g = p.tensor.grad();
    for (std::size_t i = 0; i < n; ++i) {
      p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g[i];
      p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = p.m[i] / c1;
      const double v_hat = p.v[i] / c2;
      theta[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
    p.tensor.zero_grad();
  }
}

}  // namespace refshape::ag
