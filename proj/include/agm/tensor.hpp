#pragma once

// Dense 64-bit tensors with reverse-mode automatic differentiation.
//
// A Tape records one step's computation graph; GradScope activates it for
// the current thread. Operations record themselves only while a tape is
// active and at least one input is connected to it (or wants gradients).
// stop_gradient() severs the graph: the result is a plain copy that
// contributes exactly zero gradient upstream.
//
// Reductions use fixed-tree pairwise summation, so results are independent
// of any internal parallelism and constant inputs reduce exactly. Matrix
// products are delegated to CBLAS dgemm, pinned to a single thread.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <cblas.h>

#include "agm/rng.hpp"

extern "C" void openblas_set_num_threads(int);

namespace agm {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    os << s[i] << (i + 1 < s.size() ? "," : "");
  }
  os << "]";
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) {
    n *= d;
  }
  return n;
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(shape_numel(shape_), fill)) {}

  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    if (shape_numel(shape_) != values.size()) {
      throw std::invalid_argument("Tensor: shape " + shape_str(shape_) + " does not hold " +
                                  std::to_string(values.size()) + " values");
    }
    data_ = std::make_shared<std::vector<double>>(std::move(values));
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_ ? data_->size() : 0; }

  const std::vector<double>& values() const { return *data_; }
  std::vector<double>& values() { return *data_; }
  const double* data() const { return data_->data(); }
  double* data() { return data_->data(); }

  double item() const {
    if (size() != 1) {
      throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(size()) +
                                  " elements, expected 1");
    }
    return (*data_)[0];
  }

  double at(std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t i, std::size_t j) const { return (*data_)[i * shape_[1] + j]; }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool b) {
    requires_grad_ = b;
    return *this;
  }

  // Same storage, new extents. The tape treats both tensors as one node.
  Tensor reshape(Shape new_shape) const {
    if (shape_numel(new_shape) != size()) {
      throw std::invalid_argument("reshape: " + shape_str(shape_) + " -> " +
                                  shape_str(new_shape) + " changes element count");
    }
    Tensor out = *this;
    out.shape_ = std::move(new_shape);
    return out;
  }

  const std::shared_ptr<std::vector<double>>& storage() const { return data_; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  bool requires_grad_ = false;
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

inline Tensor random_normal(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  rng.fill_normal({t.data(), t.size()});
  return t;
}

inline Tensor random_uniform01(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  rng.fill_uniform01({t.data(), t.size()});
  return t;
}

// ---------------------------------------------------------------------------
// Tape

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::int64_t node_of(const Tensor& t) const {
    auto it = index_.find(t.storage().get());
    return it == index_.end() ? -1 : it->second;
  }

  bool tracks(const Tensor& t) const { return node_of(t) >= 0; }

  // Get-or-create a leaf node for `t` (used for parameters and any tensor
  // whose gradient is requested).
  std::int64_t leaf(const Tensor& t) {
    std::int64_t id = node_of(t);
    if (id >= 0) {
      return id;
    }
    nodes_.push_back(Node{t.storage(), std::vector<double>(t.size(), 0.0), nullptr});
    id = static_cast<std::int64_t>(nodes_.size()) - 1;
    index_.emplace(t.storage().get(), id);
    return id;
  }

  // Id the next record() call will assign; ops capture it before building
  // their backward closure so the closure never reads its own binding.
  std::int64_t next_id() const { return static_cast<std::int64_t>(nodes_.size()); }

  std::int64_t record(const Tensor& out, std::function<void(Tape&)> backward) {
    nodes_.push_back(Node{out.storage(), std::vector<double>(out.size(), 0.0), std::move(backward)});
    const std::int64_t id = static_cast<std::int64_t>(nodes_.size()) - 1;
    index_.emplace(out.storage().get(), id);
    return id;
  }

  std::vector<double>& grad_buf(std::int64_t id) { return nodes_[static_cast<std::size_t>(id)].grad; }

  // Reverse sweep from a scalar loss. Each node is visited exactly once, in
  // reverse creation order (creation order is a topological order).
  void backward(const Tensor& loss) {
    if (ran_backward_) {
      throw std::logic_error("Tape::backward: tape already swept");
    }
    if (loss.size() != 1) {
      throw std::invalid_argument("Tape::backward: loss has shape " + shape_str(loss.shape()) +
                                  ", expected a scalar");
    }
    const std::int64_t root = node_of(loss);
    if (root < 0) {
      throw std::invalid_argument("Tape::backward: loss is not connected to this tape");
    }
    nodes_[static_cast<std::size_t>(root)].grad[0] = 1.0;
    for (std::int64_t id = static_cast<std::int64_t>(nodes_.size()) - 1; id >= 0; --id) {
      auto& node = nodes_[static_cast<std::size_t>(id)];
      if (node.backward) {
        node.backward(*this);
      }
    }
    ran_backward_ = true;
  }

  // Gradient of the swept loss w.r.t. `t`; zeros when `t` never reached it.
  Tensor grad(const Tensor& t) const {
    const std::int64_t id = node_of(t);
    if (id < 0) {
      return zeros_like(t);
    }
    return Tensor(t.shape(), nodes_[static_cast<std::size_t>(id)].grad);
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::shared_ptr<const std::vector<double>> out;  // keeps buffer identity stable
    std::vector<double> grad;
    std::function<void(Tape&)> backward;  // null for leaves
  };

  std::vector<Node> nodes_;
  std::unordered_map<const void*, std::int64_t> index_;
  bool ran_backward_ = false;
};

namespace detail {

inline Tape*& active_tape_slot() {
  thread_local Tape* tape = nullptr;
  return tape;
}

}  // namespace detail

inline Tape* active_tape() { return detail::active_tape_slot(); }

class GradScope {
 public:
  explicit GradScope(Tape& tape) : prev_(detail::active_tape_slot()) {
    detail::active_tape_slot() = &tape;
  }
  ~GradScope() { detail::active_tape_slot() = prev_; }
  GradScope(const GradScope&) = delete;
  GradScope& operator=(const GradScope&) = delete;

 private:
  Tape* prev_;
};

namespace detail {

inline void init_blas() {
  static std::once_flag flag;
  std::call_once(flag, [] { openblas_set_num_threads(1); });
}

inline bool wants_tape(const Tensor& t) {
  Tape* tape = active_tape();
  return tape != nullptr && (t.requires_grad() || tape->tracks(t));
}

// Node id for an op input: existing node, fresh leaf if gradients are
// wanted, -1 for constants.
inline std::int64_t input_node(const Tensor& t) {
  Tape* tape = active_tape();
  std::int64_t id = tape->node_of(t);
  if (id < 0 && t.requires_grad()) {
    id = tape->leaf(t);
  }
  return id;
}

inline double pairwise_sum(const double* v, std::size_t n, std::size_t stride) {
  if (n == 0) {
    return 0.0;
  }
  if (n == 1) {
    return v[0];
  }
  if (n == 2) {
    return v[0] + v[stride];
  }
  const std::size_t h = n / 2;
  return pairwise_sum(v, h, stride) + pairwise_sum(v + h * stride, n - h, stride);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary operations with limited broadcasting: equal shapes, a
// one-element scalar on either side, or a rank-1 row vector against the last
// axis of a rank-2 tensor.

namespace detail {

enum class Broadcast { same, a_scalar, b_scalar, a_row, b_row };

inline Broadcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    return Broadcast::same;
  }
  if (a.size() == 1) {
    return Broadcast::a_scalar;
  }
  if (b.size() == 1) {
    return Broadcast::b_scalar;
  }
  if (a.rank() == 2 && b.rank() == 1 && b.shape()[0] == a.shape()[1]) {
    return Broadcast::b_row;
  }
  if (b.rank() == 2 && a.rank() == 1 && a.shape()[0] == b.shape()[1]) {
    return Broadcast::a_row;
  }
  throw std::invalid_argument(std::string("elementwise ") + op + ": shape mismatch " +
                              shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

enum class BinOp { add, sub, mul, div };

inline Tensor binary(BinOp op, const char* name, const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind(name, a, b);
  const bool a_small = kind == Broadcast::a_scalar || kind == Broadcast::a_row;
  const Tensor& big = a_small ? b : a;
  const std::size_t n = big.size();
  const std::size_t cols = big.rank() == 2 ? big.shape()[1] : big.size();

  auto index_a = [kind, cols](std::size_t i) -> std::size_t {
    switch (kind) {
      case Broadcast::a_scalar: return 0;
      case Broadcast::a_row: return i % cols;
      default: return i;
    }
  };
  auto index_b = [kind, cols](std::size_t i) -> std::size_t {
    switch (kind) {
      case Broadcast::b_scalar: return 0;
      case Broadcast::b_row: return i % cols;
      default: return i;
    }
  };

  if (op == BinOp::div) {
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (b.at(i) == 0.0) {
        throw std::domain_error("elementwise div: divisor " + shape_str(b.shape()) +
                                " contains zero at index " + std::to_string(i));
      }
    }
  }

  Tensor out(big.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pa[index_a(i)];
    const double y = pb[index_b(i)];
    switch (op) {
      case BinOp::add: po[i] = x + y; break;
      case BinOp::sub: po[i] = x - y; break;
      case BinOp::mul: po[i] = x * y; break;
      case BinOp::div: po[i] = x / y; break;
    }
  }

  if (!wants_tape(a) && !wants_tape(b)) {
    return out;
  }
  Tape& tape = *active_tape();
  const std::int64_t na = input_node(a);
  const std::int64_t nb = input_node(b);
  auto sa = a.storage();
  auto sb = b.storage();
  const std::int64_t out_id = tape.next_id();
  tape.record(out, [=](Tape& t) {
    const auto& g = t.grad_buf(out_id);
    const std::vector<double>& va = *sa;
    const std::vector<double>& vb = *sb;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ia = index_a(i);
      const std::size_t ib = index_b(i);
      double da = 0.0;
      double db = 0.0;
      switch (op) {
        case BinOp::add: da = 1.0; db = 1.0; break;
        case BinOp::sub: da = 1.0; db = -1.0; break;
        case BinOp::mul: da = vb[ib]; db = va[ia]; break;
        case BinOp::div:
          da = 1.0 / vb[ib];
          db = -va[ia] / (vb[ib] * vb[ib]);
          break;
      }
      if (na >= 0) {
        t.grad_buf(na)[ia] += g[i] * da;
      }
      if (nb >= 0) {
        t.grad_buf(nb)[ib] += g[i] * db;
      }
    }
  });
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(detail::BinOp::add, "add", a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(detail::BinOp::sub, "sub", a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(detail::BinOp::mul, "mul", a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return detail::binary(detail::BinOp::div, "div", a, b); }

inline Tensor add(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }
inline Tensor sub(const Tensor& a, double c) { return sub(a, Tensor::scalar(c)); }
inline Tensor sub(double c, const Tensor& a) { return sub(Tensor::scalar(c), a); }
inline Tensor scale(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }

// ---------------------------------------------------------------------------
// Matrix product [m x k] . [k x n] -> [m x n]

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  detail::init_blas();
  const auto m = static_cast<blasint>(a.shape()[0]);
  const auto k = static_cast<blasint>(a.shape()[1]);
  const auto n = static_cast<blasint>(b.shape()[1]);

  Tensor out({a.shape()[0], b.shape()[1]});
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0, a.data(), k, b.data(), n,
              0.0, out.data(), n);

  if (!detail::wants_tape(a) && !detail::wants_tape(b)) {
    return out;
  }
  Tape& tape = *active_tape();
  const std::int64_t na = detail::input_node(a);
  const std::int64_t nb = detail::input_node(b);
  auto sa = a.storage();
  auto sb = b.storage();
  const std::int64_t out_id = tape.next_id();
  tape.record(out, [=](Tape& t) {
    const double* g = t.grad_buf(out_id).data();
    if (na >= 0) {  // dA = g . B^T
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, k, n, 1.0, g, n, sb->data(), n, 1.0,
                  t.grad_buf(na).data(), k);
    }
    if (nb >= 0) {  // dB = A^T . g
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, k, n, m, 1.0, sa->data(), k, g, n, 1.0,
                  t.grad_buf(nb).data(), n);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

namespace detail {

template <class Fwd, class Dfn>
Tensor unary(const Tensor& x, Fwd fwd, Dfn dfn) {
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    po[i] = fwd(px[i]);
  }
  if (!wants_tape(x)) {
    return out;
  }
  Tape& tape = *active_tape();
  const std::int64_t nx = input_node(x);
  auto sx = x.storage();
  auto so = out.storage();
  const std::int64_t out_id = tape.next_id();
  tape.record(out, [=](Tape& t) {
    if (nx < 0) {
      return;
    }
    const auto& g = t.grad_buf(out_id);
    auto& gx = t.grad_buf(nx);
    for (std::size_t i = 0; i < n; ++i) {
      gx[i] += g[i] * dfn((*sx)[i], (*so)[i]);
    }
  });
  return out;
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace detail

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return detail::sigmoid_scalar(v); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor silu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v * detail::sigmoid_scalar(v); },
      [](double v, double) {
        const double s = detail::sigmoid_scalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

inline Tensor gelu(const Tensor& x) {
  return detail::unary(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * detail::kInvSqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * detail::kInvSqrt2));
        const double pdf = detail::kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

inline Tensor sin(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

inline Tensor cos(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Tensor clamp(const Tensor& x, double lo, double hi) {
  return detail::unary(
      x, [=](double v) { return std::min(std::max(v, lo), hi); },
      [=](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions (fixed-tree pairwise summation)

namespace detail {

inline Tensor reduce(const Tensor& x, int axis, bool mean, const char* name) {
  if (x.size() == 0) {
    throw std::invalid_argument(std::string(name) + ": empty tensor");
  }

  Shape out_shape;
  std::size_t outer = 1;
  std::size_t axis_n = 0;
  std::size_t inner = 1;
  if (axis < 0) {
    out_shape = {1};
    axis_n = x.size();
  } else {
    const auto a = static_cast<std::size_t>(axis);
    if (a >= x.rank()) {
      throw std::invalid_argument(std::string(name) + ": axis " + std::to_string(axis) +
                                  " out of range for " + shape_str(x.shape()));
    }
    for (std::size_t d = 0; d < x.rank(); ++d) {
      if (d < a) {
        outer *= x.shape()[d];
      } else if (d > a) {
        inner *= x.shape()[d];
      }
      if (d != a) {
        out_shape.push_back(x.shape()[d]);
      }
    }
    if (out_shape.empty()) {
      out_shape = {1};
    }
    axis_n = x.shape()[a];
  }

  const double factor = mean ? 1.0 / static_cast<double>(axis_n) : 1.0;
  Tensor out(out_shape);
  double* po = out.data();
  const double* px = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const double s = pairwise_sum(px + o * axis_n * inner + i, axis_n, inner);
      po[o * inner + i] = mean ? s * factor : s;
    }
  }

  if (!wants_tape(x)) {
    return out;
  }
  Tape& tape = *active_tape();
  const std::int64_t nx = input_node(x);
  const std::size_t axis_count = axis_n;
  const std::size_t inner_c = inner;
  const std::size_t outer_c = outer;
  const std::int64_t out_id = tape.next_id();
  tape.record(out, [=](Tape& t) {
    if (nx < 0) {
      return;
    }
    const auto& g = t.grad_buf(out_id);
    auto& gx = t.grad_buf(nx);
    for (std::size_t o = 0; o < outer_c; ++o) {
      for (std::size_t k = 0; k < axis_count; ++k) {
        for (std::size_t i = 0; i < inner_c; ++i) {
          gx[(o * axis_count + k) * inner_c + i] += g[o * inner_c + i] * factor;
        }
      }
    }
  });
  return out;
}

}  // namespace detail

inline Tensor reduce_sum(const Tensor& x) { return detail::reduce(x, -1, false, "reduce_sum"); }
inline Tensor reduce_sum(const Tensor& x, int axis) { return detail::reduce(x, axis, false, "reduce_sum"); }
inline Tensor reduce_mean(const Tensor& x) { return detail::reduce(x, -1, true, "reduce_mean"); }
inline Tensor reduce_mean(const Tensor& x, int axis) { return detail::reduce(x, axis, true, "reduce_mean"); }

// ---------------------------------------------------------------------------

// Forward identity, zero gradient upstream. Returns a detached copy so the
// result can participate in later computation as plain data.
inline Tensor stop_gradient(const Tensor& x) {
  Tensor out(x.shape(), x.values());
  out.set_requires_grad(false);
  return out;
}

}  // namespace agm
