#pragma once

// Reverse-mode automatic differentiation over dense row-major f64 tensors.
//
// A Tape records every primitive in execution order. Values are immutable
// once recorded; backward() walks the records in reverse, so gradient
// accumulation order is fixed by the order the forward pass ran in and two
// identical forward passes yield bit-identical gradients.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ssd/error.hpp"

namespace ssd {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major tensor value. A tensor of shape {} is a scalar.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (element_count(shape) != data.size())
      throw Error(Errc::shape_mismatch, "tensor of shape " + shape_string(shape) + " given " +
                                            std::to_string(data.size()) + " values");
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor zeros(Shape s) {
    const std::size_t n = element_count(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor row(std::span<const double> v) { return Tensor({1, v.size()}, {v.begin(), v.end()}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  /// Rows/cols view: rank-1 tensors are a single row, scalars are 1x1.
  std::size_t rows() const { return shape.size() >= 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  double item() const { return data.at(0); }
};

/// Global count of completed backward passes. Used to check that importance
/// estimation performs exactly one backward pass per sample.
inline std::atomic<std::uint64_t>& backward_pass_total() {
  static std::atomic<std::uint64_t> total{0};
  return total;
}

/// Counts backward passes executed after construction.
class BackwardPassCounter {
 public:
  BackwardPassCounter() : start_(backward_pass_total().load()) {}
  std::uint64_t count() const { return backward_pass_total().load() - start_; }
  void reset() { start_ = backward_pass_total().load(); }

 private:
  std::uint64_t start_;
};

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  enum class Op { leaf, matmul, add, sub, mul, add_bias, relu, softmax, cross_entropy, l2_squared_norm, sum };

  /// Leaf that never receives a gradient (inputs, targets).
  Var constant(Tensor value) { return push(Op::leaf, std::move(value), {}, false); }

  /// Leaf that receives a gradient on backward().
  Var parameter(Tensor value) { return push(Op::leaf, std::move(value), {}, true); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }

  /// Gradient of the last backward() output w.r.t. v. Zero-filled when v was
  /// not reachable from that output.
  std::span<const double> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (!n.requires_grad)
      throw Error(Errc::invalid_argument, "gradient requested for a tensor that does not require grad");
    return n.grad;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void backward(Var output) {
    Node& out = nodes_.at(output.id);
    if (out.value.size() != 1)
      throw Error(Errc::not_scalar, "backward() needs a single-element output, got shape " +
                                        shape_string(out.value.shape));
    for (Node& n : nodes_) {
      if (n.requires_grad) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    }
    if (out.requires_grad) {
      out.grad[0] = 1.0;
      for (std::size_t i = output.id + 1; i-- > 0;) {
        if (nodes_[i].requires_grad && nodes_[i].op != Op::leaf) propagate(i);
      }
    }
    backward_pass_total().fetch_add(1);
  }

  // Primitive construction. Each validates shapes and records one node.

  Var matmul(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    if (x.rank() != 2 || y.rank() != 2 || x.shape[1] != y.shape[0]) mismatch("matmul", x, y);
    const std::size_t m = x.shape[0], k = x.shape[1], n = y.shape[1];
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double xv = x.data[i * k + p];
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += xv * y.data[p * n + j];
      }
    return push(Op::matmul, std::move(out), {a.id, b.id});
  }

  Var add(Var a, Var b) { return elementwise(Op::add, "add", a, b); }
  Var sub(Var a, Var b) { return elementwise(Op::sub, "sub", a, b); }
  Var mul(Var a, Var b) { return elementwise(Op::mul, "mul", a, b); }

  /// a[m x n] + bias[n] broadcast over rows.
  Var add_bias(Var a, Var bias) {
    const Tensor& x = value(a);
    const Tensor& b = value(bias);
    if (x.rank() != 2 || b.size() != x.shape[1] || b.rank() > 2 || (b.rank() == 2 && b.shape[0] != 1))
      mismatch("add_bias", x, b);
    Tensor out = x;
    const std::size_t n = x.shape[1];
    for (std::size_t i = 0; i < x.shape[0]; ++i)
      for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += b.data[j];
    return push(Op::add_bias, std::move(out), {a.id, bias.id});
  }

  Var relu(Var a) {
    Tensor out = value(a);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return push(Op::relu, std::move(out), {a.id});
  }

  /// Row-wise softmax with the row maximum subtracted before exponentiation.
  Var softmax(Var a) {
    Tensor out = value(a);
    const std::size_t cols = out.cols();
    for (std::size_t r = 0; r < out.rows(); ++r) softmax_row(std::span<double>(out.data).subspan(r * cols, cols));
    return push(Op::softmax, std::move(out), {a.id});
  }

  /// Mean over rows of -log softmax(logits)[row, label[row]].
  Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
    const Tensor& z = value(logits);
    if (z.rank() > 2 || labels.size() != z.rows())
      throw Error(Errc::shape_mismatch, "cross_entropy: logits " + shape_string(z.shape) + " vs " +
                                            std::to_string(labels.size()) + " labels");
    const std::size_t cols = z.cols();
    double total = 0.0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
      if (labels[r] >= cols)
        throw Error(Errc::label_out_of_range, "cross_entropy: label " + std::to_string(labels[r]) +
                                                  " at row " + std::to_string(r) + " but only " +
                                                  std::to_string(cols) + " classes");
      const double* row = z.data.data() + r * cols;
      const double mx = *std::max_element(row, row + cols);
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - mx);
      total += std::log(s) + mx - row[labels[r]];
    }
    const std::size_t id = push(Op::cross_entropy, Tensor::scalar(total / static_cast<double>(labels.size())),
                                {logits.id}).id;
    nodes_[id].labels.assign(labels.begin(), labels.end());
    return Var{id};
  }

  Var cross_entropy(Var logits, std::size_t label) { return cross_entropy(logits, std::span<const std::size_t>(&label, 1)); }

  /// Sum of squares of every element.
  Var l2_squared_norm(Var a) {
    double s = 0.0;
    for (double v : value(a).data) s += v * v;
    return push(Op::l2_squared_norm, Tensor::scalar(s), {a.id});
  }

  Var sum(Var a) {
    double s = 0.0;
    for (double v : value(a).data) s += v;
    return push(Op::sum, Tensor::scalar(s), {a.id});
  }

  static void softmax_row(std::span<double> row) {
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      s += v;
    }
    for (double& v : row) v /= s;
  }

 private:
  struct Node {
    Op op;
    Tensor value;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    std::vector<double> grad;
    std::vector<std::size_t> labels;
  };

  [[noreturn]] static void mismatch(const char* op, const Tensor& a, const Tensor& b) {
    throw Error(Errc::shape_mismatch,
                std::string(op) + ": incompatible shapes " + shape_string(a.shape) + " and " + shape_string(b.shape));
  }

  Var push(Op op, Tensor value, std::vector<std::size_t> inputs, bool leaf_requires_grad = false) {
    Node n{op, std::move(value), std::move(inputs), leaf_requires_grad, {}, {}};
    for (std::size_t in : n.inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    if (n.requires_grad) n.grad.assign(n.value.size(), 0.0);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var elementwise(Op op, const char* name, Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    if (x.shape != y.shape) mismatch(name, x, y);
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) {
      switch (op) {
        case Op::add: out.data[i] = x.data[i] + y.data[i]; break;
        case Op::sub: out.data[i] = x.data[i] - y.data[i]; break;
        default: out.data[i] = x.data[i] * y.data[i]; break;
      }
    }
    return push(op, std::move(out), {a.id, b.id});
  }

  // Adds this node's contribution to the gradients of its inputs.
  void propagate(std::size_t idx) {
    Node& n = nodes_[idx];
    const std::vector<double>& g = n.grad;
    auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
    auto grad_of = [&](std::size_t k) -> std::vector<double>& { return nodes_[n.inputs[k]].grad; };
    auto value_of = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };

    switch (n.op) {
      case Op::leaf: break;
      case Op::matmul: {
        const Tensor& x = value_of(0);
        const Tensor& y = value_of(1);
        const std::size_t m = x.shape[0], k = x.shape[1], cols = y.shape[1];
        if (wants(0)) {
          auto& gx = grad_of(0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < cols; ++j) acc += g[i * cols + j] * y.data[p * cols + j];
              gx[i * k + p] += acc;
            }
        }
        if (wants(1)) {
          auto& gy = grad_of(1);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double xv = x.data[i * k + p];
              if (xv == 0.0) continue;
              for (std::size_t j = 0; j < cols; ++j) gy[p * cols + j] += xv * g[i * cols + j];
            }
        }
        break;
      }
      case Op::add:
      case Op::sub: {
        const double sign = n.op == Op::add ? 1.0 : -1.0;
        if (wants(0)) {
          auto& ga = grad_of(0);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (wants(1)) {
          auto& gb = grad_of(1);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
        }
        break;
      }
      case Op::mul: {
        const Tensor& x = value_of(0);
        const Tensor& y = value_of(1);
        if (wants(0)) {
          auto& ga = grad_of(0);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y.data[i];
        }
        if (wants(1)) {
          auto& gb = grad_of(1);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x.data[i];
        }
        break;
      }
      case Op::add_bias: {
        const std::size_t cols = n.value.shape[1];
        if (wants(0)) {
          auto& ga = grad_of(0);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (wants(1)) {
          auto& gb = grad_of(1);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % cols] += g[i];
        }
        break;
      }
      case Op::relu: {
        if (wants(0)) {
          const Tensor& x = value_of(0);
          auto& ga = grad_of(0);
          for (std::size_t i = 0; i < g.size(); ++i)
            if (x.data[i] > 0.0) ga[i] += g[i];
        }
        break;
      }
      case Op::softmax: {
        if (wants(0)) {
          const std::size_t cols = n.value.cols();
          auto& ga = grad_of(0);
          for (std::size_t r = 0; r < n.value.rows(); ++r) {
            const double* p = n.value.data.data() + r * cols;
            const double* gr = g.data() + r * cols;
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * p[c];
            for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += p[c] * (gr[c] - dot);
          }
        }
        break;
      }
      case Op::cross_entropy: {
        if (wants(0)) {
          const Tensor& z = value_of(0);
          const std::size_t cols = z.cols();
          const double scale = g[0] / static_cast<double>(n.labels.size());
          auto& ga = grad_of(0);
          std::vector<double> p(cols);
          for (std::size_t r = 0; r < n.labels.size(); ++r) {
            std::copy_n(z.data.begin() + static_cast<std::ptrdiff_t>(r * cols), cols, p.begin());
            softmax_row(p);
            p[n.labels[r]] -= 1.0;
            for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += scale * p[c];
          }
        }
        break;
      }
      case Op::l2_squared_norm: {
        if (wants(0)) {
          const Tensor& x = value_of(0);
          auto& ga = grad_of(0);
          for (std::size_t i = 0; i < x.size(); ++i) ga[i] += 2.0 * x.data[i] * g[0];
        }
        break;
      }
      case Op::sum: {
        if (wants(0)) {
          auto& ga = grad_of(0);
          for (double& v : ga) v += g[0];
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
};

/// Central finite-difference gradient of a scalar function of a flat vector.
/// Each coordinate is perturbed by +-h in turn; the input is restored after.
template <typename Func>
std::vector<double> finite_difference_gradient(Func&& func, std::vector<double> point, double h) {
  if (!(h > 0.0)) throw Error(Errc::invalid_argument, "finite difference step must be positive");
  std::vector<double> out(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + h;
    const double up = func(std::as_const(point));
    point[i] = saved - h;
    const double down = func(std::as_const(point));
    point[i] = saved;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

}  // namespace ssd
