#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Tape records every primitive executed on Vars in execution order. Calling
// Tape::backward on a scalar Var walks the record once in reverse and returns
// the gradient of that scalar with respect to every node.

#include <Eigen/Core>
#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tcc/error.hpp"
#include "tcc/tensor.hpp"

namespace tcc::ad {

class Tape;

/// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Result of a backward pass: one gradient slot per tape node.
class Gradients {
 public:
  /// Gradient of the loss w.r.t. `v`; zeros when no path connects them.
  Tensor operator[](const Var& v) const {
    if (v.id() < grads_.size() && present_[v.id()]) return grads_[v.id()];
    return Tensor(v.shape(), 0.0);
  }

  bool reached(const Var& v) const { return v.id() < present_.size() && present_[v.id()]; }

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  std::vector<bool> present_;
};

class Tape {
 public:
  /// Receives the node's output value, the incoming gradient, and one slot per
  /// input. A slot is null when that input does not require a gradient.
  using BackwardFn =
      std::function<void(const Tensor& out, const Tensor& grad, std::span<Tensor* const> input_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  // Recorded closures hold the tape's address.
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  /// A differentiable input (parameter).
  Var leaf(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, true});
    return Var(this, nodes_.size() - 1);
  }

  /// A value no gradient flows into.
  Var constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, false});
    return Var(this, nodes_.size() - 1);
  }

  /// Records a primitive. Inputs must already be on this tape.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
    bool needs = false;
    for (std::size_t in : inputs) {
      assert(in < nodes_.size());
      needs = needs || nodes_[in].requires_grad;
    }
    if (!needs) {
      inputs.clear();
      fn = nullptr;
    }
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(fn), needs});
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Gradients backward(const Var& loss) const {
    if (loss.tape() != this) throw ContractError("loss was not recorded on this tape");
    if (loss.value().size() != 1) {
      throw ContractError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    }
    Gradients out;
    out.grads_.resize(loss.id() + 1);
    out.present_.assign(loss.id() + 1, false);
    out.grads_[loss.id()] = Tensor(loss.shape(), 1.0);
    out.present_[loss.id()] = true;

    std::vector<Tensor*> slots;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      const Node& node = nodes_[id];
      if (!out.present_[id] || !node.backward) continue;
      slots.assign(node.inputs.size(), nullptr);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const std::size_t in = node.inputs[k];
        if (!nodes_[in].requires_grad) continue;
        if (!out.present_[in]) {
          out.grads_[in] = Tensor(nodes_[in].value.shape(), 0.0);
          out.present_[in] = true;
        }
        slots[k] = &out.grads_[in];
      }
      node.backward(node.value, out.grads_[id], slots);
    }
    return out;
  }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

inline ConstMapMat as_mat(const Tensor& t) { return ConstMapMat(t.data().data(), t.dim(0), t.dim(1)); }
inline MapMat as_mat(Tensor& t) { return MapMat(t.data().data(), t.dim(0), t.dim(1)); }

inline Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) throw ContractError("operands live on different tapes");
  return *a.tape();
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline void require_matrix(const Var& a, const char* op) {
  if (a.value().rank() != 2) throw ShapeError(std::string(op) + " expects a matrix, got " + shape_str(a.shape()));
}

/// Elementwise unary primitive with derivative d(out)/d(in) given (in, out).
template <class F, class D>
Var unary(const Var& a, F f, D deriv) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  Tape* tape = a.tape();
  return tape->record(std::move(y), {ia}, [tape, ia, deriv](const Tensor& out, const Tensor& g, std::span<Tensor* const> gi) {
    const Tensor& x = tape->value(ia);
    Tensor& gx = *gi[0];
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * deriv(x[i], out[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (operands must share a shape; no broadcasting)

inline Var add(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return tape.record(std::move(y), {a.id(), b.id()}, [](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
    for (Tensor* s : gi) {
      if (s == nullptr) continue;
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return tape.record(std::move(y), {a.id(), b.id()}, [](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0] != nullptr)
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
    if (gi[1] != nullptr)
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
  });
}

inline Var mul(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(y), {ia, ib}, [&tape, ia, ib](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
    const Tensor& x = tape.value(ia);
    const Tensor& z = tape.value(ib);
    if (gi[0] != nullptr)
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * z[i];
    if (gi[1] != nullptr)
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * x[i];
  });
}

inline Var div(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "div");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= b.value()[i];
  const std::size_t ib = b.id();
  return tape.record(std::move(y), {a.id(), ib}, [&tape, ib](const Tensor& out, const Tensor& g, std::span<Tensor* const> gi) {
    const Tensor& z = tape.value(ib);
    if (gi[0] != nullptr)
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] / z[i];
    if (gi[1] != nullptr)
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i] * out[i] / z[i];
  });
}

inline Var scale(const Var& a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var add_scalar(const Var& a, double c) {
  return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var exp(const Var& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var square(const Var& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var relu(const Var& a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// log(1 + e^x), evaluated without overflow.
inline Var softplus(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); });
}

/// max(x, floor); the gradient is zero where the floor is active.
inline Var clamp_min(const Var& a, double floor) {
  return detail::unary(a, [floor](double x) { return x > floor ? x : floor; },
                       [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape()->record(Tensor::scalar(s), {a.id()}, [](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
    const double gv = g[0];
    for (double& v : gi[0]->data()) v += gv;
  });
}

inline Var mean(const Var& a) {
  if (a.value().size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

inline Var reshape(const Var& a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return a.tape()->record(std::move(y), {a.id()}, [](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
  });
}

/// Scalar at flat position `index`.
inline Var element(const Var& a, std::size_t index) {
  if (index >= a.value().size()) throw ContractError("element index " + std::to_string(index) + " out of range");
  return a.tape()->record(Tensor::scalar(a.value()[index]), {a.id()},
                          [index](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) { (*gi[0])[index] += g[0]; });
}

/// Rows of a matrix gathered in the given order (repeats allowed).
inline Var take_rows(const Var& a, std::vector<std::size_t> rows) {
  detail::require_matrix(a, "take_rows");
  const Tensor& x = a.value();
  const std::size_t m = x.cols();
  Tensor y(Shape{rows.size(), m});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.rows()) throw ContractError("take_rows index out of range");
    std::copy_n(x.row(rows[r]).begin(), m, y.row(r).begin());
  }
  return a.tape()->record(std::move(y), {a.id()},
                          [rows = std::move(rows), m](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
                            Tensor& gx = *gi[0];
                            for (std::size_t r = 0; r < rows.size(); ++r)
                              for (std::size_t c = 0; c < m; ++c) gx(rows[r], c) += g(r, c);
                          });
}

/// Horizontal concatenation of matrices with equal row counts.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t n = parts.front().value().rows();
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.value().rows() != n) throw ShapeError("concat_cols row mismatch");
    detail::same_tape(parts.front(), p);
    widths.push_back(p.value().cols());
    ids.push_back(p.id());
    total += p.value().cols();
  }
  Tensor y(Shape{n, total});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& x = p.value();
    for (std::size_t r = 0; r < n; ++r) std::copy_n(x.row(r).begin(), x.cols(), y.row(r).begin() + off);
    off += x.cols();
  }
  return parts.front().tape()->record(
      std::move(y), ids, [widths, n](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (gi[k] != nullptr) {
            for (std::size_t r = 0; r < n; ++r)
              for (std::size_t c = 0; c < widths[k]; ++c) (*gi[k])(r, c) += g(r, off + c);
          }
          off += widths[k];
        }
      });
}

/// out[r] = x[r, cols[r]].
inline Var pick(const Var& a, std::vector<std::size_t> cols) {
  detail::require_matrix(a, "pick");
  const Tensor& x = a.value();
  if (cols.size() != x.rows()) throw ShapeError("pick needs one column per row");
  Tensor y(Shape{cols.size()});
  for (std::size_t r = 0; r < cols.size(); ++r) {
    if (cols[r] >= x.cols()) throw ContractError("pick column out of range");
    y[r] = x(r, cols[r]);
  }
  return a.tape()->record(std::move(y), {a.id()}, [cols = std::move(cols)](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t r = 0; r < cols.size(); ++r) (*gi[0])(r, cols[r]) += g[r];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.value().cols() != b.value().rows()) {
    throw ShapeError("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor y(Shape{a.value().rows(), b.value().cols()});
  detail::as_mat(y).noalias() = detail::as_mat(a.value()) * detail::as_mat(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(y), {ia, ib}, [&tape, ia, ib](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0] != nullptr) detail::as_mat(*gi[0]).noalias() += detail::as_mat(g) * detail::as_mat(tape.value(ib)).transpose();
    if (gi[1] != nullptr) detail::as_mat(*gi[1]).noalias() += detail::as_mat(tape.value(ia)).transpose() * detail::as_mat(g);
  });
}

/// Adds the vector `bias` (length m) to every row of the n x m matrix `a`.
inline Var add_row(const Var& a, const Var& bias) {
  Tape& tape = detail::same_tape(a, bias);
  detail::require_matrix(a, "add_row");
  const Tensor& x = a.value();
  if (bias.value().rank() != 1 || bias.value().size() != x.cols()) {
    throw ShapeError("add_row " + shape_str(a.shape()) + " + " + shape_str(bias.shape()));
  }
  Tensor y = x;
  const std::size_t n = x.rows(), m = x.cols();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) y(r, c) += bias.value()[c];
  return tape.record(std::move(y), {a.id(), bias.id()}, [n, m](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0] != nullptr)
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
    if (gi[1] != nullptr)
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) (*gi[1])[c] += g(r, c);
  });
}

/// Squared Euclidean distance between every row of `a` (N x d) and every row of `b` (M x d).
inline Var pairwise_sq_dist(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_matrix(a, "pairwise_sq_dist");
  detail::require_matrix(b, "pairwise_sq_dist");
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  if (x.cols() != z.cols() || x.cols() == 0) {
    throw ShapeError("pairwise_sq_dist feature dims " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t n = x.rows(), m = z.rows(), d = x.cols();
  Tensor y(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = x(i, c) - z(j, c);
        s += diff * diff;
      }
      y(i, j) = s;
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(y), {ia, ib}, [&tape, ia, ib, n, m, d](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
    const Tensor& x = tape.value(ia);
    const Tensor& z = tape.value(ib);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double gij = 2.0 * g(i, j);
        if (gij == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) {
          const double diff = gij * (x(i, c) - z(j, c));
          if (gi[0] != nullptr) (*gi[0])(i, c) += diff;
          if (gi[1] != nullptr) (*gi[1])(j, c) -= diff;
        }
      }
    }
  });
}

/// out = w^T V for weights w (length M) and rows V (M x d).
inline Var weighted_sum(const Var& w, const Var& v) {
  if (w.value().rank() != 1) throw ShapeError("weighted_sum weights must be a vector");
  detail::require_matrix(v, "weighted_sum");
  if (w.value().size() != v.value().rows()) throw ShapeError("weighted_sum: weight count != row count");
  const std::size_t m = w.value().size();
  return reshape(matmul(reshape(w, Shape{1, m}), v), Shape{v.value().cols()});
}

// ---------------------------------------------------------------------------
// Softmax family (max-subtracted)

namespace detail {

inline void softmax_inplace(std::span<double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double& v : x) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : x) v /= z;
}

inline void log_softmax_inplace(std::span<double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double v : x) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  for (double& v : x) v -= lse;
}

inline void softmax_backward(std::span<const double> y, std::span<const double> g, std::span<double> gx) {
  double dot = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) dot += y[k] * g[k];
  for (std::size_t k = 0; k < y.size(); ++k) gx[k] += y[k] * (g[k] - dot);
}

inline void log_softmax_backward(std::span<const double> y, std::span<const double> g, std::span<double> gx) {
  double gs = 0.0;
  for (double v : g) gs += v;
  for (std::size_t k = 0; k < y.size(); ++k) gx[k] += g[k] - std::exp(y[k]) * gs;
}

}  // namespace detail

inline Var softmax(const Var& x) {
  if (x.value().rank() != 1 || x.value().size() == 0) throw ShapeError("softmax expects a non-empty vector");
  Tensor y = x.value();
  detail::softmax_inplace(y.data());
  return x.tape()->record(std::move(y), {x.id()}, [](const Tensor& out, const Tensor& g, std::span<Tensor* const> gi) {
    detail::softmax_backward(out.data(), g.data(), gi[0]->data());
  });
}

/// Softmax applied independently to each row.
inline Var softmax_rows(const Var& x) {
  detail::require_matrix(x, "softmax_rows");
  if (x.value().cols() == 0) throw ShapeError("softmax_rows over zero columns");
  Tensor y = x.value();
  for (std::size_t r = 0; r < y.rows(); ++r) detail::softmax_inplace(y.row(r));
  return x.tape()->record(std::move(y), {x.id()}, [](const Tensor& out, const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t r = 0; r < out.rows(); ++r) detail::softmax_backward(out.row(r), g.row(r), gi[0]->row(r));
  });
}

inline Var log_softmax_rows(const Var& x) {
  detail::require_matrix(x, "log_softmax_rows");
  if (x.value().cols() == 0) throw ShapeError("log_softmax_rows over zero columns");
  Tensor y = x.value();
  for (std::size_t r = 0; r < y.rows(); ++r) detail::log_softmax_inplace(y.row(r));
  return x.tape()->record(std::move(y), {x.id()}, [](const Tensor& out, const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t r = 0; r < out.rows(); ++r) detail::log_softmax_backward(out.row(r), g.row(r), gi[0]->row(r));
  });
}

}  // namespace tcc::ad
