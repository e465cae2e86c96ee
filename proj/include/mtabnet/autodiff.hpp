#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtabnet/errors.hpp"
#include "mtabnet/tensor.hpp"

namespace mtabnet {

/// A trainable tensor that outlives any single tape. Gradients from every
/// backward pass that reaches it accumulate into `grad` until zeroed.
struct Parameter {
  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(Tensor::zeros_like(value)) {}

  void zero_grad() { grad.fill(0.0); }

  Tensor value;
  Tensor grad;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records operations in creation order; backward() replays them in reverse.
///
/// Node ids are assigned in creation order and every op's inputs exist before
/// the op, so reverse id order is a valid reverse topological order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr, {}); }

  /// Leaf whose gradient is kept on the tape.
  Var variable(Tensor value) { return push(std::move(value), true, nullptr, {}); }

  /// Leaf bound to a Parameter; backward accumulates into `p.grad`.
  Var parameter(Parameter& p) {
    if (!p.grad.same_shape(p.value)) p.grad = Tensor::zeros_like(p.value);
    return push(p.value, true, &p.grad, {});
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }

  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& in : inputs) {
      if (in.tape() != this) throw ContractError("op input belongs to a different tape");
      needs = needs || nodes_[in.id()].needs_grad;
    }
    if (!value.all_finite()) throw ContractError("non-finite value produced by a forward op");
    return push(std::move(value), needs, nullptr, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& value(Var v) const { return value(v.id()); }

  /// Gradient seen by the node. Empty tensor when backward never reached it.
  const Tensor& grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.sink ? *n.sink : n.grad;
  }

  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }

  /// Mutable gradient buffer for accumulation, zero-initialized on first use.
  Tensor& grad_buffer(Var v) {
    Node& n = nodes_[v.id()];
    Tensor& g = n.sink ? *n.sink : n.grad;
    if (!g.same_shape(n.value)) g = Tensor::zeros_like(n.value);
    return g;
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(Var loss) {
    if (loss.tape() != this) throw ContractError("backward: loss belongs to a different tape");
    if (value(loss).size() != 1) {
      throw ContractError("backward: loss must be a scalar, got shape " +
                          shape_string(value(loss).shape()));
    }
    for (Node& n : nodes_) {
      if (!n.leaf) n.grad = Tensor();
    }
    if (!nodes_[loss.id()].needs_grad) return;
    grad_buffer(loss)[0] += 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

  /// Ops with a non-differentiable point (relu at 0, simplex support changes)
  /// report how far the current input is from it. Gradient checks use the
  /// minimum to skip inputs where a finite difference would straddle a kink.
  void note_kink(double distance) {
    if (distance < kink_margin_) kink_margin_ = distance;
  }
  double kink_margin() const { return kink_margin_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Tensor* sink = nullptr;
    bool needs_grad = false;
    bool leaf = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool needs_grad, Tensor* sink, BackwardFn fn) {
    Node n;
    n.leaf = !fn;
    n.value = std::move(value);
    n.sink = sink;
    n.needs_grad = needs_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  // A deque keeps references to node values valid while ops append nodes.
  std::deque<Node> nodes_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw DimensionError("matmul: " + shape_string(av.shape()) + " * " + shape_string(bv.shape()));
  }
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  return a.tape()->record(mtabnet::matmul(av, bv), {a, b}, [a, b, n, k, m](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) {
      kernels::gemm_nt(g.data(), t.value(b).data(), t.grad_buffer(a).data(), n, m, k, true);
    }
    if (t.needs_grad(b)) {
      kernels::gemm_tn(t.value(a).data(), g.data(), t.grad_buffer(b).data(), n, k, m, true);
    }
  });
}

inline Var transpose(Var a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw DimensionError("transpose: rank-2 input required");
  return a.tape()->record(mtabnet::transpose(av), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(c, r);
  });
}

/// y = x W^T + b with W of shape (d_out x d_in) and b of length d_out.
/// `b` may be a default-constructed Var for a bias-free layer.
inline Var linear(Var x, Var w, Var b = Var()) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 2 || wv.rank() != 2 || wv.cols() != xv.cols()) {
    throw DimensionError("linear: input " + shape_string(xv.shape()) + " weight " +
                         shape_string(wv.shape()));
  }
  const std::size_t n = xv.rows(), din = xv.cols(), dout = wv.rows();
  Tensor y({n, dout});
  kernels::gemm_nt(xv.data(), wv.data(), y.data(), n, din, dout);
  std::vector<Var> inputs{x, w};
  if (b.valid()) {
    const Tensor& bv = b.value();
    if (bv.size() != dout) {
      throw DimensionError("linear: bias length " + std::to_string(bv.size()) + " != " +
                           std::to_string(dout));
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dout; ++j) y(i, j) += bv[j];
    inputs.push_back(b);
  }
  return x.tape()->record(std::move(y), inputs, [x, w, b, n, din, dout](Tape& t, const Tensor& g) {
    if (t.needs_grad(x)) {
      kernels::gemm(g.data(), t.value(w).data(), t.grad_buffer(x).data(), n, dout, din, true);
    }
    if (t.needs_grad(w)) {
      kernels::gemm_tn(g.data(), t.value(x).data(), t.grad_buffer(w).data(), n, dout, din, true);
    }
    if (b.valid() && t.needs_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dout; ++j) gb[j] += g(i, j);
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise ops. Binary ops accept equal shapes or a size-1 operand.

namespace detail {

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Broadcast::kNone;
  if (b.size() == 1) return Broadcast::kRightScalar;
  if (a.size() == 1) return Broadcast::kLeftScalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                       " and " + shape_string(b.shape()));
}

template <class Fwd, class DA, class DB>
Var binary(Var a, Var b, const char* name, Fwd fwd, DA da, DB db) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast kind = broadcast_kind(av, bv, name);
  const Tensor& shape_src = kind == Broadcast::kLeftScalar ? bv : av;
  Tensor out(shape_src.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = kind == Broadcast::kLeftScalar ? av[0] : av[i];
    const double y = kind == Broadcast::kRightScalar ? bv[0] : bv[i];
    out[i] = fwd(x, y);
  }
  return a.tape()->record(std::move(out), {a, b}, [a, b, kind, n, da, db](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    const bool need_a = t.needs_grad(a), need_b = t.needs_grad(b);
    Tensor* ga = need_a ? &t.grad_buffer(a) : nullptr;
    Tensor* gb = need_b ? &t.grad_buffer(b) : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = kind == Broadcast::kLeftScalar ? av[0] : av[i];
      const double y = kind == Broadcast::kRightScalar ? bv[0] : bv[i];
      if (ga) (*ga)[kind == Broadcast::kLeftScalar ? 0 : i] += g[i] * da(x, y);
      if (gb) (*gb)[kind == Broadcast::kRightScalar ? 0 : i] += g[i] * db(x, y);
    }
  });
}

}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Var mul(Var a, Var b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Var add(Var a, double c) { return add(a, a.tape()->constant(Tensor::scalar(c))); }
inline Var mul(Var a, double c) { return mul(a, a.tape()->constant(Tensor::scalar(c))); }
inline Var rsub(double c, Var a) { return sub(a.tape()->constant(Tensor::scalar(c)), a); }

namespace detail {

/// Elementwise map with derivative computed from (input, output).
template <class Fwd, class Deriv>
Var map(Var a, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  Tape* tape = a.tape();
  const std::size_t out_id = tape->size();
  return tape->record(std::move(out), {a}, [a, out_id, deriv](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(out_id);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace detail

inline Var relu(Var a) {
  Tape* tape = a.tape();
  double margin = std::numeric_limits<double>::infinity();
  for (double v : a.value().values()) margin = std::min(margin, std::abs(v));
  tape->note_kink(margin);
  return detail::map(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

namespace detail {
inline constexpr double kGeluCoeff = 0.044715;
inline const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace detail

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline double gelu(double x) {
  const double u = detail::kSqrt2OverPi * (x + detail::kGeluCoeff * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_derivative(double x) {
  const double u = detail::kSqrt2OverPi * (x + detail::kGeluCoeff * x * x * x);
  const double th = std::tanh(u);
  const double du = detail::kSqrt2OverPi * (1.0 + 3.0 * detail::kGeluCoeff * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

inline Var gelu(Var a) {
  return detail::map(a, [](double x) { return gelu(x); },
                     [](double x, double) { return gelu_derivative(x); });
}

inline Var exp(Var a) {
  return detail::map(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return detail::map(a, [](double x) { return std::log(x); },
                     [](double x, double) { return 1.0 / x; });
}

inline Var square(Var a) {
  return detail::map(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
  return detail::map(a, [](double x) { return sigmoid(x); },
                     [](double, double y) { return y * (1.0 - y); });
}

/// Clamp to [lo, hi]; the derivative is 1 strictly inside and 0 outside.
/// At a bound the one-sided choice is "inside", matching the identity branch.
/// Values sitting exactly on a bound (a sparse mask entry that is exactly 0)
/// stay there under small perturbations, so only near misses count as kinks.
inline Var clamp(Var a, double lo, double hi) {
  double margin = std::numeric_limits<double>::infinity();
  for (double v : a.value().values()) {
    if (v != lo) margin = std::min(margin, std::abs(v - lo));
    if (v != hi) margin = std::min(margin, std::abs(v - hi));
  }
  a.tape()->note_kink(margin);
  return detail::map(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a) {
  const Tensor& av = a.value();
  return a.tape()->record(Tensor::scalar(av.sum()), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (double& v : ga.values()) v += g[0];
  });
}

inline Var mean(Var a) {
  const Tensor& av = a.value();
  const double n = static_cast<double>(av.size());
  return a.tape()->record(Tensor::scalar(av.sum() / n), {a}, [a, n](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (double& v : ga.values()) v += g[0] / n;
  });
}

/// Reduce along `axis` (0 = over rows, 1 = over columns) with optional
/// averaging. A rank-1 tensor only has axis 0.
inline Var reduce(Var a, std::size_t axis, bool average) {
  const Tensor& av = a.value();
  if (axis >= av.rank()) {
    throw DimensionError("reduce: axis " + std::to_string(axis) + " invalid for shape " +
                         shape_string(av.shape()));
  }
  if (av.rank() == 1) return average ? mean(a) : sum(a);
  const std::size_t rows = av.rows(), cols = av.cols();
  const double denom = average ? static_cast<double>(axis == 0 ? rows : cols) : 1.0;
  Tensor out({axis == 0 ? cols : rows});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[axis == 0 ? c : r] += av(r, c);
  for (double& v : out.values()) v /= denom;
  return a.tape()->record(std::move(out), {a}, [a, axis, denom, rows, cols](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) ga(r, c) += g[axis == 0 ? c : r] / denom;
  });
}

inline Var sum(Var a, std::size_t axis) { return reduce(a, axis, false); }
inline Var mean(Var a, std::size_t axis) { return reduce(a, axis, true); }

// ---------------------------------------------------------------------------
// Structural ops

/// Concatenate rank-2 parts along axis 0 (rows) or 1 (columns), or rank-1
/// parts along axis 0.
inline Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  Tape* tape = parts[0].tape();
  const Tensor& first = parts[0].value();
  const std::size_t rank = first.rank();
  if (axis >= rank) throw DimensionError("concat: invalid axis " + std::to_string(axis));
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (v.rank() != rank) throw DimensionError("concat: mixed ranks");
    if (rank == 2 && (axis == 1 ? v.rows() != first.rows() : v.cols() != first.cols())) {
      throw DimensionError("concat: mismatched non-axis dimension " + shape_string(v.shape()) +
                           " vs " + shape_string(first.shape()));
    }
    offsets.push_back(total);
    total += (rank == 1 || axis == 0) ? (rank == 1 ? v.size() : v.rows()) : v.cols();
  }
  Tensor out = rank == 1 ? Tensor({total})
                         : (axis == 0 ? Tensor({total, first.cols()}) : Tensor({first.rows(), total}));
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    if (rank == 1 || axis == 0) {
      std::copy(v.values().begin(), v.values().end(), out.values().begin() +
                                                          static_cast<std::ptrdiff_t>(offsets[k] * (rank == 1 ? 1 : first.cols())));
    } else {
      for (std::size_t r = 0; r < v.rows(); ++r)
        for (std::size_t c = 0; c < v.cols(); ++c) out(r, offsets[k] + c) = v(r, c);
    }
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape->record(std::move(out), inputs, [inputs, offsets, axis, rank](Tape& t, const Tensor& g) {
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (!t.needs_grad(inputs[k])) continue;
      Tensor& gk = t.grad_buffer(inputs[k]);
      if (rank == 1 || axis == 0) {
        const std::size_t base = offsets[k] * (rank == 1 ? 1 : g.cols());
        for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += g[base + i];
      } else {
        for (std::size_t r = 0; r < gk.rows(); ++r)
          for (std::size_t c = 0; c < gk.cols(); ++c) gk(r, c) += g(r, offsets[k] + c);
      }
    }
  });
}

inline Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

/// Columns [begin, end) of a rank-2 tensor.
inline Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (av.rank() != 2 || begin >= end || end > av.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_string(av.shape()));
  }
  const std::size_t rows = av.rows(), width = end - begin;
  Tensor out({rows, width});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) out(r, c) = av(r, begin + c);
  return a.tape()->record(std::move(out), {a}, [a, begin, width, rows](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < width; ++c) ga(r, begin + c) += g(r, c);
  });
}

/// Inverse of concat along columns.
inline std::vector<Var> split_cols(Var a, std::span<const std::size_t> widths) {
  std::vector<Var> out;
  std::size_t begin = 0;
  for (std::size_t w : widths) {
    out.push_back(slice_cols(a, begin, begin + w));
    begin += w;
  }
  if (begin != a.value().cols()) throw DimensionError("split_cols: widths do not cover input");
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  /// Smallest distance to a non-differentiable point seen across all
  /// evaluations; callers reject inputs where this is within a few h.
  double kink_margin = std::numeric_limits<double>::infinity();
  std::size_t coordinates = 0;
  /// Analytic and numeric derivative at the worst coordinate.
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  /// (analytic, numeric) for every coordinate, inputs first then parameters.
  std::vector<std::pair<double, double>> pairs;
};

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares reverse-mode gradients of a scalar function with central
/// differences, both for the supplied inputs and for any Parameters the
/// function reads. Relative error per coordinate is
/// |a - n| / max(1e-8, |a| + |n|); the worst coordinate is reported.
inline GradCheckResult grad_check(const ScalarFn& f, std::span<const Tensor> inputs,
                                  double h = 1e-5, std::span<Parameter* const> params = {}) {
  GradCheckResult result;
  auto evaluate = [&](std::span<const Tensor> xs, double* margin) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const Tensor& x : xs) vars.push_back(tape.constant(x));
    const Var out = f(tape, vars);
    if (out.value().size() != 1) throw ContractError("grad_check: function must be scalar");
    if (margin) *margin = std::min(*margin, tape.kink_margin());
    return out.value()[0];
  };

  std::vector<Tensor> analytic;
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& x : inputs) vars.push_back(tape.variable(x));
    const Var out = f(tape, vars);
    tape.backward(out);
    result.kink_margin = std::min(result.kink_margin, tape.kink_margin());
    for (const Var& v : vars) {
      const Tensor& g = v.grad();
      analytic.push_back(g.empty() ? Tensor::zeros_like(v.value()) : g);
    }
  }

  auto compare = [&](double a, double n) {
    const double err = std::abs(a - n) / std::max(1e-8, std::abs(a) + std::abs(n));
    result.max_abs_error = std::max(result.max_abs_error, std::abs(a - n));
    result.pairs.emplace_back(a, n);
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_analytic = a;
      result.worst_numeric = n;
    }
    ++result.coordinates;
  };

  std::vector<Tensor> work(inputs.begin(), inputs.end());
  for (std::size_t k = 0; k < work.size(); ++k) {
    for (std::size_t i = 0; i < work[k].size(); ++i) {
      const double orig = work[k][i];
      work[k][i] = orig + h;
      const double fp = evaluate(work, &result.kink_margin);
      work[k][i] = orig - h;
      const double fm = evaluate(work, &result.kink_margin);
      work[k][i] = orig;
      compare(analytic[k][i], (fp - fm) / (2.0 * h));
    }
  }
  for (Parameter* p : params) {
    const Tensor grad = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double fp = evaluate(work, &result.kink_margin);
      p->value[i] = orig - h;
      const double fm = evaluate(work, &result.kink_margin);
      p->value[i] = orig;
      compare(grad[i], (fp - fm) / (2.0 * h));
    }
  }
  return result;
}

}  // namespace mtabnet
