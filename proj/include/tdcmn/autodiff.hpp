#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "tdcmn/error.hpp"
#include "tdcmn/tensor.hpp"

namespace tdcmn {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  inline const Tensor& value() const;
  inline const Shape& shape() const;
  inline const Tensor& grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode recording of tensor operations.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order and backward() is a single reverse sweep. Leaves either
/// own their value or reference an external tensor (parameters), which must
/// outlive the tape.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var variable(Tensor value) { return leaf(std::move(value), true); }

  /// Leaf referencing `value` without copying it.
  Var watch(const Tensor& value, bool requires_grad) {
    Node n;
    n.external = &value;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Appends an op node. `fn` runs during backward() if any input needs a
  /// gradient.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
    if (!value.all_finite()) {
      throw NumericError("non-finite value produced at tape node " +
                         std::to_string(nodes_.size()) + " of shape " +
                         shape_str(value.shape));
    }
    Node n;
    n.value = std::move(value);
    for (std::size_t in : inputs) {
      if (nodes_[in].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    n.inputs = std::move(inputs);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of node `id`, allocated (zeroed) on first access.
  Tensor& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.data.empty()) n.grad = Tensor(value(id).shape, 0.0);
    return n.grad;
  }

  const Tensor& grad(std::size_t id) const {
    const Node& n = nodes_[id];
    if (n.grad.data.empty()) {
      // Node never received gradient: report zeros of the right shape.
      const_cast<Node&>(n).grad = Tensor(value(id).shape, 0.0);
    }
    return n.grad;
  }

  /// Computes d(loss)/d(node) for every node that requires a gradient.
  /// Re-running backward() discards gradients from a previous pass.
  void backward(Var loss) {
    if (loss.id() >= nodes_.size() || &loss.tape() != this) {
      throw DimensionError("backward: loss does not belong to this tape");
    }
    if (value(loss.id()).numel() != 1) {
      throw DimensionError("backward: loss must be scalar, got shape " +
                           shape_str(value(loss.id()).shape));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    grad(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.data.empty()) continue;
      n.backward(*this, i);
      if (!n.grad.all_finite()) {
        throw NumericError("non-finite gradient at tape node " +
                           std::to_string(i));
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var leaf(Tensor value, bool requires_grad) {
    if (!value.all_finite()) throw NumericError("non-finite leaf value");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;  // stable addresses: value() references survive later records
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Shape& Var::shape() const { return tape_->value(id_).shape; }
inline const Tensor& Var::grad() const {
  return static_cast<const Tape*>(tape_)->grad(id_);
}

namespace detail {

inline void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) {
    throw DimensionError(std::string(op) + ": operands live on different tapes");
  }
}

inline void require_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got shape " +
                         shape_str(x.shape()));
  }
}

inline void accumulate(Tensor& dst, std::size_t i, double v) { dst.data[i] += v; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// [m,k] x [k,p] -> [m,p]
inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b, "matmul");
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.dim(0), k = av.dim(1), p = bv.dim(1);
  if (bv.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " +
                         shape_str(av.shape) + " x " + shape_str(bv.shape));
  }
  Tensor out({m, p}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t r = 0; r < k; ++r) {
      const double x = av.data[i * k + r];
      if (x == 0.0) continue;
      const double* brow = &bv.data[r * p];
      double* orow = &out.data[i * p];
      for (std::size_t j = 0; j < p; ++j) orow[j] += x * brow[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {ia, ib}, [ia, ib, m, k, p](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        if (t.requires_grad(ia)) {
          Tensor& ga = t.grad(ia);  // g . b^T
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t r = 0; r < k; ++r) {
              double s = 0.0;
              for (std::size_t j = 0; j < p; ++j) {
                s += g.data[i * p + j] * bv.data[r * p + j];
              }
              ga.data[i * k + r] += s;
            }
          }
        }
        if (t.requires_grad(ib)) {
          Tensor& gb = t.grad(ib);  // a^T . g
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t r = 0; r < k; ++r) {
              const double x = av.data[i * k + r];
              for (std::size_t j = 0; j < p; ++j) {
                gb.data[r * p + j] += x * g.data[i * p + j];
              }
            }
          }
        }
      });
}

inline Var transpose(Var x) {
  detail::require_rank(x, 2, "transpose");
  const Tensor& xv = x.value();
  const std::size_t r = xv.dim(0), c = xv.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = xv.data[i * c + j];
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix},
                         [ix, r, c](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           Tensor& gx = t.grad(ix);
                           for (std::size_t i = 0; i < r; ++i) {
                             for (std::size_t j = 0; j < c; ++j) {
                               gx.data[i * c + j] += g.data[j * r + i];
                             }
                           }
                         });
}

/// Same data, new shape (element count must agree).
inline Var reshape(Var x, Shape shape) {
  if (shape_numel(shape) != x.value().numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) +
                         " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), x.value().data);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i];
  });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Cross-correlation along time with zero "same" padding.
/// x: [Cin,N], w: [Cout,Cin,width], b: [Cout] -> [Cout,N]
inline Var conv1d_same(Var x, Var w, Var b) {
  detail::require_same_tape(x, w, "conv1d_same");
  detail::require_same_tape(x, b, "conv1d_same");
  detail::require_rank(x, 2, "conv1d_same");
  detail::require_rank(w, 3, "conv1d_same");
  detail::require_rank(b, 1, "conv1d_same");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  const std::size_t cin = xv.dim(0), n = xv.dim(1);
  const std::size_t cout = wv.dim(0), width = wv.dim(2);
  if (width % 2 == 0) {
    throw ConfigError("conv1d_same: kernel width must be odd, got " +
                      std::to_string(width));
  }
  if (wv.dim(1) != cin || bv.dim(0) != cout) {
    throw DimensionError("conv1d_same: input " + shape_str(xv.shape) +
                         ", weight " + shape_str(wv.shape) + ", bias " +
                         shape_str(bv.shape) + " are incompatible");
  }
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(width / 2);
  const auto sn = static_cast<std::ptrdiff_t>(n);

  Tensor out({cout, n});
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t t = 0; t < n; ++t) out.data[o * n + t] = bv.data[o];
    for (std::size_t c = 0; c < cin; ++c) {
      const double* xrow = &xv.data[c * n];
      for (std::size_t k = 0; k < width; ++k) {
        const double wk = wv.data[(o * cin + c) * width + k];
        if (wk == 0.0) continue;
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(sn, sn - shift);
        for (std::ptrdiff_t t = lo; t < hi; ++t) {
          out.data[o * n + static_cast<std::size_t>(t)] += wk * xrow[t + shift];
        }
      }
    }
  }

  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape().record(
      std::move(out), {ix, iw, ib},
      [ix, iw, ib, cin, cout, n, width, pad, sn](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.value(ix);
        const Tensor& wv = t.value(iw);
        const bool need_x = t.requires_grad(ix);
        const bool need_w = t.requires_grad(iw);
        if (t.requires_grad(ib)) {
          Tensor& gb = t.grad(ib);
          for (std::size_t o = 0; o < cout; ++o) {
            for (std::size_t s = 0; s < n; ++s) gb.data[o] += g.data[o * n + s];
          }
        }
        if (!need_x && !need_w) return;
        Tensor* gx = need_x ? &t.grad(ix) : nullptr;
        Tensor* gw = need_w ? &t.grad(iw) : nullptr;
        for (std::size_t o = 0; o < cout; ++o) {
          const double* grow = &g.data[o * n];
          for (std::size_t c = 0; c < cin; ++c) {
            const double* xrow = &xv.data[c * n];
            for (std::size_t k = 0; k < width; ++k) {
              const std::size_t widx = (o * cin + c) * width + k;
              const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad;
              const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
              const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(sn, sn - shift);
              double acc = 0.0;
              const double wk = wv.data[widx];
              for (std::ptrdiff_t s = lo; s < hi; ++s) {
                acc += grow[s] * xrow[s + shift];
                if (gx) gx->data[c * n + static_cast<std::size_t>(s + shift)] += wk * grow[s];
              }
              if (gw) gw->data[widx] += acc;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Var tanh_map(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape);
  for (std::size_t i = 0; i < xv.numel(); ++i) out.data[i] = std::tanh(xv.data[i]);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      gx.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
    }
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b, "add");
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += bv.data[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib},
                         [ia, ib](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           for (std::size_t id : {ia, ib}) {
                             if (!t.requires_grad(id)) continue;
                             Tensor& gi = t.grad(id);
                             for (std::size_t i = 0; i < g.numel(); ++i) gi.data[i] += g.data[i];
                           }
                         });
}

/// Sum of one or more same-shape tensors.
inline Var add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw DimensionError("add_n: no operands");
  Var acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

/// Elementwise (Hadamard) product.
inline Var mul(Var a, Var b) {
  detail::require_same_tape(a, b, "mul");
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= bv.data[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib},
                         [ia, ib](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           const Tensor& av = t.value(ia);
                           const Tensor& bv = t.value(ib);
                           if (t.requires_grad(ia)) {
                             Tensor& ga = t.grad(ia);
                             for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] * bv.data[i];
                           }
                           if (t.requires_grad(ib)) {
                             Tensor& gb = t.grad(ib);
                             for (std::size_t i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i] * av.data[i];
                           }
                         });
}

inline Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.data) v *= factor;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix},
                         [ix, factor](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           Tensor& gx = t.grad(ix);
                           for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += factor * g.data[i];
                         });
}

/// x: [R,C] scaled row-wise by s: [R,1] (or [R]).
inline Var scale_rows(Var x, Var s) {
  detail::require_same_tape(x, s, "scale_rows");
  detail::require_rank(x, 2, "scale_rows");
  const Tensor& xv = x.value();
  const Tensor& sv = s.value();
  const std::size_t r = xv.dim(0), c = xv.dim(1);
  if (sv.numel() != r || sv.dim(0) != r) {
    throw DimensionError("scale_rows: " + shape_str(xv.shape) +
                         " cannot be scaled by " + shape_str(sv.shape));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] *= sv.data[i];
  }
  const std::size_t ix = x.id(), is = s.id();
  return x.tape().record(std::move(out), {ix, is},
                         [ix, is, r, c](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           const Tensor& xv = t.value(ix);
                           const Tensor& sv = t.value(is);
                           if (t.requires_grad(ix)) {
                             Tensor& gx = t.grad(ix);
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j)
                                 gx.data[i * c + j] += g.data[i * c + j] * sv.data[i];
                           }
                           if (t.requires_grad(is)) {
                             Tensor& gs = t.grad(is);
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j)
                                 gs.data[i] += g.data[i * c + j] * xv.data[i * c + j];
                           }
                         });
}

/// Sum of all elements -> shape [1].
inline Var sum(Var x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.data) s += v;
  const std::size_t ix = x.id();
  return x.tape().record(Tensor({1}, std::vector<double>{s}), {ix},
                         [ix](Tape& t, std::size_t self) {
                           const double g = t.grad(self)[0];
                           Tensor& gx = t.grad(ix);
                           for (double& v : gx.data) v += g;
                         });
}

// ---------------------------------------------------------------------------
// Axis operations
// ---------------------------------------------------------------------------

/// Max-subtracted softmax along `axis`.
inline Var softmax_axis(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  if (axis >= xv.rank()) {
    throw DimensionError("softmax_axis: axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(xv.shape));
  }
  const AxisView v(xv.shape, axis);
  Tensor out(xv.shape);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < v.length; ++k) mx = std::max(mx, xv.data[v.index(o, k, i)]);
      double z = 0.0;
      for (std::size_t k = 0; k < v.length; ++k) {
        const double e = std::exp(xv.data[v.index(o, k, i)] - mx);
        out.data[v.index(o, k, i)] = e;
        z += e;
      }
      for (std::size_t k = 0; k < v.length; ++k) out.data[v.index(o, k, i)] /= z;
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, v](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        double dot = 0.0;
        for (std::size_t k = 0; k < v.length; ++k) {
          dot += g.data[v.index(o, k, i)] * y.data[v.index(o, k, i)];
        }
        for (std::size_t k = 0; k < v.length; ++k) {
          const std::size_t idx = v.index(o, k, i);
          gx.data[idx] += y.data[idx] * (g.data[idx] - dot);
        }
      }
    }
  });
}

/// Stacks tensors along `axis`; all other dimensions must agree.
inline Var concat_axis(const std::vector<Var>& xs, std::size_t axis) {
  if (xs.empty()) throw DimensionError("concat_axis: no operands");
  const Shape& first = xs.front().shape();
  if (axis >= first.size()) {
    throw DimensionError("concat_axis: axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& x : xs) {
    detail::require_same_tape(xs.front(), x, "concat_axis");
    const Shape& s = x.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat_axis: shape " + shape_str(s) +
                           " incompatible with " + shape_str(first) +
                           " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  Tensor out(out_shape);
  const AxisView ov(out_shape, axis);
  std::vector<std::size_t> ids, offsets;
  std::size_t offset = 0;
  for (const Var& x : xs) {
    const Tensor& xv = x.value();
    const AxisView v(xv.shape, axis);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t k = 0; k < v.length; ++k)
        for (std::size_t i = 0; i < v.inner; ++i)
          out.data[ov.index(o, offset + k, i)] = xv.data[v.index(o, k, i)];
    ids.push_back(x.id());
    offsets.push_back(offset);
    offset += v.length;
  }
  return xs.front().tape().record(
      std::move(out), ids, [ids, offsets, ov, axis](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        for (std::size_t n = 0; n < ids.size(); ++n) {
          if (!t.requires_grad(ids[n])) continue;
          Tensor& gx = t.grad(ids[n]);
          const AxisView v(gx.shape, axis);
          for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t k = 0; k < v.length; ++k)
              for (std::size_t i = 0; i < v.inner; ++i)
                gx.data[v.index(o, k, i)] += g.data[ov.index(o, offsets[n] + k, i)];
        }
      });
}

/// Elements [begin, end) along `axis`.
inline Var slice_axis(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (axis >= xv.rank() || begin >= end || end > xv.dim(axis)) {
    throw DimensionError("slice_axis: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " invalid for " +
                         shape_str(xv.shape));
  }
  Shape out_shape = xv.shape;
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const AxisView iv(xv.shape, axis);
  const AxisView ov(out_shape, axis);
  for (std::size_t o = 0; o < ov.outer; ++o)
    for (std::size_t k = 0; k < ov.length; ++k)
      for (std::size_t i = 0; i < ov.inner; ++i)
        out.data[ov.index(o, k, i)] = xv.data[iv.index(o, begin + k, i)];
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix},
                         [ix, iv, ov, begin](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           Tensor& gx = t.grad(ix);
                           for (std::size_t o = 0; o < ov.outer; ++o)
                             for (std::size_t k = 0; k < ov.length; ++k)
                               for (std::size_t i = 0; i < ov.inner; ++i)
                                 gx.data[iv.index(o, begin + k, i)] += g.data[ov.index(o, k, i)];
                         });
}

/// Maximum along `axis`, keeping that axis with size 1. Gradient flows to
/// the first maximal element.
inline Var max_axis(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  if (axis >= xv.rank()) {
    throw DimensionError("max_axis: axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(xv.shape));
  }
  const AxisView v(xv.shape, axis);
  Shape out_shape = xv.shape;
  out_shape[axis] = 1;
  Tensor out(out_shape);
  std::vector<std::size_t> argmax(v.outer * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      std::size_t best = v.index(o, 0, i);
      for (std::size_t k = 1; k < v.length; ++k) {
        const std::size_t idx = v.index(o, k, i);
        if (xv.data[idx] > xv.data[best]) best = idx;
      }
      argmax[o * v.inner + i] = best;
      out.data[o * v.inner + i] = xv.data[best];
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix},
                         [ix, argmax = std::move(argmax)](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           Tensor& gx = t.grad(ix);
                           for (std::size_t n = 0; n < argmax.size(); ++n) gx.data[argmax[n]] += g.data[n];
                         });
}

// ---------------------------------------------------------------------------
// Losses (fused for numerical stability)
// ---------------------------------------------------------------------------

/// -log softmax(logits)[label]; logits of shape [1,C] or [C].
inline Var softmax_cross_entropy(Var logits, std::size_t label) {
  const Tensor& z = logits.value();
  const std::size_t c = z.numel();
  if (label >= c) {
    throw DataError("softmax_cross_entropy: label " + std::to_string(label) +
                    " out of range for " + std::to_string(c) + " classes");
  }
  const double mx = *std::max_element(z.data.begin(), z.data.end());
  double zsum = 0.0;
  for (double v : z.data) zsum += std::exp(v - mx);
  const double lse = mx + std::log(zsum);
  const double loss = lse - z.data[label];
  const std::size_t iz = logits.id();
  return logits.tape().record(
      Tensor({1}, std::vector<double>{loss}), {iz},
      [iz, label, lse](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        const Tensor& z = t.value(iz);
        Tensor& gz = t.grad(iz);
        for (std::size_t i = 0; i < z.numel(); ++i) {
          const double p = std::exp(z.data[i] - lse);
          gz.data[i] += g * (p - (i == label ? 1.0 : 0.0));
        }
      });
}

/// Mean over classes of the logistic loss against 0/1 targets.
inline Var logistic_loss(Var logits, const std::vector<double>& targets) {
  const Tensor& z = logits.value();
  if (targets.size() != z.numel()) {
    throw DataError("logistic_loss: " + std::to_string(targets.size()) +
                    " targets for " + std::to_string(z.numel()) + " logits");
  }
  const double inv = 1.0 / static_cast<double>(targets.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < z.numel(); ++i) {
    const double x = z.data[i];
    // log(1 + e^x) - y x, evaluated without overflow
    loss += std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))) - targets[i] * x;
  }
  loss *= inv;
  const std::size_t iz = logits.id();
  return logits.tape().record(
      Tensor({1}, std::vector<double>{loss}), {iz},
      [iz, targets, inv](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        const Tensor& z = t.value(iz);
        Tensor& gz = t.grad(iz);
        for (std::size_t i = 0; i < z.numel(); ++i) {
          const double s = 1.0 / (1.0 + std::exp(-z.data[i]));
          gz.data[i] += g * inv * (s - targets[i]);
        }
      });
}

}  // namespace tdcmn
