// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation on a per-sample tape.
// Ops execute eagerly; backward() replays the tape in reverse.
// Templated on the scalar type: float for training, double for
// finite-difference verification.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridcast::ad {

using Shape = std::vector<int>;

inline long long numel(const Shape& s) {
  long long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

[[noreturn]] inline void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw std::invalid_argument("shape mismatch in " + op + ": " + shape_str(a) + " vs " + shape_str(b));
}

// Rigid 2-D transform in pixel coordinates: rotate offsets from the pivot
// by dtheta, then translate by (dp_row, dp_col).
struct WarpSpec {
  double dtheta = 0.0;
  double dp_row = 0.0;
  double dp_col = 0.0;
  double pivot_row = 0.0;
  double pivot_col = 0.0;
};

enum class Interp { kBilinear, kNearest };

template <typename T>
class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<T> val;
    std::vector<T> grad;
    bool needs_grad = false;          // gradient flows to or through this node
    bool is_param = false;
    std::function<void(Tape&, int)> back;  // null for leaves
    // forward inputs of kinked ops, recorded for the grad-check guard
    int kink_watch = -1;  // node id whose sign pattern matters, -1 if none
  };

  int add_leaf(Shape shape, std::vector<T> data, bool param) {
    if (numel(shape) != static_cast<long long>(data.size()))
      throw std::invalid_argument("leaf data length does not match shape " + shape_str(shape));
    Node n;
    n.shape = std::move(shape);
    n.val = std::move(data);
    n.needs_grad = param;
    n.is_param = param;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int add_node(Shape shape, std::vector<T> val, bool needs_grad, std::function<void(Tape&, int)> back,
               int kink_watch = -1) {
    Node n;
    n.shape = std::move(shape);
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    n.kink_watch = kink_watch;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  Node& node(int i) { return nodes_.at(static_cast<std::size_t>(i)); }
  const Node& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
  int size() const { return static_cast<int>(nodes_.size()); }

  std::vector<T>& grad_buf(int i) {
    Node& n = node(i);
    if (n.grad.empty()) n.grad.assign(n.val.size(), T(0));
    return n.grad;
  }

  // Reverse sweep from a scalar node. A second call without a fresh
  // forward pass is an error.
  void backward(int loss_id) {
    if (backward_done_) throw std::runtime_error("backward called twice without a new forward pass");
    const Node& loss = node(loss_id);
    if (numel(loss.shape) != 1) throw std::invalid_argument("backward requires a scalar loss, got " + shape_str(loss.shape));
    backward_done_ = true;
    grad_buf(loss_id)[0] = T(1);
    for (int i = loss_id; i >= 0; --i) {
      Node& n = node(i);
      if (n.back && n.needs_grad && !n.grad.empty()) n.back(*this, i);
    }
  }

  bool backward_done() const { return backward_done_; }

  // Sign pattern of every kink-op input, used by grad_check to skip
  // coordinates whose perturbation crosses a nondifferentiable point.
  std::vector<signed char> kink_signature() const {
    std::vector<signed char> sig;
    for (const Node& n : nodes_) {
      if (n.kink_watch < 0) continue;
      const Node& w = node(n.kink_watch);
      for (T v : w.val) sig.push_back(v > T(0) ? 1 : (v < T(0) ? -1 : 0));
    }
    return sig;
  }

 private:
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Lightweight handle to a tape node.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Shape& shape() const { return tape->node(id).shape; }
  const std::vector<T>& val() const { return tape->node(id).val; }
  const std::vector<T>& grad() const { return tape->node(id).grad; }
  bool needs_grad() const { return tape->node(id).needs_grad; }
  T scalar() const {
    if (numel(shape()) != 1) throw std::invalid_argument("scalar() on non-scalar " + shape_str(shape()));
    return val()[0];
  }
};

template <typename T>
Var<T> constant(Tape<T>& t, Shape shape, std::vector<T> data) {
  return {&t, t.add_leaf(std::move(shape), std::move(data), false)};
}

template <typename T>
Var<T> scalar_const(Tape<T>& t, T v) {
  return constant(t, Shape{1}, std::vector<T>{v});
}

template <typename T>
Var<T> param(Tape<T>& t, Shape shape, std::vector<T> data) {
  return {&t, t.add_leaf(std::move(shape), std::move(data), true)};
}

namespace detail {

template <typename T>
void accum(std::vector<T>& dst, const std::vector<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---- elementwise binary -----------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  Tape<T>& t = *a.tape;
  std::vector<T> out(a.val().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.val()[i] + b.val()[i];
  const int ia = a.id, ib = b.id;
  const bool ng = a.needs_grad() || b.needs_grad();
  int id = t.add_node(a.shape(), std::move(out), ng, [ia, ib](Tape<T>& tp, int self) {
    const auto& g = tp.node(self).grad;
    if (tp.node(ia).needs_grad) detail::accum(tp.grad_buf(ia), g);
    if (tp.node(ib).needs_grad) detail::accum(tp.grad_buf(ib), g);
  });
  return {&t, id};
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  Tape<T>& t = *a.tape;
  std::vector<T> out(a.val().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.val()[i] - b.val()[i];
  const int ia = a.id, ib = b.id;
  const bool ng = a.needs_grad() || b.needs_grad();
  int id = t.add_node(a.shape(), std::move(out), ng, [ia, ib](Tape<T>& tp, int self) {
    const auto& g = tp.node(self).grad;
    if (tp.node(ia).needs_grad) detail::accum(tp.grad_buf(ia), g);
    if (tp.node(ib).needs_grad) {
      auto& gb = tp.grad_buf(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
  return {&t, id};
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  Tape<T>& t = *a.tape;
  std::vector<T> out(a.val().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.val()[i] * b.val()[i];
  const int ia = a.id, ib = b.id;
  const bool ng = a.needs_grad() || b.needs_grad();
  int id = t.add_node(a.shape(), std::move(out), ng, [ia, ib](Tape<T>& tp, int self) {
    const auto& g = tp.node(self).grad;
    if (tp.node(ia).needs_grad) {
      auto& ga = tp.grad_buf(ia);
      const auto& vb = tp.node(ib).val;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (tp.node(ib).needs_grad) {
      auto& gb = tp.grad_buf(ib);
      const auto& va = tp.node(ia).val;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
  return {&t, id};
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) shape_error("div", a.shape(), b.shape());
  Tape<T>& t = *a.tape;
  std::vector<T> out(a.val().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.val()[i] / b.val()[i];
  const int ia = a.id, ib = b.id;
  const bool ng = a.needs_grad() || b.needs_grad();
  int id = t.add_node(a.shape(), std::move(out), ng, [ia, ib](Tape<T>& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& vb = tp.node(ib).val;
    if (tp.node(ia).needs_grad) {
      auto& ga = tp.grad_buf(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] / vb[i];
    }
    if (tp.node(ib).needs_grad) {
      auto& gb = tp.grad_buf(ib);
      const auto& y = tp.node(self).val;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i] * y[i] / vb[i];
    }
  });
  return {&t, id};
}

// ---- elementwise unary ------------------------------------------------------

namespace detail {

template <typename T, typename F, typename DF>
Var<T> unary(Var<T> a, F f, DF df, const char* /*name*/, int kink_watch = -1) {
  Tape<T>& t = *a.tape;
  std::vector<T> out(a.val().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.val()[i]);
  const int ia = a.id;
  int id = t.add_node(
      a.shape(), std::move(out), a.needs_grad(),
      [ia, df](Tape<T>& tp, int self) {
        if (!tp.node(ia).needs_grad) return;
        const auto& g = tp.node(self).grad;
        const auto& x = tp.node(ia).val;
        const auto& y = tp.node(self).val;
        auto& ga = tp.grad_buf(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
      },
      kink_watch);
  return {&t, id};
}

}  // namespace detail

template <typename T>
Var<T> neg(Var<T> a) {
  return detail::unary(
      a, [](T x) { return -x; }, [](T, T) { return T(-1); }, "neg");
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  return detail::unary(
      a, [c](T x) { return c * x; }, [c](T, T) { return c; }, "scale");
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
  return detail::unary(
      a, [c](T x) { return x + c; }, [](T, T) { return T(1); }, "add_scalar");
}

template <typename T>
Var<T> relu(Var<T> a) {
  return detail::unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); }, "relu", a.id);
}

template <typename T>
Var<T> leaky_relu(Var<T> a, T coef) {
  return detail::unary(
      a, [coef](T x) { return x > T(0) ? x : coef * x; },
      [coef](T x, T) { return x > T(0) ? T(1) : coef; }, "leaky_relu", a.id);
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); }, "sigmoid");
}

template <typename T>
Var<T> tanh_(Var<T> a) {
  return detail::unary(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; }, "tanh");
}

template <typename T>
Var<T> exp_(Var<T> a) {
  return detail::unary(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; }, "exp");
}

template <typename T>
Var<T> log_(Var<T> a) {
  return detail::unary(
      a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; }, "log");
}

template <typename T>
Var<T> sqrt_(Var<T> a) {
  return detail::unary(
      a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; }, "sqrt");
}

template <typename T>
Var<T> square(Var<T> a) {
  return detail::unary(
      a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; }, "square");
}

// Gradient is zero outside [lo, hi]; the kink guard watches the input.
template <typename T>
Var<T> clamp(Var<T> a, T lo, T hi) {
  return detail::unary(
      a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); }, "clamp", a.id);
}

// ---- dense ------------------------------------------------------------------

// y = W x + b with W:[m,n], x:[n], b:[m]
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  if (x.shape().size() != 1 || w.shape().size() != 2 || b.shape().size() != 1)
    throw std::invalid_argument("linear expects x:[n], w:[m,n], b:[m]");
  const int n = x.shape()[0], m = w.shape()[0];
  if (w.shape()[1] != n) shape_error("linear weight/input", w.shape(), x.shape());
  if (b.shape()[0] != m) shape_error("linear bias/output", b.shape(), Shape{m});
  Tape<T>& t = *x.tape;
  std::vector<T> out(static_cast<std::size_t>(m));
  const auto& xv = x.val();
  const auto& wv = w.val();
  const auto& bv = b.val();
  for (int i = 0; i < m; ++i) {
    T acc = bv[static_cast<std::size_t>(i)];
    const T* row = wv.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) acc += row[j] * xv[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = acc;
  }
  const int ix = x.id, iw = w.id, ib = b.id;
  const bool ng = x.needs_grad() || w.needs_grad() || b.needs_grad();
  int id = t.add_node(Shape{m}, std::move(out), ng, [ix, iw, ib, m, n](Tape<T>& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& xv = tp.node(ix).val;
    const auto& wv = tp.node(iw).val;
    if (tp.node(ix).needs_grad) {
      auto& gx = tp.grad_buf(ix);
      for (int i = 0; i < m; ++i) {
        const T gi = g[static_cast<std::size_t>(i)];
        const T* row = wv.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) gx[static_cast<std::size_t>(j)] += gi * row[j];
      }
    }
    if (tp.node(iw).needs_grad) {
      auto& gw = tp.grad_buf(iw);
      for (int i = 0; i < m; ++i) {
        const T gi = g[static_cast<std::size_t>(i)];
        T* row = gw.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) row[j] += gi * xv[static_cast<std::size_t>(j)];
      }
    }
    if (tp.node(ib).needs_grad) {
      auto& gb = tp.grad_buf(ib);
      for (int i = 0; i < m; ++i) gb[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
    }
  });
  return {&t, id};
}

// ---- convolution ------------------------------------------------------------

inline int conv_out_extent(int in, int k, int stride) { return (in - k) / stride + 1; }

// Valid-padding cross-correlation. x:[C,H,W], k:[K,C,kh,kw], b:[K] -> [K,H',W']
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> k, Var<T> b, int stride) {
  if (x.shape().size() != 3 || k.shape().size() != 4)
    throw std::invalid_argument("conv2d expects x:[C,H,W], k:[K,C,kh,kw]");
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int K = k.shape()[0], kh = k.shape()[2], kw = k.shape()[3];
  if (k.shape()[1] != C) shape_error("conv2d channels", k.shape(), x.shape());
  if (b.shape() != Shape{K}) shape_error("conv2d bias", b.shape(), Shape{K});
  if (H < kh || W < kw) shape_error("conv2d kernel larger than input", k.shape(), x.shape());
  const int Ho = conv_out_extent(H, kh, stride), Wo = conv_out_extent(W, kw, stride);
  Tape<T>& t = *x.tape;
  std::vector<T> out(static_cast<std::size_t>(K) * Ho * Wo);
  const auto& xv = x.val();
  const auto& kv = k.val();
  const auto& bv = b.val();
  for (int o = 0; o < K; ++o) {
    T* oplane = out.data() + static_cast<std::size_t>(o) * Ho * Wo;
    for (int i = 0; i < Ho * Wo; ++i) oplane[i] = bv[static_cast<std::size_t>(o)];
    for (int c = 0; c < C; ++c) {
      const T* xplane = xv.data() + static_cast<std::size_t>(c) * H * W;
      const T* kplane = kv.data() + (static_cast<std::size_t>(o) * C + c) * kh * kw;
      for (int i = 0; i < Ho; ++i) {
        for (int u = 0; u < kh; ++u) {
          const T* xrow = xplane + static_cast<std::size_t>(i * stride + u) * W;
          for (int v = 0; v < kw; ++v) {
            const T kval = kplane[u * kw + v];
            T* orow = oplane + static_cast<std::size_t>(i) * Wo;
            const T* xr = xrow + v;
            for (int j = 0; j < Wo; ++j) orow[j] += kval * xr[j * stride];
          }
        }
      }
    }
  }
  const int ix = x.id, ik = k.id, ib = b.id;
  const bool ng = x.needs_grad() || k.needs_grad() || b.needs_grad();
  int id = t.add_node(Shape{K, Ho, Wo}, std::move(out), ng, [=](Tape<T>& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& xv2 = tp.node(ix).val;
    const auto& kv2 = tp.node(ik).val;
    const bool wx = tp.node(ix).needs_grad;
    const bool wk = tp.node(ik).needs_grad;
    const bool wb = tp.node(ib).needs_grad;
    if (wb) {
      auto& gb = tp.grad_buf(ib);
      for (int o = 0; o < K; ++o) {
        const T* gplane = g.data() + static_cast<std::size_t>(o) * Ho * Wo;
        T acc = T(0);
        for (int i = 0; i < Ho * Wo; ++i) acc += gplane[i];
        gb[static_cast<std::size_t>(o)] += acc;
      }
    }
    if (!wx && !wk) return;
    auto* gx = wx ? tp.grad_buf(ix).data() : nullptr;
    auto* gk = wk ? tp.grad_buf(ik).data() : nullptr;
    for (int o = 0; o < K; ++o) {
      const T* gplane = g.data() + static_cast<std::size_t>(o) * Ho * Wo;
      for (int c = 0; c < C; ++c) {
        const T* xplane = xv2.data() + static_cast<std::size_t>(c) * H * W;
        const T* kplane = kv2.data() + (static_cast<std::size_t>(o) * C + c) * kh * kw;
        T* gxplane = wx ? gx + static_cast<std::size_t>(c) * H * W : nullptr;
        T* gkplane = wk ? gk + (static_cast<std::size_t>(o) * C + c) * kh * kw : nullptr;
        for (int i = 0; i < Ho; ++i) {
          const T* grow = gplane + static_cast<std::size_t>(i) * Wo;
          for (int u = 0; u < kh; ++u) {
            const int xr = i * stride + u;
            for (int v = 0; v < kw; ++v) {
              const T kval = kplane[u * kw + v];
              T acc = T(0);
              for (int j = 0; j < Wo; ++j) {
                const T gj = grow[j];
                const int xc = j * stride + v;
                if (wx) gxplane[static_cast<std::size_t>(xr) * W + xc] += gj * kval;
                acc += gj * xplane[static_cast<std::size_t>(xr) * W + xc];
              }
              if (wk) gkplane[u * kw + v] += acc;
            }
          }
        }
      }
    }
  });
  return {&t, id};
}

inline int deconv_out_extent(int in, int k, int stride) { return (in - 1) * stride + k; }

// Transposed convolution. x:[C,H,W], k:[C,K,kh,kw], b:[K] -> [K,(H-1)s+kh,(W-1)s+kw]
template <typename T>
Var<T> deconv2d(Var<T> x, Var<T> k, Var<T> b, int stride) {
  if (x.shape().size() != 3 || k.shape().size() != 4)
    throw std::invalid_argument("deconv2d expects x:[C,H,W], k:[C,K,kh,kw]");
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int K = k.shape()[1], kh = k.shape()[2], kw = k.shape()[3];
  if (k.shape()[0] != C) shape_error("deconv2d channels", k.shape(), x.shape());
  if (b.shape() != Shape{K}) shape_error("deconv2d bias", b.shape(), Shape{K});
  const int Ho = deconv_out_extent(H, kh, stride), Wo = deconv_out_extent(W, kw, stride);
  Tape<T>& t = *x.tape;
  std::vector<T> out(static_cast<std::size_t>(K) * Ho * Wo);
  const auto& xv = x.val();
  const auto& kv = k.val();
  const auto& bv = b.val();
  for (int o = 0; o < K; ++o) {
    T* oplane = out.data() + static_cast<std::size_t>(o) * Ho * Wo;
    for (int i = 0; i < Ho * Wo; ++i) oplane[i] = bv[static_cast<std::size_t>(o)];
  }
  for (int c = 0; c < C; ++c) {
    const T* xplane = xv.data() + static_cast<std::size_t>(c) * H * W;
    for (int o = 0; o < K; ++o) {
      T* oplane = out.data() + static_cast<std::size_t>(o) * Ho * Wo;
      const T* kplane = kv.data() + (static_cast<std::size_t>(c) * K + o) * kh * kw;
      for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
          const T xij = xplane[static_cast<std::size_t>(i) * W + j];
          if (xij == T(0)) continue;
          T* obase = oplane + static_cast<std::size_t>(i * stride) * Wo + j * stride;
          for (int u = 0; u < kh; ++u)
            for (int v = 0; v < kw; ++v) obase[static_cast<std::size_t>(u) * Wo + v] += xij * kplane[u * kw + v];
        }
      }
    }
  }
  const int ix = x.id, ik = k.id, ib = b.id;
  const bool ng = x.needs_grad() || k.needs_grad() || b.needs_grad();
  int id = t.add_node(Shape{K, Ho, Wo}, std::move(out), ng, [=](Tape<T>& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& xv2 = tp.node(ix).val;
    const auto& kv2 = tp.node(ik).val;
    if (tp.node(ib).needs_grad) {
      auto& gb = tp.grad_buf(ib);
      for (int o = 0; o < K; ++o) {
        const T* gplane = g.data() + static_cast<std::size_t>(o) * Ho * Wo;
        T acc = T(0);
        for (int i = 0; i < Ho * Wo; ++i) acc += gplane[i];
        gb[static_cast<std::size_t>(o)] += acc;
      }
    }
    const bool wx = tp.node(ix).needs_grad;
    const bool wk = tp.node(ik).needs_grad;
    if (!wx && !wk) return;
    auto* gx = wx ? tp.grad_buf(ix).data() : nullptr;
    auto* gk = wk ? tp.grad_buf(ik).data() : nullptr;
    for (int c = 0; c < C; ++c) {
      const T* xplane = xv2.data() + static_cast<std::size_t>(c) * H * W;
      T* gxplane = wx ? gx + static_cast<std::size_t>(c) * H * W : nullptr;
      for (int o = 0; o < K; ++o) {
        const T* gplane = g.data() + static_cast<std::size_t>(o) * Ho * Wo;
        const T* kplane = kv2.data() + (static_cast<std::size_t>(c) * K + o) * kh * kw;
        T* gkplane = wk ? gk + (static_cast<std::size_t>(c) * K + o) * kh * kw : nullptr;
        for (int i = 0; i < H; ++i) {
          for (int j = 0; j < W; ++j) {
            const T xij = xplane[static_cast<std::size_t>(i) * W + j];
            const T* gbase = gplane + static_cast<std::size_t>(i * stride) * Wo + j * stride;
            T acc = T(0);
            for (int u = 0; u < kh; ++u) {
              for (int v = 0; v < kw; ++v) {
                const T gv = gbase[static_cast<std::size_t>(u) * Wo + v];
                acc += gv * kplane[u * kw + v];
                if (wk) gkplane[u * kw + v] += gv * xij;
              }
            }
            if (wx) gxplane[static_cast<std::size_t>(i) * W + j] += acc;
          }
        }
      }
    }
  });
  return {&t, id};
}

// ---- shape ops ----------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  if (numel(shape) != numel(a.shape())) shape_error("reshape", a.shape(), shape);
  Tape<T>& t = *a.tape;
  const int ia = a.id;
  int id = t.add_node(std::move(shape), a.val(), a.needs_grad(), [ia](Tape<T>& tp, int self) {
    if (!tp.node(ia).needs_grad) return;
    detail::accum(tp.grad_buf(ia), tp.node(self).grad);
  });
  return {&t, id};
}

// Concatenate along axis 0 (feature axis for vectors, channel axis for images).
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  Tape<T>& t = *parts[0].tape;
  Shape out_shape = parts[0].shape();
  long long total0 = out_shape[0];
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    if (s.size() != out_shape.size()) shape_error("concat rank", out_shape, s);
    for (std::size_t d = 1; d < s.size(); ++d)
      if (s[d] != out_shape[d]) shape_error("concat trailing dims", out_shape, s);
    total0 += s[0];
  }
  out_shape[0] = static_cast<int>(total0);
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(numel(out_shape)));
  std::vector<int> ids;
  std::vector<std::size_t> lens;
  bool ng = false;
  for (const Var<T>& p : parts) {
    out.insert(out.end(), p.val().begin(), p.val().end());
    ids.push_back(p.id);
    lens.push_back(p.val().size());
    ng = ng || p.needs_grad();
  }
  int id = t.add_node(std::move(out_shape), std::move(out), ng, [ids, lens](Tape<T>& tp, int self) {
    const auto& g = tp.node(self).grad;
    std::size_t off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (tp.node(ids[p]).needs_grad) {
        auto& gp = tp.grad_buf(ids[p]);
        for (std::size_t i = 0; i < lens[p]; ++i) gp[i] += g[off + i];
      }
      off += lens[p];
    }
  });
  return {&t, id};
}

// x:[C,H,W] -> [count,H,W]
template <typename T>
Var<T> slice_channels(Var<T> a, int from, int count) {
  if (a.shape().size() != 3) throw std::invalid_argument("slice_channels expects [C,H,W]");
  const int C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
  if (from < 0 || count < 1 || from + count > C)
    throw std::invalid_argument("slice_channels range [" + std::to_string(from) + "," +
                                std::to_string(from + count) + ") outside C=" + std::to_string(C));
  Tape<T>& t = *a.tape;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<T> out(a.val().begin() + from * plane, a.val().begin() + (from + count) * plane);
  const int ia = a.id;
  int id = t.add_node(Shape{count, H, W}, std::move(out), a.needs_grad(), [ia, from, plane](Tape<T>& tp, int self) {
    if (!tp.node(ia).needs_grad) return;
    const auto& g = tp.node(self).grad;
    auto& ga = tp.grad_buf(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[from * plane + i] += g[i];
  });
  return {&t, id};
}

// Zero-pad every spatial border of [C,H,W] by p pixels.
template <typename T>
Var<T> pad2d(Var<T> a, int p) {
  if (p < 0) throw std::invalid_argument("pad2d: negative pad");
  if (a.shape().size() != 3) throw std::invalid_argument("pad2d expects [C,H,W]");
  const int C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
  const int Ho = H + 2 * p, Wo = W + 2 * p;
  Tape<T>& t = *a.tape;
  std::vector<T> out(static_cast<std::size_t>(C) * Ho * Wo, T(0));
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        out[(static_cast<std::size_t>(c) * Ho + i + p) * Wo + j + p] =
            a.val()[(static_cast<std::size_t>(c) * H + i) * W + j];
  const int ia = a.id;
  int id = t.add_node(Shape{C, Ho, Wo}, std::move(out), a.needs_grad(), [ia, C, H, W, p, Ho, Wo](Tape<T>& tp, int self) {
    if (!tp.node(ia).needs_grad) return;
    const auto& g = tp.node(self).grad;
    auto& ga = tp.grad_buf(ia);
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
          ga[(static_cast<std::size_t>(c) * H + i) * W + j] +=
              g[(static_cast<std::size_t>(c) * Ho + i + p) * Wo + j + p];
  });
  return {&t, id};
}

// Remove a border of p pixels from every spatial edge of [C,H,W].
template <typename T>
Var<T> crop2d(Var<T> a, int p) {
  if (p < 0) throw std::invalid_argument("crop2d: negative crop");
  if (a.shape().size() != 3) throw std::invalid_argument("crop2d expects [C,H,W]");
  const int C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
  if (H <= 2 * p || W <= 2 * p) throw std::invalid_argument("crop2d: crop exceeds extent");
  const int Ho = H - 2 * p, Wo = W - 2 * p;
  Tape<T>& t = *a.tape;
  std::vector<T> out(static_cast<std::size_t>(C) * Ho * Wo);
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < Ho; ++i)
      for (int j = 0; j < Wo; ++j)
        out[(static_cast<std::size_t>(c) * Ho + i) * Wo + j] =
            a.val()[(static_cast<std::size_t>(c) * H + i + p) * W + j + p];
  const int ia = a.id;
  int id = t.add_node(Shape{C, Ho, Wo}, std::move(out), a.needs_grad(), [ia, C, H, W, p, Ho, Wo](Tape<T>& tp, int self) {
    if (!tp.node(ia).needs_grad) return;
    const auto& g = tp.node(self).grad;
    auto& ga = tp.grad_buf(ia);
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j)
          ga[(static_cast<std::size_t>(c) * H + i + p) * W + j + p] +=
              g[(static_cast<std::size_t>(c) * Ho + i) * Wo + j];
  });
  return {&t, id};
}

// Uniform local mean over win x win valid windows, per channel.
template <typename T>
Var<T> box_mean(Var<T> a, int win) {
  if (a.shape().size() != 3) throw std::invalid_argument("box_mean expects [C,H,W]");
  const int C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
  if (H < win || W < win) throw std::invalid_argument("box_mean: frame smaller than window");
  const int Ho = H - win + 1, Wo = W - win + 1;
  const T inv = T(1) / (static_cast<T>(win) * static_cast<T>(win));
  Tape<T>& t = *a.tape;
  std::vector<T> out(static_cast<std::size_t>(C) * Ho * Wo);
  for (int c = 0; c < C; ++c) {
    const T* xp = a.val().data() + static_cast<std::size_t>(c) * H * W;
    T* op = out.data() + static_cast<std::size_t>(c) * Ho * Wo;
    for (int i = 0; i < Ho; ++i) {
      for (int j = 0; j < Wo; ++j) {
        T acc = T(0);
        for (int u = 0; u < win; ++u) {
          const T* row = xp + static_cast<std::size_t>(i + u) * W + j;
          for (int v = 0; v < win; ++v) acc += row[v];
        }
        op[static_cast<std::size_t>(i) * Wo + j] = acc * inv;
      }
    }
  }
  const int ia = a.id;
  int id = t.add_node(Shape{C, Ho, Wo}, std::move(out), a.needs_grad(), [ia, C, H, W, win, Ho, Wo, inv](Tape<T>& tp, int self) {
    if (!tp.node(ia).needs_grad) return;
    const auto& g = tp.node(self).grad;
    auto& ga = tp.grad_buf(ia);
    for (int c = 0; c < C; ++c) {
      const T* gp = g.data() + static_cast<std::size_t>(c) * Ho * Wo;
      T* gap = ga.data() + static_cast<std::size_t>(c) * H * W;
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          const T gv = gp[static_cast<std::size_t>(i) * Wo + j] * inv;
          for (int u = 0; u < win; ++u) {
            T* row = gap + static_cast<std::size_t>(i + u) * W + j;
            for (int v = 0; v < win; ++v) row[v] += gv;
          }
        }
    }
  });
  return {&t, id};
}

// ---- rigid warp ---------------------------------------------------------------

namespace detail {

// Inverse-mapped sampling for the content transform "rotate by dtheta about
// pivot, then translate by dp". Forward mode samples the source at
// R(-dtheta)*(out_off - dp) + pivot; inverse mode undoes that transform and
// samples at R(dtheta)*out_off + dp + pivot.
struct WarpSampler {
  double c = 1.0, s = 0.0;
  double pre_r = 0.0, pre_c = 0.0;    // subtracted from the output offset
  double post_r = 0.0, post_c = 0.0;  // added after rotation
  double pivot_r = 0.0, pivot_c = 0.0;

  static WarpSampler make(const WarpSpec& w, bool inverse) {
    WarpSampler m;
    m.pivot_r = w.pivot_row;
    m.pivot_c = w.pivot_col;
    if (!inverse) {
      m.c = std::cos(-w.dtheta);
      m.s = std::sin(-w.dtheta);
      m.pre_r = w.dp_row;
      m.pre_c = w.dp_col;
    } else {
      m.c = std::cos(w.dtheta);
      m.s = std::sin(w.dtheta);
      m.post_r = w.dp_row;
      m.post_c = w.dp_col;
    }
    return m;
  }

  void operator()(int i, int j, double& sr, double& sc) const {
    const double orow = static_cast<double>(i) - pivot_r - pre_r;
    const double ocol = static_cast<double>(j) - pivot_c - pre_c;
    sr = c * orow - s * ocol + post_r + pivot_r;
    sc = s * orow + c * ocol + post_c + pivot_c;
  }
};

// Resamples one H x W plane; shared by the tape op and the plain-frame path.
template <typename T>
void warp_plane(const T* src, int H, int W, const WarpSampler& map, Interp interp, T* dst) {
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      double sr, sc;
      map(i, j, sr, sc);
      T v = T(0);
      if (interp == Interp::kNearest) {
        const int r0 = static_cast<int>(std::lround(sr));
        const int c0 = static_cast<int>(std::lround(sc));
        if (r0 >= 0 && r0 < H && c0 >= 0 && c0 < W) v = src[static_cast<std::size_t>(r0) * W + c0];
      } else {
        const int r0 = static_cast<int>(std::floor(sr));
        const int c0 = static_cast<int>(std::floor(sc));
        const double fr = sr - r0, fc = sc - c0;
        auto at = [&](int r, int cc) -> double {
          if (r < 0 || r >= H || cc < 0 || cc >= W) return 0.0;
          return static_cast<double>(src[static_cast<std::size_t>(r) * W + cc]);
        };
        v = static_cast<T>((1 - fr) * ((1 - fc) * at(r0, c0) + fc * at(r0, c0 + 1)) +
                           fr * ((1 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1)));
      }
      dst[static_cast<std::size_t>(i) * W + j] = v;
    }
  }
}

}  // namespace detail

// Applies the rigid transform to the channels selected by `mask` (empty mask =
// all channels); unselected channels are copied verbatim. Out-of-bounds samples
// read as zero. `inverse` applies the inverse transform (used by the output
// re-centering step).
template <typename T>
Var<T> warp2d(Var<T> a, const WarpSpec& w, const std::vector<bool>& mask, Interp interp, bool inverse) {
  if (a.shape().size() != 3) throw std::invalid_argument("warp2d expects [C,H,W]");
  const int C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
  if (!mask.empty() && static_cast<int>(mask.size()) != C)
    throw std::invalid_argument("warp2d mask length != channel count");
  Tape<T>& t = *a.tape;
  const detail::WarpSampler src_coord = detail::WarpSampler::make(w, inverse);

  std::vector<T> out(a.val().size());
  const auto& xv = a.val();
  for (int c = 0; c < C; ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * H * W;
    const bool selected = mask.empty() || mask[static_cast<std::size_t>(c)];
    if (!selected) {
      for (int i = 0; i < H * W; ++i) out[base + i] = xv[base + i];
      continue;
    }
    detail::warp_plane(xv.data() + base, H, W, src_coord, interp, out.data() + base);
  }
  const int ia = a.id;
  int id = t.add_node(a.shape(), std::move(out), a.needs_grad(),
                      [ia, C, H, W, mask, interp, src_coord](Tape<T>& tp, int self) {
                        if (!tp.node(ia).needs_grad) return;
                        const auto& g = tp.node(self).grad;
                        auto& ga = tp.grad_buf(ia);
                        for (int c = 0; c < C; ++c) {
                          const std::size_t base = static_cast<std::size_t>(c) * H * W;
                          const bool selected = mask.empty() || mask[static_cast<std::size_t>(c)];
                          if (!selected) {
                            for (int i = 0; i < H * W; ++i) ga[base + i] += g[base + i];
                            continue;
                          }
                          for (int i = 0; i < H; ++i) {
                            for (int j = 0; j < W; ++j) {
                              const T gv = g[base + static_cast<std::size_t>(i) * W + j];
                              if (gv == T(0)) continue;
                              double sr, sc;
                              src_coord(i, j, sr, sc);
                              if (interp == Interp::kNearest) {
                                const int r0 = static_cast<int>(std::lround(sr));
                                const int c0 = static_cast<int>(std::lround(sc));
                                if (r0 >= 0 && r0 < H && c0 >= 0 && c0 < W)
                                  ga[base + static_cast<std::size_t>(r0) * W + c0] += gv;
                              } else {
                                const int r0 = static_cast<int>(std::floor(sr));
                                const int c0 = static_cast<int>(std::floor(sc));
                                const double fr = sr - r0, fc = sc - c0;
                                auto scatter = [&](int r, int cc2, double wgt) {
                                  if (r < 0 || r >= H || cc2 < 0 || cc2 >= W) return;
                                  ga[base + static_cast<std::size_t>(r) * W + cc2] += static_cast<T>(wgt) * gv;
                                };
                                scatter(r0, c0, (1 - fr) * (1 - fc));
                                scatter(r0, c0 + 1, (1 - fr) * fc);
                                scatter(r0 + 1, c0, fr * (1 - fc));
                                scatter(r0 + 1, c0 + 1, fr * fc);
                              }
                            }
                          }
                        }
                      });
  return {&t, id};
}

// ---- reductions -----------------------------------------------------------------

template <typename T>
Var<T> sum_all(Var<T> a) {
  Tape<T>& t = *a.tape;
  T acc = T(0);
  for (T v : a.val()) acc += v;
  const int ia = a.id;
  int id = t.add_node(Shape{1}, std::vector<T>{acc}, a.needs_grad(), [ia](Tape<T>& tp, int self) {
    if (!tp.node(ia).needs_grad) return;
    const T g = tp.node(self).grad[0];
    auto& ga = tp.grad_buf(ia);
    for (auto& v : ga) v += g;
  });
  return {&t, id};
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  const T inv = T(1) / static_cast<T>(a.val().size());
  return scale(sum_all(a), inv);
}

}  // namespace gridcast::ad
