#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "smamba/mathx.hpp"
#include "smamba/rng.hpp"
#include "smamba/tensor.hpp"

// Differentiable op set.  Shape rules (row-major, last axis fastest):
//
//   add/sub/mul (a, b)          a:[*]  b:[*]            -> [*]      (same shape)
//   scale      (a, c)           a:[*]  c: plain scalar  -> [*]
//   smul       (a, s)           a:[*]  s:[1]            -> [*]      (s learnable)
//   exp/sqrt/abs/silu/softplus  a:[*]                   -> [*]
//   sum/mean   (a)              a:[*]                   -> [1]
//   softmax    (a, axis)        a:[*]                   -> [*]      (normalized over axis)
//   layer_norm (a, g, b)        a:[..,C] g:[C] b:[C]    -> [..,C]   (stats over last axis, eps 1e-5)
//   matmul     (a, b)           a:[M,K] b:[K,N]         -> [M,N]
//   linear     (x, w, b)        x:[..,Ci] w:[Ci,Co] b:[Co] or none -> [..,Co]
//   conv2d     (x, w, b, s, p)  x:[H,W,Ci] w:[kh,kw,Ci,Co] b:[Co] or none
//                                                       -> [(H+2p-kh)/s+1, (W+2p-kw)/s+1, Co]
//   dwconv2d   (x, w, b, s, p)  x:[H,W,C]  w:[kh,kw,C]  b:[C] or none -> per-channel conv
//   pixel_shuffle   (x, r)      x:[H,W,C*r*r]           -> [H*r, W*r, C]
//                                channel c*r*r + dy*r + dx lands at (y*r+dy, x*r+dx, c)
//   pixel_unshuffle (x, r)      x:[H*r, W*r, C]         -> [H, W, C*r*r]   (exact inverse)
//   reshape    (x, shape)       numel preserved         -> [shape]
//   permute    (x, perm)        out axis d = in axis perm[d]
//   concat     (a, b, axis)     equal except axis       -> axis sizes added
//   slice      (x, axis, f, t)  half-open [f, t)        -> axis size t-f
//   gather_rows(x, idx)         x:[L,*] idx: K indices  -> [K,*]   (backward scatter-adds)
//   dropout    (x, rate, training, rng)  identity in eval mode
//
// Every op validates shapes up front (error names the op and both shapes) and
// checks its output for non-finite values when the runtime flag is on.  Ops
// executed under an active Tape record a backward closure whenever an input
// has requires_grad set.

namespace smamba {

// One pass of |x| accumulation: a NaN or Inf anywhere poisons the sum.
template <typename T>
inline void finite_guard(const Tensor<T>& t, const char* op) {
  if (!runtime().check_finite) return;
  const T* p = t.data();
  const std::int64_t n = t.numel();
  T acc = T(0);
  for (std::int64_t i = 0; i < n; ++i) acc += std::abs(p[i]);
  if (!std::isfinite(static_cast<double>(acc))) {
    throw NumericError(std::string(op) + ": non-finite output");
  }
}

template <typename T>
inline void mark_output(Tensor<T>& out) {
  out.set_requires_grad(true);
}

// ---------------------------------------------------------------------------
// elementwise binary

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  finite_guard(out, "add");
  if (tracing(a, b)) {
    mark_output(out);
    Tape<T>::current()->record([a, b, out]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      const std::int64_t m = out.numel();
      if (a.requires_grad()) {
        T* g = a.grad_acc();
        for (std::int64_t i = 0; i < m; ++i) g[i] += go[i];
      }
      if (b.requires_grad()) {
        T* g = b.grad_acc();
        for (std::int64_t i = 0; i < m; ++i) g[i] += go[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  finite_guard(out, "sub");
  if (tracing(a, b)) {
    mark_output(out);
    Tape<T>::current()->record([a, b, out]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      const std::int64_t m = out.numel();
      if (a.requires_grad()) {
        T* g = a.grad_acc();
        for (std::int64_t i = 0; i < m; ++i) g[i] += go[i];
      }
      if (b.requires_grad()) {
        T* g = b.grad_acc();
        for (std::int64_t i = 0; i < m; ++i) g[i] -= go[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  finite_guard(out, "mul");
  if (tracing(a, b)) {
    mark_output(out);
    Tape<T>::current()->record([a, b, out]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      const T* pa2 = a.data();
      const T* pb2 = b.data();
      const std::int64_t m = out.numel();
      if (a.requires_grad()) {
        T* g = a.grad_acc();
        for (std::int64_t i = 0; i < m; ++i) g[i] += go[i] * pb2[i];
      }
      if (b.requires_grad()) {
        T* g = b.grad_acc();
        for (std::int64_t i = 0; i < m; ++i) g[i] += go[i] * pa2[i];
      }
    });
  }
  return out;
}

// Multiply by a compile-side constant (not a tracked tensor).
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
  finite_guard(out, "scale");
  if (tracing(a)) {
    mark_output(out);
    Tape<T>::current()->record([a, out, c]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      T* g = a.grad_acc();
      const std::int64_t m = out.numel();
      for (std::int64_t i = 0; i < m; ++i) g[i] += go[i] * c;
    });
  }
  return out;
}

// Multiply every element by a learnable 1-element tensor.
template <typename T>
Tensor<T> smul(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.numel() != 1)
    throw ShapeError("smul: scalar operand has shape " + shape_str(s.shape()));
  Tensor<T> out(a.shape());
  const T sv = s.data()[0];
  const T* pa = a.data();
  T* po = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * sv;
  finite_guard(out, "smul");
  if (tracing(a, s)) {
    mark_output(out);
    Tape<T>::current()->record([a, s, out]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      const std::int64_t m = out.numel();
      if (a.requires_grad()) {
        T* g = a.grad_acc();
        const T sv2 = s.data()[0];
        for (std::int64_t i = 0; i < m; ++i) g[i] += go[i] * sv2;
      }
      if (s.requires_grad()) {
        const T* pa2 = a.data();
        T acc = T(0);
        for (std::int64_t i = 0; i < m; ++i) acc += go[i] * pa2[i];
        s.grad_acc()[0] += acc;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise unary

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = fast_exp(pa[i]);
  finite_guard(out, "exp");
  if (tracing(a)) {
    mark_output(out);
    Tape<T>::current()->record([a, out]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      const T* py = out.data();
      T* g = a.grad_acc();
      const std::int64_t m = out.numel();
      for (std::int64_t i = 0; i < m; ++i) g[i] += go[i] * py[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = std::sqrt(pa[i]);
  finite_guard(out, "sqrt");
  if (tracing(a)) {
    mark_output(out);
    Tape<T>::current()->record([a, out]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      const T* py = out.data();
      T* g = a.grad_acc();
      const std::int64_t m = out.numel();
      for (std::int64_t i = 0; i < m; ++i) {
        // Clamp keeps the derivative finite when the argument touches zero.
        g[i] += go[i] / std::max(T(2) * py[i], T(1e-12));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = std::abs(pa[i]);
  finite_guard(out, "abs");
  if (tracing(a)) {
    mark_output(out);
    Tape<T>::current()->record([a, out]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      const T* pa2 = a.data();
      T* g = a.grad_acc();
      const std::int64_t m = out.numel();
      for (std::int64_t i = 0; i < m; ++i) {
        const T s = (pa2[i] > T(0)) ? T(1) : ((pa2[i] < T(0)) ? T(-1) : T(0));
        g[i] += go[i] * s;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  Tensor<T> sig(a.shape());  // saved for backward
  const T* pa = a.data();
  T* po = out.data();
  T* ps = sig.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const T s = fsigmoid(pa[i]);
    ps[i] = s;
    po[i] = pa[i] * s;
  }
  finite_guard(out, "silu");
  if (tracing(a)) {
    mark_output(out);
    Tape<T>::current()->record([a, out, sig]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      const T* pa2 = a.data();
      const T* ps2 = sig.data();
      T* g = a.grad_acc();
      const std::int64_t m = out.numel();
      for (std::int64_t i = 0; i < m; ++i) {
        const T s = ps2[i];
        g[i] += go[i] * (s * (T(1) + pa2[i] * (T(1) - s)));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softplus_t(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  Tensor<T> sig(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  T* ps = sig.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    po[i] = softplus(pa[i]);
    ps[i] = fsigmoid(pa[i]);
  }
  finite_guard(out, "softplus");
  if (tracing(a)) {
    mark_output(out);
    Tape<T>::current()->record([a, out, sig]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      const T* ps2 = sig.data();
      T* g = a.grad_acc();
      const std::int64_t m = out.numel();
      for (std::int64_t i = 0; i < m; ++i) g[i] += go[i] * ps2[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  const T* pa = a.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) acc += pa[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  finite_guard(out, "sum");
  if (tracing(a)) {
    mark_output(out);
    Tape<T>::current()->record([a, out]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      T* g = a.grad_acc();
      const std::int64_t m = a.numel();
      for (std::int64_t i = 0; i < m; ++i) g[i] += go[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  T acc = T(0);
  const T* pa = a.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) acc += pa[i];
  Tensor<T> out = Tensor<T>::scalar(acc / T(n));
  finite_guard(out, "mean");
  if (tracing(a)) {
    mark_output(out);
    Tape<T>::current()->record([a, out]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      T* g = a.grad_acc();
      const std::int64_t m = a.numel();
      const T inv = T(1) / T(m);
      for (std::int64_t i = 0; i < m; ++i) g[i] += go[0] * inv;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// axis helpers

struct AxisSplit {
  std::int64_t outer, n, inner;
};

inline AxisSplit split_axis(const Shape& s, std::int64_t axis, const char* op) {
  if (axis < 0 || axis >= static_cast<std::int64_t>(s.size()))
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for " + shape_str(s));
  AxisSplit r{1, s[axis], 1};
  for (std::int64_t d = 0; d < axis; ++d) r.outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
  return r;
}

// ---------------------------------------------------------------------------
// softmax over an axis

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::int64_t axis) {
  const AxisSplit ax = split_axis(a.shape(), axis, "softmax");
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  for (std::int64_t o = 0; o < ax.outer; ++o) {
    for (std::int64_t i = 0; i < ax.inner; ++i) {
      const std::int64_t base = o * ax.n * ax.inner + i;
      T mx = pa[base];
      for (std::int64_t j = 1; j < ax.n; ++j)
        mx = std::max(mx, pa[base + j * ax.inner]);
      T z = T(0);
      for (std::int64_t j = 0; j < ax.n; ++j) {
        const T e = fast_exp(pa[base + j * ax.inner] - mx);
        po[base + j * ax.inner] = e;
        z += e;
      }
      const T inv = T(1) / z;
      for (std::int64_t j = 0; j < ax.n; ++j) po[base + j * ax.inner] *= inv;
    }
  }
  finite_guard(out, "softmax");
  if (tracing(a)) {
    mark_output(out);
    Tape<T>::current()->record([a, out, ax]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      const T* py = out.data();
      T* g = a.grad_acc();
      for (std::int64_t o = 0; o < ax.outer; ++o) {
        for (std::int64_t i = 0; i < ax.inner; ++i) {
          const std::int64_t base = o * ax.n * ax.inner + i;
          T dot = T(0);
          for (std::int64_t j = 0; j < ax.n; ++j)
            dot += go[base + j * ax.inner] * py[base + j * ax.inner];
          for (std::int64_t j = 0; j < ax.n; ++j) {
            const std::int64_t k = base + j * ax.inner;
            g[k] += py[k] * (go[k] - dot);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// layer norm over the last axis, eps added to the (biased) variance

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  if (x.ndim() < 1) throw ShapeError("layer_norm: rank-0 input");
  const std::int64_t C = x.shape().back();
  if (gamma.numel() != C || beta.numel() != C)
    throw ShapeError("layer_norm: affine params " + shape_str(gamma.shape()) +
                     "/" + shape_str(beta.shape()) + " for last axis " +
                     std::to_string(C));
  const std::int64_t M = x.numel() / C;
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  Tensor<T> istd({M});
  const T* px = x.data();
  const T* pg = gamma.data();
  const T* pb = beta.data();
  T* po = out.data();
  T* ph = xhat.data();
  T* pi = istd.data();
  for (std::int64_t m = 0; m < M; ++m) {
    const T* row = px + m * C;
    T mu = T(0);
    for (std::int64_t c = 0; c < C; ++c) mu += row[c];
    mu /= T(C);
    T var = T(0);
    for (std::int64_t c = 0; c < C; ++c) {
      const T d = row[c] - mu;
      var += d * d;
    }
    var /= T(C);
    const T inv = T(1) / std::sqrt(var + eps);
    pi[m] = inv;
    T* hrow = ph + m * C;
    T* orow = po + m * C;
    for (std::int64_t c = 0; c < C; ++c) {
      const T h = (row[c] - mu) * inv;
      hrow[c] = h;
      orow[c] = h * pg[c] + pb[c];
    }
  }
  finite_guard(out, "layer_norm");
  if (Tape<T>::current() != nullptr &&
      (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    mark_output(out);
    Tape<T>::current()->record([x, gamma, beta, out, xhat, istd, C,
                                M]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      const T* ph2 = xhat.data();
      const T* pi2 = istd.data();
      const T* pg2 = gamma.data();
      if (gamma.requires_grad()) {
        T* gg = gamma.grad_acc();
        for (std::int64_t m = 0; m < M; ++m)
          for (std::int64_t c = 0; c < C; ++c)
            gg[c] += go[m * C + c] * ph2[m * C + c];
      }
      if (beta.requires_grad()) {
        T* gb = beta.grad_acc();
        for (std::int64_t m = 0; m < M; ++m)
          for (std::int64_t c = 0; c < C; ++c) gb[c] += go[m * C + c];
      }
      if (x.requires_grad()) {
        T* gx = x.grad_acc();
        for (std::int64_t m = 0; m < M; ++m) {
          const T* grow = go + m * C;
          const T* hrow = ph2 + m * C;
          T s1 = T(0), s2 = T(0);
          for (std::int64_t c = 0; c < C; ++c) {
            const T dh = grow[c] * pg2[c];
            s1 += dh;
            s2 += dh * hrow[c];
          }
          s1 /= T(C);
          s2 /= T(C);
          const T inv = pi2[m];
          for (std::int64_t c = 0; c < C; ++c) {
            const T dh = grow[c] * pg2[c];
            gx[m * C + c] += inv * (dh - s1 - hrow[c] * s2);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// matmul / linear

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.size(1) != b.size(0))
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const std::int64_t M = a.size(0), K = a.size(1), N = b.size(1);
  Tensor<T> out({M, N});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::int64_t m = 0; m < M; ++m) {
    T* orow = po + m * N;
    for (std::int64_t k = 0; k < K; ++k) {
      const T av = pa[m * K + k];
      const T* brow = pb + k * N;
      for (std::int64_t n = 0; n < N; ++n) orow[n] += av * brow[n];
    }
  }
  finite_guard(out, "matmul");
  if (tracing(a, b)) {
    mark_output(out);
    Tape<T>::current()->record([a, b, out, M, K, N]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      if (a.requires_grad()) {
        T* ga = a.grad_acc();
        const T* pb2 = b.data();
        for (std::int64_t m = 0; m < M; ++m)
          for (std::int64_t k = 0; k < K; ++k) {
            T acc = T(0);
            const T* grow = go + m * N;
            const T* brow = pb2 + k * N;
            for (std::int64_t n = 0; n < N; ++n) acc += grow[n] * brow[n];
            ga[m * K + k] += acc;
          }
      }
      if (b.requires_grad()) {
        T* gb = b.grad_acc();
        const T* pa2 = a.data();
        for (std::int64_t m = 0; m < M; ++m)
          for (std::int64_t k = 0; k < K; ++k) {
            const T av = pa2[m * K + k];
            const T* grow = go + m * N;
            T* gbrow = gb + k * N;
            for (std::int64_t n = 0; n < N; ++n) gbrow[n] += av * grow[n];
          }
      }
    });
  }
  return out;
}

// x:[.., Ci] -> [.., Co]; bias optional (pass a default-constructed Tensor).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (w.ndim() != 2)
    throw ShapeError("linear: weight shape " + shape_str(w.shape()));
  const std::int64_t Ci = w.size(0), Co = w.size(1);
  if (x.ndim() < 1 || x.shape().back() != Ci)
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(w.shape()));
  if (b.defined() && b.numel() != Co)
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " for Co=" +
                     std::to_string(Co));
  const std::int64_t M = x.numel() / Ci;
  Shape oshape = x.shape();
  oshape.back() = Co;
  Tensor<T> out(oshape);
  const T* px = x.data();
  const T* pw = w.data();
  T* po = out.data();
#pragma omp parallel for schedule(static) if (effective_threads() > 1)
  for (std::int64_t m = 0; m < M; ++m) {
    T* orow = po + m * Co;
    if (b.defined()) {
      const T* pb = b.data();
      for (std::int64_t n = 0; n < Co; ++n) orow[n] = pb[n];
    }
    const T* xrow = px + m * Ci;
    for (std::int64_t k = 0; k < Ci; ++k) {
      const T xv = xrow[k];
      const T* wrow = pw + k * Co;
      for (std::int64_t n = 0; n < Co; ++n) orow[n] += xv * wrow[n];
    }
  }
  finite_guard(out, "linear");
  const bool rec = Tape<T>::current() != nullptr &&
                   (x.requires_grad() || w.requires_grad() ||
                    (b.defined() && b.requires_grad()));
  if (rec) {
    mark_output(out);
    Tape<T>::current()->record([x, w, b, out, M, Ci, Co]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      if (x.requires_grad()) {
        T* gx = x.grad_acc();
        const T* pw2 = w.data();
        for (std::int64_t m = 0; m < M; ++m) {
          const T* grow = go + m * Co;
          T* gxrow = gx + m * Ci;
          for (std::int64_t k = 0; k < Ci; ++k) {
            T acc = T(0);
            const T* wrow = pw2 + k * Co;
            for (std::int64_t n = 0; n < Co; ++n) acc += grow[n] * wrow[n];
            gxrow[k] += acc;
          }
        }
      }
      if (w.requires_grad()) {
        T* gw = w.grad_acc();
        const T* px2 = x.data();
        for (std::int64_t m = 0; m < M; ++m) {
          const T* grow = go + m * Co;
          const T* xrow = px2 + m * Ci;
          for (std::int64_t k = 0; k < Ci; ++k) {
            const T xv = xrow[k];
            T* gwrow = gw + k * Co;
            for (std::int64_t n = 0; n < Co; ++n) gwrow[n] += xv * grow[n];
          }
        }
      }
      if (b.defined() && b.requires_grad()) {
        T* gb = b.grad_acc();
        for (std::int64_t m = 0; m < M; ++m) {
          const T* grow = go + m * Co;
          for (std::int64_t n = 0; n < Co; ++n) gb[n] += grow[n];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  return linear(x, w, Tensor<T>());
}

// ---------------------------------------------------------------------------
// convolutions (HWC layout)

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::int64_t stride, std::int64_t pad) {
  if (x.ndim() != 3 || w.ndim() != 4 || x.size(2) != w.size(2))
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " vs kernel " +
                     shape_str(w.shape()));
  const std::int64_t H = x.size(0), W = x.size(1), Ci = x.size(2);
  const std::int64_t kh = w.size(0), kw = w.size(1), Co = w.size(3);
  if (b.defined() && b.numel() != Co)
    throw ShapeError("conv2d: bias " + shape_str(b.shape()));
  const std::int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho < 1 || Wo < 1)
    throw ShapeError("conv2d: kernel larger than padded input");
  Tensor<T> out({Ho, Wo, Co});
  const T* px = x.data();
  const T* pw = w.data();
  T* po = out.data();
#pragma omp parallel for schedule(static) if (effective_threads() > 1)
  for (std::int64_t ho = 0; ho < Ho; ++ho) {
    for (std::int64_t wo = 0; wo < Wo; ++wo) {
      T* ovec = po + (ho * Wo + wo) * Co;
      if (b.defined()) {
        const T* pb = b.data();
        for (std::int64_t n = 0; n < Co; ++n) ovec[n] = pb[n];
      }
      for (std::int64_t ky = 0; ky < kh; ++ky) {
        const std::int64_t iy = ho * stride - pad + ky;
        if (iy < 0 || iy >= H) continue;
        for (std::int64_t kx = 0; kx < kw; ++kx) {
          const std::int64_t ix = wo * stride - pad + kx;
          if (ix < 0 || ix >= W) continue;
          const T* xvec = px + (iy * W + ix) * Ci;
          const T* wmat = pw + (ky * kw + kx) * Ci * Co;
          for (std::int64_t c = 0; c < Ci; ++c) {
            const T xv = xvec[c];
            const T* wrow = wmat + c * Co;
            for (std::int64_t n = 0; n < Co; ++n) ovec[n] += xv * wrow[n];
          }
        }
      }
    }
  }
  finite_guard(out, "conv2d");
  const bool rec = Tape<T>::current() != nullptr &&
                   (x.requires_grad() || w.requires_grad() ||
                    (b.defined() && b.requires_grad()));
  if (rec) {
    mark_output(out);
    Tape<T>::current()->record(
        [x, w, b, out, H, W, Ci, kh, kw, Co, Ho, Wo, stride, pad]() mutable {
          const T* go = out.grad_data();
          if (!go) return;
          const T* px2 = x.data();
          const T* pw2 = w.data();
          T* gx = x.requires_grad() ? x.grad_acc() : nullptr;
          T* gw = w.requires_grad() ? w.grad_acc() : nullptr;
          T* gb = (b.defined() && b.requires_grad()) ? b.grad_acc() : nullptr;
          for (std::int64_t ho = 0; ho < Ho; ++ho) {
            for (std::int64_t wo = 0; wo < Wo; ++wo) {
              const T* gvec = go + (ho * Wo + wo) * Co;
              if (gb) {
                for (std::int64_t n = 0; n < Co; ++n) gb[n] += gvec[n];
              }
              for (std::int64_t ky = 0; ky < kh; ++ky) {
                const std::int64_t iy = ho * stride - pad + ky;
                if (iy < 0 || iy >= H) continue;
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                  const std::int64_t ix = wo * stride - pad + kx;
                  if (ix < 0 || ix >= W) continue;
                  const std::int64_t xoff = (iy * W + ix) * Ci;
                  const std::int64_t woff = (ky * kw + kx) * Ci * Co;
                  for (std::int64_t c = 0; c < Ci; ++c) {
                    if (gx) {
                      T acc = T(0);
                      const T* wrow = pw2 + woff + c * Co;
                      for (std::int64_t n = 0; n < Co; ++n)
                        acc += gvec[n] * wrow[n];
                      gx[xoff + c] += acc;
                    }
                    if (gw) {
                      const T xv = px2[xoff + c];
                      T* gwrow = gw + woff + c * Co;
                      for (std::int64_t n = 0; n < Co; ++n)
                        gwrow[n] += xv * gvec[n];
                    }
                  }
                }
              }
            }
          }
        });
  }
  return out;
}

template <typename T>
Tensor<T> dwconv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                   std::int64_t stride, std::int64_t pad) {
  if (x.ndim() != 3 || w.ndim() != 3 || x.size(2) != w.size(2))
    throw ShapeError("dwconv2d: input " + shape_str(x.shape()) +
                     " vs kernel " + shape_str(w.shape()));
  const std::int64_t H = x.size(0), W = x.size(1), C = x.size(2);
  const std::int64_t kh = w.size(0), kw = w.size(1);
  if (b.defined() && b.numel() != C)
    throw ShapeError("dwconv2d: bias " + shape_str(b.shape()));
  const std::int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor<T> out({Ho, Wo, C});
  const T* px = x.data();
  const T* pw = w.data();
  T* po = out.data();
#pragma omp parallel for schedule(static) if (effective_threads() > 1)
  for (std::int64_t ho = 0; ho < Ho; ++ho) {
    for (std::int64_t wo = 0; wo < Wo; ++wo) {
      T* ovec = po + (ho * Wo + wo) * C;
      if (b.defined()) {
        const T* pb = b.data();
        for (std::int64_t c = 0; c < C; ++c) ovec[c] = pb[c];
      }
      for (std::int64_t ky = 0; ky < kh; ++ky) {
        const std::int64_t iy = ho * stride - pad + ky;
        if (iy < 0 || iy >= H) continue;
        for (std::int64_t kx = 0; kx < kw; ++kx) {
          const std::int64_t ix = wo * stride - pad + kx;
          if (ix < 0 || ix >= W) continue;
          const T* xvec = px + (iy * W + ix) * C;
          const T* wvec = pw + (ky * kw + kx) * C;
          for (std::int64_t c = 0; c < C; ++c) ovec[c] += xvec[c] * wvec[c];
        }
      }
    }
  }
  finite_guard(out, "dwconv2d");
  const bool rec = Tape<T>::current() != nullptr &&
                   (x.requires_grad() || w.requires_grad() ||
                    (b.defined() && b.requires_grad()));
  if (rec) {
    mark_output(out);
    Tape<T>::current()->record(
        [x, w, b, out, H, W, C, kh, kw, Ho, Wo, stride, pad]() mutable {
          const T* go = out.grad_data();
          if (!go) return;
          const T* px2 = x.data();
          const T* pw2 = w.data();
          T* gx = x.requires_grad() ? x.grad_acc() : nullptr;
          T* gw = w.requires_grad() ? w.grad_acc() : nullptr;
          T* gb = (b.defined() && b.requires_grad()) ? b.grad_acc() : nullptr;
          for (std::int64_t ho = 0; ho < Ho; ++ho) {
            for (std::int64_t wo = 0; wo < Wo; ++wo) {
              const T* gvec = go + (ho * Wo + wo) * C;
              if (gb) {
                for (std::int64_t c = 0; c < C; ++c) gb[c] += gvec[c];
              }
              for (std::int64_t ky = 0; ky < kh; ++ky) {
                const std::int64_t iy = ho * stride - pad + ky;
                if (iy < 0 || iy >= H) continue;
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                  const std::int64_t ix = wo * stride - pad + kx;
                  if (ix < 0 || ix >= W) continue;
                  const std::int64_t xoff = (iy * W + ix) * C;
                  const std::int64_t woff = (ky * kw + kx) * C;
                  for (std::int64_t c = 0; c < C; ++c) {
                    if (gx) gx[xoff + c] += gvec[c] * pw2[woff + c];
                    if (gw) gw[woff + c] += gvec[c] * px2[xoff + c];
                  }
                }
              }
            }
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// pixel shuffle: channel block index (c, dy, dx) -> output (y*r+dy, x*r+dx, c)

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::int64_t r) {
  if (x.ndim() != 3 || x.size(2) % (r * r) != 0)
    throw ShapeError("pixel_shuffle: input " + shape_str(x.shape()) +
                     " with r=" + std::to_string(r));
  const std::int64_t H = x.size(0), W = x.size(1), Cf = x.size(2);
  const std::int64_t C = Cf / (r * r);
  Tensor<T> out({H * r, W * r, C});
  const T* px = x.data();
  T* po = out.data();
  const std::int64_t Wr = W * r;
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t xx = 0; xx < W; ++xx) {
      const T* xvec = px + (y * W + xx) * Cf;
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t dy = 0; dy < r; ++dy)
          for (std::int64_t dx = 0; dx < r; ++dx)
            po[((y * r + dy) * Wr + (xx * r + dx)) * C + c] =
                xvec[c * r * r + dy * r + dx];
    }
  finite_guard(out, "pixel_shuffle");
  if (tracing(x)) {
    mark_output(out);
    Tape<T>::current()->record([x, out, H, W, C, Cf, r, Wr]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      T* gx = x.grad_acc();
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t xx = 0; xx < W; ++xx) {
          T* gvec = gx + (y * W + xx) * Cf;
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t dy = 0; dy < r; ++dy)
              for (std::int64_t dx = 0; dx < r; ++dx)
                gvec[c * r * r + dy * r + dx] +=
                    go[((y * r + dy) * Wr + (xx * r + dx)) * C + c];
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::int64_t r) {
  if (x.ndim() != 3 || x.size(0) % r != 0 || x.size(1) % r != 0)
    throw ShapeError("pixel_unshuffle: input " + shape_str(x.shape()) +
                     " with r=" + std::to_string(r));
  const std::int64_t Hr = x.size(0), Wr = x.size(1), C = x.size(2);
  const std::int64_t H = Hr / r, W = Wr / r;
  const std::int64_t Cf = C * r * r;
  Tensor<T> out({H, W, Cf});
  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t xx = 0; xx < W; ++xx) {
      T* ovec = po + (y * W + xx) * Cf;
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t dy = 0; dy < r; ++dy)
          for (std::int64_t dx = 0; dx < r; ++dx)
            ovec[c * r * r + dy * r + dx] =
                px[((y * r + dy) * Wr + (xx * r + dx)) * C + c];
    }
  finite_guard(out, "pixel_unshuffle");
  if (tracing(x)) {
    mark_output(out);
    Tape<T>::current()->record([x, out, H, W, C, Cf, r, Wr]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      T* gx = x.grad_acc();
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t xx = 0; xx < W; ++xx) {
          const T* gvec = go + (y * W + xx) * Cf;
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t dy = 0; dy < r; ++dy)
              for (std::int64_t dx = 0; dx < r; ++dx)
                gx[((y * r + dy) * Wr + (xx * r + dx)) * C + c] +=
                    gvec[c * r * r + dy * r + dx];
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// movement ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " +
                     shape_str(shape));
  Tensor<T> out = Tensor<T>::from(std::move(shape), x.vec());
  if (tracing(x)) {
    mark_output(out);
    Tape<T>::current()->record([x, out]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      T* g = x.grad_acc();
      const std::int64_t m = x.numel();
      for (std::int64_t i = 0; i < m; ++i) g[i] += go[i];
    });
  }
  return out;
}

// out axis d = in axis perm[d]
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::int64_t>& perm) {
  const std::int64_t nd = x.ndim();
  if (static_cast<std::int64_t>(perm.size()) != nd)
    throw ShapeError("permute: perm rank " + std::to_string(perm.size()) +
                     " for " + shape_str(x.shape()));
  std::vector<char> seen(nd, 0);
  for (auto p : perm) {
    if (p < 0 || p >= nd || seen[p])
      throw ShapeError("permute: invalid axis list for " +
                       shape_str(x.shape()));
    seen[p] = 1;
  }
  Shape oshape(nd);
  for (std::int64_t d = 0; d < nd; ++d) oshape[d] = x.shape()[perm[d]];
  std::vector<std::int64_t> istride(nd, 1);
  for (std::int64_t d = nd - 2; d >= 0; --d)
    istride[d] = istride[d + 1] * x.shape()[d + 1];
  // stride of out axis d in the input
  std::vector<std::int64_t> map_stride(nd);
  for (std::int64_t d = 0; d < nd; ++d) map_stride[d] = istride[perm[d]];

  Tensor<T> out(oshape);
  const T* px = x.data();
  T* po = out.data();
  const std::int64_t n = out.numel();
  std::vector<std::int64_t> coord(nd, 0);
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t src = 0;
    for (std::int64_t d = 0; d < nd; ++d) src += coord[d] * map_stride[d];
    po[i] = px[src];
    for (std::int64_t d = nd - 1; d >= 0; --d) {
      if (++coord[d] < oshape[d]) break;
      coord[d] = 0;
    }
  }
  if (tracing(x)) {
    mark_output(out);
    Tape<T>::current()->record([x, out, oshape, map_stride, nd]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      T* g = x.grad_acc();
      const std::int64_t m = out.numel();
      std::vector<std::int64_t> coord(nd, 0);
      for (std::int64_t i = 0; i < m; ++i) {
        std::int64_t src = 0;
        for (std::int64_t d = 0; d < nd; ++d) src += coord[d] * map_stride[d];
        g[src] += go[i];
        for (std::int64_t d = nd - 1; d >= 0; --d) {
          if (++coord[d] < oshape[d]) break;
          coord[d] = 0;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::int64_t axis) {
  if (a.ndim() != b.ndim())
    throw ShapeError("concat: rank mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  for (std::int64_t d = 0; d < a.ndim(); ++d)
    if (d != axis && a.shape()[d] != b.shape()[d])
      throw ShapeError("concat: " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()) + " on axis " +
                       std::to_string(axis));
  const AxisSplit sa = split_axis(a.shape(), axis, "concat");
  const AxisSplit sb = split_axis(b.shape(), axis, "concat");
  Shape oshape = a.shape();
  oshape[axis] = sa.n + sb.n;
  Tensor<T> out(oshape);
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::int64_t arow = sa.n * sa.inner, brow = sb.n * sb.inner;
  const std::int64_t orow = arow + brow;
  for (std::int64_t o = 0; o < sa.outer; ++o) {
    std::copy(pa + o * arow, pa + (o + 1) * arow, po + o * orow);
    std::copy(pb + o * brow, pb + (o + 1) * brow, po + o * orow + arow);
  }
  if (tracing(a, b)) {
    mark_output(out);
    Tape<T>::current()->record([a, b, out, sa, arow, brow, orow]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      if (a.requires_grad()) {
        T* g = a.grad_acc();
        for (std::int64_t o = 0; o < sa.outer; ++o)
          for (std::int64_t i = 0; i < arow; ++i)
            g[o * arow + i] += go[o * orow + i];
      }
      if (b.requires_grad()) {
        T* g = b.grad_acc();
        for (std::int64_t o = 0; o < sa.outer; ++o)
          for (std::int64_t i = 0; i < brow; ++i)
            g[o * brow + i] += go[o * orow + arow + i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::int64_t axis, std::int64_t from,
                std::int64_t to) {
  const AxisSplit ax = split_axis(x.shape(), axis, "slice");
  if (from < 0 || to > ax.n || from >= to)
    throw ShapeError("slice: [" + std::to_string(from) + "," +
                     std::to_string(to) + ") on axis size " +
                     std::to_string(ax.n));
  Shape oshape = x.shape();
  oshape[axis] = to - from;
  Tensor<T> out(oshape);
  const T* px = x.data();
  T* po = out.data();
  const std::int64_t xrow = ax.n * ax.inner;
  const std::int64_t orow = (to - from) * ax.inner;
  for (std::int64_t o = 0; o < ax.outer; ++o)
    std::copy(px + o * xrow + from * ax.inner,
              px + o * xrow + to * ax.inner, po + o * orow);
  if (tracing(x)) {
    mark_output(out);
    Tape<T>::current()->record([x, out, ax, from, xrow, orow]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      T* g = x.grad_acc();
      for (std::int64_t o = 0; o < ax.outer; ++o)
        for (std::int64_t i = 0; i < orow; ++i)
          g[o * xrow + from * ax.inner + i] += go[o * orow + i];
    });
  }
  return out;
}

// out[k, ...] = x[idx[k], ...]; idx entries may repeat (backward scatter-adds).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x,
                      const std::vector<std::int64_t>& idx) {
  if (x.ndim() < 1) throw ShapeError("gather_rows: rank-0 input");
  const std::int64_t L = x.size(0);
  const std::int64_t row = x.numel() / L;
  for (auto j : idx)
    if (j < 0 || j >= L)
      throw ShapeError("gather_rows: index " + std::to_string(j) +
                       " out of range [0," + std::to_string(L) + ")");
  Shape oshape = x.shape();
  oshape[0] = static_cast<std::int64_t>(idx.size());
  Tensor<T> out(oshape);
  const T* px = x.data();
  T* po = out.data();
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy(px + idx[k] * row, px + (idx[k] + 1) * row, po + k * row);
  if (tracing(x)) {
    mark_output(out);
    Tape<T>::current()->record([x, out, idx, row]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      T* g = x.grad_acc();
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const T* grow = go + k * row;
        T* xrow = g + idx[k] * row;
        for (std::int64_t i = 0; i < row; ++i) xrow[i] += grow[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// dropout

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw DataError("dropout: rate " + std::to_string(rate) +
                    " outside [0,1)");
  if (!training || rate == 0.0) return x;
  Tensor<T> out(x.shape());
  Tensor<T> mask(x.shape());
  const T keep_scale = T(1.0 / (1.0 - rate));
  const T* px = x.data();
  T* po = out.data();
  T* pm = mask.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const T m = (rng.uniform(0.0, 1.0) >= rate) ? keep_scale : T(0);
    pm[i] = m;
    po[i] = px[i] * m;
  }
  finite_guard(out, "dropout");
  if (tracing(x)) {
    mark_output(out);
    Tape<T>::current()->record([x, out, mask]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      const T* pm2 = mask.data();
      T* g = x.grad_acc();
      const std::int64_t m = out.numel();
      for (std::int64_t i = 0; i < m; ++i) g[i] += go[i] * pm2[i];
    });
  }
  return out;
}

}  // namespace smamba
