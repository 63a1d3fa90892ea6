#pragma once

#include <cmath>
#include <cstring>
#include <limits>

#include "plan.hpp"
#include "tensor.hpp"

namespace vclab {

// ---------------------------------------------------------------------------
// Elementwise primitives

template <typename Real>
inline void check_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  check_same_shape(a, b, "add");
  std::vector<Real> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return Tensor<Real>::op_result(
      "add", a.shape(), std::move(out), {a, b},
      [](const Tensor<Real>& g, const std::vector<char>&) {
        return std::vector<Tensor<Real>>{g, g};
      });
}

namespace detail {
template <typename Real>
Tensor<Real> add_plain(const Tensor<Real>& a, const Tensor<Real>& b) {
  return vclab::add(a, b);
}
}  // namespace detail

template <typename Real>
Tensor<Real> neg(const Tensor<Real>& x) {
  std::vector<Real> out(x.values());
  for (auto& v : out) v = -v;
  return Tensor<Real>::op_result("neg", x.shape(), std::move(out), {x},
                                 [](const Tensor<Real>& g, const std::vector<char>&) {
                                   return std::vector<Tensor<Real>>{neg(g)};
                                 });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  check_same_shape(a, b, "sub");
  std::vector<Real> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return Tensor<Real>::op_result(
      "sub", a.shape(), std::move(out), {a, b},
      [](const Tensor<Real>& g, const std::vector<char>& needed) {
        std::vector<Tensor<Real>> r(2);
        if (needed[0]) r[0] = g;
        if (needed[1]) r[1] = neg(g);
        return r;
      });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  check_same_shape(a, b, "mul");
  std::vector<Real> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return Tensor<Real>::op_result(
      "mul", a.shape(), std::move(out), {a, b},
      [a, b](const Tensor<Real>& g, const std::vector<char>& needed) {
        std::vector<Tensor<Real>> r(2);
        if (needed[0]) r[0] = mul(g, b);
        if (needed[1]) r[1] = mul(g, a);
        return r;
      });
}

template <typename Real>
Tensor<Real> scalar_mul(const Tensor<Real>& x, Real c) {
  std::vector<Real> out(x.values());
  for (auto& v : out) v *= c;
  return Tensor<Real>::op_result("scalar_mul", x.shape(), std::move(out), {x},
                                 [c](const Tensor<Real>& g, const std::vector<char>&) {
                                   return std::vector<Tensor<Real>>{scalar_mul(g, c)};
                                 });
}

template <typename Real>
Tensor<Real> scalar_add(const Tensor<Real>& x, Real c) {
  std::vector<Real> out(x.values());
  for (auto& v : out) v += c;
  return Tensor<Real>::op_result("scalar_add", x.shape(), std::move(out), {x},
                                 [](const Tensor<Real>& g, const std::vector<char>&) {
                                   return std::vector<Tensor<Real>>{g};
                                 });
}

namespace detail {

/// Untracked elementwise combine of the incoming gradient with captured
/// forward values; the fast path for vjps when no second-order graph is
/// being recorded.
template <typename Real, typename F>
Tensor<Real> fused_vjp(const Tensor<Real>& g, const std::vector<Real>& aux, F&& f) {
  std::vector<Real> out(g.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(out[i], aux[i]);
  return Tensor<Real>::from_values(g.shape(), std::move(out));
}

template <typename Real>
std::shared_ptr<std::vector<Real>> shared_values(std::vector<Real>&& v) {
  return std::make_shared<std::vector<Real>>(std::move(v));
}

}  // namespace detail

template <typename Real>
Tensor<Real> reciprocal(const Tensor<Real>& x) {
  std::vector<Real> out(x.values());
  for (auto& v : out) v = Real(1) / v;
  auto ybuf = detail::shared_values(std::move(out));
  check_finite(*ybuf, "reciprocal");
  return Tensor<Real>::op_view(
      "reciprocal", x.shape(), ybuf, {x},
      [x, ybuf](const Tensor<Real>& g, const std::vector<char>&) {
        if (grad_recording_flag()) {
          Tensor<Real> r = reciprocal(x);
          return std::vector<Tensor<Real>>{neg(mul(g, mul(r, r)))};
        }
        return std::vector<Tensor<Real>>{
            detail::fused_vjp(g, *ybuf, [](Real gi, Real y) { return -gi * y * y; })};
      });
}

template <typename Real>
Tensor<Real> div(const Tensor<Real>& a, const Tensor<Real>& b) {
  return mul(a, reciprocal(b));
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  std::vector<Real> out(x.values());
  for (auto& v : out) {
    // split by sign to avoid overflow in exp
    if (v >= Real(0))
      v = Real(1) / (Real(1) + std::exp(-v));
    else {
      Real e = std::exp(v);
      v = e / (Real(1) + e);
    }
  }
  auto ybuf = detail::shared_values(std::move(out));
  check_finite(*ybuf, "sigmoid");
  return Tensor<Real>::op_view(
      "sigmoid", x.shape(), ybuf, {x},
      [x, ybuf](const Tensor<Real>& g, const std::vector<char>&) {
        if (grad_recording_flag()) {
          Tensor<Real> s = sigmoid(x);
          Tensor<Real> one_minus = scalar_add(neg(s), Real(1));
          return std::vector<Tensor<Real>>{mul(g, mul(s, one_minus))};
        }
        return std::vector<Tensor<Real>>{detail::fused_vjp(
            g, *ybuf, [](Real gi, Real y) { return gi * y * (Real(1) - y); })};
      });
}

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& x) {
  std::vector<Real> out(x.values());
  for (auto& v : out) v = std::exp(v);
  auto ybuf = detail::shared_values(std::move(out));
  check_finite(*ybuf, "exp");
  return Tensor<Real>::op_view(
      "exp", x.shape(), ybuf, {x},
      [x, ybuf](const Tensor<Real>& g, const std::vector<char>&) {
        if (grad_recording_flag()) return std::vector<Tensor<Real>>{mul(g, exp(x))};
        return std::vector<Tensor<Real>>{
            detail::fused_vjp(g, *ybuf, [](Real gi, Real y) { return gi * y; })};
      });
}

template <typename Real>
Tensor<Real> log(const Tensor<Real>& x) {
  std::vector<Real> out(x.values());
  for (auto& v : out) v = std::log(v);
  return Tensor<Real>::op_result(
      "log", x.shape(), std::move(out), {x},
      [x](const Tensor<Real>& g, const std::vector<char>&) {
        if (grad_recording_flag()) return std::vector<Tensor<Real>>{mul(g, reciprocal(x))};
        return std::vector<Tensor<Real>>{
            detail::fused_vjp(g, x.values(), [](Real gi, Real xv) { return gi / xv; })};
      });
}

template <typename Real>
Tensor<Real> sqrt(const Tensor<Real>& x) {
  std::vector<Real> out(x.values());
  for (auto& v : out) v = std::sqrt(v);
  auto ybuf = detail::shared_values(std::move(out));
  check_finite(*ybuf, "sqrt");
  return Tensor<Real>::op_view(
      "sqrt", x.shape(), ybuf, {x},
      [x, ybuf](const Tensor<Real>& g, const std::vector<char>&) {
        if (grad_recording_flag()) {
          Tensor<Real> r = sqrt(x);
          return std::vector<Tensor<Real>>{scalar_mul(mul(g, reciprocal(r)), Real(0.5))};
        }
        return std::vector<Tensor<Real>>{
            detail::fused_vjp(g, *ybuf, [](Real gi, Real y) { return gi * Real(0.5) / y; })};
      });
}

/// Gradient is zero almost everywhere; treated as a constant factor.
template <typename Real>
Tensor<Real> sign(const Tensor<Real>& x) {
  std::vector<Real> out(x.values());
  for (auto& v : out) v = (v > Real(0)) ? Real(1) : (v < Real(0) ? Real(-1) : Real(0));
  return Tensor<Real>::op_result("sign", x.shape(), std::move(out), {x},
                                 [shape = x.shape()](const Tensor<Real>&,
                                                     const std::vector<char>&) {
                                   return std::vector<Tensor<Real>>{Tensor<Real>::zeros(shape)};
                                 });
}

/// |x|^p for p >= 0 (p = 1 is plain abs, p = 2 is square).
template <typename Real>
Tensor<Real> abs_pow(const Tensor<Real>& x, Real p) {
  std::vector<Real> out(x.values());
  if (p == Real(1)) {
    for (auto& v : out) v = std::abs(v);
  } else if (p == Real(2)) {
    for (auto& v : out) v = v * v;
  } else if (p == Real(0)) {
    for (auto& v : out) v = Real(1);
  } else {
    for (auto& v : out) v = std::pow(std::abs(v), p);
  }
  return Tensor<Real>::op_result(
      "abs_pow", x.shape(), std::move(out), {x},
      [x, p](const Tensor<Real>& g, const std::vector<char>&) {
        if (p == Real(0))
          return std::vector<Tensor<Real>>{Tensor<Real>::zeros(x.shape())};
        if (grad_recording_flag()) {
          // d|x|^p/dx = p * sign(x) * |x|^(p-1)
          Tensor<Real> d = scalar_mul(mul(sign(x), abs_pow(x, p - Real(1))), p);
          return std::vector<Tensor<Real>>{mul(g, d)};
        }
        auto dpow = [p](Real xv) -> Real {
          if (p == Real(1)) return xv > 0 ? Real(1) : (xv < 0 ? Real(-1) : Real(0));
          if (p == Real(2)) return Real(2) * xv;
          const Real s = xv > 0 ? Real(1) : (xv < 0 ? Real(-1) : Real(0));
          return p * s * std::pow(std::abs(xv), p - Real(1));
        };
        return std::vector<Tensor<Real>>{
            detail::fused_vjp(g, x.values(), [&](Real gi, Real xv) { return gi * dpow(xv); })};
      });
}

/// Clamp to [lo, hi]; gradient passes where the input already lay inside.
template <typename Real>
Tensor<Real> clamp(const Tensor<Real>& x, Real lo, Real hi) {
  std::vector<Real> out(x.values());
  for (auto& v : out) v = std::min(hi, std::max(lo, v));
  return Tensor<Real>::op_result(
      "clamp", x.shape(), std::move(out), {x},
      [x, lo, hi](const Tensor<Real>& g, const std::vector<char>&) {
        if (grad_recording_flag()) {
          std::vector<Real> mask(x.values().size());
          const auto& xv = x.values();
          for (std::size_t i = 0; i < mask.size(); ++i)
            mask[i] = (xv[i] >= lo && xv[i] <= hi) ? Real(1) : Real(0);
          Tensor<Real> m = Tensor<Real>::from_values(x.shape(), std::move(mask));
          return std::vector<Tensor<Real>>{mul(g, m)};
        }
        return std::vector<Tensor<Real>>{detail::fused_vjp(
            g, x.values(),
            [lo, hi](Real gi, Real xv) { return (xv >= lo && xv <= hi) ? gi : Real(0); })};
      });
}

template <typename Real>
long count_outside(const Tensor<Real>& x, Real lo, Real hi) {
  long c = 0;
  for (const Real v : x.values())
    if (v < lo || v > hi) ++c;
  return c;
}

// ---------------------------------------------------------------------------
// Linear-map application (gather/scatter-add over a sparse 0/1 plan)

template <typename Real>
Tensor<Real> apply_plan(const Tensor<Real>& x, const PlanPtr& plan) {
  if (x.size() != plan->in_size())
    throw std::invalid_argument("apply_plan: input size " + std::to_string(x.size()) +
                                " does not match plan input " + shape_str(plan->in_shape));
  std::vector<Real> out(static_cast<std::size_t>(plan->out_size()), Real(0));
  const Real* in = x.values().data();
  const std::int32_t* src = plan->src.data();
  const std::int32_t* dst = plan->dst.data();
  const std::size_t n = plan->src.size();
  for (std::size_t i = 0; i < n; ++i) out[static_cast<std::size_t>(dst[i])] += in[src[i]];
  return Tensor<Real>::op_result(
      "linmap", plan->out_shape, std::move(out), {x},
      [plan](const Tensor<Real>& g, const std::vector<char>&) {
        return std::vector<Tensor<Real>>{apply_plan(g, plan_transposed(plan))};
      });
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                                " changes element count");
  std::shared_ptr<std::vector<Real>> buf(x.node()->values);
  Shape old = x.shape();
  return Tensor<Real>::op_view("reshape", std::move(shape), std::move(buf), {x},
                               [old](const Tensor<Real>& g, const std::vector<char>&) {
                                 return std::vector<Tensor<Real>>{reshape(g, old)};
                               });
}

template <typename Real>
Tensor<Real> slice(const Tensor<Real>& x, int axis, long start, long len) {
  return apply_plan(x, plan_slice(x.shape(), axis, start, len));
}

template <typename Real>
Tensor<Real> sum_axes(const Tensor<Real>& x, std::vector<int> axes) {
  return apply_plan(x, plan_sum_axes(x.shape(), std::move(axes)));
}

template <typename Real>
Tensor<Real> broadcast_axes(const Tensor<Real>& x, const Shape& big, std::vector<int> axes) {
  return apply_plan(x, plan_broadcast_axes(big, std::move(axes)));
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  std::vector<int> axes(x.shape().size());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return sum_axes(x, axes);
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x) {
  return scalar_mul(sum(x), Real(1) / static_cast<Real>(x.size()));
}

/// Concatenation along an axis.
template <typename Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Shape out_shape = parts[0].shape();
  long total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    s[static_cast<std::size_t>(axis)] = 0;
    Shape ref = out_shape;
    ref[static_cast<std::size_t>(axis)] = 0;
    if (s != ref) throw std::invalid_argument("concat: incompatible shapes");
    total += p.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;

  long outer = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  long inner = 1;
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < out_shape.size(); ++i)
    inner *= out_shape[i];

  std::vector<Real> out(static_cast<std::size_t>(shape_numel(out_shape)));
  long offset = 0;
  std::vector<long> offsets;
  std::vector<long> lens;
  for (const auto& p : parts) {
    const long len = p.dim(axis);
    offsets.push_back(offset);
    lens.push_back(len);
    const Real* in = p.values().data();
    for (long o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * total + offset) * inner, in + o * len * inner,
                  static_cast<std::size_t>(len * inner) * sizeof(Real));
    offset += len;
  }
  return Tensor<Real>::op_result(
      "concat", out_shape, std::move(out), parts,
      [out_shape, axis, offsets, lens](const Tensor<Real>& g, const std::vector<char>& needed) {
        std::vector<Tensor<Real>> r(offsets.size());
        for (std::size_t i = 0; i < offsets.size(); ++i)
          if (needed[i]) r[i] = apply_plan(g, plan_slice(out_shape, axis, offsets[i], lens[i]));
        return r;
      });
}

/// Gather arbitrary flat indices (uncached dynamic plan).
template <typename Real>
Tensor<Real> take(const Tensor<Real>& x, const std::vector<long>& flat_indices, Shape out_shape) {
  auto p = std::make_shared<LinearPlan>();
  p->in_shape = x.shape();
  p->out_shape = std::move(out_shape);
  p->src.reserve(flat_indices.size());
  p->dst.reserve(flat_indices.size());
  for (std::size_t i = 0; i < flat_indices.size(); ++i) {
    if (flat_indices[i] < 0 || flat_indices[i] >= x.size())
      throw std::invalid_argument("take: index out of range");
    p->src.push_back(static_cast<std::int32_t>(flat_indices[i]));
    p->dst.push_back(static_cast<std::int32_t>(i));
  }
  if (shape_numel(p->out_shape) != static_cast<long>(flat_indices.size()))
    throw std::invalid_argument("take: out shape mismatch");
  return apply_plan(x, PlanPtr(p));
}

// ---------------------------------------------------------------------------
// Matrix contractions. Together with plan transposes these are closed under
// differentiation, so convolutions built on them support double backward.

template <typename Real>
Tensor<Real> transpose2(const Tensor<Real>& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose2: rank-2 tensor expected");
  return apply_plan(a, plan_permute(a.shape(), {1, 0}));
}

template <typename Real>
Tensor<Real> mat_gx(const Tensor<Real>& gt, const Tensor<Real>& x);

/// Y[b,m,n] = sum_k A[m,k] X[b,k,n]
template <typename Real>
Tensor<Real> mat_ax(const Tensor<Real>& a, const Tensor<Real>& x) {
  if (a.rank() != 2 || x.rank() != 3)
    throw std::invalid_argument("mat_ax: expected A[m,k], X[b,k,n]");
  const long m = a.dim(0), k = a.dim(1);
  const long B = x.dim(0), n = x.dim(2);
  if (x.dim(1) != k)
    throw std::invalid_argument("mat_ax: contraction mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(x.shape()));
  std::vector<Real> out(static_cast<std::size_t>(B * m * n), Real(0));
  const Real* A = a.values().data();
  const Real* X = x.values().data();
  // four output rows share each streamed input row
  for (long b = 0; b < B; ++b) {
    const Real* xb = X + b * k * n;
    Real* yb = out.data() + b * m * n;
    long mm = 0;
    for (; mm + 4 <= m; mm += 4) {
      const Real* a0 = A + mm * k;
      const Real* a1 = a0 + k;
      const Real* a2 = a1 + k;
      const Real* a3 = a2 + k;
      Real* y0 = yb + mm * n;
      Real* y1 = y0 + n;
      Real* y2 = y1 + n;
      Real* y3 = y2 + n;
      for (long kk = 0; kk < k; ++kk) {
        const Real v0 = a0[kk], v1 = a1[kk], v2 = a2[kk], v3 = a3[kk];
        const Real* xrow = xb + kk * n;
        for (long j = 0; j < n; ++j) {
          const Real xv = xrow[j];
          y0[j] += v0 * xv;
          y1[j] += v1 * xv;
          y2[j] += v2 * xv;
          y3[j] += v3 * xv;
        }
      }
    }
    for (; mm < m; ++mm) {
      const Real* arow = A + mm * k;
      Real* yrow = yb + mm * n;
      for (long kk = 0; kk < k; ++kk) {
        const Real av = arow[kk];
        const Real* xrow = xb + kk * n;
        for (long j = 0; j < n; ++j) yrow[j] += av * xrow[j];
      }
    }
  }
  return Tensor<Real>::op_result(
      "mat_ax", Shape{B, m, n}, std::move(out), {a, x},
      [a, x](const Tensor<Real>& g, const std::vector<char>& needed) {
        std::vector<Tensor<Real>> r(2);
        if (needed[0]) r[0] = mat_gx(g, x);
        if (needed[1]) r[1] = mat_ax(transpose2(a), g);
        return r;
      });
}

/// Y[m,k] = sum_{b,n} G[b,m,n] X[b,k,n]
template <typename Real>
Tensor<Real> mat_gx(const Tensor<Real>& gt, const Tensor<Real>& x) {
  if (gt.rank() != 3 || x.rank() != 3)
    throw std::invalid_argument("mat_gx: expected G[b,m,n], X[b,k,n]");
  const long B = gt.dim(0), m = gt.dim(1), n = gt.dim(2);
  const long k = x.dim(1);
  if (x.dim(0) != B || x.dim(2) != n)
    throw std::invalid_argument("mat_gx: contraction mismatch " + shape_str(gt.shape()) + " vs " +
                                shape_str(x.shape()));
  std::vector<Real> out(static_cast<std::size_t>(m * k), Real(0));
  const Real* G = gt.values().data();
  const Real* X = x.values().data();
  for (long b = 0; b < B; ++b) {
    const Real* gb = G + b * m * n;
    const Real* xb = X + b * k * n;
    for (long mm = 0; mm < m; ++mm) {
      const Real* grow = gb + mm * n;
      Real* orow = out.data() + mm * k;
      for (long kk = 0; kk < k; ++kk) {
        const Real* xrow = xb + kk * n;
        Real a0 = 0, a1 = 0, a2 = 0, a3 = 0;
        long j = 0;
        for (; j + 4 <= n; j += 4) {
          a0 += grow[j] * xrow[j];
          a1 += grow[j + 1] * xrow[j + 1];
          a2 += grow[j + 2] * xrow[j + 2];
          a3 += grow[j + 3] * xrow[j + 3];
        }
        Real acc = (a0 + a1) + (a2 + a3);
        for (; j < n; ++j) acc += grow[j] * xrow[j];
        orow[kk] += acc;
      }
    }
  }
  return Tensor<Real>::op_result(
      "mat_gx", Shape{m, k}, std::move(out), {gt, x},
      [gt, x](const Tensor<Real>& g, const std::vector<char>& needed) {
        std::vector<Tensor<Real>> r(2);
        if (needed[0]) r[0] = mat_ax(g, x);
        if (needed[1]) r[1] = mat_ax(transpose2(g), gt);
        return r;
      });
}

// ---------------------------------------------------------------------------
// Convolution composites

/// Cross-correlation on [B,C,H,W] with weight [O,C,kh,kw].
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& w, const ConvGeom& geom) {
  if (x.rank() != 4 || w.rank() != 4) throw std::invalid_argument("conv2d: rank-4 inputs expected");
  const long B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (w.dim(1) != C)
    throw std::invalid_argument("conv2d: channel mismatch, input has " + std::to_string(C) +
                                ", kernel expects " + std::to_string(w.dim(1)));
  if (w.dim(2) != geom.kh || w.dim(3) != geom.kw)
    throw std::invalid_argument("conv2d: kernel shape disagrees with geometry");
  const long O = w.dim(0);
  const long Ho = conv_out_size(H, geom.kh, geom.sh, geom.ph);
  const long Wo = conv_out_size(W, geom.kw, geom.sw, geom.pw);
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: non-positive output size");
  Tensor<Real> cols = apply_plan(x, plan_im2col(B, C, H, W, geom));
  Tensor<Real> wm = reshape(w, {O, C * geom.kh * geom.kw});
  Tensor<Real> y = mat_ax(wm, cols);  // [B, O, Ho*Wo]
  return reshape(y, {B, O, Ho, Wo});
}

/// Transposed convolution on [B,C,H',W'] with weight [C,O,kh,kw]; inverts the
/// shape map of the matching forward conv.
template <typename Real>
Tensor<Real> conv_transpose2d(const Tensor<Real>& x, const Tensor<Real>& w, const ConvGeom& geom) {
  if (x.rank() != 4 || w.rank() != 4)
    throw std::invalid_argument("conv_transpose2d: rank-4 inputs expected");
  const long B = x.dim(0), C = x.dim(1), Hi = x.dim(2), Wi = x.dim(3);
  if (w.dim(0) != C)
    throw std::invalid_argument("conv_transpose2d: channel mismatch, input has " +
                                std::to_string(C) + ", kernel expects " + std::to_string(w.dim(0)));
  const long O = w.dim(1);
  const long H = deconv_out_size(Hi, geom.kh, geom.sh, geom.ph);
  const long W = deconv_out_size(Wi, geom.kw, geom.sw, geom.pw);
  if (H <= 0 || W <= 0) throw std::invalid_argument("conv_transpose2d: non-positive output size");
  Tensor<Real> wm = transpose2(reshape(w, {C, O * geom.kh * geom.kw}));
  Tensor<Real> xm = reshape(x, {B, C, Hi * Wi});
  Tensor<Real> cols = mat_ax(wm, xm);  // [B, O*kh*kw, Hi*Wi]
  Tensor<Real> y = apply_plan(cols, plan_transposed(plan_im2col(B, O, H, W, geom)));
  return y;  // [B,O,H,W]
}

template <typename Real>
Tensor<Real> add_channel_bias(const Tensor<Real>& y, const Tensor<Real>& bias) {
  std::vector<int> axes;
  for (int i = 0; i < y.rank(); ++i)
    if (i != 1) axes.push_back(i);
  return add(y, broadcast_axes(bias, y.shape(), axes));
}

/// Unified entry mirroring the library contract: rank 1 or 2 spatial conv,
/// optionally transposed. Leading batch/channel axes are implied when absent.
template <typename Real>
Tensor<Real> conv(const Tensor<Real>& input, const Tensor<Real>& kernel,
                  const std::vector<long>& stride, const std::vector<long>& padding,
                  bool transposed, int rank) {
  if (rank != 1 && rank != 2) throw std::invalid_argument("conv: rank must be 1 or 2");
  const int spatial = rank;
  if (input.rank() > spatial + 2 || kernel.rank() > spatial + 2)
    throw std::invalid_argument("conv: too many axes for the requested rank");
  auto promote = [&](const Tensor<Real>& t, int want) {
    Shape s = t.shape();
    while (static_cast<int>(s.size()) < want) s.insert(s.begin(), 1);
    return reshape(t, s);
  };
  // inputs become [B,C,H,W]; rank-1 data maps to H=1
  Tensor<Real> x = promote(input, spatial + 2);
  Tensor<Real> w = promote(kernel, spatial + 2);
  if (rank == 1) {
    Shape xs = x.shape();
    Shape ws = w.shape();
    x = reshape(x, {xs[0], xs[1], 1, xs[2]});
    w = reshape(w, {ws[0], ws[1], 1, ws[2]});
  }
  ConvGeom g;
  if (rank == 1) {
    g.kh = 1;
    g.kw = w.dim(3);
    g.sw = stride.at(0);
    g.pw = padding.at(0);
  } else {
    g.kh = w.dim(2);
    g.kw = w.dim(3);
    g.sh = stride.at(0);
    g.sw = stride.at(1);
    g.ph = padding.at(0);
    g.pw = padding.at(1);
  }
  Tensor<Real> y = transposed ? conv_transpose2d(x, w, g) : conv2d(x, w, g);
  // demote to the input's rank pattern
  Shape ys = y.shape();
  Shape out;
  int extra = (spatial + 2) - input.rank();
  if (rank == 1) ys = {ys[0], ys[1], ys[3]};
  for (std::size_t i = static_cast<std::size_t>(extra); i < ys.size(); ++i) out.push_back(ys[i]);
  return reshape(y, out);
}

// ---------------------------------------------------------------------------
// Normalization / gating / softmax composites

/// Batch normalization with batch statistics (the only mode: batch statistics
/// are used at train and test time alike). `reduce_axes` define the group
/// structure; gamma/beta have the group shape. eps = 1e-5.
template <typename Real>
Tensor<Real> batch_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        std::vector<int> reduce_axes, Real eps = Real(1e-5)) {
  PlanPtr psum = plan_sum_axes(x.shape(), reduce_axes);
  const long groups = shape_numel(psum->out_shape);
  const long n = x.size() / groups;
  if (n < 2)
    throw std::invalid_argument(
        "batch_norm: need at least 2 elements per normalization group, got " + std::to_string(n));
  if (gamma.size() != groups || beta.size() != groups)
    throw std::invalid_argument("batch_norm: scale/shift size must equal group count " +
                                std::to_string(groups));
  const Real inv_n = Real(1) / static_cast<Real>(n);
  Tensor<Real> mu = scalar_mul(apply_plan(x, psum), inv_n);
  Tensor<Real> mu_b = apply_plan(mu, plan_transposed(psum));
  Tensor<Real> xc = sub(x, mu_b);
  Tensor<Real> var = scalar_mul(apply_plan(mul(xc, xc), psum), inv_n);
  Tensor<Real> inv_std = reciprocal(sqrt(scalar_add(var, eps)));
  Tensor<Real> xn = mul(xc, apply_plan(inv_std, plan_transposed(psum)));
  Tensor<Real> scale_b = apply_plan(reshape(gamma, psum->out_shape), plan_transposed(psum));
  Tensor<Real> shift_b = apply_plan(reshape(beta, psum->out_shape), plan_transposed(psum));
  return add(mul(xn, scale_b), shift_b);
}

/// Gated linear unit: split along `axis`, out = first ⊙ sigmoid(second).
template <typename Real>
Tensor<Real> glu(const Tensor<Real>& x, int axis) {
  const long c = x.dim(axis);
  if (c % 2 != 0)
    throw std::invalid_argument("glu: channel dimension must be even, got " + std::to_string(c));
  Tensor<Real> a = slice(x, axis, 0, c / 2);
  Tensor<Real> b = slice(x, axis, c / 2, c / 2);
  return mul(a, sigmoid(b));
}

/// Max over one axis, returned as a plain (untracked) tensor.
template <typename Real>
Tensor<Real> reduce_max_values(const Tensor<Real>& x, int axis) {
  PlanPtr psum = plan_sum_axes(x.shape(), {axis});
  const long groups = shape_numel(psum->out_shape);
  std::vector<Real> out(static_cast<std::size_t>(groups),
                        -std::numeric_limits<Real>::infinity());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < psum->src.size(); ++i) {
    Real& o = out[static_cast<std::size_t>(psum->dst[i])];
    o = std::max(o, xv[static_cast<std::size_t>(psum->src[i])]);
  }
  return Tensor<Real>::from_values(psum->out_shape, std::move(out));
}

template <typename Real>
Tensor<Real> log_softmax(const Tensor<Real>& x, int axis) {
  Tensor<Real> m = reduce_max_values(x, axis);  // constant shift, gradient-free
  Tensor<Real> z = sub(x, broadcast_axes(m, x.shape(), {axis}));
  Tensor<Real> lse = log(sum_axes(exp(z), {axis}));
  return sub(z, broadcast_axes(lse, x.shape(), {axis}));
}

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, int axis) {
  return exp(log_softmax(x, axis));
}

}  // namespace vclab
