#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace vclab {

/// Sparse 0/1 linear map between flat index spaces: out[dst[i]] += in[src[i]].
/// Covers im2col/col2im, concat/slice, broadcast, axis reductions, transposes.
/// The transpose (swap src/dst) is its exact adjoint, which makes every plan
/// application differentiable to any order.
struct LinearPlan {
  Shape in_shape;
  Shape out_shape;
  std::vector<std::int32_t> src;
  std::vector<std::int32_t> dst;
  mutable std::shared_ptr<const LinearPlan> transposed_cache;

  long in_size() const { return shape_numel(in_shape); }
  long out_size() const { return shape_numel(out_shape); }
};

using PlanPtr = std::shared_ptr<const LinearPlan>;

inline PlanPtr plan_transposed(const PlanPtr& p) {
  if (!p->transposed_cache) {
    auto t = std::make_shared<LinearPlan>();
    t->in_shape = p->out_shape;
    t->out_shape = p->in_shape;
    t->src = p->dst;
    t->dst = p->src;
    t->transposed_cache = p;
    p->transposed_cache = t;
  }
  return p->transposed_cache;
}

namespace detail {
inline std::unordered_map<std::string, PlanPtr>& plan_cache() {
  static std::unordered_map<std::string, PlanPtr> cache;
  return cache;
}
}  // namespace detail

template <typename Make>
PlanPtr cached_plan(const std::string& key, Make&& make) {
  auto& cache = detail::plan_cache();
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  PlanPtr p = make();
  cache.emplace(key, p);
  return p;
}

inline std::string key_of(const Shape& s) {
  std::ostringstream os;
  for (long d : s) os << d << '.';
  return os.str();
}

inline std::vector<long> row_strides(const Shape& s) {
  std::vector<long> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

/// Sum over the given axes (dropped from the output shape).
inline PlanPtr plan_sum_axes(const Shape& in, std::vector<int> axes) {
  std::ostringstream key;
  key << "sum:" << key_of(in) << ':';
  for (int a : axes) key << a << ',';
  return cached_plan(key.str(), [&]() {
    std::vector<char> reduced(in.size(), 0);
    for (int a : axes) reduced.at(static_cast<std::size_t>(a)) = 1;
    Shape out;
    for (std::size_t i = 0; i < in.size(); ++i)
      if (!reduced[i]) out.push_back(in[i]);
    if (out.empty()) out.push_back(1);
    auto p = std::make_shared<LinearPlan>();
    p->in_shape = in;
    p->out_shape = out;
    long n = shape_numel(in);
    p->src.resize(static_cast<std::size_t>(n));
    p->dst.resize(static_cast<std::size_t>(n));
    auto in_st = row_strides(in);
    std::vector<long> out_st;
    {
      auto st = row_strides(out);
      std::size_t j = 0;
      for (std::size_t i = 0; i < in.size(); ++i)
        out_st.push_back(reduced[i] ? 0 : st[j++]);
    }
    for (long flat = 0; flat < n; ++flat) {
      long rem = flat, o = 0;
      for (std::size_t i = 0; i < in.size(); ++i) {
        long idx = rem / in_st[i];
        rem %= in_st[i];
        o += idx * out_st[i];
      }
      p->src[static_cast<std::size_t>(flat)] = static_cast<std::int32_t>(flat);
      p->dst[static_cast<std::size_t>(flat)] = static_cast<std::int32_t>(o);
    }
    return p;
  });
}

/// Broadcast a tensor whose shape equals `big` with `axes` removed back to
/// `big` (the adjoint of plan_sum_axes).
inline PlanPtr plan_broadcast_axes(const Shape& big, std::vector<int> axes) {
  return plan_transposed(plan_sum_axes(big, std::move(axes)));
}

/// Slice of length len starting at start along axis.
inline PlanPtr plan_slice(const Shape& in, int axis, long start, long len) {
  std::ostringstream key;
  key << "slice:" << key_of(in) << ':' << axis << ':' << start << ':' << len;
  return cached_plan(key.str(), [&]() {
    Shape out = in;
    out[static_cast<std::size_t>(axis)] = len;
    auto p = std::make_shared<LinearPlan>();
    p->in_shape = in;
    p->out_shape = out;
    auto in_st = row_strides(in);
    auto out_st = row_strides(out);
    long n = shape_numel(out);
    p->src.resize(static_cast<std::size_t>(n));
    p->dst.resize(static_cast<std::size_t>(n));
    for (long flat = 0; flat < n; ++flat) {
      long rem = flat, s = 0;
      for (std::size_t i = 0; i < out.size(); ++i) {
        long idx = rem / out_st[i];
        rem %= out_st[i];
        if (static_cast<int>(i) == axis) idx += start;
        s += idx * in_st[i];
      }
      p->src[static_cast<std::size_t>(flat)] = static_cast<std::int32_t>(s);
      p->dst[static_cast<std::size_t>(flat)] = static_cast<std::int32_t>(flat);
    }
    return p;
  });
}

/// Axis permutation.
inline PlanPtr plan_permute(const Shape& in, const std::vector<int>& perm) {
  std::ostringstream key;
  key << "perm:" << key_of(in) << ':';
  for (int a : perm) key << a << ',';
  return cached_plan(key.str(), [&]() {
    Shape out;
    for (int a : perm) out.push_back(in.at(static_cast<std::size_t>(a)));
    auto p = std::make_shared<LinearPlan>();
    p->in_shape = in;
    p->out_shape = out;
    auto in_st = row_strides(in);
    auto out_st = row_strides(out);
    long n = shape_numel(in);
    p->src.resize(static_cast<std::size_t>(n));
    p->dst.resize(static_cast<std::size_t>(n));
    for (long flat = 0; flat < n; ++flat) {
      long rem = flat, s = 0;
      for (std::size_t i = 0; i < out.size(); ++i) {
        long idx = rem / out_st[i];
        rem %= out_st[i];
        s += idx * in_st[static_cast<std::size_t>(perm[i])];
      }
      p->src[static_cast<std::size_t>(flat)] = static_cast<std::int32_t>(s);
      p->dst[static_cast<std::size_t>(flat)] = static_cast<std::int32_t>(flat);
    }
    return p;
  });
}

struct ConvGeom {
  long kh = 1, kw = 1;
  long sh = 1, sw = 1;
  long ph = 0, pw = 0;
};

inline long conv_out_size(long in, long k, long s, long p) { return (in + 2 * p - k) / s + 1; }
inline long deconv_out_size(long in, long k, long s, long p) { return (in - 1) * s - 2 * p + k; }

/// Patch extraction for batched images [B,C,H,W] -> [B, C*kh*kw, L] where
/// L = H'*W'. Padded taps are simply absent (zero contribution).
inline PlanPtr plan_im2col(long B, long C, long H, long W, const ConvGeom& g) {
  std::ostringstream key;
  key << "im2col:" << B << ',' << C << ',' << H << ',' << W << ':' << g.kh << ',' << g.kw << ','
      << g.sh << ',' << g.sw << ',' << g.ph << ',' << g.pw;
  return cached_plan(key.str(), [&]() {
    const long Ho = conv_out_size(H, g.kh, g.sh, g.ph);
    const long Wo = conv_out_size(W, g.kw, g.sw, g.pw);
    if (Ho <= 0 || Wo <= 0)
      throw std::invalid_argument("conv: non-positive output size for input " +
                                  std::to_string(H) + "x" + std::to_string(W));
    const long L = Ho * Wo;
    const long CK = C * g.kh * g.kw;
    auto p = std::make_shared<LinearPlan>();
    p->in_shape = {B, C, H, W};
    p->out_shape = {B, CK, L};
    p->src.reserve(static_cast<std::size_t>(B * CK * L));
    p->dst.reserve(static_cast<std::size_t>(B * CK * L));
    for (long b = 0; b < B; ++b) {
      const long in_base = b * C * H * W;
      const long out_base = b * CK * L;
      for (long c = 0; c < C; ++c)
        for (long ki = 0; ki < g.kh; ++ki)
          for (long kj = 0; kj < g.kw; ++kj) {
            const long row = ((c * g.kh + ki) * g.kw + kj);
            for (long oi = 0; oi < Ho; ++oi) {
              const long ii = oi * g.sh - g.ph + ki;
              if (ii < 0 || ii >= H) continue;
              for (long oj = 0; oj < Wo; ++oj) {
                const long jj = oj * g.sw - g.pw + kj;
                if (jj < 0 || jj >= W) continue;
                p->src.push_back(
                    static_cast<std::int32_t>(in_base + (c * H + ii) * W + jj));
                p->dst.push_back(
                    static_cast<std::int32_t>(out_base + row * L + oi * Wo + oj));
              }
            }
          }
    }
    return p;
  });
}

}  // namespace vclab
