// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mope/errors.hpp"
#include "mope/tensor.hpp"

// Differentiable operators over `Tensor<T>`. Every reduction runs in a fixed
// sequential order so results are bit-reproducible for a given build.

namespace mope {

namespace kernels {

// C[n,p] += A[n,m] * B[m,p]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t n, std::size_t m, std::size_t p) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    T* c0 = c + i * p;
    T* c1 = c0 + p;
    T* c2 = c1 + p;
    T* c3 = c2 + p;
    const T* a0 = a + i * m;
    for (std::size_t k = 0; k < m; ++k) {
      const T v0 = a0[k], v1 = a0[m + k], v2 = a0[2 * m + k], v3 = a0[3 * m + k];
      const T* bk = b + k * p;
      for (std::size_t j = 0; j < p; ++j) {
        const T bv = bk[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < n; ++i) {
    T* ci = c + i * p;
    const T* ai = a + i * m;
    for (std::size_t k = 0; k < m; ++k) {
      const T av = ai[k];
      const T* bk = b + k * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += av * bk[j];
    }
  }
}

// C[n,m] += A[n,p] * B[m,p]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t n, std::size_t p, std::size_t m) {
  std::vector<T> bt(p * m);
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t j = 0; j < p; ++j) bt[j * m + k] = b[k * p + j];
  gemm_nn(a, bt.data(), c, n, p, m);
}

// C[m,p] += A[n,m]^T * B[n,p]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t n, std::size_t m, std::size_t p) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* ai = a + i * m;
    const T* bi = b + i * p;
    for (std::size_t k = 0; k < m; ++k) {
      const T av = ai[k];
      T* ck = c + k * p;
      for (std::size_t j = 0; j < p; ++j) ck[j] += av * bi[j];
    }
  }
}

}  // namespace kernels

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

// True when `suffix` equals the trailing dimensions of `full`.
inline bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

inline std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t r = 1;
  for (std::size_t i = from; i < to; ++i) r *= s[i];
  return r;
}

}  // namespace detail

/// Matrix product. `b` may be a 2-D weight shared across the leading
/// dimensions of `a`, or both operands may be 3-D with a matching batch.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const std::string err = "matmul shape mismatch: " + shape_str(as) + " x " + shape_str(bs);
  if (as.size() >= 2 && bs.size() == 2) {
    detail::require(as.back() == bs[0], err);
    const std::size_t m = bs[0], p = bs[1], n = a.numel() / m;
    Shape out_shape = as;
    out_shape.back() = p;
    std::vector<T> out(n * p, T(0));
    kernels::gemm_nn(a.data().data(), b.data().data(), out.data(), n, m, p);
    return Tensor<T>::make_result(std::move(out_shape), std::move(out), {a, b},
                                  [n, m, p](Node<T>& self) {
                                    const T* g = self.grad.data();
                                    if (auto* ga = detail::grad_sink(self, 0))
                                      kernels::gemm_nt(g, self.parents[1]->data.data(), ga->data(), n, p, m);
                                    if (auto* gb = detail::grad_sink(self, 1))
                                      kernels::gemm_tn(self.parents[0]->data.data(), g, gb->data(), n, m, p);
                                  });
  }
  if (as.size() == 3 && bs.size() == 3) {
    detail::require(as[0] == bs[0] && as[2] == bs[1], err);
    const std::size_t batch = as[0], n = as[1], m = as[2], p = bs[2];
    std::vector<T> out(batch * n * p, T(0));
    for (std::size_t i = 0; i < batch; ++i)
      kernels::gemm_nn(a.data().data() + i * n * m, b.data().data() + i * m * p,
                       out.data() + i * n * p, n, m, p);
    return Tensor<T>::make_result(
        Shape{batch, n, p}, std::move(out), {a, b}, [batch, n, m, p](Node<T>& self) {
          const T* g = self.grad.data();
          const T* ad = self.parents[0]->data.data();
          const T* bd = self.parents[1]->data.data();
          auto* ga = detail::grad_sink(self, 0);
          auto* gb = detail::grad_sink(self, 1);
          for (std::size_t i = 0; i < batch; ++i) {
            if (ga) kernels::gemm_nt(g + i * n * p, bd + i * m * p, ga->data() + i * n * m, n, p, m);
            if (gb) kernels::gemm_tn(ad + i * n * m, g + i * n * p, gb->data() + i * m * p, n, m, p);
          }
        });
  }
  throw DimensionError(err);
}

/// Swaps the last two dimensions.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  detail::require(x.ndim() >= 2, "transpose needs >= 2 dims, got " + shape_str(x.shape()));
  Shape s = x.shape();
  const std::size_t r = s[s.size() - 2], c = s.back(), batch = x.numel() / (r * c);
  std::swap(s[s.size() - 2], s.back());
  std::vector<T> out(x.numel());
  const T* in = x.data().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = in[b * r * c + i * c + j];
  return Tensor<T>::make_result(std::move(s), std::move(out), {x}, [batch, r, c](Node<T>& self) {
    auto* gx = detail::grad_sink(self, 0);
    const T* g = self.grad.data();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gx)[b * r * c + i * c + j] += g[b * r * c + j * r + i];
  });
}

namespace detail {

enum class BinOp { kAdd, kSub, kMul, kDiv };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinOp op, const char* name) {
  if (!is_suffix(a.shape(), b.shape()) && b.numel() != 1) {
    throw DimensionError(std::string(name) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()) + " (only leading-dimension or scalar broadcast is supported)");
  }
  const std::size_t n = a.numel(), inner = b.numel(), outer = inner ? n / inner : 0;
  std::vector<T> out(n);
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  auto forward = [&](auto f) {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < inner; ++j) out[o * inner + j] = f(ad[o * inner + j], bd[j]);
  };
  switch (op) {
    case BinOp::kAdd: forward([](T x, T y) { return x + y; }); break;
    case BinOp::kSub: forward([](T x, T y) { return x - y; }); break;
    case BinOp::kMul: forward([](T x, T y) { return x * y; }); break;
    case BinOp::kDiv: forward([](T x, T y) { return x / y; }); break;
  }
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [outer, inner, op](Node<T>& self) {
    const T* g = self.grad.data();
    const T* ad = self.parents[0]->data.data();
    const T* bd = self.parents[1]->data.data();
    if (auto* ga = grad_sink(self, 0)) {
      T* gd = ga->data();
      for (std::size_t o = 0; o < outer; ++o) {
        const T* go = g + o * inner;
        T* d = gd + o * inner;
        switch (op) {
          case BinOp::kAdd:
          case BinOp::kSub:
            for (std::size_t j = 0; j < inner; ++j) d[j] += go[j];
            break;
          case BinOp::kMul:
            for (std::size_t j = 0; j < inner; ++j) d[j] += go[j] * bd[j];
            break;
          case BinOp::kDiv:
            for (std::size_t j = 0; j < inner; ++j) d[j] += go[j] / bd[j];
            break;
        }
      }
    }
    if (auto* gb = grad_sink(self, 1)) {
      T* gd = gb->data();
      for (std::size_t o = 0; o < outer; ++o) {
        const T* go = g + o * inner;
        const T* ao = ad + o * inner;
        switch (op) {
          case BinOp::kAdd:
            for (std::size_t j = 0; j < inner; ++j) gd[j] += go[j];
            break;
          case BinOp::kSub:
            for (std::size_t j = 0; j < inner; ++j) gd[j] -= go[j];
            break;
          case BinOp::kMul:
            for (std::size_t j = 0; j < inner; ++j) gd[j] += go[j] * ao[j];
            break;
          case BinOp::kDiv:
            for (std::size_t j = 0; j < inner; ++j) gd[j] -= go[j] * ao[j] / (bd[j] * bd[j]);
            break;
        }
      }
    }
  });
}

}  // namespace detail

// `b` may omit leading dimensions of `a`, or be a single element; it is then
// broadcast.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(a, b, detail::BinOp::kAdd, "add"); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(a, b, detail::BinOp::kSub, "sub"); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(a, b, detail::BinOp::kMul, "mul"); }
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(a, b, detail::BinOp::kDiv, "div"); }

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.values());
  for (auto& v : out) v *= factor;
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [factor](Node<T>& self) {
    auto* gx = detail::grad_sink(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * factor;
  });
}

/// Exact Gaussian-error linear unit: x * Phi(x) with Phi the standard normal
/// CDF evaluated through erf.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  const std::size_t n = x.numel();
  std::vector<T> out(n), cdf(n);
  const T* in = x.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    cdf[i] = T(0.5) * (T(1) + std::erf(in[i] * T(kInvSqrt2)));
    out[i] = in[i] * cdf[i];
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [cdf = std::move(cdf)](Node<T>& self) {
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    auto* gx = detail::grad_sink(self, 0);
    const T* in = self.parents[0]->data.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T v = in[i];
      const T pdf = T(kInvSqrt2Pi) * std::exp(T(-0.5) * v * v);
      (*gx)[i] += self.grad[i] * (cdf[i] + v * pdf);
    }
  });
}

/// Softmax along `axis` with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& z, std::size_t axis) {
  detail::require(axis < z.ndim(), "softmax axis " + std::to_string(axis) + " out of range for " +
                                        shape_str(z.shape()));
  const auto& s = z.shape();
  const std::size_t outer = detail::prod(s, 0, axis), n = s[axis], inner = detail::prod(s, axis + 1, s.size());
  const T* in = z.data().data();
  std::vector<T> out(z.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < inner; ++c) {
      const std::size_t base = o * n * inner + c;
      T mx = in[base];
      for (std::size_t i = 0; i < n; ++i) {
        const T v = in[base + i * inner];
        if (std::isnan(v)) throw NumericError("softmax input contains NaN");
        mx = std::max(mx, v);
      }
      T sum = T(0);
      for (std::size_t i = 0; i < n; ++i) {
        const T e = std::exp(in[base + i * inner] - mx);
        out[base + i * inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= sum;
    }
  }
  return Tensor<T>::make_result(s, std::move(out), {z}, [outer, n, inner](Node<T>& self) {
    auto* gz = detail::grad_sink(self, 0);
    const T* y = self.data.data();
    const T* g = self.grad.data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t c = 0; c < inner; ++c) {
        const std::size_t base = o * n * inner + c;
        T dot = T(0);
        for (std::size_t i = 0; i < n; ++i) dot += g[base + i * inner] * y[base + i * inner];
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t at = base + i * inner;
          (*gz)[at] += y[at] * (g[at] - dot);
        }
      }
    }
  });
}

/// Normalizes over the last axis, then applies `gain` and `bias` (both of
/// the last-axis length).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  const std::size_t d = x.shape().back();
  detail::require(d >= 1 && gain.numel() == d && bias.numel() == d,
                  "layer_norm: input " + shape_str(x.shape()) + " with gain " + shape_str(gain.shape()) +
                      " and bias " + shape_str(bias.shape()));
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  const T* in = x.data().data();
  const T* gn = gain.data().data();
  const T* bs = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = in + r * d;
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mean) * rs;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gn[j] + bs[j];
    }
  }
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const T* g = self.grad.data();
        const T* gn = self.parents[1]->data.data();
        auto* gx = detail::grad_sink(self, 0);
        auto* gg = detail::grad_sink(self, 1);
        auto* gb = detail::grad_sink(self, 2);
        std::vector<T> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g + r * d;
          const T* hr = xhat.data() + r * d;
          if (gg)
            for (std::size_t j = 0; j < d; ++j) (*gg)[j] += gr[j] * hr[j];
          if (gb)
            for (std::size_t j = 0; j < d; ++j) (*gb)[j] += gr[j];
          if (!gx) continue;
          T mean_dh = T(0), mean_dhh = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = gr[j] * gn[j];
            mean_dh += dxhat[j];
            mean_dhh += dxhat[j] * hr[j];
          }
          mean_dh /= T(d);
          mean_dhh /= T(d);
          for (std::size_t j = 0; j < d; ++j)
            (*gx)[r * d + j] += rstd[r] * (dxhat[j] - mean_dh - hr[j] * mean_dhh);
        }
      });
}

/// Same values, cut from the tape.
template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
  return Tensor<T>(x.shape(), x.values());
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(numel_of(shape) == x.numel(),
                  "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  return Tensor<T>::make_result(std::move(shape), x.values(), {x}, [](Node<T>& self) {
    auto* gx = detail::grad_sink(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
  });
}

namespace detail {

// Visits every output offset in order with the matching input offset.
template <typename F>
void for_each_permuted(const Shape& out_shape, const std::vector<std::size_t>& strides, F&& f) {
  const std::size_t rank = out_shape.size();
  if (rank == 0) {
    f(0, 0);
    return;
  }
  const std::size_t inner = out_shape.back(), step = strides.back();
  const std::size_t rows = numel_of(out_shape) / (inner ? inner : 1);
  if (inner == 0) return;
  std::vector<std::size_t> idx(rank, 0);
  std::size_t base = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t o = r * inner;
    for (std::size_t j = 0; j < inner; ++j) f(o + j, base + j * step);
    for (std::size_t i = rank - 1; i-- > 0;) {
      base += strides[i];
      if (++idx[i] < out_shape[i]) break;
      base -= strides[i] * out_shape[i];
      idx[i] = 0;
    }
  }
}

}  // namespace detail

/// Generic axis permutation: output dimension i is input dimension perm[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const Shape& s = x.shape();
  detail::require(perm.size() == s.size(), "permute rank mismatch for " + shape_str(s));
  const std::size_t rank = s.size();
  Shape out_shape(rank);
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  std::vector<std::size_t> strides(rank);
  std::vector<bool> seen(rank, false);
  for (std::size_t i = 0; i < rank; ++i) {
    detail::require(perm[i] < rank && !seen[perm[i]], "invalid permutation for " + shape_str(s));
    seen[perm[i]] = true;
    out_shape[i] = s[perm[i]];
    strides[i] = in_strides[perm[i]];
  }
  std::vector<T> out(x.numel());
  const T* in = x.data().data();
  detail::for_each_permuted(out_shape, strides, [&](std::size_t o, std::size_t src) { out[o] = in[src]; });
  Shape shape = out_shape;
  return Tensor<T>::make_result(std::move(shape), std::move(out), {x},
                                [out_shape, strides](Node<T>& self) {
                                  auto* gx = detail::grad_sink(self, 0);
                                  const T* g = self.grad.data();
                                  detail::for_each_permuted(out_shape, strides, [&](std::size_t o, std::size_t src) {
                                    (*gx)[src] += g[o];
                                  });
                                });
}

/// Concatenates along `axis`; all other dimensions must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  detail::require(!parts.empty(), "concat of zero tensors");
  Shape out_shape = parts.front().shape();
  detail::require(axis < out_shape.size(), "concat axis out of range for " + shape_str(out_shape));
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = out_shape;
    detail::require(a.size() == b.size(), "concat rank mismatch: " + shape_str(a) + " vs " + shape_str(b));
    a[axis] = b[axis] = 0;
    detail::require(a == b, "concat shape mismatch: " + shape_str(p.shape()) + " vs " +
                                shape_str(parts.front().shape()));
    total += p.shape()[axis];
  }
  out_shape[axis] = total;
  const std::size_t outer = detail::prod(out_shape, 0, axis);
  const std::size_t inner = detail::prod(out_shape, axis + 1, out_shape.size());
  std::vector<T> out(numel_of(out_shape));
  std::vector<std::size_t> widths;
  widths.reserve(parts.size());
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[axis] * inner;
    widths.push_back(w);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * w, w, out.data() + o * total * inner + offset);
    offset += w;
  }
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), parts,
                                [outer, row = total * inner, widths](Node<T>& self) {
                                  std::size_t offset = 0;
                                  for (std::size_t k = 0; k < widths.size(); ++k) {
                                    if (auto* gp = detail::grad_sink(self, k)) {
                                      for (std::size_t o = 0; o < outer; ++o)
                                        for (std::size_t j = 0; j < widths[k]; ++j)
                                          (*gp)[o * widths[k] + j] += self.grad[o * row + offset + j];
                                    }
                                    offset += widths[k];
                                  }
                                });
}

/// Slice [start, start+len) along `axis`.
template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t len) {
  const Shape& s = x.shape();
  detail::require(axis < s.size() && start + len <= s[axis],
                  "narrow [" + std::to_string(start) + ", +" + std::to_string(len) + ") on axis " +
                      std::to_string(axis) + " of " + shape_str(s));
  Shape out_shape = s;
  out_shape[axis] = len;
  const std::size_t outer = detail::prod(s, 0, axis), inner = detail::prod(s, axis + 1, s.size());
  const std::size_t in_row = s[axis] * inner, out_row = len * inner, off = start * inner;
  std::vector<T> out(outer * out_row);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data().data() + o * in_row + off, out_row, out.data() + o * out_row);
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {x},
                                [outer, in_row, out_row, off](Node<T>& self) {
                                  auto* gx = detail::grad_sink(self, 0);
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t j = 0; j < out_row; ++j)
                                      (*gx)[o * in_row + off + j] += self.grad[o * out_row + j];
                                });
}

/// Repeats `x` along a new leading batch dimension of size `batch`.
template <typename T>
Tensor<T> expand_batch(const Tensor<T>& x, std::size_t batch) {
  Shape s = x.shape();
  s.insert(s.begin(), batch);
  const std::size_t n = x.numel();
  std::vector<T> out(batch * n);
  for (std::size_t b = 0; b < batch; ++b) std::copy_n(x.data().data(), n, out.data() + b * n);
  return Tensor<T>::make_result(std::move(s), std::move(out), {x}, [batch, n](Node<T>& self) {
    auto* gx = detail::grad_sink(self, 0);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < n; ++i) (*gx)[i] += self.grad[b * n + i];
  });
}

/// Row lookup: `table` is [V, d], `ids` holds `rows` indices; output is
/// `out_prefix + [d]`.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids, Shape out_prefix) {
  detail::require(table.ndim() == 2, "embedding table must be 2-D, got " + shape_str(table.shape()));
  detail::require(numel_of(out_prefix) == ids.size(), "embedding index count does not match output shape");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw InputError("token id " + std::to_string(ids[i]) + " outside vocabulary of size " + std::to_string(vocab));
    rows[i] = static_cast<std::size_t>(ids[i]);
    std::copy_n(table.data().data() + rows[i] * d, d, out.data() + i * d);
  }
  out_prefix.push_back(d);
  return Tensor<T>::make_result(std::move(out_prefix), std::move(out), {table},
                                [d, rows = std::move(rows)](Node<T>& self) {
                                  auto* gt = detail::grad_sink(self, 0);
                                  for (std::size_t i = 0; i < rows.size(); ++i)
                                    for (std::size_t j = 0; j < d; ++j) (*gt)[rows[i] * d + j] += self.grad[i * d + j];
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  return Tensor<T>::make_result(Shape{1}, std::vector<T>{acc}, {x}, [](Node<T>& self) {
    auto* gx = detail::grad_sink(self, 0);
    for (auto& g : *gx) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.numel()));
}

/// Sum over `axis`, removing it.
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  const Shape& s = x.shape();
  detail::require(axis < s.size(), "sum axis out of range for " + shape_str(s));
  const std::size_t outer = detail::prod(s, 0, axis), n = s[axis], inner = detail::prod(s, axis + 1, s.size());
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<T> out(outer * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < inner; ++c) out[o * inner + c] += x.data()[(o * n + i) * inner + c];
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {x}, [outer, n, inner](Node<T>& self) {
    auto* gx = detail::grad_sink(self, 0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < inner; ++c) (*gx)[(o * n + i) * inner + c] += self.grad[o * inner + c];
  });
}

/// Mean softmax cross-entropy of `logits` [B, C] against integer labels.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  detail::require(logits.ndim() == 2 && logits.dim(0) == labels.size(),
                  "cross_entropy: logits " + shape_str(logits.shape()) + " vs " + std::to_string(labels.size()) +
                      " labels");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<T> probs(logits.numel());
  T loss = T(0);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* z = logits.data().data() + b * classes;
    T mx = z[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, z[c]);
    T s = T(0);
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(z[c] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(z[c] - lse);
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw InputError("label out of range");
    loss += lse - z[y];
  }
  loss /= T(batch);
  if (!std::isfinite(loss)) throw NumericError("cross-entropy is not finite");
  std::vector<int> ys(labels.begin(), labels.end());
  return Tensor<T>::make_result(Shape{1}, std::vector<T>{loss}, {logits},
                                [batch, classes, probs = std::move(probs), ys = std::move(ys)](Node<T>& self) {
                                  auto* gz = detail::grad_sink(self, 0);
                                  const T g = self.grad[0] / T(batch);
                                  for (std::size_t b = 0; b < batch; ++b)
                                    for (std::size_t c = 0; c < classes; ++c) {
                                      const T target = static_cast<std::size_t>(ys[b]) == c ? T(1) : T(0);
                                      (*gz)[b * classes + c] += g * (probs[b * classes + c] - target);
                                    }
                                });
}

/// Mean binary cross-entropy with logits over every element.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets) {
  detail::require(logits.numel() == targets.size(),
                  "bce_with_logits: logits " + shape_str(logits.shape()) + " vs " + std::to_string(targets.size()) +
                      " targets");
  const std::size_t n = logits.numel();
  T loss = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T z = logits.data()[i];
    // max(z,0) - z*t + log(1 + exp(-|z|))
    loss += std::max(z, T(0)) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
  }
  loss /= T(n);
  std::vector<T> ts(targets.begin(), targets.end());
  return Tensor<T>::make_result(Shape{1}, std::vector<T>{loss}, {logits}, [n, ts = std::move(ts)](Node<T>& self) {
    auto* gz = detail::grad_sink(self, 0);
    const T* z = self.parents[0]->data.data();
    const T g = self.grad[0] / T(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T sig = T(1) / (T(1) + std::exp(-z[i]));
      (*gz)[i] += g * (sig - ts[i]);
    }
  });
}

}  // namespace mope
