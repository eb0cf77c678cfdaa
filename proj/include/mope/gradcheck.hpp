// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mope/tensor.hpp"

namespace mope {

/// Central-difference estimate (f(x+h) - f(x-h)) / 2h for the listed element
/// indices of `x`. `x` is perturbed in place and restored, so it may be a
/// parameter the closure reads through the model.
template <typename T>
std::vector<T> finite_diff_grad(const std::function<T()>& f, Tensor<T>& x, const std::vector<std::size_t>& indices,
                                T step) {
  std::vector<T> out;
  out.reserve(indices.size());
  auto& v = x.values();
  for (std::size_t i : indices) {
    const T orig = v[i];
    v[i] = orig + step;
    const T plus = f();
    v[i] = orig - step;
    const T minus = f();
    v[i] = orig;
    out.push_back((plus - minus) / (T(2) * step));
  }
  return out;
}

/// Dense version over every element of `x`; `f` receives `x` itself.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, Tensor<T>& x, T step) {
  std::vector<std::size_t> all(x.numel());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  auto g = finite_diff_grad<T>([&] { return f(x); }, x, all, step);
  return Tensor<T>(x.shape(), std::move(g));
}

/// Gradients whose magnitudes both fall under this floor are compared on an
/// absolute scale.
inline constexpr double kGradcheckFloor = 1e-6;

/// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = kGradcheckFloor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace mope
