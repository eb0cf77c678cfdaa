// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mope/errors.hpp"
#include "mope/rng.hpp"
#include "mope/tensor.hpp"

namespace mope {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool frozen = false;
};

/// Filled with truncated-normal draws.
template <typename T>
Tensor<T> init_truncated_normal(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.truncated_normal(stddev));
  return t;
}

/// Ordered list of named parameters. Names are unique; a tensor appears once.
template <typename T>
class ParameterRegistry {
 public:
  /// Returns a handle sharing storage with the registered tensor.
  Tensor<T> add(std::string name, Tensor<T> tensor, bool frozen) {
    if (!names_.insert(name).second) throw ContractError("duplicate parameter name: " + name);
    tensor.set_requires_grad(!frozen);
    params_.push_back({std::move(name), tensor, frozen});
    return tensor;
  }

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  const Parameter<T>* find(const std::string& name) const {
    return const_cast<ParameterRegistry*>(this)->find(name);
  }

  std::size_t count(bool frozen) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.frozen == frozen) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_set<std::string> names_;
};

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Decoupled weight decay Adam. Frozen parameters are never touched and
/// parameters without a gradient buffer are treated as having zero gradient.
template <typename T>
class AdamW {
 public:
  AdamW(ParameterRegistry<T>& registry, AdamWOptions opts) : registry_(&registry), opts_(opts) {}

  void step() {
    auto& params = registry_->all();
    if (m_.size() != params.size()) {
      m_.resize(params.size());
      v_.resize(params.size());
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (p.frozen) continue;
      auto& w = p.tensor.values();
      if (m_[i].size() != w.size()) {
        m_[i].assign(w.size(), 0.0);
        v_[i].assign(w.size(), 0.0);
      }
      const bool has = p.tensor.has_grad();
      const auto g = p.tensor.grad();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = has ? static_cast<double>(g[j]) : 0.0;
        m_[i][j] = opts_.beta1 * m_[i][j] + (1.0 - opts_.beta1) * gj;
        v_[i][j] = opts_.beta2 * v_[i][j] + (1.0 - opts_.beta2) * gj * gj;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        double wj = static_cast<double>(w[j]);
        wj -= opts_.lr * opts_.weight_decay * wj;
        wj -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
        w[j] = static_cast<T>(wj);
      }
    }
  }

  void set_lr(double lr) { opts_.lr = lr; }
  const AdamWOptions& options() const { return opts_; }
  long steps() const { return t_; }

 private:
  ParameterRegistry<T>* registry_;
  AdamWOptions opts_;
  long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace mope
