// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "mope/errors.hpp"
#include "mope/fusion.hpp"
#include "mope/gradcheck.hpp"
#include "mope/rng.hpp"

namespace mope {

struct GradSample {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradSample> samples;
  double max_rel_error = 0.0;

  bool passed(double tolerance) const { return max_rel_error <= tolerance; }
};

/// Compares backprop gradients of the full objective with central
/// differences for roughly `target` elements spread evenly over every
/// trainable tensor. Routing noise must be off for the comparison to hold.
template <typename T>
GradcheckReport gradcheck_model(FusionModel<T>& model, const FusionBatch<T>& batch, std::size_t target, Rng& rng,
                                T step) {
  if (model.config().prompts.noise_std != 0.0) throw ConfigError("key 'prompt.noise_std': must be 0 for gradcheck");
  const double lambda = model.config().lambda_imp;
  auto loss = [&] {
    Rng unused(0);
    auto fwd = model.forward(batch, true, unused);
    return objective(model, fwd, batch, lambda).first.item();
  };
  model.registry().zero_grad();
  {
    Rng unused(0);
    auto fwd = model.forward(batch, true, unused);
    backward(objective(model, fwd, batch, lambda).first);
  }
  std::vector<Parameter<T>*> trainable;
  for (auto& p : model.registry().all())
    if (!p.frozen) trainable.push_back(&p);
  if (trainable.empty()) throw ContractError("model has no trainable parameters");
  const std::size_t per_tensor = (target + trainable.size() - 1) / trainable.size();
  GradcheckReport report;
  for (auto* p : trainable) {
    const std::size_t n = p->tensor.numel();
    std::vector<std::size_t> picks;
    if (n <= per_tensor) {
      for (std::size_t i = 0; i < n; ++i) picks.push_back(i);
    } else {
      while (picks.size() < per_tensor) {
        const auto i = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(n)));
        if (std::find(picks.begin(), picks.end(), i) == picks.end()) picks.push_back(i);
      }
    }
    std::vector<T> analytic;
    for (std::size_t i : picks) analytic.push_back(p->tensor.has_grad() ? p->tensor.grad()[i] : T(0));
    const auto numeric = finite_diff_grad<T>(loss, p->tensor, picks, step);
    for (std::size_t j = 0; j < picks.size(); ++j) {
      GradSample s{p->name, picks[j], static_cast<double>(analytic[j]), static_cast<double>(numeric[j]), 0.0};
      s.rel_error = relative_error(s.analytic, s.numeric);
      report.max_rel_error = std::max(report.max_rel_error, s.rel_error);
      report.samples.push_back(std::move(s));
    }
  }
  return report;
}

}  // namespace mope
