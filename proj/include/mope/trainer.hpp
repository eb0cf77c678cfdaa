// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "mope/fusion.hpp"
#include "mope/keyvalue.hpp"
#include "mope/optim.hpp"
#include "mope/rng.hpp"
#include "mope/tasks.hpp"

namespace mope {

struct TrainOptions {
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  // Stops early once this many steps ran (0: no cap).
  std::size_t max_steps = 0;
  AdamWOptions adamw{.lr = 3e-3, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 0.0};
  // Seeds shuffling and routing noise.
  std::uint64_t seed = 5;

  void to_kv(KeyValues& kv) const {
    kv.set("train.epochs", epochs);
    kv.set("train.batch_size", batch_size);
    kv.set("train.max_steps", max_steps);
    kv.set("train.lr", adamw.lr);
    kv.set("train.beta1", adamw.beta1);
    kv.set("train.beta2", adamw.beta2);
    kv.set("train.eps", adamw.eps);
    kv.set("train.weight_decay", adamw.weight_decay);
    kv.set("train.seed", seed);
  }

  void from_kv(const KeyValues& kv) {
    kv.read("train.epochs", epochs);
    kv.read("train.batch_size", batch_size);
    kv.read("train.max_steps", max_steps);
    kv.read("train.lr", adamw.lr);
    kv.read("train.beta1", adamw.beta1);
    kv.read("train.beta2", adamw.beta2);
    kv.read("train.eps", adamw.eps);
    kv.read("train.weight_decay", adamw.weight_decay);
    kv.read("train.seed", seed);
    if (batch_size == 0) throw ConfigError("key 'train.batch_size': must be >= 1");
    if (adamw.lr <= 0.0) throw ConfigError("key 'train.lr': must be > 0");
  }
};

struct StepLog {
  std::size_t step = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

struct TrainLog {
  std::vector<StepLog> steps;
};

/// Mini-batch AdamW over the training split with a seeded per-epoch shuffle.
/// The importance weight comes from the model config. `on_step` (optional)
/// sees every step as it completes.
template <typename T>
TrainLog train(FusionModel<T>& model, const Split& train_split, const TrainOptions& opts,
               const std::function<void(const StepLog&)>& on_step = nullptr) {
  if (train_split.size() == 0) throw InputError("empty training split");
  AdamW<T> optimizer(model.registry(), opts.adamw);
  Rng rng(opts.seed);
  Rng noise = rng.fork();
  TrainLog log;
  std::vector<std::size_t> order(train_split.size());
  std::size_t step = 0;
  const std::size_t positions = model.config().comp.max_seq_len;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      const std::size_t end = std::min(order.size(), start + opts.batch_size);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      auto batch = make_batch<T>(train_split, rows, positions);
      StepLog s;
      s.step = step;
      s.lr = opts.adamw.lr;
      s.loss = train_step(model, batch, optimizer, model.config().lambda_imp, noise);
      if (on_step) on_step(s);
      log.steps.push_back(std::move(s));
      ++step;
      if (opts.max_steps && step >= opts.max_steps) return log;
    }
  }
  return log;
}

}  // namespace mope
