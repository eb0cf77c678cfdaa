// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <numeric>
#include <vector>

#include "mope/fusion.hpp"
#include "mope/tasks.hpp"

namespace mope::testing {

// A model small enough for finite differences over all of it.
inline FusionConfig tiny_model() {
  FusionConfig c;
  c.main = {.num_layers = 2, .hidden_dim = 8, .num_heads = 2, .ffn_dim = 16, .vocab_size = 8,
            .feature_dim = 0, .max_seq_len = 4, .seed = 3, .init_std = 0.3};
  c.comp = {.num_layers = 1, .hidden_dim = 6, .num_heads = 2, .ffn_dim = 12, .vocab_size = 0,
            .feature_dim = 4, .max_seq_len = 2, .seed = 4, .init_std = 0.3};
  c.prompts.prompt_len = 2;
  c.prompts.num_experts = 3;
  c.prompts.temperature = 1.0;
  c.prompts.init_std = 0.3;
  c.comp_prompt_len = 2;
  c.num_classes = 4;
  return c;
}

inline SyntheticTaskConfig tiny_task(std::size_t train = 64, std::size_t test = 32) {
  SyntheticTaskConfig t;
  t.comp_dim = 8;
  t.vocab_size = 8;
  t.seq_len = 4;
  t.train_size = train;
  t.val_size = 8;
  t.test_size = test;
  return t;
}

template <typename T>
FusionBatch<T> first_rows(const Split& split, std::size_t n, std::size_t comp_positions = 2) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return make_batch<T>(split, rows, comp_positions);
}

}  // namespace mope::testing
