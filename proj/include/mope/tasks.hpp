// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mope/errors.hpp"
#include "mope/fusion.hpp"
#include "mope/keyvalue.hpp"
#include "mope/rng.hpp"

namespace mope {

enum class LabelMode { kSingle, kMultilabel };

/// Bimodal task with a latent group g (carried by the complementary vector)
/// and a pattern p (carried by the main tokens). The single-label target is
/// (p + g) mod C, so with G >= C neither modality alone beats chance.
struct SyntheticTaskConfig {
  std::size_t num_groups = 4;
  std::size_t num_classes = 4;
  std::size_t comp_dim = 64;
  double comp_noise = 0.1;
  std::size_t vocab_size = 32;
  std::size_t seq_len = 8;
  std::size_t train_size = 8000;
  std::size_t val_size = 1000;
  std::size_t test_size = 2000;
  std::uint64_t seed = 11;
  LabelMode label_mode = LabelMode::kSingle;
  std::size_t num_tags = 6;

  void validate() const {
    auto need = [](bool ok, const char* key, const std::string& what) {
      if (!ok) throw ConfigError(std::string("key 'task.") + key + "': " + what);
    };
    need(num_groups >= 2, "groups", "must be >= 2");
    need(num_classes >= 2, "classes", "must be >= 2");
    need(comp_dim >= 1, "comp_dim", "must be >= 1");
    need(comp_noise >= 0.0, "comp_noise", "must be >= 0");
    need(vocab_size >= num_classes, "classes", "needs one token group per class (vocab too small)");
    need(seq_len >= 1, "seq_len", "must be >= 1");
    need(label_mode == LabelMode::kSingle || num_tags >= 1, "tags", "must be >= 1");
  }

  /// Output width of the classifier for this task.
  std::size_t outputs() const { return label_mode == LabelMode::kSingle ? num_classes : num_tags; }

  /// Tokens per pattern group; ids [p * width, (p + 1) * width).
  std::size_t group_width() const { return vocab_size / num_classes; }

  void to_kv(KeyValues& kv) const {
    kv.set("task.groups", num_groups);
    kv.set("task.classes", num_classes);
    kv.set("task.comp_noise", comp_noise);
    kv.set("task.seq_len", seq_len);
    kv.set("task.train_size", train_size);
    kv.set("task.val_size", val_size);
    kv.set("task.test_size", test_size);
    kv.set("task.seed", seed);
    kv.set("task.label_mode", label_mode == LabelMode::kSingle ? "single" : "multilabel");
    kv.set("task.tags", num_tags);
  }

  void from_kv(const KeyValues& kv) {
    kv.read("task.groups", num_groups);
    kv.read("task.classes", num_classes);
    kv.read("task.comp_noise", comp_noise);
    kv.read("task.seq_len", seq_len);
    kv.read("task.train_size", train_size);
    kv.read("task.val_size", val_size);
    kv.read("task.test_size", test_size);
    kv.read("task.seed", seed);
    std::string mode = label_mode == LabelMode::kSingle ? "single" : "multilabel";
    kv.read("task.label_mode", mode);
    if (mode == "single")
      label_mode = LabelMode::kSingle;
    else if (mode == "multilabel")
      label_mode = LabelMode::kMultilabel;
    else
      throw ConfigError("key 'task.label_mode': unknown value '" + mode + "'");
    kv.read("task.tags", num_tags);
  }
};

struct Instance {
  std::vector<int> tokens;
  std::vector<double> comp;
  int group = 0;
  int pattern = 0;
  int label = 0;
  std::vector<int> tags;  // multi-label targets (0/1)

  bool operator==(const Instance&) const = default;
};

struct Split {
  std::vector<Instance> items;
  std::size_t first_id = 0;

  bool operator==(const Split&) const = default;
  std::size_t size() const { return items.size(); }
};

struct Dataset {
  SyntheticTaskConfig config;
  std::vector<std::vector<double>> group_means;  // unit vectors mu_g
  std::vector<std::vector<double>> tag_probs;    // [C][M], multi-label only
  Split train, val, test;

  bool operator==(const Dataset& o) const {
    return group_means == o.group_means && tag_probs == o.tag_probs && train == o.train && val == o.val &&
           test == o.test;
  }
};

/// Deterministic generation from `config.seed`.
inline Dataset generate(const SyntheticTaskConfig& config) {
  config.validate();
  Dataset ds;
  ds.config = config;
  Rng rng(config.seed);
  const std::size_t G = config.num_groups, C = config.num_classes, dc = config.comp_dim;
  ds.group_means.resize(G);
  for (auto& mu : ds.group_means) {
    mu.resize(dc);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : mu) {
        v = rng.normal();
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& v : mu) v /= norm;
  }
  if (config.label_mode == LabelMode::kMultilabel) {
    ds.tag_probs.assign(C, std::vector<double>(config.num_tags));
    for (auto& row : ds.tag_probs)
      for (auto& q : row) q = rng.uniform() < 0.4 ? 0.9 : 0.05;
  }
  const std::size_t width = config.group_width();
  auto make = [&](std::size_t n, std::size_t first_id) {
    Split s;
    s.first_id = first_id;
    s.items.resize(n);
    for (auto& inst : s.items) {
      inst.group = rng.uniform_int(static_cast<int>(G));
      inst.comp.resize(dc);
      const auto& mu = ds.group_means[static_cast<std::size_t>(inst.group)];
      for (std::size_t j = 0; j < dc; ++j) inst.comp[j] = mu[j] + rng.normal(0.0, config.comp_noise);
      inst.pattern = rng.uniform_int(static_cast<int>(C));
      inst.tokens.resize(config.seq_len);
      for (auto& t : inst.tokens)
        t = inst.pattern * static_cast<int>(width) + rng.uniform_int(static_cast<int>(width));
      inst.label = (inst.pattern + inst.group) % static_cast<int>(C);
      if (config.label_mode == LabelMode::kMultilabel) {
        inst.tags.resize(config.num_tags);
        const auto& q = ds.tag_probs[static_cast<std::size_t>(inst.label)];
        for (std::size_t m = 0; m < config.num_tags; ++m) inst.tags[m] = rng.uniform() < q[m] ? 1 : 0;
      }
    }
    return s;
  };
  ds.train = make(config.train_size, 0);
  ds.val = make(config.val_size, config.train_size);
  ds.test = make(config.test_size, config.train_size + config.val_size);
  return ds;
}

/// First `n` training instances (all when n is 0 or exceeds the split).
inline Split subsample(const Split& s, std::size_t n) {
  if (n == 0 || n >= s.size()) return s;
  Split out;
  out.first_id = s.first_id;
  out.items.assign(s.items.begin(), s.items.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

/// Packs the listed rows of a split into a model batch. The complementary
/// vector is cut into `comp_positions` equal chunks.
template <typename T>
FusionBatch<T> make_batch(const Split& split, std::span<const std::size_t> rows, std::size_t comp_positions) {
  if (rows.empty()) throw InputError("empty batch");
  FusionBatch<T> b;
  const auto& first = split.items.at(rows.front());
  const std::size_t len = first.tokens.size(), dc = first.comp.size();
  if (comp_positions == 0 || dc % comp_positions != 0)
    throw ConfigError("complementary width " + std::to_string(dc) + " does not split into " +
                      std::to_string(comp_positions) + " positions");
  b.main.batch = rows.size();
  b.main.length = len;
  b.main.ids.reserve(rows.size() * len);
  b.comp.batch = rows.size();
  b.comp.positions = comp_positions;
  b.comp.values.reserve(rows.size() * dc);
  for (std::size_t r : rows) {
    const auto& inst = split.items.at(r);
    b.main.ids.insert(b.main.ids.end(), inst.tokens.begin(), inst.tokens.end());
    for (double v : inst.comp) b.comp.values.push_back(static_cast<T>(v));
    b.labels.push_back(inst.label);
    b.groups.push_back(inst.group);
    for (int t : inst.tags) b.targets.push_back(static_cast<T>(t));
    b.ids.push_back(split.first_id + r);
  }
  return b;
}

}  // namespace mope
