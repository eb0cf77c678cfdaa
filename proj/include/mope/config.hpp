// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "mope/errors.hpp"
#include "mope/fusion.hpp"
#include "mope/keyvalue.hpp"
#include "mope/tasks.hpp"
#include "mope/trainer.hpp"

namespace mope {

/// Everything one run needs: model, task, optimizer and output settings.
/// Defaults are the desk-scale configuration.
struct RunConfig {
  FusionConfig model = desk_model();
  SyntheticTaskConfig task{};
  TrainOptions train{};
  std::string out_dir = "run";
  int precision = 32;

  static FusionConfig desk_model() {
    FusionConfig f;
    f.main.num_layers = 4;
    f.main.hidden_dim = 64;
    f.main.num_heads = 4;
    f.main.ffn_dim = 128;
    f.main.vocab_size = 32;
    f.main.max_seq_len = 8;
    f.main.init_std = kDeskEncoderStd;
    f.comp.init_std = kDeskEncoderStd;
    f.prompts.prompt_len = 6;
    f.prompts.num_experts = 8;
    f.prompts.mapper_init_std = kDeskMapperStd;
    return f;
  }

  // Frozen-body init std of the desk configuration.
  static constexpr double kDeskEncoderStd = 0.2;
  // Fan-in scale for the mapper MLP at the desk complementary width.
  static constexpr double kDeskMapperStd = 0.125;

  /// Sets both the model-initialisation and the training seed.
  void set_seed(std::uint64_t seed) {
    model.seed = seed;
    train.seed = seed;
  }

  /// Fills derived fields and checks cross-section consistency.
  void resolve() {
    task.comp_dim = model.comp_input_dim();
    task.vocab_size = model.main.vocab_size;
    model.num_classes = task.outputs();
    model.multilabel = task.label_mode == LabelMode::kMultilabel;
    task.validate();
    model.validate();
    if (task.seq_len > model.main.max_seq_len)
      throw ConfigError("key 'task.seq_len': " + std::to_string(task.seq_len) + " exceeds main.seq_len " +
                        std::to_string(model.main.max_seq_len));
    if (precision != 32 && precision != 64) throw ConfigError("key 'run.precision': must be 32 or 64");
  }

  KeyValues to_kv() const {
    KeyValues kv;
    model.to_kv(kv);
    task.to_kv(kv);
    train.to_kv(kv);
    kv.set("run.out_dir", out_dir);
    kv.set("run.precision", precision);
    return kv;
  }

  std::string str() const { return to_kv().str(); }

  /// Keys not given keep their defaults; unknown keys are rejected. Derived
  /// keys (model.classes, model.multilabel) must agree with the task.
  static RunConfig from_kv(const KeyValues& kv) {
    RunConfig rc;
    KeyValues merged = rc.to_kv();
    for (const auto& [k, v] : kv.entries()) merged.set(k, v);
    rc.model = FusionConfig::from_kv(merged);
    rc.task.from_kv(merged);
    rc.train.from_kv(merged);
    merged.read("run.out_dir", rc.out_dir);
    merged.read("run.precision", rc.precision);
    merged.reject_unknown();
    const std::size_t given_classes = rc.model.num_classes;
    const bool given_multilabel = rc.model.multilabel;
    rc.resolve();
    if (kv.has("model.classes") && given_classes != rc.model.num_classes)
      throw ConfigError("key 'model.classes': " + std::to_string(given_classes) + " disagrees with the task (" +
                        std::to_string(rc.model.num_classes) + " outputs)");
    if (kv.has("model.multilabel") && given_multilabel != rc.model.multilabel)
      throw ConfigError("key 'model.multilabel': disagrees with task.label_mode");
    return rc;
  }

  static RunConfig parse(const std::string& text) { return from_kv(KeyValues::parse(text)); }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    return from_kv(KeyValues::parse(in));
  }
};

}  // namespace mope
