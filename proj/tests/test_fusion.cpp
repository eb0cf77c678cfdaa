// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "fusion_fixture.hpp"
#include "mope/fusion.hpp"
#include "mope/model_check.hpp"
#include "mope/trainer.hpp"
#include "test_util.hpp"

namespace mope {
namespace {

using testing::first_rows;
using testing::tiny_model;
using testing::tiny_task;
using D = Tensor<double>;

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("mope_test_" + name)).string();
}

TEST(CountParams, WorkedExample) {
  FusionConfig c;
  c.main = {.num_layers = 4, .hidden_dim = 32, .num_heads = 4, .ffn_dim = 64, .vocab_size = 16,
            .feature_dim = 0, .max_seq_len = 8, .seed = 1, .init_std = 0.02};
  c.comp = {.num_layers = 2, .hidden_dim = 32, .num_heads = 4, .ffn_dim = 64, .vocab_size = 0,
            .feature_dim = 8, .max_seq_len = 4, .seed = 2, .init_std = 0.02};
  c.prompts.prompt_len = 6;
  c.prompts.num_experts = 4;
  c.prompts.mapper_hidden = 32;
  c.comp_tuning = CompTuning::kFrozen;
  c.num_classes = 4;
  FusionModel<float> model(c);
  const std::size_t l = 6, d = 32, dc = 32, k = 4, L = 4, h = 32, C = 4;
  const std::size_t per_layer = l * d + k * l * d + (dc * k + k) + (dc * h + h + h * d + d);
  EXPECT_EQ(per_layer, 3204u);
  EXPECT_EQ(model.count_params().trainable, L * per_layer + d * C + C);
  EXPECT_EQ(model.count_params().trainable, 12948u);
}

TEST(CountParams, SingleExpertDynamicOnly) {
  auto c = tiny_model();
  c.prompts.num_experts = 1;
  c.prompts.enabled = PromptKinds{false, true, false};
  c.comp_tuning = CompTuning::kFrozen;
  FusionModel<double> model(c);
  const std::size_t l = 2, d = 8, dc = 6;
  for (const auto& m : model.layer_prompts()) EXPECT_EQ(m.experts().numel(), l * d);
  EXPECT_EQ(model.count_params().trainable, 2 * (l * d + dc + 1) + d * 4 + 4);
}

TEST(CountParams, FrozenCountInvariantAcrossPromptConfigs) {
  std::size_t frozen = 0;
  for (const auto& kinds : PromptKinds::all_subsets())
    for (std::size_t k : {1, 3, 5}) {
      auto c = tiny_model();
      c.prompts.enabled = kinds;
      c.prompts.num_experts = k;
      FusionModel<double> model(c);
      if (frozen == 0) frozen = model.count_params().frozen;
      EXPECT_EQ(model.count_params().frozen, frozen) << kinds.str() << " k=" << k;
    }
}

TEST(FusionModel, TrainableSetAndLayerCount) {
  FusionModel<double> model(tiny_model());
  EXPECT_EQ(model.layer_prompts().size(), 2u);
  for (const auto& p : model.registry().all()) {
    const bool encoder_body = p.name.starts_with("main.") || (p.name.starts_with("comp.") && p.name != "comp.prompts");
    EXPECT_EQ(p.frozen, encoder_body) << p.name;
  }
}

TEST(FusionModel, StaticOnlyIgnoresComplementaryInput) {
  auto c = tiny_model();
  c.prompts.enabled = PromptKinds{true, false, false};
  FusionModel<double> model(c);
  const auto data = generate(tiny_task());
  auto batch = first_rows<double>(data.train, 4);
  Rng rng(0);
  auto a = model.forward(batch, false, rng).logits;
  for (auto& v : batch.comp.values) v = -v + 0.5;
  auto b = model.forward(batch, false, rng).logits;
  EXPECT_EQ(a.values(), b.values());
  EXPECT_TRUE(model.forward(batch, false, rng).routes.empty());
}

TEST(FusionModel, SameComplementaryInputSameRouting) {
  FusionModel<double> model(tiny_model());
  const auto data = generate(tiny_task());
  auto batch = first_rows<double>(data.train, 2);
  std::copy(batch.comp.values.begin(), batch.comp.values.begin() + 8, batch.comp.values.begin() + 8);
  ASSERT_NE(std::vector<int>(batch.main.ids.begin(), batch.main.ids.begin() + 4),
            std::vector<int>(batch.main.ids.begin() + 4, batch.main.ids.end()));
  Rng rng(0);
  auto fwd = model.forward(batch, false, rng);
  for (const auto& r : fwd.routes) {
    EXPECT_EQ(r.records[0].scores, r.records[1].scores);
    EXPECT_EQ(r.records[0].argmax_expert, r.records[1].argmax_expert);
  }
}

TEST(FusionModel, BatchPermutationPermutesLogits) {
  FusionModel<double> model(tiny_model());
  const auto data = generate(tiny_task());
  const std::vector<std::size_t> rows{0, 1, 2, 3, 4}, perm{3, 0, 4, 2, 1};
  Rng rng(0);
  auto a = model.forward(make_batch<double>(data.train, rows, 2), false, rng).logits;
  auto b = model.forward(make_batch<double>(data.train, perm, 2), false, rng).logits;
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(b[i * 4 + c], a[perm[i] * 4 + c], 1e-12);
}

TEST(FusionModel, StaticPromptSharedAcrossInstances) {
  FusionModel<double> model(tiny_model());
  const auto data = generate(tiny_task());
  Rng rng(0);
  auto fwd = model.forward(first_rows<double>(data.train, 3), false, rng);
  for (const auto& p : fwd.prompts) {
    const std::size_t per = p.block.numel() / 3;
    for (std::size_t i = 0; i < 2 * 8; ++i) {
      EXPECT_EQ(p.block[i], p.block[per + i]);
      EXPECT_EQ(p.block[i], p.block[2 * per + i]);
    }
  }
}

TEST(FusionModel, ComplementaryWidthMismatchIsConfigError) {
  FusionModel<double> model(tiny_model());
  const auto data = generate(tiny_task());
  auto batch = first_rows<double>(data.train, 2);
  batch.comp.values.pop_back();
  Rng rng(0);
  EXPECT_THROW(model.forward(batch, false, rng), ConfigError);
}

TEST(FusionModel, BagOfEmbeddingsIsMeanEmbedding) {
  auto c = tiny_model();
  c.comp_kind = CompKind::kBagOfEmbeddings;
  FusionModel<double> model(c);
  const auto data = generate(tiny_task());
  auto batch = first_rows<double>(data.train, 2);
  auto psi = model.complementary_feature(batch.comp);
  const auto* proj = model.registry().find("comp.embed.features");
  ASSERT_NE(proj, nullptr);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 6; ++j) {
      double expected = 0.0;
      for (std::size_t pos = 0; pos < 2; ++pos)
        for (std::size_t f = 0; f < 4; ++f) expected += batch.comp.values[b * 8 + pos * 4 + f] * proj->tensor[f * 6 + j];
      EXPECT_NEAR(psi[b * 6 + j], expected / 2.0, 1e-12);
    }
}

TEST(Importance, BalancedBatch) {
  auto s = importance_stats({{1, 0}, {0, 1}});
  EXPECT_EQ(s.importance, (std::vector<double>{1, 1}));
  EXPECT_EQ(s.cv, 0.0);
}

TEST(Importance, SkewedBatchHandComputation) {
  auto s = importance_stats({{1, 0}, {1, 0}});
  EXPECT_EQ(s.importance, (std::vector<double>{2, 0}));
  EXPECT_NEAR(s.cv, 1.0, 1e-12);
  EXPECT_NEAR(s.cv_squared, 1.0, 1e-12);
}

TEST(Importance, UniformScoresGiveZeroCv) {
  auto s = importance_stats(std::vector<std::vector<double>>(5, std::vector<double>(4, 0.25)));
  EXPECT_EQ(s.cv, 0.0);
}

TEST(Importance, ZeroMeanIsNumericError) {
  EXPECT_THROW(importance_stats({{0, 0}}), NumericError);
  EXPECT_THROW(importance_loss(D({1, 2}), 0.05), NumericError);
}

TEST(ImportanceLoss, BalancedHasNoGradient) {
  D scores({2, 2}, {1, 0, 0, 1});
  scores.set_requires_grad(true);
  auto term = importance_loss(scores, 0.05);
  EXPECT_EQ(term.value, 0.0);
  backward(sum(term.applied));
  EXPECT_FALSE(scores.has_grad());
}

TEST(ImportanceLoss, SkewedValueAndGradientFlow) {
  D scores({2, 2}, {1, 0, 1, 0});
  scores.set_requires_grad(true);
  auto term = importance_loss(scores, 0.05);
  EXPECT_NEAR(term.value, 1.0, 1e-9);
  EXPECT_NEAR(term.applied.item(), 1.0, 1e-9);
  backward(sum(term.applied));
  ASSERT_TRUE(scores.has_grad());
  // d(cv^2)/dImp_i = 2 (Imp_i - m) / (k m^2) - 2 var / (k m^3) with m = 1, var = 1, k = 2.
  const double g0 = 2.0 * (2 - 1) / 2.0 - 2.0 * 1.0 / 2.0;
  const double g1 = 2.0 * (0 - 1) / 2.0 - 2.0 * 1.0 / 2.0;
  EXPECT_NEAR(scores.grad()[0], g0, 1e-12);
  EXPECT_NEAR(scores.grad()[1], g1, 1e-12);
  EXPECT_NEAR(scores.grad()[2], g0, 1e-12);
  testing::expect_gradients_match([&] { return importance_loss(scores, 0.05).applied; }, {scores});
}

TEST(ImportanceLoss, BelowThresholdRouterGradientIsExactlyZero) {
  PromptConfig c;
  c.num_experts = 2;
  c.comp_dim = 1;
  c.noise_std = 0.0;
  ParameterRegistry<double> reg;
  Rng rng(1);
  LayerPromptModule<double> module(c, 0, 4, rng, reg, "l.");
  D w = module.router_weight();
  w.values() = {c.temperature * std::log(0.52 / 0.48), 0.0};
  const D psi({1, 1}, {1.0});
  auto applied = [&] { return importance_loss(module.route(psi, false, rng).clean_scores, 0.05); };
  const auto term = applied();
  EXPECT_NEAR(term.cv, 0.04, 1e-12);
  EXPECT_NEAR(term.value, 0.0016, 1e-12);
  EXPECT_EQ(term.applied.item(), 0.0);
  const auto fd = finite_diff_grad<double>([&](const D&) { NoGradGuard g; return applied().applied.item(); }, w, 1e-5);
  for (double g : fd.values()) EXPECT_NEAR(g, 0.0, 1e-8);
  w.zero_grad();
  backward(sum(add(applied().applied, D({1}, 0.0))));
  EXPECT_FALSE(w.has_grad());
}

TEST(Objective, DecompositionHoldsEveryStep) {
  auto c = tiny_model();
  c.lambda_imp = 0.7;
  FusionModel<double> model(c);
  const auto data = generate(tiny_task(96));
  TrainOptions opts;
  opts.epochs = 2;
  opts.batch_size = 16;
  auto log = train(model, data.train, opts);
  ASSERT_EQ(log.steps.size(), 12u);
  for (const auto& s : log.steps) {
    EXPECT_NEAR(s.loss.total, s.loss.task_loss + 0.7 * s.loss.applied_importance, 1e-7);
    EXPECT_EQ(s.loss.per_layer.size(), 2u);
    EXPECT_GE(s.loss.importance_loss, s.loss.applied_importance);
  }
}

TEST(Objective, NoiselessUnweightedRunsRepeatExactly) {
  auto c = tiny_model();
  c.lambda_imp = 0.0;
  c.prompts.noise_std = 0.0;
  const auto data = generate(tiny_task(64));
  TrainOptions opts;
  opts.epochs = 1;
  opts.batch_size = 16;
  auto run = [&] {
    FusionModel<double> model(c);
    std::vector<double> out;
    for (const auto& s : train(model, data.train, opts).steps) out.push_back(s.loss.total);
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Training, FrozenBodiesUnchanged) {
  FusionModel<float> model(tiny_model());
  const auto main_sum = model.main_encoder().checksum(), comp_sum = model.comp_encoder().checksum();
  const auto data = generate(tiny_task(128));
  TrainOptions opts;
  opts.epochs = 3;
  opts.batch_size = 8;
  opts.adamw.weight_decay = 0.1;
  train(model, data.train, opts);
  EXPECT_EQ(model.main_encoder().checksum(), main_sum);
  EXPECT_EQ(model.comp_encoder().checksum(), comp_sum);
}

TEST(Training, GradientsLandOnlyOnTrainableParameters) {
  FusionModel<double> model(tiny_model());
  const auto data = generate(tiny_task());
  auto batch = first_rows<double>(data.train, 6);
  Rng rng(0);
  auto fwd = model.forward(batch, true, rng);
  backward(objective(model, fwd, batch, 1.0).first);
  for (const auto& p : model.registry().all()) {
    if (!p.frozen) continue;
    EXPECT_FALSE(p.tensor.has_grad()) << p.name;
  }
}

TEST(Gradcheck, FullPipelineMatchesFiniteDifferences) {
  for (auto mode : {RoutingMode::kDense, RoutingMode::kSparseTop1}) {
    auto c = tiny_model();
    c.prompts.noise_std = 0.0;
    c.prompts.routing = mode;
    c.gamma = 0.0;
    FusionModel<double> model(c);
    const auto data = generate(tiny_task());
    auto batch = first_rows<double>(data.train, 6);
    Rng rng(1);
    auto report = gradcheck_model(model, batch, 400, rng, 1e-5);
    EXPECT_GE(report.samples.size(), 200u);
    EXPECT_LT(report.max_rel_error, 1e-5);
  }
}

TEST(Gradcheck, RequiresNoiseOff) {
  FusionModel<double> model(tiny_model());
  const auto data = generate(tiny_task());
  Rng rng(1);
  EXPECT_THROW(gradcheck_model(model, first_rows<double>(data.train, 2), 10, rng, 1e-5), ConfigError);
}

template <typename T>
void expect_round_trip() {
  auto c = tiny_model();
  c.prompts.routing = RoutingMode::kSparseTop1;
  c.seed = 21;
  FusionModel<T> model(c);
  const auto data = generate(tiny_task(32));
  TrainOptions opts;
  opts.epochs = 1;
  opts.batch_size = 8;
  train(model, data.train, opts);
  const auto path = temp_path("ckpt_" + std::to_string(sizeof(T)));
  KeyValues extra;
  extra.set("task.seed", 11);
  save_checkpoint(model, path, extra);
  auto loaded = load_checkpoint<T>(path);
  KeyValues a, b;
  model.config().to_kv(a);
  loaded.config().to_kv(b);
  EXPECT_EQ(a.str(), b.str());
  const auto& pa = model.registry().all();
  const auto& pb = loaded.registry().all();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_EQ(pa[i].frozen, pb[i].frozen);
    EXPECT_EQ(pa[i].tensor.values(), pb[i].tensor.values()) << pa[i].name;
  }
  EXPECT_EQ(read_checkpoint_header(path).entries.entries().at("task.seed"), "11");
  std::remove(path.c_str());
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  expect_round_trip<float>();
  expect_round_trip<double>();
}

TEST(Checkpoint, LoadsAcrossPrecision) {
  FusionModel<float> model(tiny_model());
  const auto path = temp_path("ckpt_cross");
  save_checkpoint(model, path);
  auto loaded = load_checkpoint<double>(path);
  for (std::size_t i = 0; i < model.registry().all().size(); ++i)
    for (std::size_t j = 0; j < model.registry().all()[i].tensor.numel(); ++j)
      EXPECT_EQ(static_cast<double>(model.registry().all()[i].tensor[j]), loaded.registry().all()[i].tensor[j]);
  std::remove(path.c_str());
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  os << bytes;
}

TEST(Checkpoint, CorruptFilesAreCheckpointErrors) {
  FusionModel<float> model(tiny_model());
  const auto path = temp_path("ckpt_bad");
  save_checkpoint(model, path);
  const std::string good = read_file(path);

  write_file(path, "MOPE-CHECKPOINT 2\n" + good.substr(good.find('\n') + 1));
  EXPECT_THROW(load_checkpoint<float>(path), CheckpointError);

  write_file(path, good.substr(0, good.size() - 3));
  EXPECT_THROW(load_checkpoint<float>(path), CheckpointError);

  std::string renamed = good;
  renamed.replace(renamed.find("prompt.len = 2"), 14, "prompt.len = 3");
  write_file(path, renamed);
  EXPECT_THROW(load_checkpoint<float>(path), CheckpointError);

  std::string unknown = good;
  unknown.insert(unknown.find("end-config"), "bogus.key = 1\n");
  write_file(path, unknown);
  EXPECT_THROW(load_checkpoint<float>(path), CheckpointError);

  EXPECT_THROW(load_checkpoint<float>(temp_path("does_not_exist")), CheckpointError);
  std::remove(path.c_str());
}

TEST(FusionConfig, ValidationNamesKeys) {
  auto expect_key = [](FusionConfig c, const std::string& key) {
    try {
      FusionModel<float> m(c);
      ADD_FAILURE() << key;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
    }
  };
  auto c = tiny_model();
  c.num_classes = 1;
  expect_key(c, "model.classes");
  c = tiny_model();
  c.lambda_imp = -1;
  expect_key(c, "loss.lambda_imp");
  c = tiny_model();
  c.main.num_heads = 3;
  expect_key(c, "main.heads");
  c = tiny_model();
  c.comp.num_layers = 0;
  expect_key(c, "comp.layers");
  c = tiny_model();
  c.prompts.temperature = -0.1;
  expect_key(c, "prompt.temperature");
}

}  // namespace
}  // namespace mope
