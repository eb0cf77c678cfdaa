// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mope/encoder.hpp"
#include "mope/errors.hpp"
#include "mope/keyvalue.hpp"
#include "mope/ops.hpp"
#include "mope/optim.hpp"
#include "mope/prompts.hpp"
#include "mope/rng.hpp"
#include "mope/tensor.hpp"

namespace mope {

enum class CompKind { kTransformer, kBagOfEmbeddings };
// kPrompt: frozen body plus trainable vanilla prompts on every layer.
enum class CompTuning { kPrompt, kFrozen, kFinetune };
// kComp classifies from the complementary feature alone (main input unused).
enum class HeadSource { kMain, kComp };

struct FusionConfig {
  EncoderConfig main{};
  EncoderConfig comp{.num_layers = 2,
                     .hidden_dim = 64,
                     .num_heads = 4,
                     .ffn_dim = 128,
                     .vocab_size = 0,
                     .feature_dim = 16,
                     .max_seq_len = 4,
                     .seed = 2,
                     .init_std = 0.02};
  PromptConfig prompts{};
  CompKind comp_kind = CompKind::kTransformer;
  CompTuning comp_tuning = CompTuning::kPrompt;
  std::size_t comp_prompt_len = 6;
  HeadSource head = HeadSource::kMain;
  std::size_t num_classes = 4;
  bool multilabel = false;
  double lambda_imp = 1.0;
  double gamma = 0.05;
  // Seeds prompt-module and head initialization.
  std::uint64_t seed = 7;

  void validate() const {
    main.validate("main.");
    comp.validate("comp.");
    if (main.vocab_size == 0) throw ConfigError("key 'main.vocab': the main encoder takes token input");
    if (comp.feature_dim == 0) throw ConfigError("key 'comp.feature_dim': the complementary encoder takes feature input");
    if (num_classes < 2) throw ConfigError("key 'model.classes': must be >= 2");
    if (lambda_imp < 0.0) throw ConfigError("key 'loss.lambda_imp': must be >= 0");
    if (gamma < 0.0) throw ConfigError("key 'loss.gamma': must be >= 0");
    if (comp_tuning == CompTuning::kPrompt && comp_prompt_len == 0)
      throw ConfigError("key 'comp.prompt_len': must be >= 1 with prompt tuning");
    PromptConfig p = prompts;
    p.comp_dim = comp.hidden_dim;
    p.validate();
  }

  /// Width of the complementary input vector.
  std::size_t comp_input_dim() const { return comp.feature_dim * comp.max_seq_len; }

  void to_kv(KeyValues& kv) const {
    auto enc = [&](const std::string& p, const EncoderConfig& e) {
      kv.set(p + "layers", e.num_layers);
      kv.set(p + "hidden", e.hidden_dim);
      kv.set(p + "heads", e.num_heads);
      kv.set(p + "ffn", e.ffn_dim);
      kv.set(p + "seq_len", e.max_seq_len);
      kv.set(p + "seed", e.seed);
      kv.set(p + "init_std", e.init_std);
    };
    enc("main.", main);
    kv.set("main.vocab", main.vocab_size);
    enc("comp.", comp);
    kv.set("comp.feature_dim", comp.feature_dim);
    kv.set("comp.kind", comp_kind == CompKind::kTransformer ? "transformer" : "bag_of_embeddings");
    kv.set("comp.tuning", comp_tuning == CompTuning::kPrompt   ? "prompt"
                          : comp_tuning == CompTuning::kFrozen ? "frozen"
                                                               : "finetune");
    kv.set("comp.prompt_len", comp_prompt_len);
    kv.set("prompt.len", prompts.prompt_len);
    kv.set("prompt.experts", prompts.num_experts);
    kv.set("prompt.temperature", prompts.temperature);
    kv.set("prompt.noise_std", prompts.noise_std);
    kv.set("prompt.routing", prompts.routing == RoutingMode::kDense ? "dense" : "sparse_top1");
    kv.set("prompt.kinds", prompts.enabled.str());
    kv.set("prompt.mapper_hidden", prompts.mapper_hidden);
    kv.set("prompt.shared_mapper", prompts.shared_mapper);
    kv.set("prompt.init_std", prompts.init_std);
    kv.set("prompt.mapper_init_std", prompts.mapper_init_std);
    kv.set("model.head", head == HeadSource::kMain ? "main" : "comp");
    kv.set("model.classes", num_classes);
    kv.set("model.multilabel", multilabel);
    kv.set("model.seed", seed);
    kv.set("loss.lambda_imp", lambda_imp);
    kv.set("loss.gamma", gamma);
  }

  static FusionConfig from_kv(const KeyValues& kv) {
    FusionConfig c;
    auto enc = [&](const std::string& p, EncoderConfig& e) {
      kv.read(p + "layers", e.num_layers);
      kv.read(p + "hidden", e.hidden_dim);
      kv.read(p + "heads", e.num_heads);
      kv.read(p + "ffn", e.ffn_dim);
      kv.read(p + "seq_len", e.max_seq_len);
      kv.read(p + "seed", e.seed);
      kv.read(p + "init_std", e.init_std);
    };
    enc("main.", c.main);
    kv.read("main.vocab", c.main.vocab_size);
    enc("comp.", c.comp);
    kv.read("comp.feature_dim", c.comp.feature_dim);
    std::string s;
    s = "transformer";
    kv.read("comp.kind", s);
    if (s == "transformer")
      c.comp_kind = CompKind::kTransformer;
    else if (s == "bag_of_embeddings" || s == "bag")
      c.comp_kind = CompKind::kBagOfEmbeddings;
    else
      throw ConfigError("key 'comp.kind': unknown value '" + s + "'");
    s = "prompt";
    kv.read("comp.tuning", s);
    if (s == "prompt")
      c.comp_tuning = CompTuning::kPrompt;
    else if (s == "frozen")
      c.comp_tuning = CompTuning::kFrozen;
    else if (s == "finetune")
      c.comp_tuning = CompTuning::kFinetune;
    else
      throw ConfigError("key 'comp.tuning': unknown value '" + s + "'");
    kv.read("comp.prompt_len", c.comp_prompt_len);
    kv.read("prompt.len", c.prompts.prompt_len);
    kv.read("prompt.experts", c.prompts.num_experts);
    kv.read("prompt.temperature", c.prompts.temperature);
    kv.read("prompt.noise_std", c.prompts.noise_std);
    s = "dense";
    kv.read("prompt.routing", s);
    if (s == "dense")
      c.prompts.routing = RoutingMode::kDense;
    else if (s == "sparse_top1" || s == "sparse")
      c.prompts.routing = RoutingMode::kSparseTop1;
    else
      throw ConfigError("key 'prompt.routing': unknown value '" + s + "'");
    s = c.prompts.enabled.str();
    kv.read("prompt.kinds", s);
    try {
      c.prompts.enabled = PromptKinds::parse(s);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("key 'prompt.kinds': ") + e.what());
    }
    kv.read("prompt.mapper_hidden", c.prompts.mapper_hidden);
    kv.read("prompt.shared_mapper", c.prompts.shared_mapper);
    kv.read("prompt.init_std", c.prompts.init_std);
    kv.read("prompt.mapper_init_std", c.prompts.mapper_init_std);
    s = "main";
    kv.read("model.head", s);
    if (s == "main")
      c.head = HeadSource::kMain;
    else if (s == "comp")
      c.head = HeadSource::kComp;
    else
      throw ConfigError("key 'model.head': unknown value '" + s + "'");
    kv.read("model.classes", c.num_classes);
    kv.read("model.multilabel", c.multilabel);
    kv.read("model.seed", c.seed);
    kv.read("loss.lambda_imp", c.lambda_imp);
    kv.read("loss.gamma", c.gamma);
    c.main.feature_dim = 0;
    c.comp.vocab_size = 0;
    c.prompts.comp_dim = c.comp.hidden_dim;
    return c;
  }
};

/// One mini-batch of paired inputs.
template <typename T>
struct FusionBatch {
  TokenBatch main;
  FeatureBatch<T> comp;
  std::vector<int> labels;   // single-label targets
  std::vector<T> targets;    // multi-label targets, [B, C] row-major
  std::vector<int> groups;   // latent group, diagnostics only
  std::vector<std::size_t> ids;  // dataset instance ids

  std::size_t size() const { return main.batch; }
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;  // [B, C]
  Tensor<T> psi;     // [B, d_c], undefined when unused
  std::vector<RouteResult<T>> routes;
  std::vector<AssembledPrompts<T>> prompts;
  ForwardTrace<T> trace;
};

struct ImportanceStats {
  std::vector<double> importance;
  double cv = 0.0;
  double cv_squared = 0.0;
};

/// Imp_i = sum over the batch of each row's expert-i score; cv uses the
/// population standard deviation.
inline ImportanceStats importance_stats(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw InputError("importance needs at least one instance");
  const std::size_t k = rows.front().size();
  ImportanceStats s;
  s.importance.assign(k, 0.0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < k; ++i) s.importance[i] += r[i];
  double mean = 0.0;
  for (double v : s.importance) mean += v;
  mean /= static_cast<double>(k);
  if (!(mean > 0.0)) throw NumericError("mean expert importance is zero");
  double var = 0.0;
  for (double v : s.importance) var += (v - mean) * (v - mean);
  var /= static_cast<double>(k);
  s.cv_squared = var / (mean * mean);
  s.cv = std::sqrt(s.cv_squared);
  return s;
}

/// Stats from the noiseless scores of one layer's routing.
template <typename T>
ImportanceStats importance(const RouteResult<T>& route) {
  const Tensor<T>& s = route.clean_scores;
  const std::size_t b = s.dim(0), k = s.dim(1);
  std::vector<std::vector<double>> rows(b, std::vector<double>(k));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < k; ++j) rows[i][j] = static_cast<double>(s.data()[i * k + j]);
  return importance_stats(rows);
}

template <typename T>
struct ImportanceTerm {
  Tensor<T> applied;  // cv^2 on the tape, or a constant zero below gamma
  double value = 0.0;
  double cv = 0.0;
};

/// Squared coefficient of variation of the batch importance, built from
/// the noiseless scores [B, k]. Below `gamma` the term is cut: it reports its
/// value but contributes a constant zero (no gradient) to the objective.
template <typename T>
ImportanceTerm<T> importance_loss(const Tensor<T>& clean_scores, double gamma) {
  if (clean_scores.ndim() != 2 || clean_scores.dim(0) == 0)
    throw InputError("importance needs a non-empty [B, k] score matrix");
  auto imp = sum_axis(clean_scores, 0);
  auto m = mean(imp);
  if (!(m.item() > T(0))) throw NumericError("mean expert importance is zero");
  auto dev = sub(imp, m);
  auto cv2 = div(mean(mul(dev, dev)), mul(m, m));
  ImportanceTerm<T> out;
  out.value = static_cast<double>(cv2.item());
  out.cv = std::sqrt(out.value);
  out.applied = out.cv < gamma ? Tensor<T>::scalar(T(0)) : cv2;
  return out;
}

struct LossBreakdown {
  double task_loss = 0.0;
  double importance_loss = 0.0;     // layer mean of cv^2
  double applied_importance = 0.0;  // layer mean of the gated term
  double total = 0.0;
  double lambda_imp = 0.0;
  double mean_entropy_bits = 0.0;   // over routed instances and layers
  std::vector<ImportanceStats> per_layer;
  std::vector<double> per_layer_entropy_bits;
};

struct ParamCount {
  std::size_t trainable = 0;
  std::size_t frozen = 0;
};

/// Sequential fusion: the complementary encoder yields psi, psi conditions
/// the prompts of every main-encoder layer, a linear head reads main [CLS].
template <typename T>
class FusionModel {
 public:
  explicit FusionModel(FusionConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.main.feature_dim = 0;
    cfg_.comp.vocab_size = 0;
    cfg_.prompts.comp_dim = cfg_.comp.hidden_dim;
    cfg_.validate();
    main_.emplace(cfg_.main, registry_, "main.", true);
    comp_.emplace(cfg_.comp, registry_, "comp.", cfg_.comp_tuning != CompTuning::kFinetune);
    Rng rng(cfg_.seed);
    const double sd = cfg_.prompts.init_std;
    const std::size_t dc = cfg_.comp.hidden_dim, d = cfg_.main.hidden_dim;
    if (cfg_.comp_tuning == CompTuning::kPrompt && cfg_.comp_kind == CompKind::kTransformer)
      comp_prompts_ = registry_.add(
          "comp.prompts", init_truncated_normal<T>({cfg_.comp.num_layers, cfg_.comp_prompt_len, dc}, sd, rng), false);
    if (cfg_.head == HeadSource::kMain) {
      std::optional<Mapper<T>> shared;
      if (cfg_.prompts.enabled.mapped_prompt && cfg_.prompts.shared_mapper) {
        const std::size_t hidden = cfg_.prompts.mapper_hidden ? cfg_.prompts.mapper_hidden : d;
        shared = make_mapper<T>(dc, hidden, d, cfg_.prompts.mapper_std(), rng, registry_, "prompt.shared.mapper.");
      }
      for (std::size_t i = 0; i < cfg_.main.num_layers; ++i)
        layers_.emplace_back(cfg_.prompts, i, d, rng, registry_, "prompt.layer" + std::to_string(i) + ".", shared);
    }
    const std::size_t head_in = cfg_.head == HeadSource::kMain ? d : dc;
    head_w_ = registry_.add("head.w", init_truncated_normal<T>({head_in, cfg_.num_classes}, sd, rng), false);
    head_b_ = registry_.add("head.b", Tensor<T>({cfg_.num_classes}), false);
  }

  FusionModel(const FusionModel&) = delete;
  FusionModel& operator=(const FusionModel&) = delete;
  FusionModel(FusionModel&&) noexcept = default;
  FusionModel& operator=(FusionModel&&) noexcept = default;

  const FusionConfig& config() const { return cfg_; }
  FusionConfig& mutable_config() { return cfg_; }
  ParameterRegistry<T>& registry() { return registry_; }
  const ParameterRegistry<T>& registry() const { return registry_; }
  const Encoder<T>& main_encoder() const { return *main_; }
  const Encoder<T>& comp_encoder() const { return *comp_; }
  const std::vector<LayerPromptModule<T>>& layer_prompts() const { return layers_; }
  bool routes() const { return cfg_.head == HeadSource::kMain && cfg_.prompts.enabled.dynamic_prompt; }

  /// Pooled complementary feature psi: final [CLS] of the transformer, or
  /// the mean embedding for the bag-of-embeddings variant.
  Tensor<T> complementary_feature(const FeatureBatch<T>& feats) const {
    if (feats.positions != cfg_.comp.max_seq_len ||
        feats.values.size() != feats.batch * cfg_.comp_input_dim())
      throw ConfigError("complementary input dimension mismatch: got " +
                        std::to_string(feats.batch ? feats.values.size() / feats.batch : 0) + " per instance, model expects " +
                        std::to_string(cfg_.comp_input_dim()));
    if (cfg_.comp_kind == CompKind::kBagOfEmbeddings) {
      auto emb = comp_->feature_embeddings(feats);
      return scale(sum_axis(emb, 1), T(1) / T(feats.positions));
    }
    PromptProvider<T> provider;
    if (comp_prompts_.defined()) {
      provider = [&](std::size_t layer) {
        auto p = reshape(narrow(comp_prompts_, 0, layer, 1), Shape{cfg_.comp_prompt_len, cfg_.comp.hidden_dim});
        return expand_batch(p, feats.batch);
      };
    }
    return comp_->encode(feats, provider).cls;
  }

  ForwardResult<T> forward(const FusionBatch<T>& batch, bool training, Rng& rng,
                           bool capture_attention = false) const {
    if (batch.size() == 0) throw InputError("empty batch");
    ForwardResult<T> out;
    out.trace.capture_attention = capture_attention;
    const PromptKinds& kinds = cfg_.prompts.enabled;
    const bool need_psi = cfg_.head == HeadSource::kComp || kinds.dynamic_prompt || kinds.mapped_prompt;
    if (need_psi) out.psi = complementary_feature(batch.comp);
    if (cfg_.head == HeadSource::kComp) {
      out.logits = add(matmul(out.psi, head_w_), head_b_);
      return out;
    }
    Tensor<T> psi = out.psi.defined() ? out.psi : Tensor<T>(Shape{batch.size(), cfg_.comp.hidden_dim});
    PromptProvider<T> provider = [&](std::size_t layer) {
      auto assembled = layers_[layer].assemble(psi, training, rng, batch.ids);
      if (assembled.route) out.routes.push_back(*assembled.route);
      out.prompts.push_back(assembled);
      return assembled.block;
    };
    auto enc = main_->encode(batch.main, provider, &out.trace);
    out.logits = add(matmul(enc.cls, head_w_), head_b_);
    return out;
  }

  ParamCount count_params() const { return {registry_.count(false), registry_.count(true)}; }

 private:
  FusionConfig cfg_;
  ParameterRegistry<T> registry_;
  std::optional<Encoder<T>> main_, comp_;
  Tensor<T> comp_prompts_;
  std::vector<LayerPromptModule<T>> layers_;
  Tensor<T> head_w_, head_b_;
};

/// Task loss: softmax cross-entropy, or per-class BCE in multi-label mode.
template <typename T>
Tensor<T> task_loss(const FusionModel<T>& model, const Tensor<T>& logits, const FusionBatch<T>& batch) {
  if (model.config().multilabel) return bce_with_logits(logits, std::span<const T>(batch.targets));
  return cross_entropy(logits, std::span<const int>(batch.labels));
}

/// Builds task + lambda * mean-over-layers importance term from a forward
/// result. Importance uses noiseless scores.
template <typename T>
std::pair<Tensor<T>, LossBreakdown> objective(const FusionModel<T>& model, const ForwardResult<T>& fwd,
                                              const FusionBatch<T>& batch, double lambda_imp) {
  LossBreakdown lb;
  lb.lambda_imp = lambda_imp;
  auto task = task_loss(model, fwd.logits, batch);
  lb.task_loss = static_cast<double>(task.item());
  Tensor<T> total = task;
  if (!fwd.routes.empty()) {
    std::vector<Tensor<T>> applied;
    double value_sum = 0.0, applied_sum = 0.0, entropy_sum = 0.0;
    std::size_t entropy_n = 0;
    for (const auto& r : fwd.routes) {
      auto term = importance_loss(r.clean_scores, model.config().gamma);
      value_sum += term.value;
      applied_sum += static_cast<double>(term.applied.item());
      applied.push_back(term.applied);
      lb.per_layer.push_back(importance(r));
      double layer_entropy = 0.0;
      for (const auto& rec : r.records) layer_entropy += rec.entropy_bits;
      entropy_sum += layer_entropy;
      entropy_n += r.records.size();
      lb.per_layer_entropy_bits.push_back(r.records.empty() ? 0.0
                                                            : layer_entropy / static_cast<double>(r.records.size()));
    }
    const double layers = static_cast<double>(fwd.routes.size());
    lb.importance_loss = value_sum / layers;
    lb.applied_importance = applied_sum / layers;
    lb.mean_entropy_bits = entropy_n ? entropy_sum / static_cast<double>(entropy_n) : 0.0;
    if (lambda_imp > 0.0) {
      auto imp = scale(sum(concat(applied, 0)), T(lambda_imp / layers));
      total = add(total, imp);
    }
  }
  lb.total = static_cast<double>(total.item());
  return {total, lb};
}

/// One optimizer step on the trainable parameters.
template <typename T>
LossBreakdown train_step(FusionModel<T>& model, const FusionBatch<T>& batch, AdamW<T>& optimizer, double lambda_imp,
                         Rng& rng) {
  model.registry().zero_grad();
  auto fwd = model.forward(batch, true, rng);
  auto [total, lb] = objective(model, fwd, batch, lambda_imp);
  if (!std::isfinite(lb.total)) throw NumericError("training loss is not finite");
  backward(total);
  optimizer.step();
  return lb;
}

// Checkpoint layout (all integers little-endian):
//   "MOPE-CHECKPOINT 1\n"
//   "precision = 32|64\n"
//   config lines "key = value\n" ...
//   "end-config\n"
//   u32 entry count, then per entry:
//     u32 name length, name bytes, u32 rank, u64 dims[rank],
//     numel raw IEEE-754 values of the stated precision.
inline constexpr const char* kCheckpointMagic = "MOPE-CHECKPOINT 1";

namespace detail {

template <typename I>
void put_le(std::ostream& os, I v) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  os.write(reinterpret_cast<const char*>(&v), sizeof(I));
}

template <typename I>
I get_le(std::istream& is) {
  I v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(I))) throw CheckpointError("truncated checkpoint");
  return v;
}

}  // namespace detail

/// `extra` lines (for example the task and optimizer settings of the run)
/// are stored in the header after the model config.
template <typename T>
void save_checkpoint(const FusionModel<T>& model, const std::string& path, const KeyValues& extra = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open '" + path + "' for writing");
  KeyValues kv = extra;
  model.config().to_kv(kv);
  os << kCheckpointMagic << '\n' << "precision = " << sizeof(T) * 8 << '\n';
  kv.write(os);
  os << "end-config\n";
  const auto& params = model.registry().all();
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.tensor.ndim()));
    for (auto dim : p.tensor.shape()) detail::put_le<std::uint64_t>(os, dim);
    os.write(reinterpret_cast<const char*>(p.tensor.data().data()),
             static_cast<std::streamsize>(p.tensor.numel() * sizeof(T)));
  }
  if (!os) throw CheckpointError("write to '" + path + "' failed");
}

struct CheckpointHeader {
  FusionConfig model;
  int precision = 0;
  KeyValues entries;  // every header line, precision included
};

/// Parses the text header and leaves `is` at the binary payload. Keys under
/// task., train. and run. are carried but not interpreted.
inline CheckpointHeader read_checkpoint_header(std::istream& is, const std::string& path) {
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic)
    throw CheckpointError("'" + path + "' is not a version-1 checkpoint");
  std::string text;
  bool done = false;
  while (std::getline(is, line)) {
    if (line == "end-config") {
      done = true;
      break;
    }
    text += line + '\n';
  }
  if (!done) throw CheckpointError("checkpoint header is not terminated");
  CheckpointHeader h;
  try {
    h.entries = KeyValues::parse(text);
    h.entries.read("precision", h.precision);
    h.model = FusionConfig::from_kv(h.entries);
    h.entries.reject_unknown({"task.", "train.", "run."});
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  if (h.precision != 32 && h.precision != 64) throw CheckpointError("unsupported checkpoint precision");
  return h;
}

inline CheckpointHeader read_checkpoint_header(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open '" + path + "'");
  return read_checkpoint_header(is, path);
}

/// Rebuilds the model from the header, then overwrites every parameter.
/// Values stored at the other precision are converted.
template <typename T>
FusionModel<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open '" + path + "'");
  const auto header = read_checkpoint_header(is, path);
  const int precision = header.precision;
  FusionModel<T> model(header.model);
  auto& params = model.registry().all();
  const auto count = detail::get_le<std::uint32_t>(is);
  if (count != params.size())
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                          std::to_string(params.size()));
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = detail::get_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw CheckpointError("truncated checkpoint");
    auto* p = model.registry().find(name);
    if (!p) throw CheckpointError("checkpoint parameter '" + name + "' is not part of the model");
    const auto rank = detail::get_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& s : shape) s = static_cast<std::size_t>(detail::get_le<std::uint64_t>(is));
    if (shape != p->tensor.shape())
      throw CheckpointError("shape mismatch for '" + name + "': file " + shape_str(shape) + ", model " +
                            shape_str(p->tensor.shape()));
    auto& vals = p->tensor.values();
    if (precision == 32) {
      for (auto& v : vals) v = static_cast<T>(detail::get_le<float>(is));
    } else {
      for (auto& v : vals) v = static_cast<T>(detail::get_le<double>(is));
    }
  }
  return model;
}

}  // namespace mope
