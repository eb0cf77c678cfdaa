// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mope/errors.hpp"
#include "mope/ops.hpp"
#include "mope/optim.hpp"
#include "mope/rng.hpp"
#include "mope/tensor.hpp"

namespace mope {

struct EncoderConfig {
  std::size_t num_layers = 4;
  std::size_t hidden_dim = 64;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 128;
  // Token input when non-zero.
  std::size_t vocab_size = 32;
  // Feature input when non-zero: each position is a `feature_dim`-wide chunk
  // projected to `hidden_dim`.
  std::size_t feature_dim = 0;
  std::size_t max_seq_len = 16;
  std::uint64_t seed = 1;
  double init_std = 0.02;

  /// Messages name the offending key under `prefix` (e.g. "main.").
  void validate(const std::string& prefix = "encoder.") const {
    auto need = [&](bool ok, const char* key, const std::string& what) {
      if (!ok) throw ConfigError("key '" + prefix + key + "': " + what);
    };
    need(num_layers >= 1, "layers", "must be >= 1");
    need(hidden_dim >= 1, "hidden", "must be >= 1");
    need(num_heads >= 1, "heads", "must be >= 1");
    need(hidden_dim % num_heads == 0, "heads", "must divide the hidden width");
    need(ffn_dim >= 1, "ffn", "must be >= 1");
    need(max_seq_len >= 1, "seq_len", "must be >= 1");
    need((vocab_size >= 1) != (feature_dim >= 1), vocab_size ? "vocab" : "feature_dim",
         "exactly one of vocab / feature_dim must be set");
    need(init_std > 0.0, "init_std", "must be positive");
  }
};

/// A batch of equal-length token sequences, row-major [batch, length].
struct TokenBatch {
  std::vector<int> ids;
  std::size_t batch = 0;
  std::size_t length = 0;
};

/// A batch of dense inputs, each split into `positions` chunks.
template <typename T>
struct FeatureBatch {
  std::vector<T> values;
  std::size_t batch = 0;
  std::size_t positions = 0;
};

template <typename T>
struct EncoderOutput {
  Tensor<T> cls;     // [B, d]
  Tensor<T> tokens;  // [B, n, d]
};

/// Per-call instrumentation: the sequence length each layer's attention saw,
/// and the attention maps when capture is switched on.
template <typename T>
struct ForwardTrace {
  bool capture_attention = false;
  std::vector<std::size_t> attention_seq_len;
  std::vector<Tensor<T>> attention;  // [B*H, S, S] per layer
};

/// Returns the prompt block for a layer ([B, p, d]) or an undefined tensor.
template <typename T>
using PromptProvider = std::function<Tensor<T>(std::size_t layer)>;

/// Pre-norm transformer encoder with a [CLS] slot and per-layer prompt
/// insertion. Weights come from a seeded truncated normal; the body is frozen
/// unless constructed with `frozen = false`.
template <typename T>
class Encoder {
 public:
  struct Layer {
    Tensor<T> ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_1, b_1, w_2, b_2;
  };

  Encoder(const EncoderConfig& cfg, ParameterRegistry<T>& registry, const std::string& prefix, bool frozen = true)
      : cfg_(cfg) {
    cfg_.validate(prefix.empty() ? "encoder." : prefix);
    Rng rng(cfg_.seed);
    const std::size_t d = cfg_.hidden_dim;
    const double sd = cfg_.init_std;
    auto reg = [&](const std::string& name, Tensor<T> t) {
      auto h = registry.add(prefix + name, std::move(t), frozen);
      body_.push_back(h);
      return h;
    };
    auto normal = [&](Shape s) { return init_truncated_normal<T>(std::move(s), sd, rng); };
    if (cfg_.vocab_size > 0)
      token_embedding_ = reg("embed.tokens", normal({cfg_.vocab_size, d}));
    else
      feature_proj_ = reg("embed.features", normal({cfg_.feature_dim, d}));
    cls_ = reg("embed.cls", normal({d}));
    positions_ = reg("embed.positions", normal({cfg_.max_seq_len + 1, d}));
    layers_.reserve(cfg_.num_layers);
    for (std::size_t i = 0; i < cfg_.num_layers; ++i) {
      const std::string p = "layer" + std::to_string(i) + ".";
      Layer l;
      l.ln1_g = reg(p + "ln1.gain", Tensor<T>({d}, T(1)));
      l.ln1_b = reg(p + "ln1.bias", Tensor<T>({d}));
      l.w_qkv = reg(p + "attn.w_qkv", normal({d, 3 * d}));
      l.b_qkv = reg(p + "attn.b_qkv", Tensor<T>({3 * d}));
      l.w_o = reg(p + "attn.w_o", normal({d, d}));
      l.b_o = reg(p + "attn.b_o", Tensor<T>({d}));
      l.ln2_g = reg(p + "ln2.gain", Tensor<T>({d}, T(1)));
      l.ln2_b = reg(p + "ln2.bias", Tensor<T>({d}));
      l.w_1 = reg(p + "ffn.w1", normal({d, cfg_.ffn_dim}));
      l.b_1 = reg(p + "ffn.b1", Tensor<T>({cfg_.ffn_dim}));
      l.w_2 = reg(p + "ffn.w2", normal({cfg_.ffn_dim, d}));
      l.b_2 = reg(p + "ffn.b2", Tensor<T>({d}));
      layers_.push_back(std::move(l));
    }
    final_g_ = reg("final_ln.gain", Tensor<T>({d}, T(1)));
    final_b_ = reg("final_ln.bias", Tensor<T>({d}));
  }

  const EncoderConfig& config() const { return cfg_; }
  std::size_t num_layers() const { return cfg_.num_layers; }
  std::size_t hidden_dim() const { return cfg_.hidden_dim; }

  /// [CLS] + embedded inputs with learned positions: [B, 1 + n, d].
  Tensor<T> embed(const TokenBatch& tokens) const {
    if (cfg_.vocab_size == 0) throw ConfigError("encoder expects feature input, got tokens");
    check_length(tokens.batch, tokens.length);
    if (tokens.ids.size() != tokens.batch * tokens.length) throw InputError("token batch size mismatch");
    auto x = embedding(token_embedding_, std::span<const int>(tokens.ids), Shape{tokens.batch, tokens.length});
    return prepend_cls(x, tokens.batch, tokens.length);
  }

  Tensor<T> embed(const FeatureBatch<T>& feats) const {
    if (cfg_.feature_dim == 0) throw ConfigError("encoder expects token input, got features");
    check_length(feats.batch, feats.positions);
    if (feats.values.size() != feats.batch * feats.positions * cfg_.feature_dim)
      throw DimensionError("feature batch has " + std::to_string(feats.values.size()) + " values, expected " +
                           std::to_string(feats.batch * feats.positions * cfg_.feature_dim));
    Tensor<T> raw({feats.batch, feats.positions, cfg_.feature_dim}, feats.values);
    return prepend_cls(matmul(raw, feature_proj_), feats.batch, feats.positions);
  }

  /// Projected feature chunks without [CLS] or positions: [B, n, d].
  Tensor<T> feature_embeddings(const FeatureBatch<T>& feats) const {
    if (cfg_.feature_dim == 0) throw ConfigError("encoder expects token input, got features");
    Tensor<T> raw({feats.batch, feats.positions, cfg_.feature_dim}, feats.values);
    return matmul(raw, feature_proj_);
  }

  /// One block over [cls, prompts, rest]. `hidden` is [B, 1 + n, d] without
  /// prompt rows; the result keeps the prompt rows ([B, 1 + p + n, d]).
  Tensor<T> layer_forward(std::size_t index, const Tensor<T>& hidden, const Tensor<T>& prompts,
                          ForwardTrace<T>* trace = nullptr) const {
    const std::size_t d = cfg_.hidden_dim;
    if (hidden.ndim() != 3 || hidden.dim(2) != d)
      throw DimensionError("layer input must be [B, S, " + std::to_string(d) + "], got " + shape_str(hidden.shape()));
    Tensor<T> x = hidden;
    if (prompts.defined()) {
      if (prompts.ndim() != 3 || prompts.dim(2) != d || prompts.dim(0) != hidden.dim(0))
        throw DimensionError("prompt block must be [" + std::to_string(hidden.dim(0)) + ", p, " + std::to_string(d) +
                             "], got " + shape_str(prompts.shape()));
      const std::size_t s = hidden.dim(1);
      x = concat<T>({narrow(hidden, 1, 0, 1), prompts, narrow(hidden, 1, 1, s - 1)}, 1);
    }
    const Layer& l = layers_.at(index);
    x = add(x, attention(l, layer_norm(x, l.ln1_g, l.ln1_b), trace));
    auto h = gelu(add(matmul(layer_norm(x, l.ln2_g, l.ln2_b), l.w_1), l.b_1));
    return add(x, add(matmul(h, l.w_2), l.b_2));
  }

  /// Runs every layer, asking `provider` for that layer's prompts and
  /// dropping the prompt rows before the next layer.
  template <typename Input>
  EncoderOutput<T> encode(const Input& input, const PromptProvider<T>& provider = nullptr,
                          ForwardTrace<T>* trace = nullptr) const {
    Tensor<T> h = embed(input);
    for (std::size_t i = 0; i < cfg_.num_layers; ++i) {
      Tensor<T> prompts = provider ? provider(i) : Tensor<T>();
      h = layer_forward(i, h, prompts, trace);
      if (prompts.defined()) {
        const std::size_t p = prompts.dim(1), s = h.dim(1);
        h = concat<T>({narrow(h, 1, 0, 1), narrow(h, 1, 1 + p, s - 1 - p)}, 1);
      }
    }
    h = layer_norm(h, final_g_, final_b_);
    const std::size_t b = h.dim(0), s = h.dim(1), d = cfg_.hidden_dim;
    return {reshape(narrow(h, 1, 0, 1), Shape{b, d}), narrow(h, 1, 1, s - 1)};
  }

  /// FNV-1a over the raw bytes of every body weight.
  std::uint64_t checksum() const {
    std::uint64_t hash = 1469598103934665603ULL;
    for (const auto& t : body_) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(t.data().data());
      for (std::size_t i = 0; i < t.numel() * sizeof(T); ++i) {
        hash ^= bytes[i];
        hash *= 1099511628211ULL;
      }
    }
    return hash;
  }

  const std::vector<Tensor<T>>& body() const { return body_; }
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  void check_length(std::size_t batch, std::size_t length) const {
    if (batch == 0 || length == 0) throw InputError("empty input batch or sequence");
    if (length > cfg_.max_seq_len)
      throw InputError("sequence length " + std::to_string(length) + " exceeds max_seq_len " +
                       std::to_string(cfg_.max_seq_len));
  }

  Tensor<T> prepend_cls(const Tensor<T>& x, std::size_t batch, std::size_t n) const {
    auto cls = expand_batch(reshape(cls_, Shape{1, cfg_.hidden_dim}), batch);
    auto seq = concat<T>({cls, x}, 1);
    return add(seq, narrow(positions_, 0, 0, n + 1));
  }

  Tensor<T> attention(const Layer& l, const Tensor<T>& a, ForwardTrace<T>* trace) const {
    const std::size_t b = a.dim(0), s = a.dim(1), d = cfg_.hidden_dim, heads = cfg_.num_heads, dh = d / heads;
    auto qkv = add(matmul(a, l.w_qkv), l.b_qkv);                              // [B, S, 3d]
    auto split = permute(reshape(qkv, Shape{b, s, 3, heads, dh}), {2, 0, 3, 1, 4});  // [3, B, H, S, dh]
    auto part = [&](std::size_t i) { return reshape(narrow(split, 0, i, 1), Shape{b * heads, s, dh}); };
    auto q = part(0), k = part(1), v = part(2);
    auto scores = scale(matmul(q, transpose(k)), T(1) / std::sqrt(T(dh)));
    auto weights = softmax(scores, 2);
    if (trace) {
      trace->attention_seq_len.push_back(s);
      if (trace->capture_attention) trace->attention.push_back(weights);
    }
    auto ctx = matmul(weights, v);                                                // [B*H, S, dh]
    auto merged = reshape(permute(reshape(ctx, Shape{b, heads, s, dh}), {0, 2, 1, 3}), Shape{b, s, d});
    return add(matmul(merged, l.w_o), l.b_o);
  }

  EncoderConfig cfg_;
  Tensor<T> token_embedding_, feature_proj_, cls_, positions_, final_g_, final_b_;
  std::vector<Layer> layers_;
  std::vector<Tensor<T>> body_;
};

}  // namespace mope
