// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mope/errors.hpp"
#include "mope/ops.hpp"
#include "mope/optim.hpp"
#include "mope/rng.hpp"
#include "mope/tensor.hpp"

namespace mope {

enum class RoutingMode { kDense, kSparseTop1 };

/// Which prompt kinds a layer contributes, in sequence order.
struct PromptKinds {
  bool static_prompt = true;
  bool dynamic_prompt = true;
  bool mapped_prompt = true;

  bool any() const { return static_prompt || dynamic_prompt || mapped_prompt; }
  bool operator==(const PromptKinds&) const = default;

  /// "s", "d", "m" letters joined by '+', e.g. "s+d+m".
  std::string str() const {
    std::string out;
    auto put = [&](bool on, const char* tag) {
      if (!on) return;
      if (!out.empty()) out += '+';
      out += tag;
    };
    put(static_prompt, "s");
    put(dynamic_prompt, "d");
    put(mapped_prompt, "m");
    return out.empty() ? "none" : out;
  }

  static PromptKinds parse(const std::string& text) {
    PromptKinds k{false, false, false};
    if (text == "none") return k;
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t end = text.find('+', start);
      const std::string tok = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
      if (tok == "s" || tok == "static")
        k.static_prompt = true;
      else if (tok == "d" || tok == "dynamic")
        k.dynamic_prompt = true;
      else if (tok == "m" || tok == "mapped")
        k.mapped_prompt = true;
      else
        throw ConfigError("unknown prompt kind '" + tok + "' in '" + text + "'");
      if (end == std::string::npos) break;
      start = end + 1;
    }
    return k;
  }

  /// The seven non-empty subsets in ablation-table order.
  static std::vector<PromptKinds> all_subsets() {
    return {{true, false, false}, {false, true, false}, {false, false, true}, {true, true, false},
            {true, false, true},  {false, true, true},  {true, true, true}};
  }
};

struct PromptConfig {
  std::size_t prompt_len = 6;
  std::size_t num_experts = 16;
  double temperature = 0.1;
  double noise_std = 0.1;
  RoutingMode routing = RoutingMode::kDense;
  PromptKinds enabled;
  std::size_t comp_dim = 64;
  // 0 means "same as the main hidden width".
  std::size_t mapper_hidden = 0;
  bool shared_mapper = false;
  double init_std = 0.02;
  // Mapper weights; 0 means "same as init_std".
  double mapper_init_std = 0.0;

  double mapper_std() const { return mapper_init_std > 0.0 ? mapper_init_std : init_std; }

  void validate() const {
    auto need = [](bool ok, const char* key, const std::string& what) {
      if (!ok) throw ConfigError(std::string("key 'prompt.") + key + "': " + what);
    };
    need(temperature > 0.0, "temperature", "must be > 0");
    need(prompt_len >= 1, "len", "must be >= 1");
    need(num_experts >= 1, "experts", "must be >= 1");
    need(noise_std >= 0.0, "noise_std", "must be >= 0");
    need(enabled.any(), "kinds", "at least one prompt kind must be enabled");
    need(comp_dim >= 1, "comp_dim", "must be >= 1");
    need(init_std > 0.0, "init_std", "must be positive");
    need(mapper_init_std >= 0.0, "mapper_init_std", "must be >= 0");
  }

  /// Rows contributed to every main-encoder layer.
  std::size_t rows() const {
    return (enabled.static_prompt ? prompt_len : 0) + (enabled.dynamic_prompt ? prompt_len : 0) +
           (enabled.mapped_prompt ? 1 : 0);
  }
};

/// Routing outcome for one instance at one layer.
struct RoutingRecord {
  std::size_t instance_id = 0;
  std::size_t layer_index = 0;
  std::vector<double> scores;  // softmax probabilities before gating
  std::vector<double> gated;   // weights applied to the experts
  double entropy_bits = 0.0;
  std::size_t argmax_expert = 0;
};

/// Shannon entropy in bits with 0 log 0 = 0.
inline double routing_entropy(std::span<const double> scores) {
  double h = 0.0;
  for (double r : scores)
    if (r > 0.0) h -= r * std::log2(r);
  return h < 0.0 ? 0.0 : h;
}

/// Index of the largest entry; the lowest index wins ties.
template <typename V>
std::size_t argmax_index(std::span<const V> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Two-layer GELU MLP from the complementary feature to one prompt row.
template <typename T>
struct Mapper {
  Tensor<T> w1, b1, w2, b2;

  Tensor<T> operator()(const Tensor<T>& psi) const {
    return add(matmul(gelu(add(matmul(psi, w1), b1)), w2), b2);
  }
};

template <typename T>
Mapper<T> make_mapper(std::size_t comp_dim, std::size_t hidden, std::size_t out_dim, double init_std, Rng& rng,
                      ParameterRegistry<T>& registry, const std::string& prefix) {
  Mapper<T> m;
  m.w1 = registry.add(prefix + "w1", init_truncated_normal<T>({comp_dim, hidden}, init_std, rng), false);
  m.b1 = registry.add(prefix + "b1", Tensor<T>({hidden}), false);
  m.w2 = registry.add(prefix + "w2", init_truncated_normal<T>({hidden, out_dim}, init_std, rng), false);
  m.b2 = registry.add(prefix + "b2", Tensor<T>({out_dim}), false);
  return m;
}

template <typename T>
struct RouteResult {
  Tensor<T> logits;        // post-temperature, pre-noise [B, k]
  Tensor<T> scores;        // softmax of (possibly noisy) logits [B, k]
  Tensor<T> clean_scores;  // softmax without noise [B, k]
  Tensor<T> gated;         // weights applied to experts [B, k]
  std::vector<RoutingRecord> records;
};

template <typename T>
struct AssembledPrompts {
  Tensor<T> block;  // [B, p, d]
  std::optional<RouteResult<T>> route;
  Tensor<T> dynamic_prompt;  // [B, l, d] when enabled
  Tensor<T> mapped_prompt;   // [B, d] when enabled
};

/// Per-layer prompt state: static prompt, expert pool with its router, and
/// the mapper. Only the enabled kinds own parameters.
template <typename T>
class LayerPromptModule {
 public:
  LayerPromptModule(const PromptConfig& cfg, std::size_t layer_index, std::size_t hidden_dim, Rng& rng,
                    ParameterRegistry<T>& registry, const std::string& prefix,
                    const std::optional<Mapper<T>>& shared_mapper = std::nullopt)
      : cfg_(cfg), layer_(layer_index), d_(hidden_dim) {
    cfg_.validate();
    const std::size_t l = cfg_.prompt_len, k = cfg_.num_experts;
    if (cfg_.enabled.static_prompt)
      static_ = registry.add(prefix + "static", init_truncated_normal<T>({l, d_}, cfg_.init_std, rng), false);
    if (cfg_.enabled.dynamic_prompt) {
      experts_ = registry.add(prefix + "experts", init_truncated_normal<T>({k, l, d_}, cfg_.init_std, rng), false);
      router_w_ =
          registry.add(prefix + "router.w", init_truncated_normal<T>({cfg_.comp_dim, k}, cfg_.init_std, rng), false);
      router_b_ = registry.add(prefix + "router.b", Tensor<T>({k}), false);
    }
    if (cfg_.enabled.mapped_prompt) {
      if (shared_mapper) {
        mapper_ = *shared_mapper;
      } else {
        const std::size_t hidden = cfg_.mapper_hidden ? cfg_.mapper_hidden : d_;
        mapper_ = make_mapper<T>(cfg_.comp_dim, hidden, d_, cfg_.mapper_std(), rng, registry, prefix + "mapper.");
      }
    }
  }

  const PromptConfig& config() const { return cfg_; }
  std::size_t layer_index() const { return layer_; }
  const Tensor<T>& static_prompt() const { return static_; }
  const Tensor<T>& experts() const { return experts_; }
  const Tensor<T>& router_weight() const { return router_w_; }
  const Tensor<T>& router_bias() const { return router_b_; }
  const std::optional<Mapper<T>>& mapper() const { return mapper_; }

  /// `ids` labels the records (row index when empty).
  /// logits = (psi W + b) / tau, plus N(0, noise_std^2) when training; scores
  /// are their softmax and `gated` the dense or top-1 weights.
  RouteResult<T> route(const Tensor<T>& psi, bool training, Rng& rng, std::span<const std::size_t> ids = {}) const {
    if (!cfg_.enabled.dynamic_prompt) throw ConfigError("routing requested but dynamic prompts are disabled");
    check_psi(psi);
    const std::size_t b = psi.dim(0), k = cfg_.num_experts;
    RouteResult<T> out;
    out.logits = scale(add(matmul(psi, router_w_), router_b_), T(1.0 / cfg_.temperature));
    out.clean_scores = softmax(out.logits, 1);
    if (training && cfg_.noise_std > 0.0) {
      Tensor<T> noise({b, k});
      for (auto& v : noise.values()) v = static_cast<T>(rng.normal(0.0, cfg_.noise_std));
      out.scores = softmax(add(out.logits, noise), 1);
    } else {
      out.scores = out.clean_scores;
    }
    if (cfg_.routing == RoutingMode::kDense) {
      out.gated = out.scores;
    } else {
      Tensor<T> mask({b, k});
      for (std::size_t i = 0; i < b; ++i) {
        const auto row = out.scores.data().subspan(i * k, k);
        mask.values()[i * k + argmax_index<T>(row)] = T(1);
      }
      out.gated = mul(out.scores, mask);
    }
    out.records.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
      RoutingRecord r;
      r.instance_id = ids.empty() ? i : ids[i];
      r.layer_index = layer_;
      r.scores.assign(out.scores.data().begin() + i * k, out.scores.data().begin() + (i + 1) * k);
      r.gated.assign(out.gated.data().begin() + i * k, out.gated.data().begin() + (i + 1) * k);
      r.entropy_bits = routing_entropy(r.scores);
      r.argmax_expert = argmax_index<double>(r.scores);
      out.records.push_back(std::move(r));
    }
    return out;
  }

  /// Weighted sum of the expert pool: [B, k] -> [B, l, d].
  Tensor<T> synthesize_dynamic(const Tensor<T>& gated) const {
    if (!cfg_.enabled.dynamic_prompt) throw ConfigError("dynamic prompts are disabled");
    const std::size_t k = cfg_.num_experts, l = cfg_.prompt_len;
    if (gated.ndim() != 2 || gated.dim(1) != k)
      throw DimensionError("gate weights must be [B, " + std::to_string(k) + "], got " + shape_str(gated.shape()));
    for (T w : gated.data())
      if (w < T(0)) throw ContractError("gate weights must be non-negative");
    auto flat = matmul(gated, reshape(experts_, Shape{k, l * d_}));
    return reshape(flat, Shape{gated.dim(0), l, d_});
  }

  /// The single mapped prompt row: [B, d_c] -> [B, d].
  Tensor<T> map_prompt(const Tensor<T>& psi) const {
    if (!mapper_) throw ConfigError("mapped prompts are disabled");
    check_psi(psi);
    return (*mapper_)(psi);
  }

  /// [P_s, P_d, P_m] for the enabled kinds, in that order: [B, p, d].
  AssembledPrompts<T> assemble(const Tensor<T>& psi, bool training, Rng& rng,
                               std::span<const std::size_t> ids = {}) const {
    if (!cfg_.enabled.any()) throw ConfigError("no prompt kinds enabled");
    if (psi.ndim() != 2) throw DimensionError("complementary feature must be [B, d_c], got " + shape_str(psi.shape()));
    const std::size_t b = psi.dim(0);
    AssembledPrompts<T> out;
    std::vector<Tensor<T>> parts;
    if (cfg_.enabled.static_prompt) parts.push_back(expand_batch(static_, b));
    if (cfg_.enabled.dynamic_prompt) {
      out.route = route(psi, training, rng, ids);
      out.dynamic_prompt = synthesize_dynamic(out.route->gated);
      parts.push_back(out.dynamic_prompt);
    }
    if (cfg_.enabled.mapped_prompt) {
      out.mapped_prompt = map_prompt(psi);
      parts.push_back(reshape(out.mapped_prompt, Shape{b, 1, d_}));
    }
    out.block = parts.size() == 1 ? parts.front() : concat(parts, 1);
    return out;
  }

 private:
  void check_psi(const Tensor<T>& psi) const {
    if (psi.ndim() != 2 || psi.dim(1) != cfg_.comp_dim)
      throw DimensionError("complementary feature must be [B, " + std::to_string(cfg_.comp_dim) + "], got " +
                           shape_str(psi.shape()));
    for (T v : psi.data())
      if (!std::isfinite(v)) throw NumericError("complementary feature contains a non-finite value");
  }

  PromptConfig cfg_;
  std::size_t layer_;
  std::size_t d_;
  Tensor<T> static_, experts_, router_w_, router_b_;
  std::optional<Mapper<T>> mapper_;
};

/// CSV with one row per (instance, layer, expert).
inline void write_routing_csv(std::ostream& os, const std::vector<RoutingRecord>& records) {
  os << "instance_id,layer,expert_id,score,entropy_bits,argmax\n";
  for (const auto& r : records)
    for (std::size_t e = 0; e < r.scores.size(); ++e)
      os << r.instance_id << ',' << r.layer_index << ',' << e << ',' << r.scores[e] << ',' << r.entropy_bits << ','
         << r.argmax_expert << '\n';
}

}  // namespace mope
