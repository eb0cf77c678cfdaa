// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <ostream>
#include <vector>

#include "mope/errors.hpp"
#include "mope/fusion.hpp"
#include "mope/rng.hpp"
#include "mope/tasks.hpp"
#include "mope/trainer.hpp"

namespace mope {

/// Routing behaviour of a trained model over one split.
struct DiagnosticsDump {
  std::vector<RoutingRecord> records;                    // every (instance, layer)
  std::vector<ImportanceStats> layer_importance;         // noiseless, whole split
  std::vector<double> layer_entropy_bits;                // mean over instances
  std::vector<std::vector<std::size_t>> contingency;     // [expert][group], last layer
  double mutual_information_bits = 0.0;
  std::size_t num_groups = 0;
};

/// I(row; column) in bits of a count table.
inline double mutual_information_bits(const std::vector<std::vector<std::size_t>>& table) {
  if (table.empty()) return 0.0;
  const std::size_t rows = table.size(), cols = table.front().size();
  std::vector<double> pr(rows, 0.0), pc(cols, 0.0);
  double n = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const auto v = static_cast<double>(table[r][c]);
      pr[r] += v;
      pc[c] += v;
      n += v;
    }
  if (n == 0.0) return 0.0;
  double mi = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      if (table[r][c] == 0) continue;
      const double pxy = static_cast<double>(table[r][c]) / n;
      mi += pxy * std::log2(pxy * n * n / (pr[r] * pc[c]));
    }
  return mi < 0.0 ? 0.0 : mi;
}

/// Noise-free routing over `split`. The contingency table crosses the
/// argmax expert at the last layer with the latent group.
template <typename T>
DiagnosticsDump diagnose(const FusionModel<T>& model, const Split& split, std::size_t num_groups,
                         std::size_t batch_size = 256) {
  if (!model.routes()) throw ConfigError("diagnostics need dynamic prompts on the main encoder");
  if (split.size() == 0) throw InputError("cannot diagnose an empty split");
  NoGradGuard no_grad;
  Rng rng(0);
  const std::size_t layers = model.config().main.num_layers, k = model.config().prompts.num_experts;
  const std::size_t positions = model.config().comp.max_seq_len;
  DiagnosticsDump dump;
  dump.num_groups = num_groups;
  dump.contingency.assign(k, std::vector<std::size_t>(num_groups, 0));
  std::vector<std::vector<std::vector<double>>> scores(layers);
  std::vector<double> entropy(layers, 0.0);
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < split.size(); start += batch_size) {
    rows.clear();
    for (std::size_t i = start; i < std::min(split.size(), start + batch_size); ++i) rows.push_back(i);
    auto batch = make_batch<T>(split, rows, positions);
    auto fwd = model.forward(batch, false, rng);
    for (std::size_t l = 0; l < fwd.routes.size(); ++l) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& rec = fwd.routes[l].records[i];
        scores[l].push_back(rec.scores);
        entropy[l] += rec.entropy_bits;
        if (l + 1 == layers) {
          const auto g = static_cast<std::size_t>(batch.groups[i]);
          if (g >= num_groups) throw InputError("latent group out of range");
          ++dump.contingency[rec.argmax_expert][g];
        }
        dump.records.push_back(rec);
      }
    }
  }
  for (std::size_t l = 0; l < layers; ++l) {
    dump.layer_importance.push_back(importance_stats(scores[l]));
    dump.layer_entropy_bits.push_back(entropy[l] / static_cast<double>(split.size()));
  }
  dump.mutual_information_bits = mutual_information_bits(dump.contingency);
  return dump;
}

/// Per-step importance trace: step,layer,expert_id,importance,cv,entropy_bits.
inline void write_diagnostics_csv(std::ostream& os, const TrainLog& log) {
  os << "step,layer,expert_id,importance,cv,entropy_bits\n";
  for (const auto& s : log.steps)
    for (std::size_t l = 0; l < s.loss.per_layer.size(); ++l) {
      const auto& st = s.loss.per_layer[l];
      for (std::size_t e = 0; e < st.importance.size(); ++e)
        os << s.step << ',' << l << ',' << e << ',' << st.importance[e] << ',' << st.cv << ','
           << s.loss.per_layer_entropy_bits[l] << '\n';
    }
}

inline void write_contingency_csv(std::ostream& os, const DiagnosticsDump& dump) {
  os << "expert_id,group_id,count\n";
  for (std::size_t e = 0; e < dump.contingency.size(); ++e)
    for (std::size_t g = 0; g < dump.contingency[e].size(); ++g)
      os << e << ',' << g << ',' << dump.contingency[e][g] << '\n';
}

}  // namespace mope
