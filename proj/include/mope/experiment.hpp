// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "mope/config.hpp"
#include "mope/diagnostics.hpp"
#include "mope/errors.hpp"
#include "mope/fusion.hpp"
#include "mope/metrics.hpp"
#include "mope/tasks.hpp"
#include "mope/trainer.hpp"

namespace mope {

/// One trained configuration of a sweep.
struct Cell {
  std::string id;
  RunConfig config;
  std::size_t shots = 0;  // training instances used (0: all)
};

struct CellResult {
  std::string id;
  std::uint64_t seed = 0;
  std::string kinds;
  std::string routing;
  std::size_t experts = 0;
  std::size_t prompt_len = 0;
  double lambda_imp = 0.0;
  std::size_t train_size = 0;
  MetricReport test;
  std::size_t trainable_params = 0;
  double wall_clock_s = 0.0;
  std::size_t seq_len = 0;  // main-encoder attention length
  bool routed = false;
  std::vector<double> final_cv;            // per layer, over the test split
  std::vector<double> final_entropy_bits;  // per layer, over the test split
  double mutual_information_bits = 0.0;
  DiagnosticsDump diagnostics;  // test split, routed cells only
  TrainLog log;
};

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"ablation", "k_vs_l", "shots", "dense_vs_sparse", "importance_on_off"};
  return names;
}

/// Cells of a named experiment, derived from `base`.
inline std::vector<Cell> experiment_cells(const std::string& name, const RunConfig& base) {
  std::vector<Cell> cells;
  auto add = [&](std::string id, auto&& edit, std::size_t shots = 0) {
    Cell c{std::move(id), base, shots};
    edit(c.config);
    c.config.resolve();
    cells.push_back(std::move(c));
  };
  if (name == "ablation") {
    for (const auto& kinds : PromptKinds::all_subsets())
      add(kinds.str(), [&](RunConfig& rc) { rc.model.prompts.enabled = kinds; });
  } else if (name == "k_vs_l") {
    // Same per-layer prompt count (k + 1) * l + 1: grow k at l = 6, or l at k = 2.
    for (std::size_t k : {2, 4, 8})
      add("k" + std::to_string(k) + "_l6", [&](RunConfig& rc) {
        rc.model.prompts.num_experts = k;
        rc.model.prompts.prompt_len = 6;
      });
    for (std::size_t k : {4, 8}) {
      const std::size_t l = 2 * (k + 1);
      add("k2_l" + std::to_string(l), [&](RunConfig& rc) {
        rc.model.prompts.num_experts = 2;
        rc.model.prompts.prompt_len = l;
      });
    }
  } else if (name == "shots") {
    for (std::size_t n : {64, 256, 512, 1024})
      add("shots" + std::to_string(n), [](RunConfig&) {}, n);
    add("shots_full", [](RunConfig&) {});
  } else if (name == "dense_vs_sparse") {
    add("dense", [](RunConfig& rc) { rc.model.prompts.routing = RoutingMode::kDense; });
    add("sparse", [](RunConfig& rc) { rc.model.prompts.routing = RoutingMode::kSparseTop1; });
  } else if (name == "importance_on_off") {
    add("imp_on", [](RunConfig& rc) { rc.model.lambda_imp = 1.0; });
    add("imp_off", [](RunConfig& rc) { rc.model.lambda_imp = 0.0; });
  } else {
    throw ConfigError("unknown experiment '" + name + "' (expected ablation, k_vs_l, shots, dense_vs_sparse or "
                      "importance_on_off)");
  }
  return cells;
}

/// Trains and scores one cell on a pre-generated dataset.
template <typename T>
CellResult run_cell(const Cell& cell, const Dataset& data, std::uint64_t seed) {
  RunConfig rc = cell.config;
  rc.set_seed(seed);
  CellResult r;
  r.id = cell.id;
  r.seed = seed;
  r.kinds = rc.model.prompts.enabled.str();
  r.routing = rc.model.prompts.routing == RoutingMode::kDense ? "dense" : "sparse_top1";
  r.experts = rc.model.prompts.num_experts;
  r.prompt_len = rc.model.prompts.prompt_len;
  r.lambda_imp = rc.model.lambda_imp;
  const auto start = std::chrono::steady_clock::now();
  FusionModel<T> model(rc.model);
  const Split train_split = subsample(data.train, cell.shots);
  r.train_size = train_split.size();
  r.log = train(model, train_split, rc.train);
  r.test = evaluate(model, data.test);
  r.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.trainable_params = model.count_params().trainable;
  {
    NoGradGuard no_grad;
    Rng rng(0);
    const std::size_t row = 0;
    auto batch = make_batch<T>(data.test, std::span<const std::size_t>(&row, 1), rc.model.comp.max_seq_len);
    auto fwd = model.forward(batch, false, rng);
    r.seq_len = fwd.trace.attention_seq_len.empty() ? 0 : fwd.trace.attention_seq_len.front();
  }
  r.routed = model.routes();
  if (r.routed) {
    r.diagnostics = diagnose(model, data.test, data.config.num_groups);
    r.diagnostics.records.clear();
    for (const auto& st : r.diagnostics.layer_importance) r.final_cv.push_back(st.cv);
    r.final_entropy_bits = r.diagnostics.layer_entropy_bits;
    r.mutual_information_bits = r.diagnostics.mutual_information_bits;
  }
  return r;
}

inline void write_cell_header(std::ostream& os) {
  os << "cell_id,seed,kinds,routing,experts,prompt_len,lambda_imp,train_size,accuracy,f1_macro,f1_micro,"
        "trainable_params,wall_clock_s,seq_len,mean_cv,mean_entropy_bits,mutual_information_bits\n";
}

inline void write_cell_row(std::ostream& os, const CellResult& r) {
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  os << r.id << ',' << r.seed << ',' << r.kinds << ',' << r.routing << ',' << r.experts << ',' << r.prompt_len << ','
     << r.lambda_imp << ',' << r.train_size << ',' << r.test.accuracy << ',' << r.test.f1_macro << ','
     << r.test.f1_micro << ',' << r.trainable_params << ',' << r.wall_clock_s << ',' << r.seq_len << ','
     << mean(r.final_cv) << ',' << mean(r.final_entropy_bits) << ',' << r.mutual_information_bits << '\n';
}

/// Runs every cell for every seed. With a non-empty `out_dir` it writes
/// metrics.csv (one row per cell and seed) plus per-cell diagnostics and
/// contingency CSVs. `on_cell` sees each result as it finishes.
template <typename T>
std::vector<CellResult> run_experiment(const std::string& name, const RunConfig& base,
                                       const std::vector<std::uint64_t>& seeds, const std::string& out_dir = "",
                                       const std::function<void(const CellResult&)>& on_cell = nullptr) {
  const auto cells = experiment_cells(name, base);
  RunConfig resolved = base;
  resolved.resolve();
  const Dataset data = generate(resolved.task);
  std::ofstream metrics;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics.open(std::filesystem::path(out_dir) / "metrics.csv");
    if (!metrics) throw InputError("cannot write to '" + out_dir + "'");
    write_cell_header(metrics);
  }
  std::vector<CellResult> results;
  for (const auto& cell : cells) {
    for (std::uint64_t seed : seeds) {
      auto r = run_cell<T>(cell, data, seed);
      if (metrics.is_open()) {
        write_cell_row(metrics, r);
        metrics.flush();
        const std::string stem = cell.id + "_seed" + std::to_string(seed);
        std::ofstream diag(std::filesystem::path(out_dir) / ("diagnostics_" + stem + ".csv"));
        write_diagnostics_csv(diag, r.log);
        if (r.routed) {
          std::ofstream cont(std::filesystem::path(out_dir) / ("contingency_" + stem + ".csv"));
          write_contingency_csv(cont, r.diagnostics);
        }
      }
      if (on_cell) on_cell(r);
      results.push_back(std::move(r));
    }
  }
  return results;
}

}  // namespace mope
