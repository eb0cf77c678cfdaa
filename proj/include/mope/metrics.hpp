// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "mope/errors.hpp"
#include "mope/fusion.hpp"
#include "mope/rng.hpp"
#include "mope/tasks.hpp"

namespace mope {

struct ClassCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct MetricReport {
  double accuracy = 0.0;
  double f1_macro = 0.0;
  double f1_micro = 0.0;
  std::vector<ClassCounts> per_class;
  std::size_t instances = 0;
};

namespace detail {

inline double f1(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace detail

/// Macro F1 is the unweighted mean of per-class F1 (0/0 counts as 0); micro
/// F1 pools the counts. `accuracy` is left to the caller.
inline MetricReport report_from_counts(std::vector<ClassCounts> counts) {
  MetricReport r;
  std::size_t tp = 0, fp = 0, fn = 0;
  double macro = 0.0;
  for (const auto& c : counts) {
    macro += detail::f1(c.tp, c.fp, c.fn);
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
  }
  r.f1_macro = counts.empty() ? 0.0 : macro / static_cast<double>(counts.size());
  r.f1_micro = detail::f1(tp, fp, fn);
  r.per_class = std::move(counts);
  return r;
}

inline MetricReport single_label_report(const std::vector<int>& predicted, const std::vector<int>& truth,
                                        std::size_t classes) {
  if (predicted.size() != truth.size()) throw InputError("prediction/label count mismatch");
  if (truth.empty()) throw InputError("cannot score an empty split");
  std::vector<ClassCounts> counts(classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto p = static_cast<std::size_t>(predicted[i]), t = static_cast<std::size_t>(truth[i]);
    correct += p == t;
    for (std::size_t c = 0; c < classes; ++c) {
      const bool pc = p == c, tc = t == c;
      counts[c].tp += pc && tc;
      counts[c].fp += pc && !tc;
      counts[c].fn += !pc && tc;
      counts[c].tn += !pc && !tc;
    }
  }
  auto r = report_from_counts(std::move(counts));
  r.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  r.instances = truth.size();
  return r;
}

/// Rows are instances, columns tags (0/1). Accuracy is exact-match.
inline MetricReport multilabel_report(const std::vector<std::vector<int>>& predicted,
                                      const std::vector<std::vector<int>>& truth) {
  if (predicted.size() != truth.size()) throw InputError("prediction/label count mismatch");
  if (truth.empty()) throw InputError("cannot score an empty split");
  const std::size_t tags = truth.front().size();
  std::vector<ClassCounts> counts(tags);
  std::size_t exact = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    exact += predicted[i] == truth[i];
    for (std::size_t c = 0; c < tags; ++c) {
      const bool pc = predicted[i][c] != 0, tc = truth[i][c] != 0;
      counts[c].tp += pc && tc;
      counts[c].fp += pc && !tc;
      counts[c].fn += !pc && tc;
      counts[c].tn += !pc && !tc;
    }
  }
  auto r = report_from_counts(std::move(counts));
  r.accuracy = static_cast<double>(exact) / static_cast<double>(truth.size());
  r.instances = truth.size();
  return r;
}

/// Evaluation pass without noise or tape. Single-label decisions are the
/// argmax; multi-label decisions threshold the sigmoid at 0.5.
template <typename T>
MetricReport evaluate(const FusionModel<T>& model, const Split& split, std::size_t batch_size = 256) {
  if (split.size() == 0) throw InputError("cannot evaluate an empty split");
  NoGradGuard no_grad;
  Rng rng(0);
  const std::size_t positions = model.config().comp.max_seq_len;
  const std::size_t classes = model.config().num_classes;
  std::vector<int> pred, truth;
  std::vector<std::vector<int>> pred_tags, true_tags;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < split.size(); start += batch_size) {
    rows.clear();
    for (std::size_t i = start; i < std::min(split.size(), start + batch_size); ++i) rows.push_back(i);
    auto batch = make_batch<T>(split, rows, positions);
    auto fwd = model.forward(batch, false, rng);
    const auto z = fwd.logits.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto row = z.subspan(i * classes, classes);
      if (model.config().multilabel) {
        std::vector<int> tags(classes);
        for (std::size_t c = 0; c < classes; ++c) tags[c] = row[c] > T(0) ? 1 : 0;
        pred_tags.push_back(std::move(tags));
        true_tags.push_back(split.items[rows[i]].tags);
      } else {
        pred.push_back(static_cast<int>(argmax_index<T>(row)));
        truth.push_back(split.items[rows[i]].label);
      }
    }
  }
  return model.config().multilabel ? multilabel_report(pred_tags, true_tags) : single_label_report(pred, truth, classes);
}

}  // namespace mope
