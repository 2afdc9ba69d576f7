// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "sflora/dataset.hpp"
#include "sflora/model.hpp"

namespace sflora {

struct Classification {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

// Macro-F1 averages per-class F1 with equal weight; a class with
// precision + recall = 0 contributes 0.
inline Classification classification_metrics(std::span<const int> predicted, std::span<const int> truth,
                                              std::size_t num_classes) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("classification_metrics: size mismatch");
  if (truth.empty()) throw std::invalid_argument("classification_metrics: empty input");
  std::vector<double> tp(num_classes, 0.0), fp(num_classes, 0.0), fn(num_classes, 0.0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto p = static_cast<std::size_t>(predicted[i]);
    const auto t = static_cast<std::size_t>(truth[i]);
    if (p >= num_classes || t >= num_classes) throw std::invalid_argument("classification_metrics: bad label");
    if (p == t) {
      ++hits;
      tp[t] += 1.0;
    } else {
      fp[p] += 1.0;
      fn[t] += 1.0;
    }
  }
  double f1_sum = 0.0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double precision = tp[k] + fp[k] > 0.0 ? tp[k] / (tp[k] + fp[k]) : 0.0;
    const double recall = tp[k] + fn[k] > 0.0 ? tp[k] / (tp[k] + fn[k]) : 0.0;
    if (precision + recall > 0.0) f1_sum += 2.0 * precision * recall / (precision + recall);
  }
  return {static_cast<double>(hits) / static_cast<double>(truth.size()), f1_sum / static_cast<double>(num_classes)};
}

inline std::vector<int> predict_labels(const FrozenStack& stack, const AdapterSet& full, const Matrix& features) {
  const Matrix logits = predict(stack, full, features);
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) out[i] = static_cast<int>(argmax_row(logits.row(i)));
  return out;
}

inline Classification evaluate(const FrozenStack& stack, const AdapterSet& full, const Shard& eval) {
  if (eval.size() == 0) throw std::invalid_argument("evaluate: empty eval split");
  const auto pred = predict_labels(stack, full, eval.features);
  return classification_metrics(pred, eval.labels, stack.num_classes());
}

}  // namespace sflora
