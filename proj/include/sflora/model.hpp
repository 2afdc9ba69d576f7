// SPDX-License-Identifier: Apache-2.0
//
// Layered classifier with frozen weights and one trainable low-rank adapter
// per hidden layer. Forward and backward passes run over an arbitrary
// contiguous range of stages so the same code serves client-side prefixes,
// server-side suffixes and the monolithic model.
//
// Stage numbering for a model with N hidden layers:
//   0        input lift   (d -> m, linear, frozen, no adapter)
//   1..N     hidden layer h <- tanh(h (W + B A)^T), W frozen, (A, B) trainable
//   N+1      head         (m -> K, linear, frozen, no adapter)
//
// A client with cut c runs stages [0, c]; the server finishes [c+1, N+1].

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sflora/matrix.hpp"

namespace sflora {

struct ModelConfig {
  std::size_t num_layers = 6;   // hidden layers carrying adapters
  std::size_t hidden_dim = 32;
  std::size_t rank = 4;
  std::size_t input_dim = 16;
  std::size_t num_classes = 4;
  std::uint64_t seed = 7;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void validate(const ModelConfig& c) {
  if (c.num_layers < 1) throw std::invalid_argument("ModelConfig: num_layers must be >= 1");
  if (c.rank < 1) throw std::invalid_argument("ModelConfig: rank must be >= 1");
  if (c.rank >= c.hidden_dim) throw std::invalid_argument("ModelConfig: rank must be < hidden_dim");
  if (c.input_dim < 1) throw std::invalid_argument("ModelConfig: input_dim must be >= 1");
  if (c.num_classes < 2) throw std::invalid_argument("ModelConfig: num_classes must be >= 2");
}

struct FrozenStack {
  Matrix input_lift;           // d x m
  std::vector<Matrix> hidden;  // N matrices, m x m
  Matrix head;                 // m x K

  std::size_t num_layers() const noexcept { return hidden.size(); }
  std::size_t hidden_dim() const noexcept { return head.rows(); }
  std::size_t input_dim() const noexcept { return input_lift.rows(); }
  std::size_t num_classes() const noexcept { return head.cols(); }

  friend bool operator==(const FrozenStack&, const FrozenStack&) = default;
};

struct LoraAdapter {
  std::size_t layer = 0;  // 1-based hidden layer index
  Matrix a;               // r x m
  Matrix b;               // m x r

  friend bool operator==(const LoraAdapter&, const LoraAdapter&) = default;
};

// Ordered, contiguous run of adapters. A full set covers layers 1..N; client
// and server slices cover 1..cut and cut+1..N. `cut` records the partition the
// set was assembled from (0 when not meaningful).
struct AdapterSet {
  std::vector<LoraAdapter> adapters;
  std::size_t cut = 0;

  std::size_t size() const noexcept { return adapters.size(); }
  bool empty() const noexcept { return adapters.empty(); }
  std::size_t first_layer() const noexcept { return adapters.empty() ? 0 : adapters.front().layer; }
  std::size_t last_layer() const noexcept { return adapters.empty() ? 0 : adapters.back().layer; }

  const LoraAdapter& at_layer(std::size_t layer) const {
    if (adapters.empty() || layer < first_layer() || layer > last_layer()) {
      throw std::out_of_range("AdapterSet: no adapter for layer " + std::to_string(layer));
    }
    return adapters[layer - first_layer()];
  }
  LoraAdapter& at_layer(std::size_t layer) {
    return const_cast<LoraAdapter&>(std::as_const(*this).at_layer(layer));
  }

  friend bool operator==(const AdapterSet&, const AdapterSet&) = default;
};

// Throws unless layers are strictly consecutive.
inline void require_contiguous(const AdapterSet& s, const char* what) {
  for (std::size_t i = 1; i < s.adapters.size(); ++i) {
    if (s.adapters[i].layer != s.adapters[i - 1].layer + 1) {
      throw std::invalid_argument(std::string(what) + ": adapter layers are not contiguous");
    }
  }
}

// Inclusive range of stages.
struct StageRange {
  std::size_t first = 0;
  std::size_t last = 0;

  friend bool operator==(const StageRange&, const StageRange&) = default;
};

inline StageRange full_range(std::size_t num_layers) { return {0, num_layers + 1}; }
inline StageRange client_range(std::size_t cut) { return {0, cut}; }
inline StageRange server_range(std::size_t cut, std::size_t num_layers) { return {cut + 1, num_layers + 1}; }

struct ForwardCache {
  StageRange range;
  // Indexed by stage - range.first.
  std::vector<Matrix> inputs;       // activation entering the stage
  std::vector<Matrix> projections;  // input * A^T (hidden stages only)
  std::vector<Matrix> outputs;      // post-activation leaving the stage (hidden stages only)

  std::size_t batch() const noexcept { return inputs.empty() ? 0 : inputs.front().rows(); }
};

struct ForwardResult {
  Matrix output;  // batch x m, or batch x K when the range ends at the head
  ForwardCache cache;
};

struct AdapterGrad {
  std::size_t layer = 0;
  Matrix da;  // r x m
  Matrix db;  // m x r
};

struct GradBundle {
  StageRange range;
  std::vector<AdapterGrad> grads;  // one per hidden layer in range, ascending
  // Gradient w.r.t. the activation entering the range. Left empty when the
  // range starts at the input lift, since nothing upstream consumes it.
  Matrix input_grad;
};

struct Model {
  FrozenStack stack;
  AdapterSet adapters;
};

inline Model init_model(const ModelConfig& config) {
  validate(config);
  const std::size_t m = config.hidden_dim;
  const std::size_t r = config.rank;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> frozen(0.0, 1.0 / std::sqrt(static_cast<double>(m)));
  std::normal_distribution<double> lora_a(0.0, 1.0 / std::sqrt(static_cast<double>(r)));

  auto fill = [&rng](Matrix& x, auto& dist) {
    for (double& v : x.values()) v = dist(rng);
  };

  Model model;
  model.stack.input_lift = Matrix(config.input_dim, m);
  fill(model.stack.input_lift, frozen);
  model.stack.hidden.reserve(config.num_layers);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    Matrix w(m, m);
    fill(w, frozen);
    model.stack.hidden.push_back(std::move(w));
  }
  model.stack.head = Matrix(m, config.num_classes);
  fill(model.stack.head, frozen);

  model.adapters.adapters.reserve(config.num_layers);
  for (std::size_t l = 1; l <= config.num_layers; ++l) {
    LoraAdapter ad{l, Matrix(r, m), Matrix(m, r)};
    fill(ad.a, lora_a);
    model.adapters.adapters.push_back(std::move(ad));
  }
  return model;
}

namespace detail {

inline void check_range(const FrozenStack& stack, StageRange range) {
  if (range.first > range.last || range.last > stack.num_layers() + 1) {
    throw std::out_of_range("stage range [" + std::to_string(range.first) + ", " +
                            std::to_string(range.last) + "] out of bounds for " +
                            std::to_string(stack.num_layers()) + " hidden layers");
  }
}

inline bool is_hidden(const FrozenStack& stack, std::size_t stage) {
  return stage >= 1 && stage <= stack.num_layers();
}

inline std::size_t hidden_count(const FrozenStack& stack, StageRange range) {
  std::size_t n = 0;
  for (std::size_t s = range.first; s <= range.last; ++s) n += is_hidden(stack, s) ? 1 : 0;
  return n;
}

inline void check_adapters(const FrozenStack& stack, const AdapterSet& adapters, StageRange range) {
  const std::size_t m = stack.hidden_dim();
  for (std::size_t s = range.first; s <= range.last; ++s) {
    if (!is_hidden(stack, s)) continue;
    const LoraAdapter& ad = adapters.at_layer(s);
    if (ad.a.cols() != m || ad.b.rows() != m || ad.a.rows() != ad.b.cols()) {
      throw std::invalid_argument("adapter shape mismatch at layer " + std::to_string(s));
    }
  }
}

}  // namespace detail

inline ForwardResult forward_partial(const FrozenStack& stack, const AdapterSet& adapters, StageRange range,
                                     const Matrix& input) {
  detail::check_range(stack, range);
  detail::check_adapters(stack, adapters, range);
  const std::size_t entry_cols = range.first == 0 ? stack.input_dim() : stack.hidden_dim();
  if (input.cols() != entry_cols || input.rows() == 0) {
    throw std::invalid_argument("forward_partial: input " + shape_string(input) + " does not match stage " +
                                std::to_string(range.first) + " (expects " + std::to_string(entry_cols) +
                                " columns)");
  }

  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.range = range;
  const std::size_t count = range.last - range.first + 1;
  cache.inputs.reserve(count);
  cache.projections.resize(count);
  cache.outputs.resize(count);

  Matrix h = input;
  for (std::size_t s = range.first; s <= range.last; ++s) {
    const std::size_t slot = s - range.first;
    cache.inputs.push_back(h);
    if (s == 0) {
      h = matmul(h, stack.input_lift);
    } else if (s == stack.num_layers() + 1) {
      h = matmul(h, stack.head);
    } else {
      const LoraAdapter& ad = adapters.at_layer(s);
      Matrix proj = matmul_nt(h, ad.a);         // batch x r
      Matrix z = matmul_nt(h, stack.hidden[s - 1]);  // h W^T
      Matrix low = matmul_nt(proj, ad.b);       // (h A^T) B^T
      axpy(1.0, low, z);
      for (double& v : z.values()) v = std::tanh(v);
      cache.projections[slot] = std::move(proj);
      cache.outputs[slot] = z;
      h = std::move(z);
    }
  }
  result.output = std::move(h);
  return result;
}

struct LossResult {
  double loss = 0.0;
  std::size_t correct = 0;
};

inline std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

inline void check_labels(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows() == 0) throw std::invalid_argument("empty batch");
  if (labels.size() != logits.rows()) throw std::invalid_argument("label count does not match batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
      throw std::invalid_argument("label " + std::to_string(y) + " out of range");
    }
  }
}

// Mean softmax cross-entropy (max-subtracted) and argmax hit count.
inline LossResult loss_and_metrics(const Matrix& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  LossResult out;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double denom = 0.0;
    for (double v : row) denom += std::exp(v - mx);
    out.loss += std::log(denom) - (row[static_cast<std::size_t>(labels[i])] - mx);
    if (argmax_row(row) == static_cast<std::size_t>(labels[i])) ++out.correct;
  }
  out.loss /= static_cast<double>(logits.rows());
  return out;
}

// d(mean cross-entropy)/d(logits) = (softmax - onehot) / batch
inline Matrix loss_gradient(const Matrix& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  Matrix g(logits.rows(), logits.cols());
  const double inv_batch = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double denom = 0.0;
    for (double v : row) denom += std::exp(v - mx);
    for (std::size_t k = 0; k < row.size(); ++k) g(i, k) = std::exp(row[k] - mx) / denom * inv_batch;
    g(i, static_cast<std::size_t>(labels[i])) -= inv_batch;
  }
  return g;
}

// Backward pass over the cached range. `upstream` is the gradient of the loss
// w.r.t. the range's output (batch x K when the range ends at the head).
inline GradBundle backward_partial(const FrozenStack& stack, const AdapterSet& adapters, const ForwardCache& cache,
                                   const Matrix& upstream) {
  const StageRange range = cache.range;
  detail::check_range(stack, range);
  detail::check_adapters(stack, adapters, range);
  if (cache.inputs.size() != range.last - range.first + 1) {
    throw std::invalid_argument("backward_partial: cache does not cover its range");
  }
  const std::size_t exit_cols = range.last == stack.num_layers() + 1 ? stack.num_classes() : stack.hidden_dim();
  require_shape(upstream, cache.batch(), exit_cols, "backward_partial upstream");

  GradBundle bundle;
  bundle.range = range;
  bundle.grads.resize(detail::hidden_count(stack, range));

  Matrix g = upstream;
  for (std::size_t s = range.last + 1; s-- > range.first;) {
    const std::size_t slot = s - range.first;
    if (s == 0) {
      // Frozen lift with nothing upstream: stop here.
      g = Matrix();
    } else if (s == stack.num_layers() + 1) {
      g = matmul_nt(g, stack.head);  // dH = dLogits * head^T
    } else {
      const LoraAdapter& ad = adapters.at_layer(s);
      const Matrix& out = cache.outputs[slot];
      Matrix dz = std::move(g);
      auto dzv = dz.values();
      auto ov = out.values();
      for (std::size_t i = 0; i < dzv.size(); ++i) dzv[i] *= 1.0 - ov[i] * ov[i];

      AdapterGrad& ag = bundle.grads[s - std::max<std::size_t>(range.first, 1)];
      ag.layer = s;
      ag.db = matmul_tn(dz, cache.projections[slot]);  // m x r
      Matrix dproj = matmul(dz, ad.b);                 // batch x r
      ag.da = matmul_tn(dproj, cache.inputs[slot]);    // r x m

      g = matmul(dz, stack.hidden[s - 1]);
      axpy(1.0, matmul(dproj, ad.a), g);
    }
  }
  bundle.input_grad = std::move(g);
  return bundle;
}

inline GradBundle backward_partial(const FrozenStack& stack, const AdapterSet& adapters, const ForwardCache& cache,
                                   const Matrix& logits, std::span<const int> labels) {
  if (cache.range.last != stack.num_layers() + 1) {
    throw std::invalid_argument("backward_partial: labels given but range does not end at the head");
  }
  return backward_partial(stack, adapters, cache, loss_gradient(logits, labels));
}

inline void sgd_step(AdapterSet& adapters, const GradBundle& grads, double lr) {
  for (const AdapterGrad& g : grads.grads) {
    const LoraAdapter& ad = adapters.at_layer(g.layer);
    if (!ad.a.same_shape(g.da) || !ad.b.same_shape(g.db)) {
      throw std::invalid_argument("sgd_step: gradient shape mismatch at layer " + std::to_string(g.layer));
    }
  }
  // -0.0 * x can flip the sign bit of a zero entry.
  if (lr == 0.0) return;
  for (const AdapterGrad& g : grads.grads) {
    LoraAdapter& ad = adapters.at_layer(g.layer);
    axpy(-lr, g.da, ad.a);
    axpy(-lr, g.db, ad.b);
  }
}

inline Matrix merge_delta(const LoraAdapter& adapter) { return matmul(adapter.b, adapter.a); }

// Logits for a batch through the whole model.
inline Matrix predict(const FrozenStack& stack, const AdapterSet& full, const Matrix& features) {
  return forward_partial(stack, full, full_range(stack.num_layers()), features).output;
}

}  // namespace sflora
