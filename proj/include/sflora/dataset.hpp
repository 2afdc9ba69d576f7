// SPDX-License-Identifier: Apache-2.0
//
// Synthetic non-IID classification data: class-conditional Gaussians with
// unit covariance, one client shard per device with Dirichlet label skew, and
// a balanced held-out evaluation split shared by every run.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sflora/matrix.hpp"

namespace sflora {

struct DatasetSpec {
  std::size_t samples_per_client = 400;
  std::size_t eval_per_class = 250;
  double alpha = 0.5;       // Dirichlet concentration
  double separation = 2.0;  // distance from each class mean to a pairwise decision boundary, in sigmas
};

struct Shard {
  Matrix features;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

struct Dataset {
  std::vector<Shard> clients;
  Shard eval;
  std::vector<std::vector<double>> proportions;  // per-client Dirichlet draw
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Class means sit on a centered scaled simplex in the first K coordinates,
// pairwise 2 * separation apart.
inline Matrix class_means(std::size_t num_classes, std::size_t input_dim, double separation) {
  Matrix means(num_classes, input_dim);
  const double scale = separation * std::sqrt(2.0);
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (std::size_t j = 0; j < num_classes; ++j) {
      means(k, j) = scale * ((j == k ? 1.0 : 0.0) - 1.0 / static_cast<double>(num_classes));
    }
  }
  return means;
}

namespace detail {

inline std::vector<double> dirichlet(std::mt19937_64& rng, std::size_t k, double alpha) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(k);
  double sum = 0.0;
  for (double& v : p) {
    v = gamma(rng);
    sum += v;
  }
  if (sum <= 0.0) {
    // Every draw underflowed; all mass on the first class.
    std::fill(p.begin(), p.end(), 0.0);
    p[0] = 1.0;
    return p;
  }
  for (double& v : p) v /= sum;
  return p;
}

inline int draw_label(std::mt19937_64& rng, const std::vector<double>& p) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double x = unif(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    acc += p[k];
    if (x < acc) return static_cast<int>(k);
  }
  for (std::size_t k = p.size(); k-- > 0;) {
    if (p[k] > 0.0) return static_cast<int>(k);
  }
  return 0;
}

inline void fill_sample(std::mt19937_64& rng, const Matrix& means, int label, std::span<double> row) {
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t j = 0; j < row.size(); ++j) row[j] = means(static_cast<std::size_t>(label), j) + noise(rng);
}

}  // namespace detail

inline Dataset generate_dataset(const DatasetSpec& spec, std::size_t num_clients, std::size_t input_dim,
                                std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("generate_dataset: need at least 2 classes");
  if (num_classes > input_dim) throw std::invalid_argument("generate_dataset: num_classes exceeds input_dim");
  if (!(spec.alpha > 0.0)) throw std::invalid_argument("generate_dataset: alpha must be > 0");
  if (spec.samples_per_client < num_classes) {
    throw std::invalid_argument("generate_dataset: fewer samples per client than classes");
  }
  if (spec.eval_per_class == 0) throw std::invalid_argument("generate_dataset: empty eval split");
  if (num_clients == 0) throw std::invalid_argument("generate_dataset: no clients");

  const Matrix means = class_means(num_classes, input_dim, spec.separation);
  std::mt19937_64 rng(splitmix64(seed ^ 0xda7a5e7ULL));

  Dataset ds;
  ds.proportions.reserve(num_clients);
  for (std::size_t u = 0; u < num_clients; ++u) ds.proportions.push_back(detail::dirichlet(rng, num_classes, spec.alpha));

  ds.clients.resize(num_clients);
  for (std::size_t u = 0; u < num_clients; ++u) {
    Shard& s = ds.clients[u];
    s.features = Matrix(spec.samples_per_client, input_dim);
    s.labels.resize(spec.samples_per_client);
    for (std::size_t i = 0; i < spec.samples_per_client; ++i) {
      s.labels[i] = detail::draw_label(rng, ds.proportions[u]);
      detail::fill_sample(rng, means, s.labels[i], s.features.row(i));
    }
  }

  const std::size_t n_eval = spec.eval_per_class * num_classes;
  ds.eval.features = Matrix(n_eval, input_dim);
  ds.eval.labels.resize(n_eval);
  for (std::size_t i = 0; i < n_eval; ++i) {
    ds.eval.labels[i] = static_cast<int>(i % num_classes);
    detail::fill_sample(rng, means, ds.eval.labels[i], ds.eval.features.row(i));
  }
  return ds;
}

// All client shards concatenated in client order.
inline Shard pooled(const Dataset& ds) {
  std::size_t n = 0;
  const std::size_t d = ds.eval.features.cols();
  for (const auto& s : ds.clients) n += s.size();
  Shard out;
  out.features = Matrix(n, d);
  out.labels.reserve(n);
  std::size_t r = 0;
  for (const auto& s : ds.clients) {
    for (std::size_t i = 0; i < s.size(); ++i, ++r) {
      std::copy(s.features.row(i).begin(), s.features.row(i).end(), out.features.row(r).begin());
      out.labels.push_back(s.labels[i]);
    }
  }
  return out;
}

// FNV-1a over every feature and label, hex encoded.
inline std::string content_hash(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  auto mix_shard = [&](const Shard& s) {
    auto v = s.features.values();
    mix(v.data(), v.size() * sizeof(double));
    mix(s.labels.data(), s.labels.size() * sizeof(int));
  };
  for (const auto& s : ds.clients) mix_shard(s);
  mix_shard(ds.eval);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace sflora
