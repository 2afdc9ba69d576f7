// SPDX-License-Identifier: Apache-2.0
//
// Randomized check of the backward-time greedy order against exhaustive
// search, under the synchronized-availability model with zero arrivals.

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "sflora/costmodel.hpp"
#include "sflora/scheduler.hpp"
#include "sflora/timeline.hpp"

namespace sflora {

// Times are multiples of 1/64 so every sum is exact in binary floating point.
// Uplink and downlink share one value per instance; client forward is 0.
inline std::vector<StepTiming> random_instance(std::mt19937_64& rng, std::size_t clients) {
  std::uniform_int_distribution<int> ticks(1, 256);
  std::uniform_int_distribution<int> comm(0, 64);
  const double link = comm(rng) / 64.0;
  std::vector<StepTiming> t(clients);
  for (auto& s : t) {
    s.upload = link;
    s.download = link;
    s.server = ticks(rng) / 64.0;
    s.client_backward = ticks(rng) / 64.0;
  }
  return t;
}

struct ScheduleCheck {
  std::size_t instances = 0;
  std::size_t matches = 0;
  double worst_gap = 0.0;  // max (greedy - optimum)
};

inline ScheduleCheck check_greedy_optimality(std::size_t instances, std::size_t max_clients, std::uint64_t seed) {
  if (max_clients < 1 || max_clients > kBruteForceLimit) throw std::invalid_argument("max_clients out of range");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> size(1, max_clients);
  ScheduleCheck out;
  for (std::size_t i = 0; i < instances; ++i) {
    const auto timings = random_instance(rng, size(rng));
    const double greedy = simulate_timeline(backward_time_order(timings), timings, {}, TimelineMode::analytic).makespan;
    const double best = brute_force_order(timings, {}, TimelineMode::analytic).makespan;
    ++out.instances;
    if (greedy == best) ++out.matches;
    out.worst_gap = std::max(out.worst_gap, greedy - best);
  }
  return out;
}

}  // namespace sflora
