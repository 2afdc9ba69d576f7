// SPDX-License-Identifier: Apache-2.0
//
// Server processing-order policies. Every policy breaks ties by ascending
// client index, which is also ascending client_id.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sflora/costmodel.hpp"
#include "sflora/timeline.hpp"

namespace sflora {

enum class SchedulerKind { greedy, fifo, wf, optimal, none };

inline std::string to_string(SchedulerKind k) {
  switch (k) {
    case SchedulerKind::greedy: return "greedy";
    case SchedulerKind::fifo: return "fifo";
    case SchedulerKind::wf: return "wf";
    case SchedulerKind::optimal: return "optimal";
    case SchedulerKind::none: return "none";
  }
  return "?";
}

inline SchedulerKind parse_scheduler(const std::string& name) {
  if (name == "greedy") return SchedulerKind::greedy;
  if (name == "fifo") return SchedulerKind::fifo;
  if (name == "wf") return SchedulerKind::wf;
  if (name == "optimal") return SchedulerKind::optimal;
  if (name == "none") return SchedulerKind::none;
  throw std::invalid_argument("unknown scheduler '" + name + "' (expected greedy | fifo | wf | optimal | none)");
}

namespace detail {

template <class Before>
OrderAssignment sorted_order(std::size_t n, Before before) {
  OrderAssignment order;
  order.sequence.resize(n);
  std::iota(order.sequence.begin(), order.sequence.end(), std::size_t{0});
  std::stable_sort(order.sequence.begin(), order.sequence.end(), before);
  return order;
}

}  // namespace detail

// Clients by client-side layer count over compute capacity, descending: a
// proxy for the client backward time, which is what trails the server job.
inline OrderAssignment greedy_order(std::span<const DeviceProfile> devices) {
  if (devices.empty()) throw std::invalid_argument("greedy_order: no devices");
  // cut_a / cap_a > cut_b / cap_b without dividing.
  return detail::sorted_order(devices.size(), [&](std::size_t a, std::size_t b) {
    return static_cast<double>(devices[a].cut) * devices[b].capacity >
           static_cast<double>(devices[b].cut) * devices[a].capacity;
  });
}

// Clients by actual client backward time, descending.
inline OrderAssignment backward_time_order(std::span<const StepTiming> timings) {
  return detail::sorted_order(timings.size(), [&](std::size_t a, std::size_t b) {
    return timings[a].client_backward > timings[b].client_backward;
  });
}

inline OrderAssignment fifo_order(std::span<const double> arrivals) {
  for (double a : arrivals) {
    if (!std::isfinite(a)) throw std::invalid_argument("fifo_order: arrival times must be finite");
  }
  return detail::sorted_order(arrivals.size(), [&](std::size_t a, std::size_t b) { return arrivals[a] < arrivals[b]; });
}

// Largest server workload first.
inline OrderAssignment wf_order(std::span<const StepTiming> timings) {
  return detail::sorted_order(timings.size(),
                              [&](std::size_t a, std::size_t b) { return timings[a].server > timings[b].server; });
}

struct OptimalOrder {
  OrderAssignment order;
  double makespan = 0.0;
};

inline constexpr std::size_t kBruteForceLimit = 9;

// Exhaustive search over all permutations. Returns the lexicographically
// smallest order among those attaining the minimum makespan.
inline OptimalOrder brute_force_order(std::span<const StepTiming> timings, std::span<const double> lags = {},
                                      TimelineMode mode = TimelineMode::event_driven) {
  const std::size_t n = timings.size();
  if (n == 0) throw std::invalid_argument("brute_force_order: no clients");
  if (n > kBruteForceLimit) {
    throw std::invalid_argument("brute_force_order: " + std::to_string(n) + " clients exceeds the limit of " +
                                std::to_string(kBruteForceLimit));
  }
  OrderAssignment perm;
  perm.sequence.resize(n);
  std::iota(perm.sequence.begin(), perm.sequence.end(), std::size_t{0});
  OptimalOrder best{perm, std::numeric_limits<double>::infinity()};
  do {
    const double ms = simulate_timeline(perm, timings, lags, mode).makespan;
    if (ms < best.makespan) best = {perm, ms};
  } while (std::next_permutation(perm.sequence.begin(), perm.sequence.end()));
  return best;
}

inline OrderAssignment make_order(SchedulerKind kind, std::span<const DeviceProfile> devices,
                                  std::span<const StepTiming> timings, std::span<const double> lags,
                                  TimelineMode mode) {
  switch (kind) {
    case SchedulerKind::greedy: return greedy_order(devices);
    case SchedulerKind::fifo: {
      const auto arrivals = activation_arrivals(timings, lags);
      return fifo_order(arrivals);
    }
    case SchedulerKind::wf: return wf_order(timings);
    case SchedulerKind::optimal: return brute_force_order(timings, lags, mode).order;
    case SchedulerKind::none: {
      OrderAssignment id;
      id.sequence.resize(timings.size());
      std::iota(id.sequence.begin(), id.sequence.end(), std::size_t{0});
      return id;
    }
  }
  throw std::invalid_argument("make_order: unknown scheduler");
}

}  // namespace sflora
