// SPDX-License-Identifier: Apache-2.0
//
// Per-round timelines for the three server disciplines.
//
//   sequential  (ours) one server job at a time, in a given order
//   parallel    (sfl)  all server jobs overlap and share the server capacity
//                      equally (processor sharing)
//   serial      (sl)   clients run their whole step one after another
//
// Two modes. `analytic` charges a client's wait as the server time of every
// client served before it, regardless of when activations arrive; with zero
// lags it reproduces the closed-form step time exactly. `event_driven` starts
// a server job at max(activation arrival, server free) and a client's
// backward when its gradient arrives.

#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sflora/costmodel.hpp"

namespace sflora {

enum class TimelineMode { analytic, event_driven };

inline std::string to_string(TimelineMode m) { return m == TimelineMode::analytic ? "analytic" : "event_driven"; }

inline TimelineMode parse_timeline_mode(const std::string& s) {
  if (s == "analytic") return TimelineMode::analytic;
  if (s == "event_driven") return TimelineMode::event_driven;
  throw std::invalid_argument("unknown timeline mode '" + s + "' (expected analytic | event_driven)");
}

struct Timeline {
  double makespan = 0.0;
  std::vector<StepTiming> steps;  // wait filled in
  std::vector<double> server_start;
  std::vector<double> server_end;
  std::vector<double> completions;
};

namespace detail {

inline double lag_of(std::span<const double> lags, std::size_t u) { return lags.empty() ? 0.0 : lags[u]; }

inline void check_lags(std::span<const double> lags, std::size_t clients) {
  if (!lags.empty() && lags.size() != clients) throw std::invalid_argument("lag count does not match clients");
}

inline Timeline blank_timeline(std::span<const StepTiming> timings) {
  Timeline tl;
  tl.steps.assign(timings.begin(), timings.end());
  tl.server_start.assign(timings.size(), 0.0);
  tl.server_end.assign(timings.size(), 0.0);
  tl.completions.assign(timings.size(), 0.0);
  return tl;
}

}  // namespace detail

// Time at which client u's activations reach the server.
inline std::vector<double> activation_arrivals(std::span<const StepTiming> timings, std::span<const double> lags = {}) {
  detail::check_lags(lags, timings.size());
  std::vector<double> out(timings.size());
  for (std::size_t u = 0; u < timings.size(); ++u) {
    out[u] = detail::lag_of(lags, u) + timings[u].client_forward + timings[u].upload;
  }
  return out;
}

inline Timeline simulate_timeline(const OrderAssignment& order, std::span<const StepTiming> timings,
                                  std::span<const double> lags, TimelineMode mode) {
  require_permutation(order, timings.size());
  const std::vector<double> arrival = activation_arrivals(timings, lags);
  Timeline tl = detail::blank_timeline(timings);
  double prefix = 0.0;      // analytic: server time of earlier clients
  double server_free = 0.0;  // event-driven
  for (std::size_t u : order.sequence) {
    double start = 0.0;
    if (mode == TimelineMode::analytic) {
      tl.steps[u].wait = prefix;
      start = arrival[u] + prefix;
      prefix += timings[u].server;
    } else {
      start = std::max(arrival[u], server_free);
      tl.steps[u].wait = start - arrival[u];
      server_free = start + timings[u].server;
    }
    tl.server_start[u] = start;
    tl.server_end[u] = start + timings[u].server;
    tl.completions[u] = tl.server_end[u] + timings[u].download + timings[u].client_backward;
    tl.makespan = std::max(tl.makespan, tl.completions[u]);
  }
  return tl;
}

// Completion times of jobs under egalitarian processor sharing. work[i] is
// the time job i needs with the whole server to itself.
inline std::vector<double> processor_sharing(std::span<const double> release, std::span<const double> work) {
  if (release.size() != work.size()) throw std::invalid_argument("processor_sharing: size mismatch");
  const std::size_t n = work.size();
  std::vector<std::size_t> pending(n);
  for (std::size_t i = 0; i < n; ++i) pending[i] = i;
  std::stable_sort(pending.begin(), pending.end(),
                   [&](std::size_t a, std::size_t b) { return release[a] < release[b]; });

  std::vector<double> done(n, 0.0);
  std::vector<double> remaining(work.begin(), work.end());
  std::vector<std::size_t> active;
  std::size_t next = 0;
  double t = 0.0;

  auto admit = [&](double now) {
    while (next < n && release[pending[next]] <= now) {
      const std::size_t j = pending[next++];
      if (remaining[j] <= 0.0) {
        done[j] = std::max(now, release[j]);
      } else {
        active.push_back(j);
      }
    }
  };

  while (next < n || !active.empty()) {
    if (active.empty()) {
      t = std::max(t, release[pending[next]]);
      admit(t);
      continue;
    }
    const double k = static_cast<double>(active.size());
    double least = std::numeric_limits<double>::infinity();
    for (std::size_t j : active) least = std::min(least, remaining[j]);
    const double finish_at = t + least * k;
    const double next_release = next < n ? release[pending[next]] : std::numeric_limits<double>::infinity();
    if (next_release < finish_at) {
      const double served = (next_release - t) / k;
      for (std::size_t j : active) remaining[j] -= served;
      t = next_release;
      admit(t);
      continue;
    }
    t = finish_at;
    std::vector<std::size_t> still;
    for (std::size_t j : active) {
      if (remaining[j] - least <= least * 1e-12) {
        done[j] = t;
      } else {
        remaining[j] -= least;
        still.push_back(j);
      }
    }
    active = std::move(still);
    admit(t);
  }
  return done;
}

inline Timeline parallel_server_timeline(std::span<const StepTiming> timings, std::span<const double> lags,
                                         TimelineMode mode) {
  const std::vector<double> arrival = activation_arrivals(timings, lags);
  std::vector<double> release(timings.size(), 0.0);
  if (mode == TimelineMode::event_driven) release = arrival;
  std::vector<double> work(timings.size());
  for (std::size_t u = 0; u < timings.size(); ++u) work[u] = timings[u].server;
  const std::vector<double> finish = processor_sharing(release, work);

  Timeline tl = detail::blank_timeline(timings);
  for (std::size_t u = 0; u < timings.size(); ++u) {
    const double offset = mode == TimelineMode::analytic ? arrival[u] : 0.0;
    tl.server_start[u] = offset + release[u];
    tl.server_end[u] = offset + finish[u];
    // Slowdown from sharing the server counts as waiting.
    tl.steps[u].wait = finish[u] - release[u] - timings[u].server;
    tl.completions[u] = tl.server_end[u] + timings[u].download + timings[u].client_backward;
    tl.makespan = std::max(tl.makespan, tl.completions[u]);
  }
  return tl;
}

// Clients in ascending index, each running its whole step alone, steps[u]
// times in a row (once each when `steps` is empty). server_start/server_end
// describe the visit's first step.
inline Timeline serial_timeline(std::span<const StepTiming> timings, std::span<const std::size_t> steps = {}) {
  if (!steps.empty() && steps.size() != timings.size()) throw std::invalid_argument("serial_timeline: step count mismatch");
  Timeline tl = detail::blank_timeline(timings);
  double t = 0.0;
  for (std::size_t u = 0; u < timings.size(); ++u) {
    const StepTiming& s = timings[u];
    tl.server_start[u] = t + s.client_forward + s.upload;
    tl.server_end[u] = tl.server_start[u] + s.server;
    t += s.total() * static_cast<double>(steps.empty() ? 1 : steps[u]);
    tl.completions[u] = t;
  }
  tl.makespan = t;
  return tl;
}

inline Timeline round_timeline(Scheme scheme, const OrderAssignment& order, std::span<const StepTiming> timings,
                               std::span<const double> lags, TimelineMode mode) {
  switch (scheme) {
    case Scheme::ours: return simulate_timeline(order, timings, lags, mode);
    case Scheme::sfl: return parallel_server_timeline(timings, lags, mode);
    case Scheme::sl: return serial_timeline(timings);
  }
  throw std::invalid_argument("round_timeline: unknown scheme");
}

}  // namespace sflora
