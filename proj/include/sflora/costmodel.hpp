// SPDX-License-Identifier: Apache-2.0
//
// Analytic FLOP, time and memory accounting for one training step.
//
// Conventions: a multiply-add is 2 FLOPs; backward costs twice the forward.
// Wire payloads are 32-bit. "rows" is batch * seq_len.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sflora/model.hpp"

namespace sflora {

enum class Scheme { sl, sfl, ours };

inline std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::sl: return "sl";
    case Scheme::sfl: return "sfl";
    case Scheme::ours: return "ours";
  }
  return "?";
}

inline Scheme parse_scheme(const std::string& name) {
  if (name == "sl") return Scheme::sl;
  if (name == "sfl") return Scheme::sfl;
  if (name == "ours") return Scheme::ours;
  throw std::invalid_argument("unknown scheme '" + name + "' (expected sl | sfl | ours)");
}

struct DeviceProfile {
  std::size_t client_id = 0;
  std::string name;
  double capacity = 1e12;  // FLOP/s
  std::size_t cut = 0;     // hidden layers held by the client
  double arrival_lag = 0.0;
};

struct LinkProfile {
  double rate = 100e6;  // bit/s
  std::size_t bytes_per_element = 4;
};

struct Workload {
  std::size_t batch = 16;
  std::size_t seq_len = 1;

  std::size_t rows() const noexcept { return batch * seq_len; }
};

struct StepTiming {
  double client_forward = 0.0;
  double upload = 0.0;
  double wait = 0.0;
  double server = 0.0;
  double download = 0.0;
  double client_backward = 0.0;

  double total() const noexcept { return client_forward + upload + wait + server + download + client_backward; }

  friend bool operator==(const StepTiming&, const StepTiming&) = default;
};

enum class Direction { forward, backward };

inline double direction_factor(Direction d) { return d == Direction::forward ? 1.0 : 2.0; }

// One hidden layer: frozen m x m matmul plus the rank-r side path.
inline double flops_layer(std::size_t rows, std::size_t m, std::size_t r, Direction dir) {
  const double fwd = 2.0 * static_cast<double>(rows) * static_cast<double>(m) * static_cast<double>(m) +
                     4.0 * static_cast<double>(rows) * static_cast<double>(m) * static_cast<double>(r);
  return fwd * direction_factor(dir);
}

// Dense in x out projection without adapter (input lift, head).
inline double flops_dense(std::size_t rows, std::size_t in, std::size_t out, Direction dir) {
  return 2.0 * static_cast<double>(rows) * static_cast<double>(in) * static_cast<double>(out) *
         direction_factor(dir);
}

inline void validate(const ModelConfig& model, const DeviceProfile& device) {
  if (!(device.capacity > 0.0)) throw std::invalid_argument("device " + device.name + ": capacity must be > 0");
  if (device.cut > model.num_layers) {
    throw std::invalid_argument("device " + device.name + ": cut exceeds num_layers");
  }
  if (device.arrival_lag < 0.0) throw std::invalid_argument("device " + device.name + ": negative arrival lag");
}

// Client forward covers lift + layers 1..cut. Client backward covers only
// the hidden layers: the lift is frozen and nothing upstream of it trains.
inline double client_flops(const ModelConfig& model, const Workload& w, std::size_t cut, Direction dir) {
  const double hidden = static_cast<double>(cut) * flops_layer(w.rows(), model.hidden_dim, model.rank, dir);
  if (dir == Direction::backward) return hidden;
  return flops_dense(w.rows(), model.input_dim, model.hidden_dim, dir) + hidden;
}

// Server forward + backward over layers cut+1..N and the head.
inline double server_flops(const ModelConfig& model, const Workload& w, std::size_t cut) {
  const double layers = static_cast<double>(model.num_layers - cut);
  double total = 0.0;
  for (Direction d : {Direction::forward, Direction::backward}) {
    total += layers * flops_layer(w.rows(), model.hidden_dim, model.rank, d);
    total += flops_dense(w.rows(), model.hidden_dim, model.num_classes, d);
  }
  return total;
}

// Activation and activation-gradient messages have the same size.
inline double activation_bits(const ModelConfig& model, const Workload& w, const LinkProfile& link) {
  return static_cast<double>(w.rows() * model.hidden_dim * link.bytes_per_element) * 8.0;
}

// Every component except `wait`, which depends on the processing order.
inline StepTiming time_components(const DeviceProfile& device, const LinkProfile& link, double server_capacity,
                                  const ModelConfig& model, const Workload& w) {
  validate(model, device);
  if (!(server_capacity > 0.0)) throw std::invalid_argument("server capacity must be > 0");
  if (!(link.rate > 0.0)) throw std::invalid_argument("link rate must be > 0");
  StepTiming t;
  t.client_forward = client_flops(model, w, device.cut, Direction::forward) / device.capacity;
  t.client_backward = client_flops(model, w, device.cut, Direction::backward) / device.capacity;
  t.server = server_flops(model, w, device.cut) / server_capacity;
  t.upload = activation_bits(model, w, link) / link.rate;
  t.download = t.upload;
  return t;
}

inline std::vector<StepTiming> time_components(std::span<const DeviceProfile> devices, const LinkProfile& link,
                                               double server_capacity, const ModelConfig& model,
                                               const Workload& w) {
  std::vector<StepTiming> out;
  out.reserve(devices.size());
  for (const auto& d : devices) out.push_back(time_components(d, link, server_capacity, model, w));
  return out;
}

// Processing order on the server: sequence[k] is the index of the client
// served k-th.
struct OrderAssignment {
  std::vector<std::size_t> sequence;

  std::size_t size() const noexcept { return sequence.size(); }
  friend bool operator==(const OrderAssignment&, const OrderAssignment&) = default;
};

inline void require_permutation(const OrderAssignment& order, std::size_t clients) {
  if (order.sequence.size() != clients) {
    throw std::invalid_argument("order has " + std::to_string(order.sequence.size()) + " entries for " +
                                std::to_string(clients) + " clients");
  }
  std::vector<bool> seen(clients, false);
  for (std::size_t c : order.sequence) {
    if (c >= clients || seen[c]) throw std::invalid_argument("order is not a permutation");
    seen[c] = true;
  }
}

struct MakespanResult {
  double makespan = 0.0;
  std::vector<double> waits;        // per client, indexed by client
  std::vector<double> completions;  // per client step time
};

// Synchronized-availability model: a client's wait is the server time of
// every client ordered before it; the step ends when the slowest client ends.
inline MakespanResult step_makespan(const OrderAssignment& order, std::span<const StepTiming> timings) {
  require_permutation(order, timings.size());
  MakespanResult out;
  out.waits.assign(timings.size(), 0.0);
  out.completions.assign(timings.size(), 0.0);
  double prefix = 0.0;
  for (std::size_t u : order.sequence) {
    StepTiming t = timings[u];
    t.wait = prefix;
    out.waits[u] = prefix;
    out.completions[u] = t.total();
    out.makespan = std::max(out.makespan, out.completions[u]);
    prefix += timings[u].server;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Server memory accounting.

struct MemoryBreakdown {
  std::uint64_t frozen = 0;
  std::uint64_t adapters = 0;
  std::uint64_t activations = 0;
  std::uint64_t gradients = 0;

  std::uint64_t total() const noexcept { return frozen + adapters + activations + gradients; }
  friend bool operator==(const MemoryBreakdown&, const MemoryBreakdown&) = default;
};

struct MemoryReport {
  Scheme scheme = Scheme::ours;
  MemoryBreakdown server;
  std::vector<MemoryBreakdown> clients;

  std::uint64_t server_bytes() const noexcept { return server.total(); }
};

namespace detail {

// Element counts for the server-side part of one client's job.
struct ServerJobElements {
  std::uint64_t frozen = 0;       // hidden layers cut+1..N plus head
  std::uint64_t adapters = 0;     // A and B for layers cut+1..N
  std::uint64_t activations = 0;  // one cached tensor per stage in the server range
  std::uint64_t gradients = 0;    // adapter gradients plus one activation-gradient buffer
};

inline ServerJobElements server_job(const ModelConfig& model, const Workload& w, std::size_t cut) {
  const std::uint64_t m = model.hidden_dim;
  const std::uint64_t layers = model.num_layers - cut;
  const std::uint64_t adapter = 2 * m * model.rank;
  ServerJobElements e;
  e.frozen = layers * m * m + m * model.num_classes;
  e.adapters = layers * adapter;
  e.activations = (layers + 1) * w.rows() * m;
  e.gradients = layers * adapter + w.rows() * m;
  return e;
}

}  // namespace detail

// Server-side bytes under each scheme:
//   ours  one frozen copy of every layer some client leaves to the server,
//         all clients' server adapters, one live job's activations/gradients
//   sfl   a frozen server submodel per client, all adapters, all jobs live
//   sl    the single active client's server submodel and job (peak over clients)
// Client-side bytes are the same for every scheme.
inline MemoryReport memory_footprint(Scheme scheme, const ModelConfig& model, std::span<const DeviceProfile> devices,
                                     const Workload& w, std::size_t bytes_per_element = 4) {
  if (devices.empty()) throw std::invalid_argument("memory_footprint: no devices");
  for (const auto& d : devices) validate(model, d);
  const std::uint64_t bpe = bytes_per_element;
  const std::uint64_t m = model.hidden_dim;

  MemoryReport report;
  report.scheme = scheme;
  MemoryBreakdown& s = report.server;

  switch (scheme) {
    case Scheme::ours: {
      std::size_t min_cut = model.num_layers;
      for (const auto& d : devices) {
        const auto e = detail::server_job(model, w, d.cut);
        s.adapters += e.adapters * bpe;
        s.activations = std::max(s.activations, e.activations * bpe);
        s.gradients = std::max(s.gradients, e.gradients * bpe);
        min_cut = std::min(min_cut, d.cut);
      }
      s.frozen = ((model.num_layers - min_cut) * m * m + m * model.num_classes) * bpe;
      break;
    }
    case Scheme::sfl: {
      for (const auto& d : devices) {
        const auto e = detail::server_job(model, w, d.cut);
        s.frozen += e.frozen * bpe;
        s.adapters += e.adapters * bpe;
        s.activations += e.activations * bpe;
        s.gradients += e.gradients * bpe;
      }
      break;
    }
    case Scheme::sl: {
      for (const auto& d : devices) {
        const auto e = detail::server_job(model, w, d.cut);
        MemoryBreakdown cand{e.frozen * bpe, e.adapters * bpe, e.activations * bpe, e.gradients * bpe};
        if (cand.total() > s.total()) s = cand;
      }
      break;
    }
  }

  for (const auto& d : devices) {
    const std::uint64_t c = d.cut;
    const std::uint64_t adapter = 2 * m * model.rank;
    MemoryBreakdown cb;
    cb.frozen = (model.input_dim * m + c * m * m) * bpe;
    cb.adapters = c * adapter * bpe;
    cb.activations = (c + 1) * w.rows() * m * bpe;
    cb.gradients = (c * adapter + w.rows() * m) * bpe;
    report.clients.push_back(cb);
  }
  return report;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const StepTiming& t) {
  j = nlohmann::json{{"client_forward_s", t.client_forward}, {"upload_s", t.upload},
                     {"wait_s", t.wait},                     {"server_s", t.server},
                     {"download_s", t.download},             {"client_backward_s", t.client_backward},
                     {"total_s", t.total()}};
}

inline void to_json(nlohmann::json& j, const MemoryBreakdown& b) {
  j = nlohmann::json{{"frozen_bytes", b.frozen},
                     {"adapter_bytes", b.adapters},
                     {"activation_bytes", b.activations},
                     {"gradient_bytes", b.gradients},
                     {"total_bytes", b.total()}};
}

inline void to_json(nlohmann::json& j, const MemoryReport& r) {
  j = nlohmann::json{{"scheme", to_string(r.scheme)}, {"server", r.server}, {"clients", r.clients}};
}

}  // namespace sflora
