// SPDX-License-Identifier: Apache-2.0
//
// Round-based execution of parallel-sequential split fine-tuning.
//
// Each round: every client samples a minibatch and runs its prefix; the
// server, in the scheduled order, loads that client's server-side adapters,
// finishes the forward pass, updates the adapters and returns the activation
// gradient; every client then updates its own adapters. Every I rounds the
// full adapter lists are averaged and split back at each client's cut.
//
// Learning is round-synchronous and independent of the server order; the
// order only changes simulated time, which comes from the cost model.

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sflora/costmodel.hpp"
#include "sflora/dataset.hpp"
#include "sflora/federation.hpp"
#include "sflora/metrics.hpp"
#include "sflora/model.hpp"
#include "sflora/scheduler.hpp"
#include "sflora/timeline.hpp"

namespace sflora {

struct EngineConfig {
  ModelConfig model;
  // Shape used for timing and memory; must have the same num_layers as
  // `model`. Lets a desk-sized learner carry a full-sized cost profile.
  ModelConfig cost_model;
  Workload workload;  // batch drives learning too
  std::vector<DeviceProfile> devices;
  LinkProfile link;
  double server_capacity = 52.2e12;
  double lr = 0.05;
  std::size_t aggregation_interval = 5;
  std::size_t rounds = 300;
  std::uint64_t seed = 7;
  TimelineMode timeline = TimelineMode::analytic;
  bool reschedule_each_round = false;
  double arrival_jitter = 0.0;  // extra per-round lag, uniform in [0, jitter) seconds
  std::size_t sl_local_steps = 1;  // sl only: steps per client visit, 0 = one pass over the shard
};

inline void validate(const EngineConfig& c) {
  validate(c.model);
  validate(c.cost_model);
  if (c.cost_model.num_layers != c.model.num_layers) {
    throw std::invalid_argument("cost_model.num_layers must equal model.num_layers");
  }
  if (c.devices.empty()) throw std::invalid_argument("no devices");
  for (std::size_t u = 0; u < c.devices.size(); ++u) {
    validate(c.model, c.devices[u]);
    if (u > 0 && c.devices[u].client_id <= c.devices[u - 1].client_id) {
      throw std::invalid_argument("devices must be listed in ascending client_id");
    }
  }
  if (c.workload.batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (c.workload.seq_len < 1) throw std::invalid_argument("seq_len must be >= 1");
  if (c.aggregation_interval < 1) throw std::invalid_argument("aggregation_interval must be >= 1");
  if (!(c.link.rate > 0.0)) throw std::invalid_argument("link rate must be > 0");
  if (!(c.server_capacity > 0.0)) throw std::invalid_argument("server capacity must be > 0");
  if (c.arrival_jitter < 0.0) throw std::invalid_argument("arrival_jitter must be >= 0");
}

// ---------------------------------------------------------------------------
// Messages

struct ActivationMsg {
  std::size_t client_id = 0;
  std::size_t round = 0;
  Matrix payload;  // batch x m
  std::vector<int> labels;
  std::size_t cut = 0;
};

struct GradMsg {
  std::size_t client_id = 0;
  std::size_t round = 0;
  Matrix payload;  // batch x m
};

// ---------------------------------------------------------------------------
// Participants

struct ClientState {
  DeviceProfile device;
  std::shared_ptr<const FrozenStack> stack;  // only stages 0..cut are used
  AdapterSet adapters;                       // layers 1..cut
  const Shard* shard = nullptr;
  std::mt19937_64 rng;
  std::optional<ForwardCache> cache;
};

struct ServerState {
  std::shared_ptr<const FrozenStack> stack;
  std::vector<AdapterSet> adapters;  // per client, layers cut+1..N
  std::vector<std::size_t> cuts;
  std::optional<std::size_t> loaded;
  std::size_t switches = 0;
  std::size_t live_caches = 0;
  std::size_t peak_live_caches = 0;
};

struct TrainingState {
  std::shared_ptr<const FrozenStack> stack;
  std::vector<ClientState> clients;
  ServerState server;
};

inline std::uint64_t client_stream_seed(std::uint64_t seed, std::size_t client) {
  return splitmix64(seed ^ splitmix64(0x5eed0000ULL + client));
}

// Every client starts from the same initial full adapter list.
inline TrainingState init_training_state(const EngineConfig& config, const Dataset& data) {
  validate(config);
  if (data.clients.size() != config.devices.size()) {
    throw std::invalid_argument("dataset has " + std::to_string(data.clients.size()) + " shards for " +
                                std::to_string(config.devices.size()) + " devices");
  }
  Model model = init_model(config.model);
  TrainingState st;
  st.stack = std::make_shared<const FrozenStack>(std::move(model.stack));
  st.server.stack = st.stack;
  for (std::size_t u = 0; u < config.devices.size(); ++u) {
    auto [client_side, server_side] = split_adapters(model.adapters, config.devices[u].cut);
    ClientState c;
    c.device = config.devices[u];
    c.stack = st.stack;
    c.adapters = std::move(client_side);
    c.shard = &data.clients[u];
    c.rng.seed(client_stream_seed(config.seed, u));
    st.clients.push_back(std::move(c));
    st.server.adapters.push_back(std::move(server_side));
    st.server.cuts.push_back(config.devices[u].cut);
  }
  return st;
}

// B distinct indices (all of them, shuffled, if the shard is smaller).
inline std::vector<std::size_t> sample_minibatch(std::size_t shard_size, std::size_t batch, std::mt19937_64& rng) {
  if (shard_size == 0) throw std::invalid_argument("sample_minibatch: empty shard");
  std::vector<std::size_t> idx(shard_size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t take = std::min(batch, shard_size);
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, shard_size - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(take);
  return idx;
}

inline std::pair<Matrix, std::vector<int>> gather(const Shard& shard, std::span<const std::size_t> idx) {
  Matrix x(idx.size(), shard.features.cols());
  std::vector<int> y(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = shard.features.row(idx[i]);
    std::copy(src.begin(), src.end(), x.row(i).begin());
    y[i] = shard.labels[idx[i]];
  }
  return {std::move(x), std::move(y)};
}

// Client prefix on a fresh minibatch. The cache stays with the client.
inline ActivationMsg client_forward(ClientState& client, std::size_t batch, std::size_t round) {
  const auto idx = sample_minibatch(client.shard->size(), batch, client.rng);
  auto [x, y] = gather(*client.shard, idx);
  ForwardResult fwd = forward_partial(*client.stack, client.adapters, client_range(client.device.cut), x);
  client.cache = std::move(fwd.cache);
  return {client.device.client_id, round, std::move(fwd.output), std::move(y), client.device.cut};
}

inline void client_backward(ClientState& client, const GradMsg& msg, double lr) {
  if (!client.cache) throw std::logic_error("client_backward: no cached forward pass");
  if (msg.client_id != client.device.client_id) throw std::invalid_argument("client_backward: message for another client");
  const GradBundle grads = backward_partial(*client.stack, client.adapters, *client.cache, msg.payload);
  sgd_step(client.adapters, grads, lr);
  client.cache.reset();
}

struct ServerResult {
  GradMsg grad;
  double loss = 0.0;
  std::size_t correct = 0;
};

struct ServerForward {
  std::size_t client = 0;
  ForwardResult fwd;
};

inline void check_message(const ServerState& server, std::size_t u, const ActivationMsg& msg) {
  if (u >= server.adapters.size()) throw std::invalid_argument("server: no adapter slice for client");
  if (msg.cut != server.cuts[u]) throw std::invalid_argument("server: cut index does not match client profile");
  require_shape(msg.payload, msg.labels.size(), server.stack->hidden_dim(), "activation payload");
}

// Server forward for client u: switches to u's adapters and opens a live cache.
inline ServerForward server_forward(ServerState& server, std::size_t u, const ActivationMsg& msg) {
  check_message(server, u, msg);
  if (server.loaded != u) {
    server.loaded = u;
    ++server.switches;
  }
  ServerForward out{u, forward_partial(*server.stack, server.adapters[u],
                                       server_range(server.cuts[u], server.stack->num_layers()), msg.payload)};
  ++server.live_caches;
  server.peak_live_caches = std::max(server.peak_live_caches, server.live_caches);
  return out;
}

// Loss, server backward and update for a forward opened by server_forward.
inline ServerResult server_backward(ServerState& server, ServerForward&& job, const ActivationMsg& msg, double lr) {
  const std::size_t u = job.client;
  const LossResult lr_out = loss_and_metrics(job.fwd.output, msg.labels);
  const GradBundle grads = backward_partial(*server.stack, server.adapters[u], job.fwd.cache, job.fwd.output, msg.labels);
  sgd_step(server.adapters[u], grads, lr);
  --server.live_caches;
  return {{msg.client_id, msg.round, grads.input_grad}, lr_out.loss, lr_out.correct};
}

struct RoundOutcome {
  double mean_loss = 0.0;
  std::vector<double> client_losses;
};

// One round of parallel-sequential training. With `overlap_server_jobs` the
// server opens every client's forward before running any backward, which
// is what a parallel server holds in memory; the numbers are identical.
inline RoundOutcome run_round(std::size_t round, TrainingState& st, const OrderAssignment& order, std::size_t batch,
                              double lr, bool overlap_server_jobs = false) {
  const std::size_t n = st.clients.size();
  require_permutation(order, n);

  std::vector<ActivationMsg> uploads;
  uploads.reserve(n);
  for (auto& c : st.clients) uploads.push_back(client_forward(c, batch, round));

  RoundOutcome out;
  out.client_losses.assign(n, 0.0);
  std::vector<std::optional<GradMsg>> replies(n);
  if (overlap_server_jobs) {
    std::vector<ServerForward> open;
    open.reserve(n);
    for (std::size_t u : order.sequence) open.push_back(server_forward(st.server, u, uploads[u]));
    for (auto& job : open) {
      const std::size_t u = job.client;
      ServerResult r = server_backward(st.server, std::move(job), uploads[u], lr);
      out.client_losses[u] = r.loss;
      replies[u] = std::move(r.grad);
    }
  } else {
    for (std::size_t u : order.sequence) {
      ServerResult r = server_backward(st.server, server_forward(st.server, u, uploads[u]), uploads[u], lr);
      out.client_losses[u] = r.loss;
      replies[u] = std::move(r.grad);
    }
  }

  // Gradient application in ascending client id.
  for (std::size_t u = 0; u < n; ++u) {
    if (!replies[u]) throw std::logic_error("run_round: client received no gradient");
    client_backward(st.clients[u], *replies[u], lr);
  }
  out.mean_loss = std::accumulate(out.client_losses.begin(), out.client_losses.end(), 0.0) / static_cast<double>(n);
  return out;
}

inline std::vector<ClientAdapterView> adapter_views(const TrainingState& st) {
  std::vector<ClientAdapterView> views;
  views.reserve(st.clients.size());
  for (std::size_t u = 0; u < st.clients.size(); ++u) {
    views.push_back({st.clients[u].device.client_id, st.clients[u].adapters, st.server.adapters[u],
                     st.clients[u].shard->size()});
  }
  return views;
}

// Data-size weighted average of every client's full adapter list.
inline AdapterSet global_adapters(const TrainingState& st) { return aggregate(adapter_views(st)); }

inline void aggregate_round(TrainingState& st) {
  const AdapterSet agg = global_adapters(st);
  for (std::size_t u = 0; u < st.clients.size(); ++u) {
    auto [client_side, server_side] = split_adapters(agg, st.clients[u].device.cut);
    st.clients[u].adapters = std::move(client_side);
    st.server.adapters[u] = std::move(server_side);
  }
}

// ---------------------------------------------------------------------------
// Split-learning baseline: one adapter list handed from client to client.

struct SerialState {
  std::shared_ptr<const FrozenStack> stack;
  AdapterSet adapters;
  std::vector<ClientState> clients;
};

inline SerialState init_serial_state(const EngineConfig& config, const Dataset& data) {
  TrainingState st = init_training_state(config, data);
  SerialState out;
  out.stack = st.stack;
  out.adapters = assemble_full({0, st.clients[0].adapters, st.server.adapters[0], 1});
  out.clients = std::move(st.clients);
  return out;
}

inline std::size_t visit_steps(std::size_t shard_size, std::size_t batch, std::size_t local_steps) {
  if (local_steps > 0) return local_steps;
  return (shard_size + batch - 1) / batch;
}

// Clients in ascending id each take `local_steps` split steps on the shared
// list (0: one pass over the shard) and hand it to the next client.
// A client's loss is the mean over its steps.
inline RoundOutcome run_serial_round(std::size_t round, SerialState& st, std::size_t batch, double lr,
                                     std::size_t local_steps = 1) {
  RoundOutcome out;
  for (auto& client : st.clients) {
    auto [client_side, server_side] = split_adapters(st.adapters, client.device.cut);
    client.adapters = std::move(client_side);

    ServerState server;
    server.stack = st.stack;
    server.adapters.push_back(std::move(server_side));
    server.cuts.push_back(client.device.cut);

    const std::size_t steps = visit_steps(client.shard->size(), batch, local_steps);
    double loss = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      const ActivationMsg msg = client_forward(client, batch, round);
      ServerResult r = server_backward(server, server_forward(server, 0, msg), msg, lr);
      client_backward(client, r.grad, lr);
      loss += r.loss;
    }
    out.client_losses.push_back(loss / static_cast<double>(steps));

    st.adapters = assemble_full({client.device.client_id, client.adapters, server.adapters[0], 1});
  }
  out.mean_loss = std::accumulate(out.client_losses.begin(), out.client_losses.end(), 0.0) /
                  static_cast<double>(out.client_losses.size());
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct RoundLog {
  std::size_t round = 0;
  double makespan = 0.0;
  double elapsed = 0.0;  // cumulative simulated time
  double train_loss = 0.0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<std::size_t> order;  // client ids in server order
  bool aggregated = false;
};

inline void to_json(nlohmann::json& j, const RoundLog& r) {
  j = nlohmann::json{{"round", r.round},       {"makespan_s", r.makespan}, {"elapsed_s", r.elapsed},
                     {"train_loss", r.train_loss}, {"accuracy", r.accuracy}, {"macro_f1", r.macro_f1},
                     {"order", r.order},       {"aggregated", r.aggregated}};
}

struct TrainingResult {
  std::vector<RoundLog> logs;
  AdapterSet final_adapters;
  std::size_t peak_live_caches = 0;
  std::size_t server_switches = 0;
};

inline void check_combination(Scheme scheme, SchedulerKind scheduler) {
  if (scheme == Scheme::sl && scheduler != SchedulerKind::none) {
    throw std::invalid_argument("scheme sl processes clients serially; use scheduler none");
  }
  if (scheme != Scheme::sl && scheduler == SchedulerKind::none) {
    throw std::invalid_argument("scheme " + to_string(scheme) + " needs a scheduler");
  }
}

inline TrainingResult run_training(const EngineConfig& config, const Dataset& data, Scheme scheme,
                                   SchedulerKind scheduler) {
  validate(config);
  check_combination(scheme, scheduler);
  const std::size_t n = config.devices.size();
  const std::vector<StepTiming> timings =
      time_components(config.devices, config.link, config.server_capacity, config.cost_model, config.workload);

  // Timing randomness has its own stream so it never perturbs learning.
  std::mt19937_64 timing_rng(splitmix64(config.seed ^ 0x71e1ULL));
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  auto round_lags = [&] {
    std::vector<double> lags(n);
    for (std::size_t u = 0; u < n; ++u) {
      lags[u] = config.devices[u].arrival_lag + (config.arrival_jitter > 0.0 ? config.arrival_jitter * jitter(timing_rng) : 0.0);
    }
    return lags;
  };

  std::vector<double> base_lags(n);
  for (std::size_t u = 0; u < n; ++u) base_lags[u] = config.devices[u].arrival_lag;
  OrderAssignment order = make_order(scheduler, config.devices, timings, base_lags, config.timeline);

  TrainingResult result;
  result.logs.reserve(config.rounds);
  double elapsed = 0.0;

  std::vector<std::size_t> sl_steps(n);
  for (std::size_t u = 0; u < n; ++u) {
    sl_steps[u] = visit_steps(data.clients[u].size(), config.workload.batch, config.sl_local_steps);
  }

  std::optional<TrainingState> fed;
  std::optional<SerialState> serial;
  if (scheme == Scheme::sl) {
    serial = init_serial_state(config, data);
  } else {
    fed = init_training_state(config, data);
  }

  for (std::size_t t = 1; t <= config.rounds; ++t) {
    const std::vector<double> lags = round_lags();
    if (config.reschedule_each_round && t > 1) {
      order = make_order(scheduler, config.devices, timings, lags, config.timeline);
    }

    RoundLog log;
    log.round = t;
    AdapterSet eval_set;
    if (serial) {
      log.train_loss =
          run_serial_round(t, *serial, config.workload.batch, config.lr, config.sl_local_steps).mean_loss;
      eval_set = serial->adapters;
    } else {
      log.train_loss = run_round(t, *fed, order, config.workload.batch, config.lr, scheme == Scheme::sfl).mean_loss;
      if (t % config.aggregation_interval == 0) {
        aggregate_round(*fed);
        log.aggregated = true;
      }
      eval_set = global_adapters(*fed);
    }

    const Timeline tl = scheme == Scheme::sl ? serial_timeline(timings, sl_steps)
                                             : round_timeline(scheme, order, timings, lags, config.timeline);
    log.makespan = tl.makespan;
    elapsed += tl.makespan;
    log.elapsed = elapsed;
    for (std::size_t u : order.sequence) log.order.push_back(config.devices[u].client_id);

    const Classification m = evaluate(fed ? *fed->stack : *serial->stack, eval_set, data.eval);
    log.accuracy = m.accuracy;
    log.macro_f1 = m.macro_f1;
    result.logs.push_back(std::move(log));

    if (t == config.rounds) result.final_adapters = std::move(eval_set);
  }
  if (fed) {
    result.peak_live_caches = fed->server.peak_live_caches;
    result.server_switches = fed->server.switches;
  } else {
    result.peak_live_caches = 1;
  }
  return result;
}

}  // namespace sflora
