// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: one JSON document. Missing keys keep their
// defaults; unknown keys are rejected so typos fail loudly.
//
// Units in JSON: capacities in TFLOP/s, link rate in Mbit/s, times in
// seconds.

#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sflora/costmodel.hpp"
#include "sflora/dataset.hpp"
#include "sflora/engine.hpp"
#include "sflora/scheduler.hpp"

namespace sflora {

inline constexpr const char* kConfigEnvVar = "SFLORA_CONFIG";

struct GridCell {
  Scheme scheme = Scheme::ours;
  SchedulerKind scheduler = SchedulerKind::greedy;

  std::string label() const { return to_string(scheme) + "-" + to_string(scheduler); }
  friend bool operator==(const GridCell&, const GridCell&) = default;
};

struct ConvergenceRule {
  std::size_t window = 20;
  double tolerance = 0.005;  // relative to the final windowed accuracy
};

struct ExperimentConfig {
  EngineConfig engine;
  DatasetSpec dataset;
  GridCell cell;
  std::vector<GridCell> grid;
  ConvergenceRule convergence;
};

// Six edge devices from the reference deployment, capacities in TFLOP/s.
inline std::vector<DeviceProfile> reference_devices() {
  return {
      {0, "Jetson Nano", 0.472e12, 1, 0.0},       {1, "Jetson TX2", 1.33e12, 1, 0.0},
      {2, "Snapdragon 8s Gen 3", 1.689e12, 2, 0.0}, {3, "Snapdragon 8 Gen 3", 2.774e12, 2, 0.0},
      {4, "A17 Pro", 2.147e12, 3, 0.0},          {5, "M3", 3.533e12, 3, 0.0},
  };
}

// Desk-sized learner with a full-sized cost profile.
inline ExperimentConfig default_config() {
  ExperimentConfig c;
  c.engine.model = {6, 32, 4, 16, 4, 7};
  c.engine.cost_model = {6, 768, 16, 768, 6, 7};
  c.engine.workload = {16, 128};
  c.engine.devices = reference_devices();
  c.engine.link = {100e6, 4};
  c.engine.server_capacity = 52.2e12;
  c.engine.lr = 0.05;
  c.engine.aggregation_interval = 5;
  c.engine.rounds = 300;
  c.engine.seed = 7;
  c.dataset = {400, 250, 0.5, 3.0};
  c.cell = {Scheme::ours, SchedulerKind::greedy};
  c.grid = {{Scheme::ours, SchedulerKind::greedy},
            {Scheme::ours, SchedulerKind::fifo},
            {Scheme::ours, SchedulerKind::wf},
            {Scheme::sfl, SchedulerKind::greedy},
            {Scheme::sl, SchedulerKind::none}};
  return c;
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) throw std::invalid_argument(where + ": unknown key '" + item.key() + "'");
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void read_shape(const nlohmann::json& j, ModelConfig& m, const std::string& where, bool with_layers) {
  std::set<std::string> keys{"hidden_dim", "rank", "input_dim", "num_classes"};
  if (with_layers) keys.insert("num_layers");
  reject_unknown(j, keys, where);
  if (with_layers) read(j, "num_layers", m.num_layers);
  read(j, "hidden_dim", m.hidden_dim);
  read(j, "rank", m.rank);
  read(j, "input_dim", m.input_dim);
  read(j, "num_classes", m.num_classes);
}

inline GridCell read_cell(const nlohmann::json& j, const std::string& where) {
  reject_unknown(j, {"scheme", "scheduler"}, where);
  GridCell c;
  c.scheme = parse_scheme(j.at("scheme").get<std::string>());
  c.scheduler = j.contains("scheduler") ? parse_scheduler(j.at("scheduler").get<std::string>())
                                        : (c.scheme == Scheme::sl ? SchedulerKind::none : SchedulerKind::greedy);
  return c;
}

}  // namespace detail

inline void check_cell(const GridCell& cell) { check_combination(cell.scheme, cell.scheduler); }

inline void validate(const ExperimentConfig& c) {
  validate(c.engine);
  check_cell(c.cell);
  for (std::size_t i = 0; i < c.grid.size(); ++i) {
    check_cell(c.grid[i]);
    for (std::size_t k = 0; k < i; ++k) {
      if (c.grid[k] == c.grid[i]) throw std::invalid_argument("grid: duplicate cell " + c.grid[i].label());
    }
  }
  if (c.convergence.window < 1) throw std::invalid_argument("convergence.window must be >= 1");
  if (c.convergence.tolerance < 0.0) throw std::invalid_argument("convergence.tolerance must be >= 0");
  if (c.engine.rounds < c.convergence.window) {
    throw std::invalid_argument("rounds must be at least the convergence window");
  }
}

// Overlays `j` on `base`.
inline ExperimentConfig parse_config(const nlohmann::json& j, ExperimentConfig base = default_config()) {
  using detail::read;
  detail::reject_unknown(j,
                         {"model", "cost_model", "workload", "devices", "link", "server_capacity_tflops", "lr",
                          "aggregation_interval", "rounds", "seed", "timeline", "reschedule_each_round",
                          "arrival_jitter_s", "sl_local_steps", "dataset", "scheme", "scheduler", "grid",
                          "convergence"},
                         "config");
  EngineConfig& e = base.engine;
  if (j.contains("model")) detail::read_shape(j.at("model"), e.model, "model", true);
  if (j.contains("cost_model")) detail::read_shape(j.at("cost_model"), e.cost_model, "cost_model", false);
  e.cost_model.num_layers = e.model.num_layers;
  if (j.contains("workload")) {
    const auto& w = j.at("workload");
    detail::reject_unknown(w, {"batch", "seq_len"}, "workload");
    read(w, "batch", e.workload.batch);
    read(w, "seq_len", e.workload.seq_len);
  }
  if (j.contains("devices")) {
    e.devices.clear();
    std::size_t id = 0;
    for (const auto& d : j.at("devices")) {
      detail::reject_unknown(d, {"name", "capacity_tflops", "cut", "arrival_lag_s"}, "devices[" + std::to_string(id) + "]");
      DeviceProfile p;
      p.client_id = id++;
      p.name = d.value("name", "client " + std::to_string(p.client_id));
      p.capacity = d.at("capacity_tflops").get<double>() * 1e12;
      p.cut = d.at("cut").get<std::size_t>();
      p.arrival_lag = d.value("arrival_lag_s", 0.0);
      e.devices.push_back(p);
    }
  }
  if (j.contains("link")) {
    const auto& l = j.at("link");
    detail::reject_unknown(l, {"rate_mbps", "bytes_per_element"}, "link");
    if (l.contains("rate_mbps")) e.link.rate = l.at("rate_mbps").get<double>() * 1e6;
    read(l, "bytes_per_element", e.link.bytes_per_element);
  }
  if (j.contains("server_capacity_tflops")) e.server_capacity = j.at("server_capacity_tflops").get<double>() * 1e12;
  read(j, "lr", e.lr);
  read(j, "aggregation_interval", e.aggregation_interval);
  read(j, "rounds", e.rounds);
  read(j, "seed", e.seed);
  if (j.contains("timeline")) e.timeline = parse_timeline_mode(j.at("timeline").get<std::string>());
  read(j, "reschedule_each_round", e.reschedule_each_round);
  read(j, "arrival_jitter_s", e.arrival_jitter);
  read(j, "sl_local_steps", e.sl_local_steps);
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::reject_unknown(d, {"samples_per_client", "eval_per_class", "alpha", "separation"}, "dataset");
    read(d, "samples_per_client", base.dataset.samples_per_client);
    read(d, "eval_per_class", base.dataset.eval_per_class);
    read(d, "alpha", base.dataset.alpha);
    read(d, "separation", base.dataset.separation);
  }
  if (j.contains("scheme") || j.contains("scheduler")) {
    nlohmann::json cell = nlohmann::json::object();
    cell["scheme"] = j.value("scheme", to_string(base.cell.scheme));
    if (j.contains("scheduler")) cell["scheduler"] = j.at("scheduler");
    base.cell = detail::read_cell(cell, "config");
  }
  if (j.contains("grid")) {
    base.grid.clear();
    std::size_t i = 0;
    for (const auto& c : j.at("grid")) base.grid.push_back(detail::read_cell(c, "grid[" + std::to_string(i++) + "]"));
  }
  if (j.contains("convergence")) {
    const auto& c = j.at("convergence");
    detail::reject_unknown(c, {"window", "tolerance"}, "convergence");
    read(c, "window", base.convergence.window);
    read(c, "tolerance", base.convergence.tolerance);
  }
  e.model.seed = e.seed;
  e.cost_model.seed = e.seed;
  return base;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw std::runtime_error("config " + path + ": " + ex.what());
  }
  return parse_config(j);
}

// --config wins over the environment variable; neither means defaults.
inline std::optional<std::string> resolve_config_path(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kConfigEnvVar); env && *env) return std::string(env);
  return std::nullopt;
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scheme;
  std::optional<std::string> scheduler;
  std::optional<std::size_t> rounds;
};

inline void apply_overrides(ExperimentConfig& c, const Overrides& o) {
  if (o.seed) {
    c.engine.seed = *o.seed;
    c.engine.model.seed = *o.seed;
    c.engine.cost_model.seed = *o.seed;
  }
  if (o.rounds) c.engine.rounds = *o.rounds;
  if (o.scheme || o.scheduler) {
    GridCell cell = c.cell;
    if (o.scheme) {
      cell.scheme = parse_scheme(*o.scheme);
      if (!o.scheduler) cell.scheduler = cell.scheme == Scheme::sl ? SchedulerKind::none
                                         : cell.scheduler == SchedulerKind::none ? SchedulerKind::greedy
                                                                                  : cell.scheduler;
    }
    if (o.scheduler) cell.scheduler = parse_scheduler(*o.scheduler);
    c.cell = cell;
  }
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  const EngineConfig& e = c.engine;
  nlohmann::json devices = nlohmann::json::array();
  for (const auto& d : e.devices) {
    devices.push_back({{"name", d.name}, {"capacity_tflops", d.capacity / 1e12}, {"cut", d.cut},
                       {"arrival_lag_s", d.arrival_lag}});
  }
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& g : c.grid) grid.push_back({{"scheme", to_string(g.scheme)}, {"scheduler", to_string(g.scheduler)}});
  return {
      {"model",
       {{"num_layers", e.model.num_layers}, {"hidden_dim", e.model.hidden_dim}, {"rank", e.model.rank},
        {"input_dim", e.model.input_dim}, {"num_classes", e.model.num_classes}}},
      {"cost_model",
       {{"hidden_dim", e.cost_model.hidden_dim}, {"rank", e.cost_model.rank}, {"input_dim", e.cost_model.input_dim},
        {"num_classes", e.cost_model.num_classes}}},
      {"workload", {{"batch", e.workload.batch}, {"seq_len", e.workload.seq_len}}},
      {"devices", devices},
      {"link", {{"rate_mbps", e.link.rate / 1e6}, {"bytes_per_element", e.link.bytes_per_element}}},
      {"server_capacity_tflops", e.server_capacity / 1e12},
      {"lr", e.lr},
      {"aggregation_interval", e.aggregation_interval},
      {"rounds", e.rounds},
      {"seed", e.seed},
      {"timeline", to_string(e.timeline)},
      {"reschedule_each_round", e.reschedule_each_round},
      {"arrival_jitter_s", e.arrival_jitter},
      {"sl_local_steps", e.sl_local_steps},
      {"dataset",
       {{"samples_per_client", c.dataset.samples_per_client}, {"eval_per_class", c.dataset.eval_per_class},
        {"alpha", c.dataset.alpha}, {"separation", c.dataset.separation}}},
      {"scheme", to_string(c.cell.scheme)},
      {"scheduler", to_string(c.cell.scheduler)},
      {"grid", grid},
      {"convergence", {{"window", c.convergence.window}, {"tolerance", c.convergence.tolerance}}},
  };
}

}  // namespace sflora
