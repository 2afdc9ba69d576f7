// SPDX-License-Identifier: Apache-2.0
//
// sflora: command-line driver.
//
//   sflora run      one (scheme, scheduler) cell
//   sflora grid     every cell in the config's grid, on the same data
//   sflora schedule orders and step makespans only, no training
//   sflora oracle   greedy vs exhaustive search on random instances

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sflora/sflora.hpp"

namespace {

using namespace sflora;

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scheme;
  std::optional<std::string> scheduler;
  std::optional<std::size_t> rounds;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_cell) {
  cmd->add_option("--config", f.config, std::string("JSON config (default: $") + kConfigEnvVar + ", then built-in)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "overrides the config seed");
  cmd->add_option("--rounds", f.rounds, "overrides the number of rounds");
  if (with_cell) {
    cmd->add_option("--scheme", f.scheme, "sl | sfl | ours");
    cmd->add_option("--scheduler", f.scheduler, "greedy | fifo | wf | optimal | none");
  }
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig c = default_config();
  if (auto path = resolve_config_path(f.config)) c = load_config(*path);
  apply_overrides(c, {f.seed, f.scheme, f.scheduler, f.rounds});
  validate(c);
  return c;
}

void print_cell(const CellResult& r) {
  std::cout << r.cell.label() << ": final accuracy " << r.final_accuracy << ", macro-F1 " << r.final_macro_f1
            << ", converged at round " << r.convergence.round << " (" << r.convergence.time << " s simulated), total "
            << r.total_time << " s, server memory " << r.memory.server_bytes() << " B\n";
}

int cmd_run(const CommonFlags& f) {
  const ExperimentConfig c = resolve(f);
  const Dataset data = make_dataset(c);
  const std::string hash = content_hash(data);
  const CellResult r = run_cell(c, data, c.cell);
  if (!f.out.empty()) write_cell(f.out, r, hash, c);
  print_cell(r);
  return 0;
}

int cmd_grid(const CommonFlags& f, std::size_t jobs) {
  const ExperimentConfig c = resolve(f);
  if (c.grid.empty()) throw std::invalid_argument("config has an empty grid");
  const Dataset data = make_dataset(c);
  const std::string hash = content_hash(data);
  const auto results = run_cells(c, data, c.grid, jobs);
  if (!f.out.empty()) write_grid(f.out, results, hash, c);
  for (const auto& r : results) print_cell(r);
  return 0;
}

nlohmann::json order_entry(const OrderAssignment& order, std::span<const StepTiming> timings,
                           std::span<const double> lags, const std::vector<DeviceProfile>& devices) {
  nlohmann::json names = nlohmann::json::array();
  for (std::size_t u : order.sequence) names.push_back(devices[u].name);
  return {{"order", names},
          {"makespan_analytic_s", simulate_timeline(order, timings, lags, TimelineMode::analytic).makespan},
          {"makespan_event_driven_s", simulate_timeline(order, timings, lags, TimelineMode::event_driven).makespan}};
}

int cmd_schedule(const CommonFlags& f) {
  const ExperimentConfig c = resolve(f);
  const EngineConfig& e = c.engine;
  const auto timings = time_components(e.devices, e.link, e.server_capacity, e.cost_model, e.workload);
  std::vector<double> lags;
  for (const auto& d : e.devices) lags.push_back(d.arrival_lag);

  nlohmann::json devices = nlohmann::json::array();
  for (std::size_t u = 0; u < e.devices.size(); ++u) {
    const auto& d = e.devices[u];
    devices.push_back({{"name", d.name},
                       {"cut", d.cut},
                       {"capacity_tflops", d.capacity / 1e12},
                       {"cut_over_capacity_per_tflops", static_cast<double>(d.cut) / (d.capacity / 1e12)},
                       {"timing", timings[u]}});
  }
  nlohmann::json orders;
  for (SchedulerKind k : {SchedulerKind::greedy, SchedulerKind::fifo, SchedulerKind::wf, SchedulerKind::optimal}) {
    if (k == SchedulerKind::optimal && e.devices.size() > kBruteForceLimit) continue;
    orders[to_string(k)] = order_entry(make_order(k, e.devices, timings, lags, e.timeline), timings, lags, e.devices);
  }
  const OrderAssignment id = make_order(SchedulerKind::none, e.devices, timings, lags, e.timeline);
  nlohmann::json out{
      {"timeline", to_string(e.timeline)},
      {"devices", devices},
      {"orders", orders},
      {"sfl_step_s", round_timeline(Scheme::sfl, id, timings, lags, e.timeline).makespan},
      {"sl_step_s", round_timeline(Scheme::sl, id, timings, lags, e.timeline).makespan},
  };
  if (orders.contains("optimal")) {
    // Optimal is computed for the configured timeline mode.
    const std::string key = e.timeline == TimelineMode::analytic ? "makespan_analytic_s" : "makespan_event_driven_s";
    out["greedy_optimality_gap_s"] = orders["greedy"][key].get<double>() - orders["optimal"][key].get<double>();
  }
  if (!f.out.empty()) {
    prepare_dir(f.out);
    write_atomic(std::filesystem::path(f.out) / "schedule.json", out.dump(2) + "\n");
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_oracle(const CommonFlags& f, std::size_t instances, std::size_t max_clients) {
  const ExperimentConfig c = resolve(f);
  const ScheduleCheck check = check_greedy_optimality(instances, max_clients, c.engine.seed);
  const auto timings = time_components(c.engine.devices, c.engine.link, c.engine.server_capacity,
                                       c.engine.cost_model, c.engine.workload);
  const bool proxy_ok = greedy_order(c.engine.devices) == backward_time_order(timings);
  std::cout << "random instances: " << check.matches << "/" << check.instances
            << " greedy makespans equal the exhaustive optimum (worst gap " << check.worst_gap << " s)\n";
  std::cout << "configured devices: layer/capacity order " << (proxy_ok ? "equals" : "differs from")
            << " the backward-time order\n";
  return check.matches == check.instances && proxy_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parallel-sequential split LoRA fine-tuning simulator"};
  app.require_subcommand(1);

  CommonFlags run_f, grid_f, sched_f, oracle_f;
  std::size_t jobs = 1;
  std::size_t instances = 200;
  std::size_t max_clients = 7;

  auto* run = app.add_subcommand("run", "train one scheme/scheduler cell");
  add_common(run, run_f, true);
  auto* grid = app.add_subcommand("grid", "train every cell of the config grid");
  add_common(grid, grid_f, false);
  grid->add_option("--jobs", jobs, "cells trained concurrently")->check(CLI::PositiveNumber);
  auto* schedule = app.add_subcommand("schedule", "print server orders and step makespans");
  add_common(schedule, sched_f, false);
  auto* oracle = app.add_subcommand("oracle", "check greedy against exhaustive search");
  add_common(oracle, oracle_f, false);
  oracle->add_option("--instances", instances, "random instances")->check(CLI::PositiveNumber);
  oracle->add_option("--max-clients", max_clients, "largest instance")->check(CLI::Range(1, 9));

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(run_f);
    if (*grid) return cmd_grid(grid_f, jobs);
    if (*schedule) return cmd_schedule(sched_f);
    if (*oracle) return cmd_oracle(oracle_f, instances, max_clients);
  } catch (const std::exception& ex) {
    std::cerr << "sflora: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}
