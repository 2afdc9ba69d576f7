// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration: runs (scheme, scheduler) cells on one shared
// dataset and writes the result files. Output is a pure function of the
// config, so repeated runs are byte-identical.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "sflora/config.hpp"
#include "sflora/costmodel.hpp"
#include "sflora/dataset.hpp"
#include "sflora/engine.hpp"
#include "sflora/federation.hpp"

namespace sflora {

struct Convergence {
  std::size_t round = 0;
  double time = 0.0;    // simulated seconds up to and including `round`
  double target = 0.0;  // mean accuracy over the last `window` rounds
};

// First round t >= window whose trailing-window mean accuracy is within
// `tolerance` (relative) of the mean over the run's last window.
inline Convergence convergence_point(std::span<const RoundLog> logs, const ConvergenceRule& rule) {
  const std::size_t w = rule.window;
  if (w == 0 || logs.size() < w) throw std::invalid_argument("convergence_point: fewer rounds than the window");
  auto window_mean = [&](std::size_t end) {
    double s = 0.0;
    for (std::size_t i = end - w; i < end; ++i) s += logs[i].accuracy;
    return s / static_cast<double>(w);
  };
  Convergence c;
  c.target = window_mean(logs.size());
  for (std::size_t t = w; t <= logs.size(); ++t) {
    if (std::abs(window_mean(t) - c.target) <= rule.tolerance * c.target) {
      c.round = logs[t - 1].round;
      c.time = logs[t - 1].elapsed;
      return c;
    }
  }
  c.round = logs.back().round;
  c.time = logs.back().elapsed;
  return c;
}

struct CellResult {
  GridCell cell;
  TrainingResult training;
  MemoryReport memory;
  Convergence convergence;
  double total_time = 0.0;
  double final_accuracy = 0.0;
  double final_macro_f1 = 0.0;
};

inline CellResult run_cell(const ExperimentConfig& config, const Dataset& data, const GridCell& cell) {
  check_cell(cell);
  CellResult r;
  r.cell = cell;
  r.training = run_training(config.engine, data, cell.scheme, cell.scheduler);
  r.memory = memory_footprint(cell.scheme, config.engine.cost_model, config.engine.devices, config.engine.workload,
                              config.engine.link.bytes_per_element);
  r.convergence = convergence_point(r.training.logs, config.convergence);
  r.total_time = r.training.logs.back().elapsed;
  r.final_accuracy = r.training.logs.back().accuracy;
  r.final_macro_f1 = r.training.logs.back().macro_f1;
  return r;
}

inline Dataset make_dataset(const ExperimentConfig& c) {
  return generate_dataset(c.dataset, c.engine.devices.size(), c.engine.model.input_dim, c.engine.model.num_classes,
                          c.engine.seed);
}

// Cells run on up to `jobs` threads; results keep the input order.
inline std::vector<CellResult> run_cells(const ExperimentConfig& config, const Dataset& data,
                                         const std::vector<GridCell>& cells, std::size_t jobs = 1) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    check_cell(cells[i]);
    for (std::size_t k = 0; k < i; ++k) {
      if (cells[k] == cells[i]) throw std::invalid_argument("duplicate grid cell " + cells[i].label());
    }
  }
  std::vector<CellResult> out(cells.size());
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(cells.size(), 1));
  if (jobs == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) out[i] = run_cell(config, data, cells[i]);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i = next++; i < cells.size(); i = next++) out[i] = run_cell(config, data, cells[i]);
    }));
  }
  for (auto& f : workers) f.get();  // rethrows the first failure
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::json cell_summary(const CellResult& r, const std::string& dataset_hash) {
  return {
      {"scheme", to_string(r.cell.scheme)},
      {"scheduler", to_string(r.cell.scheduler)},
      {"dataset_hash", dataset_hash},
      {"rounds", r.training.logs.size()},
      {"server_memory_bytes", r.memory.server_bytes()},
      {"memory", r.memory},
      {"convergence_round", r.convergence.round},
      {"convergence_time_s", r.convergence.time},
      {"convergence_target_accuracy", r.convergence.target},
      {"total_time_s", r.total_time},
      {"final_accuracy", r.final_accuracy},
      {"final_macro_f1", r.final_macro_f1},
      {"peak_live_server_caches", r.training.peak_live_caches},
      {"server_adapter_switches", r.training.server_switches},
  };
}

inline std::string rounds_jsonl(const CellResult& r) {
  std::string out;
  for (const auto& log : r.training.logs) {
    out += nlohmann::json(log).dump();
    out += '\n';
  }
  return out;
}

inline constexpr const char* kCurvesHeader = "scheme,scheduler,round,elapsed_s,accuracy,macro_f1,train_loss\n";
inline constexpr const char* kMemoryHeader =
    "scheme,server_total_bytes,frozen_bytes,adapter_bytes,activation_bytes,gradient_bytes\n";

inline std::string curve_rows(const CellResult& r) {
  std::ostringstream os;
  for (const auto& log : r.training.logs) {
    os << to_string(r.cell.scheme) << ',' << to_string(r.cell.scheduler) << ',' << log.round << ','
       << format_double(log.elapsed) << ',' << format_double(log.accuracy) << ',' << format_double(log.macro_f1)
       << ',' << format_double(log.train_loss) << '\n';
  }
  return os.str();
}

inline std::string memory_row(const MemoryReport& m) {
  std::ostringstream os;
  os << to_string(m.scheme) << ',' << m.server.total() << ',' << m.server.frozen << ',' << m.server.adapters << ','
     << m.server.activations << ',' << m.server.gradients << '\n';
  return os.str();
}

// Writes to a sibling temporary file and renames it into place.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void prepare_dir(const std::filesystem::path& dir) {
  if (std::filesystem::exists(dir) && !std::filesystem::is_directory(dir)) {
    throw std::runtime_error("output path " + dir.string() + " exists and is not a directory");
  }
  std::filesystem::create_directories(dir);
}

// rounds.jsonl, summary.json, curves.csv, memory.csv and the final adapter
// checkpoint (adapters.bin) for one cell.
inline void write_cell(const std::filesystem::path& dir, const CellResult& r, const std::string& dataset_hash,
                       const ExperimentConfig& config) {
  prepare_dir(dir);
  nlohmann::json summary = cell_summary(r, dataset_hash);
  summary["config"] = to_json(config);
  write_atomic(dir / "rounds.jsonl", rounds_jsonl(r));
  write_atomic(dir / "summary.json", summary.dump(2) + "\n");
  write_atomic(dir / "curves.csv", std::string(kCurvesHeader) + curve_rows(r));
  write_atomic(dir / "memory.csv", std::string(kMemoryHeader) + memory_row(r.memory));
  std::ostringstream ckpt(std::ios::binary);
  write_checkpoint(ckpt, r.training.final_adapters);
  write_atomic(dir / "adapters.bin", ckpt.str());
}

// Per-cell subdirectories named <scheme>-<scheduler>, plus combined
// summary.json, curves.csv and memory.csv at the top.
inline void write_grid(const std::filesystem::path& dir, const std::vector<CellResult>& results,
                       const std::string& dataset_hash, const ExperimentConfig& config) {
  prepare_dir(dir);
  std::vector<std::string> labels;
  for (const auto& r : results) {
    const std::string label = r.cell.label();
    if (std::find(labels.begin(), labels.end(), label) != labels.end()) {
      throw std::invalid_argument("two cells write to " + (dir / label).string());
    }
    labels.push_back(label);
  }
  nlohmann::json cells = nlohmann::json::array();
  std::string curves = kCurvesHeader;
  std::string memory = kMemoryHeader;
  std::vector<Scheme> memory_done;
  for (const auto& r : results) {
    write_cell(dir / r.cell.label(), r, dataset_hash, config);
    cells.push_back(cell_summary(r, dataset_hash));
    curves += curve_rows(r);
    if (std::find(memory_done.begin(), memory_done.end(), r.cell.scheme) == memory_done.end()) {
      memory += memory_row(r.memory);
      memory_done.push_back(r.cell.scheme);
    }
  }
  const nlohmann::json summary{{"dataset_hash", dataset_hash}, {"cells", cells}, {"config", to_json(config)}};
  write_atomic(dir / "summary.json", summary.dump(2) + "\n");
  write_atomic(dir / "curves.csv", curves);
  write_atomic(dir / "memory.csv", memory);
}

}  // namespace sflora
