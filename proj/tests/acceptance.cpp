// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Independent references live in tests/oracles.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles/makespan.hpp"
#include "oracles/numeric.hpp"
#include "oracles/reference_net.hpp"
#include "sflora/sflora.hpp"

using namespace sflora;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& ex) {
    o = {false, std::string("exception: ") + ex.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0.0 && secs >= limit_s) {
    o.ok = false;
    o.detail += "; over the time limit";
  }
  if (!o.ok) ++failures;
  char timing[64];
  if (limit_s > 0.0) {
    std::snprintf(timing, sizeof timing, " [%.2f s, limit %.0f s]", secs, limit_s);
  } else {
    std::snprintf(timing, sizeof timing, " [%.2f s]", secs);
  }
  std::printf("%s criterion %d: %s: %s%s\n", o.ok ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), timing);
  std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix out(rows, cols);
  for (double& v : out.values()) v = n(rng);
  return out;
}

double set_error(const AdapterSet& x, const AdapterSet& y) {
  if (x.size() != y.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t l = 0; l < x.size(); ++l) {
    if (x.adapters[l].layer != y.adapters[l].layer) return INFINITY;
    worst = std::max(worst, max_relative_error(x.adapters[l].a, y.adapters[l].a));
    worst = std::max(worst, max_relative_error(x.adapters[l].b, y.adapters[l].b));
  }
  return worst;
}

AdapterSet random_set(std::size_t n, std::size_t m, std::size_t r, std::mt19937_64& rng) {
  AdapterSet s;
  for (std::size_t l = 1; l <= n; ++l) s.adapters.push_back({l, random_matrix(r, m, rng), random_matrix(m, r, rng)});
  return s;
}

ClientAdapterView view_of(std::size_t id, const AdapterSet& full, std::size_t cut, std::size_t size) {
  auto [c, s] = split_adapters(full, cut);
  return {id, std::move(c), std::move(s), size};
}

// ---------------------------------------------------------------------------

Outcome split_equals_monolithic() {
  double worst = 0.0;
  for (std::size_t k = 0; k <= 6; ++k) {
    const std::size_t batch = 16;
    EngineConfig e;
    e.model = {6, 32, 4, 16, 4, 40 + k};
    e.cost_model = {6, 768, 16, 768, 6, 1};
    e.workload = {batch, 1};
    e.lr = 0.05;
    e.seed = 40 + k;
    e.devices = {{0, "solo", 1e12, k, 0.0}};
    std::mt19937_64 rng(500 + k);
    Dataset data;
    Shard s;
    s.features = random_matrix(batch, 16, rng);
    std::uniform_int_distribution<int> lab(0, 3);
    for (std::size_t i = 0; i < batch; ++i) s.labels.push_back(lab(rng));
    data.clients.push_back(s);
    data.eval = s;

    TrainingState st = init_training_state(e, data);
    run_round(1, st, {{0}}, batch, e.lr);
    const AdapterSet split = assemble_full({0, st.clients[0].adapters, st.server.adapters[0], 1});

    const Model init = init_model(e.model);
    oracle::RefNet ref = oracle::make_ref(init.stack, init.adapters);
    oracle::sgd(ref, oracle::gradients(ref, oracle::to_mat(s.features), s.labels), e.lr);
    worst = std::max(worst, set_error(split, oracle::adapters_of(ref)));
  }
  return {worst <= 1e-10, "cuts 0..6, worst relative error " + fmt("%.3g", worst) + " (limit 1e-10)"};
}

Outcome gradient_exactness() {
  const ModelConfig c{3, 8, 2, 5, 3, 91};
  Model m = init_model(c);
  std::mt19937_64 rng(92);
  for (auto& ad : m.adapters.adapters) ad.b = random_matrix(8, 2, rng, 0.3);
  const Matrix x = random_matrix(6, 5, rng);
  std::vector<int> y{0, 1, 2, 0, 1, 2};
  std::shuffle(y.begin(), y.end(), rng);
  const auto fwd = forward_partial(m.stack, m.adapters, full_range(3), x);
  const auto g = backward_partial(m.stack, m.adapters, fwd.cache, fwd.output, y);
  auto loss = [&] { return loss_and_metrics(predict(m.stack, m.adapters, x), y).loss; };
  double worst = 0.0;
  std::size_t entries = 0;
  for (std::size_t l = 0; l < 3; ++l) {
    auto& ad = m.adapters.adapters[l];
    for (std::size_t i = 0; i < ad.a.size(); ++i, ++entries) {
      const double fd = oracle::central_difference(ad.a.values()[i], loss, 1e-5);
      worst = std::max(worst, std::abs(fd - g.grads[l].da.values()[i]) / std::max(std::abs(fd), 1e-6));
    }
    for (std::size_t i = 0; i < ad.b.size(); ++i, ++entries) {
      const double fd = oracle::central_difference(ad.b.values()[i], loss, 1e-5);
      worst = std::max(worst, std::abs(fd - g.grads[l].db.values()[i]) / std::max(std::abs(fd), 1e-6));
    }
  }
  return {worst <= 1e-4,
          std::to_string(entries) + " entries, worst relative error " + fmt("%.3g", worst) + " (limit 1e-4)"};
}

Outcome aggregation_properties() {
  std::mt19937_64 rng(31);
  const AdapterSet f = random_set(6, 8, 2, rng);
  const double fixed = set_error(aggregate(std::vector<ClientAdapterView>{view_of(0, f, 1, 5), view_of(1, f, 3, 9),
                                                                          view_of(2, f, 6, 2)}),
                                 f);

  std::vector<ClientAdapterView> views;
  for (std::size_t u = 0; u < 5; ++u) views.push_back(view_of(u, random_set(6, 7, 3, rng), u % 4, 3 + 2 * u));
  const AdapterSet base = aggregate(views);
  double perm = 0.0;
  for (int i = 0; i < 10; ++i) {
    std::shuffle(views.begin(), views.end(), rng);
    perm = std::max(perm, set_error(aggregate(views), base));
  }

  LoraAdapter a1{1, Matrix(2, 2), Matrix(2, 2)}, a2{1, Matrix(2, 2), Matrix(2, 2)};
  const double va1[] = {1, 2, 3, 4}, va2[] = {5, 6, 7, 8}, vb1[] = {4, 0, 0, 4}, vb2[] = {0, 8, 8, 0};
  const double ea[] = {4, 5, 6, 7}, eb[] = {1, 6, 6, 1};
  for (int i = 0; i < 4; ++i) {
    a1.a.values()[i] = va1[i];
    a2.a.values()[i] = va2[i];
    a1.b.values()[i] = vb1[i];
    a2.b.values()[i] = vb2[i];
  }
  AdapterSet s1, s2;
  s1.adapters.push_back(a1);
  s2.adapters.push_back(a2);
  const AdapterSet w = aggregate(std::vector<ClientAdapterView>{view_of(0, s1, 1, 1), view_of(1, s2, 0, 3)});
  double weighted = 0.0;
  for (int i = 0; i < 4; ++i) {
    weighted = std::max(weighted, std::abs(w.adapters[0].a.values()[i] - ea[i]));
    weighted = std::max(weighted, std::abs(w.adapters[0].b.values()[i] - eb[i]));
  }

  const AdapterSet x = random_set(1, 6, 2, rng);
  const AdapterSet y = random_set(1, 6, 2, rng);
  const AdapterSet xy = aggregate(std::vector<ClientAdapterView>{view_of(0, x, 0, 1), view_of(1, y, 1, 3)});
  Matrix products = scaled(merge_delta(x.adapters[0]), 0.25);
  axpy(0.75, merge_delta(y.adapters[0]), products);
  Matrix diff = merge_delta(xy.adapters[0]);
  axpy(-1.0, products, diff);
  const double gap = max_abs(diff);

  const bool ok = fixed <= 1e-12 && perm <= 1e-12 && weighted <= 1e-12 && gap > 0.0;
  return {ok, "fixed point " + fmt("%.2g", fixed) + ", permutation " + fmt("%.2g", perm) + ", 1:3 example " +
                  fmt("%.2g", weighted) + " (limit 1e-12); |avg(B)avg(A) - avg(BA)| = " + fmt("%.3g", gap) + " > 0"};
}

Outcome scheduling_optimality() {
  const ScheduleCheck check = check_greedy_optimality(250, 7, 2024);
  // Independent transcription of the makespan and exhaustive search.
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> size(1, 7);
  std::size_t oracle_ok = 0;
  const std::size_t oracle_n = 200;
  for (std::size_t i = 0; i < oracle_n; ++i) {
    const auto t = random_instance(rng, size(rng));
    if (oracle::makespan(backward_time_order(t).sequence, t) == oracle::best_makespan(t)) ++oracle_ok;
  }
  const ModelConfig shape{12, 768, 16, 768, 6, 1};
  std::uniform_real_distribution<double> cap(0.2, 4.0);
  std::uniform_int_distribution<std::size_t> cut(0, 12);
  std::size_t proxy_ok = 0;
  const std::size_t proxy_n = 200;
  for (std::size_t i = 0; i < proxy_n; ++i) {
    std::vector<DeviceProfile> d;
    const std::size_t n = size(rng);
    for (std::size_t u = 0; u < n; ++u) d.push_back({u, "x", cap(rng) * 1e12, cut(rng), 0.0});
    const auto t = time_components(d, LinkProfile{}, 52.2e12, shape, {16, 128});
    if (greedy_order(d) == backward_time_order(t)) ++proxy_ok;
  }
  const bool ok = check.matches == check.instances && check.instances >= 200 && oracle_ok == oracle_n &&
                  proxy_ok == proxy_n;
  return {ok, std::to_string(check.matches) + "/" + std::to_string(check.instances) +
                  " greedy == exhaustive optimum; " + std::to_string(oracle_ok) + "/" + std::to_string(oracle_n) +
                  " against the reference search; proxy order == backward-time order " +
                  std::to_string(proxy_ok) + "/" + std::to_string(proxy_n)};
}

Outcome reference_order() {
  const auto devs = reference_devices();
  const OrderAssignment o = greedy_order(devs);
  const std::vector<std::string> expect{"Jetson Nano", "A17 Pro", "Snapdragon 8s Gen 3", "M3", "Jetson TX2",
                                        "Snapdragon 8 Gen 3"};
  std::string got;
  bool ok = o.sequence.size() == expect.size();
  double prev = INFINITY;
  for (std::size_t i = 0; i < o.sequence.size(); ++i) {
    const auto& d = devs[o.sequence[i]];
    const double ratio = static_cast<double>(d.cut) / (d.capacity / 1e12);
    ok = ok && d.name == expect[i] && ratio < prev;
    prev = ratio;
    got += (i ? ", " : "") + d.name + " (" + fmt("%.3f", ratio) + ")";
  }
  return {ok, got};
}

Outcome memory_ratio() {
  const ModelConfig shape{12, 768, 16, 768, 6, 1};
  const Workload work{16, 128};
  std::vector<DeviceProfile> devs = reference_devices();
  const auto ours = memory_footprint(Scheme::ours, shape, devs, work);
  const auto sfl = memory_footprint(Scheme::sfl, shape, devs, work);
  const double ratio = static_cast<double>(sfl.server_bytes()) / static_cast<double>(ours.server_bytes());

  std::mt19937_64 rng(606);
  std::uniform_int_distribution<std::size_t> users(2, 10), layers(1, 24), pick(0, 1000), width(4, 96);
  std::size_t wins = 0;
  for (int i = 0; i < 100; ++i) {
    const ModelConfig m{layers(rng), width(rng), 4, 16, 4, 1};
    std::vector<DeviceProfile> d;
    const std::size_t u = users(rng);
    for (std::size_t k = 0; k < u; ++k) d.push_back({k, "c", 1e12, pick(rng) % (m.num_layers + 1), 0.0});
    if (memory_footprint(Scheme::ours, m, d, {8, 16}).server_bytes() <
        memory_footprint(Scheme::sfl, m, d, {8, 16}).server_bytes()) {
      ++wins;
    }
  }
  const bool ok = ratio >= 4.2 && ratio <= 5.5 && wins == 100;
  return {ok, "SFL/OURS server bytes " + std::to_string(sfl.server_bytes()) + "/" +
                  std::to_string(ours.server_bytes()) + " = " + fmt("%.3f", ratio) +
                  " (range [4.2, 5.5]); OURS < SFL in " + std::to_string(wins) + "/100 random draws"};
}

const CellResult& find(const std::vector<CellResult>& rs, Scheme s, SchedulerKind k) {
  for (const auto& r : rs) {
    if (r.cell.scheme == s && r.cell.scheduler == k) return r;
  }
  throw std::runtime_error("missing cell");
}

std::vector<CellResult> default_grid;  // seed 7, reused by criteria 8 and 9

Outcome qualitative_ordering() {
  const std::vector<std::uint64_t> seeds{7, 11, 3};
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : seeds) {
    ExperimentConfig c = default_config();
    apply_overrides(c, {seed, std::nullopt, std::nullopt, std::nullopt});
    const Dataset data = make_dataset(c);
    auto rs = run_cells(c, data, c.grid, 2);
    const auto& og = find(rs, Scheme::ours, SchedulerKind::greedy);
    const auto& of = find(rs, Scheme::ours, SchedulerKind::fifo);
    const auto& ow = find(rs, Scheme::ours, SchedulerKind::wf);
    const auto& sfl = find(rs, Scheme::sfl, SchedulerKind::greedy);
    const auto& sl = find(rs, Scheme::sl, SchedulerKind::none);
    bool same = og.training.logs.size() == sfl.training.logs.size();
    for (std::size_t t = 0; same && t < og.training.logs.size(); ++t) {
      same = og.training.logs[t].accuracy == sfl.training.logs[t].accuracy &&
             og.training.logs[t].macro_f1 == sfl.training.logs[t].macro_f1;
    }
    const bool faster = og.convergence.time < sfl.convergence.time && og.convergence.time < sl.convergence.time;
    const bool sched = og.total_time <= of.total_time && og.total_time <= ow.total_time;
    ok = ok && same && faster && sched;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": curves " +
              (same ? "identical" : "DIFFER") + ", converge OURS " + fmt("%.1f", og.convergence.time) + " s vs SFL " +
              fmt("%.1f", sfl.convergence.time) + " s vs SL " + fmt("%.1f", sl.convergence.time) +
              " s, total greedy/fifo/wf " + fmt("%.2f", og.total_time) + "/" + fmt("%.2f", of.total_time) + "/" +
              fmt("%.2f", ow.total_time) + " s";
    if (seed == 7) default_grid = std::move(rs);
  }
  return {ok, detail};
}

// Monolithic trainer on the pooled client data, written against the
// reference network only.
double oracle_pooled_accuracy(const ExperimentConfig& c, const Dataset& data) {
  const Model init = init_model(c.engine.model);
  oracle::RefNet net = oracle::make_ref(init.stack, init.adapters);
  const Shard pool = pooled(data);
  const oracle::Mat px = oracle::to_mat(pool.features);
  std::mt19937_64 rng(c.engine.seed * 7919 + 1);
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t batch = 96;
  std::size_t pos = idx.size();
  for (int step = 0; step < 300; ++step) {
    oracle::Mat x;
    std::vector<int> y;
    for (std::size_t i = 0; i < batch; ++i) {
      if (pos == idx.size()) {
        std::shuffle(idx.begin(), idx.end(), rng);
        pos = 0;
      }
      x.push_back(px[idx[pos]]);
      y.push_back(pool.labels[idx[pos]]);
      ++pos;
    }
    oracle::sgd(net, oracle::gradients(net, x, y), c.engine.lr);
  }
  const oracle::Mat logits = oracle::logits(net, oracle::to_mat(data.eval.features));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto best = static_cast<int>(std::max_element(logits[i].begin(), logits[i].end()) - logits[i].begin());
    if (best == data.eval.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.size());
}

Outcome learning_sanity() {
  const ExperimentConfig c = default_config();
  const Dataset data = make_dataset(c);
  const double target = 0.90;
  const double oracle_acc = oracle_pooled_accuracy(c, data);
  if (default_grid.empty()) default_grid = run_cells(c, data, c.grid, 2);
  const auto& run = find(default_grid, c.cell.scheme, c.cell.scheduler);
  const bool ok = oracle_acc >= target && run.final_accuracy >= target;
  return {ok, "pooled oracle trainer " + fmt("%.4f", oracle_acc) + ", default run (" + c.cell.label() + ") " +
                  fmt("%.4f", run.final_accuracy) + ", target " + fmt("%.2f", target)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome determinism() {
  const ExperimentConfig c = default_config();
  const fs::path root = fs::temp_directory_path() / "sflora_acceptance_determinism";
  fs::remove_all(root);
  bool ok = true;
  std::size_t compared = 0;
  for (const GridCell& cell : c.grid) {
    for (int run = 0; run < 2; ++run) {
      const Dataset data = make_dataset(c);
      const CellResult r = run_cell(c, data, cell);
      write_cell(root / std::to_string(run) / cell.label(), r, content_hash(data), c);
    }
    for (const char* f : {"summary.json", "rounds.jsonl"}) {
      const std::string a = slurp(root / "0" / cell.label() / f);
      ok = ok && !a.empty() && a == slurp(root / "1" / cell.label() / f);
      ++compared;
    }
  }
  fs::remove_all(root);
  return {ok, std::to_string(compared) + " files over " + std::to_string(c.grid.size()) +
                  " cells compared byte for byte across two executions"};
}

}  // namespace

int main() {
  report(1, "split round equals monolithic step", 1.0, split_equals_monolithic);
  report(2, "adapter gradients vs finite differences", 10.0, gradient_exactness);
  report(3, "aggregation properties", 0.0, aggregation_properties);
  report(4, "greedy scheduling optimality", 30.0, scheduling_optimality);
  report(5, "reference device order", 0.0, reference_order);
  report(6, "server memory ratio", 0.0, memory_ratio);
  report(7, "qualitative time ordering at desk scale", 300.0, qualitative_ordering);
  report(8, "learning sanity", 0.0, learning_sanity);
  report(9, "determinism", 0.0, determinism);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
