// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <vector>

#include "oracles/makespan.hpp"
#include "sflora/costmodel.hpp"

using namespace sflora;
using Catch::Approx;

namespace {

const ModelConfig kPaperShape{12, 768, 16, 768, 6, 1};
const Workload kPaperWork{16, 128};

std::vector<DeviceProfile> paper_devices() {
  const double caps[] = {0.472, 1.33, 1.689, 2.774, 2.147, 3.533};
  const std::size_t cuts[] = {1, 1, 2, 2, 3, 3};
  std::vector<DeviceProfile> d;
  for (std::size_t i = 0; i < 6; ++i) d.push_back({i, "d" + std::to_string(i), caps[i] * 1e12, cuts[i], 0.0});
  return d;
}

}  // namespace

TEST_CASE("flops_layer", "[costmodel]") {
  CHECK(flops_layer(1, 2, 1, Direction::forward) == 16.0);
  for (std::size_t m : {2u, 8u, 768u}) {
    for (std::size_t r : {1u, 4u}) {
      const double f = flops_layer(7, m, r, Direction::forward);
      CHECK(flops_layer(7, m, r, Direction::backward) == 2.0 * f);
      CHECK(flops_layer(14, m, r, Direction::forward) == 2.0 * f);
    }
  }
  CHECK(flops_dense(2, 3, 4, Direction::forward) == 48.0);
}

TEST_CASE("time_components by hand", "[costmodel]") {
  const ModelConfig model{3, 4, 1, 3, 2, 1};
  const Workload w{2, 1};
  const DeviceProfile dev{0, "x", 1e9, 2, 0.0};
  const LinkProfile link{1e3, 4};
  const StepTiming t = time_components(dev, link, 1e10, model, w);
  // lift 2*2*3*4 = 48, hidden layer 2*2*16 + 4*2*4 = 96 forward
  CHECK(t.client_forward == Approx((48.0 + 2 * 96.0) / 1e9).epsilon(1e-15));
  CHECK(t.client_backward == Approx(2 * 192.0 / 1e9).epsilon(1e-15));
  // one server hidden layer fwd+bwd = 288, head 2*2*4*2 = 32 fwd, 64 bwd
  CHECK(t.server == Approx((288.0 + 96.0) / 1e10).epsilon(1e-15));
  CHECK(t.upload == Approx(2 * 4 * 4 * 8 / 1e3).epsilon(1e-15));
  CHECK(t.download == t.upload);
  CHECK(t.wait == 0.0);
  CHECK(t.total() == t.client_forward + t.upload + t.server + t.download + t.client_backward);
}

TEST_CASE("timing properties", "[costmodel]") {
  const auto devs = paper_devices();
  const auto t = time_components(devs, LinkProfile{}, 52.2e12, kPaperShape, kPaperWork);
  for (const auto& s : t) {
    CHECK(s.upload == s.download);
    CHECK(s.upload > 0.0);
  }
  DeviceProfile twin = devs[2];
  twin.client_id = 9;
  CHECK(time_components(twin, LinkProfile{}, 52.2e12, kPaperShape, kPaperWork) == t[2]);

  double prev = 1e300;
  for (std::size_t cut = 0; cut <= 12; ++cut) {
    DeviceProfile d{0, "x", 1e12, cut, 0.0};
    const double s = time_components(d, LinkProfile{}, 52.2e12, kPaperShape, kPaperWork).server;
    CHECK(s < prev);
    prev = s;
  }
  DeviceProfile all{0, "x", 1e12, 12, 0.0};
  CHECK(time_components(all, LinkProfile{}, 52.2e12, kPaperShape, kPaperWork).server ==
        (flops_dense(kPaperWork.rows(), 768, 6, Direction::forward) +
         flops_dense(kPaperWork.rows(), 768, 6, Direction::backward)) /
            52.2e12);

  DeviceProfile broken{0, "x", 0.0, 1, 0.0};
  CHECK_THROWS(time_components(broken, LinkProfile{}, 1e12, kPaperShape, kPaperWork));
  CHECK_THROWS(time_components(devs[0], LinkProfile{0.0, 4}, 1e12, kPaperShape, kPaperWork));
  CHECK_THROWS(time_components(devs[0], LinkProfile{}, 0.0, kPaperShape, kPaperWork));
}

TEST_CASE("client backward time is proportional to cut over capacity", "[costmodel]") {
  const auto devs = paper_devices();
  const auto t = time_components(devs, LinkProfile{}, 52.2e12, kPaperShape, kPaperWork);
  const double unit = t[0].client_backward * devs[0].capacity / static_cast<double>(devs[0].cut);
  for (std::size_t u = 0; u < devs.size(); ++u) {
    CHECK(t[u].client_backward == Approx(unit * static_cast<double>(devs[u].cut) / devs[u].capacity).epsilon(1e-14));
  }
}

TEST_CASE("step_makespan", "[costmodel]") {
  SECTION("three-client instance") {
    std::vector<StepTiming> t(3);
    t[0].server = 1;
    t[1].server = 2;
    t[2].server = 3;
    t[0].client_backward = 5;
    t[1].client_backward = 1;
    t[2].client_backward = 1;
    const auto r = step_makespan({{0, 1, 2}}, t);
    CHECK(r.completions == std::vector<double>{6, 4, 7});
    CHECK(r.waits == std::vector<double>{0, 1, 3});
    CHECK(r.makespan == 7);
    CHECK(oracle::best_makespan(t) == 7);
  }
  SECTION("single client") {
    StepTiming s{1, 2, 99, 3, 4, 5};
    const auto r = step_makespan({{0}}, std::vector<StepTiming>{s});
    CHECK(r.waits[0] == 0.0);
    CHECK(r.makespan == 15);
  }
  SECTION("identical clients are order independent") {
    StepTiming s{1, 0.5, 0, 2, 0.5, 3};
    const std::vector<StepTiming> t{s, s, s};
    CHECK(step_makespan({{0, 1, 2}}, t).makespan == step_makespan({{2, 0, 1}}, t).makespan);
  }
  SECTION("matches the prefix-sum transcription on every order") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(0.0, 2.0);
    std::vector<StepTiming> t(5);
    for (auto& s : t) s = {d(rng), d(rng), 0.0, d(rng), d(rng), d(rng)};
    std::vector<std::size_t> p{0, 1, 2, 3, 4};
    do {
      CHECK(step_makespan({p}, t).makespan == oracle::makespan(p, t));
    } while (std::next_permutation(p.begin(), p.end()));
  }
  SECTION("increasing a server time never lowers the makespan") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> d(0.0, 2.0);
    for (int i = 0; i < 50; ++i) {
      std::vector<StepTiming> t(4);
      for (auto& s : t) s = {d(rng), d(rng), 0.0, d(rng), d(rng), d(rng)};
      const OrderAssignment o{{2, 0, 3, 1}};
      const double before = step_makespan(o, t).makespan;
      t[i % 4].server += d(rng);
      CHECK(step_makespan(o, t).makespan >= before);
    }
  }
  SECTION("non-permutations throw") {
    const std::vector<StepTiming> t(3);
    CHECK_THROWS(step_makespan({{0, 0, 1}}, t));
    CHECK_THROWS(step_makespan({{0, 1}}, t));
    CHECK_THROWS(step_makespan({{0, 1, 3}}, t));
  }
}

TEST_CASE("memory footprint", "[costmodel]") {
  const auto devs = paper_devices();
  const auto ours = memory_footprint(Scheme::ours, kPaperShape, devs, kPaperWork);
  const auto sfl = memory_footprint(Scheme::sfl, kPaperShape, devs, kPaperWork);
  const auto sl = memory_footprint(Scheme::sl, kPaperShape, devs, kPaperWork);

  SECTION("paper-shaped ratio") {
    const double ratio = static_cast<double>(sfl.server_bytes()) / static_cast<double>(ours.server_bytes());
    CHECK(ratio >= 4.2);
    CHECK(ratio <= 5.5);
    CHECK(sl.server_bytes() < ours.server_bytes());
  }
  SECTION("frozen layer counts") {
    const std::uint64_t layer = 768ull * 768 * 4;
    const std::uint64_t head = 768ull * 6 * 4;
    CHECK(sfl.server.frozen == 60 * layer + 6 * head);
    CHECK(ours.server.frozen == 11 * layer + head);
  }
  SECTION("breakdowns sum") {
    for (const auto* r : {&ours, &sfl, &sl}) {
      CHECK(r->server_bytes() ==
            r->server.frozen + r->server.adapters + r->server.activations + r->server.gradients);
      CHECK(r->clients.size() == 6);
    }
  }
  SECTION("one client: ours equals sfl") {
    const std::vector<DeviceProfile> one{devs[3]};
    CHECK(memory_footprint(Scheme::ours, kPaperShape, one, kPaperWork).server ==
          memory_footprint(Scheme::sfl, kPaperShape, one, kPaperWork).server);
  }
  SECTION("every client holds the whole model") {
    std::vector<DeviceProfile> full = devs;
    for (auto& d : full) d.cut = 12;
    const auto r = memory_footprint(Scheme::ours, kPaperShape, full, kPaperWork);
    CHECK(r.server.frozen == 768ull * 6 * 4);
    CHECK(r.server.adapters == 0);
  }
  SECTION("ours beats sfl on random multi-client configurations") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> users(2, 10), layers(1, 24), cut_pick(0, 1000);
    for (int i = 0; i < 100; ++i) {
      const ModelConfig m{layers(rng), 64, 8, 32, 4, 1};
      std::vector<DeviceProfile> d;
      const std::size_t u = users(rng);
      for (std::size_t k = 0; k < u; ++k) d.push_back({k, "c", 1e12, cut_pick(rng) % m.num_layers, 0.0});
      CHECK(memory_footprint(Scheme::ours, m, d, {8, 16}).server_bytes() <
            memory_footprint(Scheme::sfl, m, d, {8, 16}).server_bytes());
    }
  }
  SECTION("json") {
    const nlohmann::json j = ours;
    CHECK(j.at("scheme") == "ours");
    CHECK(j.at("server").at("total_bytes").get<std::uint64_t>() == ours.server_bytes());
  }
}
