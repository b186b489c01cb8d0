#include <doctest.h>

#include <future>
#include <thread>

#include "derauth/io.hpp"
#include "derauth/live.hpp"
#include "derauth/sim.hpp"

using namespace derauth;
using namespace derauth::live;

namespace {

battery::PackConfig reference_pack() { return io::load_pack(DERAUTH_DATA_DIR "/reference.pack"); }

LiveOptions fast(double speed, double horizon) {
  LiveOptions o;
  o.speed = speed;
  o.horizon = horizon;
  o.accept_timeout_wall_s = 10.0;
  o.connect_attempts = 20;
  o.connect_retry_wall_s = 0.05;
  return o;
}

std::uint16_t free_port() {
  Listener l(Address{"127.0.0.1", 0});
  return l.port();
}

}  // namespace

TEST_CASE("address parsing") {
  CHECK(parse_address("10.0.0.2:1234").host == "10.0.0.2");
  CHECK(parse_address("10.0.0.2:1234").port == 1234);
  CHECK(parse_address(":99").port == 99);
  CHECK(parse_address(":99").host == "127.0.0.1");
  CHECK(parse_address("4242").port == 4242);
  CHECK(parse_address("localhost").port == 20000);
  CHECK_THROWS_AS(parse_address("host:99999"), std::invalid_argument);
  CHECK_THROWS_AS(parse_address("host:abc"), std::invalid_argument);
}

TEST_CASE("loopback session matches the simulated verdicts") {
  const std::vector<agents::ScenarioEvent> scenario{{20.0, agents::Op::discharge, 10.0},
                                                    {40.0, agents::Op::charge, 10.0},
                                                    {60.0, agents::Op::no_op, 0.0}};
  Listener listener(Address{"127.0.0.1", 0});
  const auto port = listener.port();
  const auto opts = fast(50.0, 80.0);
  auto out = std::async(std::launch::async,
                        [&] { return run_outstation(listener, reference_pack(), opts, 5); });
  const auto master = run_master(Address{"127.0.0.1", port}, reference_pack(), scenario, opts, 5);
  const auto outstation = out.get();

  CHECK(master.all_operations_applied());
  CHECK(master.table == outstation.table);
  CHECK(outstation.applied.size() == 3);
  CHECK(agents::audit_gating(outstation.applied, outstation.accepted_at, opts.timing.window));

  sim::SimConfig cfg;
  cfg.pack = reference_pack();
  cfg.scenario = scenario;
  cfg.seed = 5;
  cfg.horizon = 80.0;
  const auto simulated = sim::run_scenario(cfg);
  REQUIRE(master.rounds.size() == simulated.rounds.size());
  for (std::size_t i = 0; i < master.rounds.size(); ++i)
    CHECK(master.rounds[i].verdict == simulated.rounds[i].verdict);
  CHECK(outstation.applied.size() == simulated.applied.size());
}

TEST_CASE("second master is refused") {
  Listener listener(Address{"127.0.0.1", 0});
  const auto port = listener.port();
  const std::vector<agents::ScenarioEvent> scenario{{10.0, agents::Op::no_op, 0.0}};
  const auto opts = fast(10.0, 15.0);
  auto out = std::async(std::launch::async,
                        [&] { return run_outstation(listener, reference_pack(), opts, 5); });
  std::atomic<bool> connected{false};
  auto first = std::async(std::launch::async, [&] {
    return run_master(Address{"127.0.0.1", port}, reference_pack(), scenario, opts, 5,
                      [&](const agents::LogEvent&) { connected = true; });
  });
  while (!connected) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  auto second_opts = opts;
  second_opts.connect_attempts = 1;
  bool refused = false;
  for (int attempt = 0; attempt < 50 && !refused; ++attempt) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    try {
      run_master(Address{"127.0.0.1", port}, reference_pack(), scenario, second_opts, 5);
    } catch (const NetworkError&) {
      refused = true;
    }
  }
  CHECK(refused);
  CHECK(first.get().all_operations_applied());
  out.get();
}

TEST_CASE("master without an outstation gives up") {
  auto opts = fast(10.0, 10.0);
  opts.connect_attempts = 3;
  opts.connect_retry_wall_s = 0.01;
  const auto port = free_port();
  CHECK_THROWS_AS(run_master(Address{"127.0.0.1", port}, reference_pack(), {}, opts, 1), NetworkError);
}

TEST_CASE("stop flag interrupts the session") {
  Listener listener(Address{"127.0.0.1", 0});
  const auto port = listener.port();
  std::atomic<bool> stop{false};
  const auto opts = fast(1.0, 1000.0);
  auto out = std::async(std::launch::async,
                        [&] { return run_outstation(listener, reference_pack(), opts, 5); });
  auto master = std::async(std::launch::async, [&] {
    return run_master(Address{"127.0.0.1", port}, reference_pack(),
                      {{500.0, agents::Op::discharge, 10.0}}, opts, 5, {}, &stop);
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  stop = true;
  const auto report = master.get();
  CHECK(report.interrupted);
  const auto o = out.get();
  CHECK_FALSE(o.interrupted);
}
