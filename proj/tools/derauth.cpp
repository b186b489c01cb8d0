// derauth: simulation, live agents and battery characterization.
//
// Exit codes: 0 success, 1 protocol/operation/network failure, 2 usage or
// parse error. Flags override the DERAUTH_* environment variables.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "derauth/battery.hpp"
#include "derauth/io.hpp"
#include "derauth/live.hpp"
#include "derauth/sim.hpp"
#include "derauth/store.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop.store(true); }

struct Common {
  std::uint64_t seed{1};
  double dt{0.1};
  int tolerance{derauth::protocol::kDefaultTolerance};
  double lead{5.0};
  double window{10.0};
  double timeout{2.0};
  int retries{3};
  double horizon{5000.0};
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Protocol seed (enrollment and challenges)")
      ->envname("DERAUTH_SEED")
      ->capture_default_str();
  cmd->add_option("--dt", c.dt, "Time step in simulated seconds")
      ->envname("DERAUTH_DT")
      ->check(CLI::Range(1e-4, 10.0))
      ->capture_default_str();
  cmd->add_option("--tolerance", c.tolerance, "Measurement tolerance in quantization counts")
      ->envname("DERAUTH_TOLERANCE")
      ->check(CLI::Range(0, 255))
      ->capture_default_str();
  cmd->add_option("--lead", c.lead, "Seconds between challenge and setpoint")
      ->envname("DERAUTH_LEAD")
      ->check(CLI::Range(0.0, 3600.0))
      ->capture_default_str();
  cmd->add_option("--window", c.window, "Authenticated window length in seconds")
      ->check(CLI::Range(0.0, 3600.0))
      ->capture_default_str();
  cmd->add_option("--timeout", c.timeout, "REPLY timeout in seconds")
      ->check(CLI::Range(0.0, 3600.0))
      ->capture_default_str();
  cmd->add_option("--retries", c.retries, "Attempts per operation before it is skipped")
      ->check(CLI::Range(1, 100))
      ->capture_default_str();
  cmd->add_option("--horizon", c.horizon, "Simulated duration in seconds")
      ->check(CLI::Range(0.0, 1e7))
      ->capture_default_str();
}

derauth::agents::Timing timing_of(const Common& c) {
  derauth::agents::Timing t;
  t.lead = c.lead;
  t.window = c.window;
  t.timeout = c.timeout;
  t.max_retries = c.retries;
  t.tolerance = c.tolerance;
  return t;
}

void print_fault(const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j{{"fault", kind}, {"message", message}};
  std::cerr << j.dump() << "\n";
}

int run_simulate(const std::string& scenario_path, const std::string& pack_path,
                 const std::string& faults, const std::string& out_dir, bool full_rate,
                 const Common& c) {
  derauth::sim::SimConfig cfg;
  cfg.pack = derauth::io::load_pack(pack_path);
  cfg.scenario = derauth::io::load_scenario(scenario_path);
  cfg.seed = c.seed;
  cfg.dt = c.dt;
  cfg.horizon = c.horizon;
  cfg.timing = timing_of(c);
  cfg.full_rate = full_rate;
  if (!faults.empty()) {
    cfg.channel.faults = std::filesystem::exists(faults)
                             ? derauth::io::load_faults(faults)
                             : derauth::io::fault_preset(faults, cfg.scenario, c.lead);
  }
  if (!out_dir.empty()) cfg.store_dir = std::filesystem::path(out_dir);

  const auto result = derauth::sim::run_scenario(cfg);
  if (!out_dir.empty()) derauth::sim::write_outputs(result, cfg, out_dir);

  std::cout << derauth::sim::auth_log_csv(result);
  std::cout << derauth::sim::report_json(result, cfg);
  if (!result.all_operations_applied()) {
    print_fault("operation_failure", "not every scheduled operation was applied");
    return kExitFailure;
  }
  return kExitOk;
}

int run_extract(const std::string& pack_path) {
  const auto pack = derauth::io::load_pack(pack_path);
  std::printf("cell,E0_v,K_v_per_ah,A_v,B_per_ah,R_ohm,Q_ah\n");
  for (std::size_t i = 0; i < pack.cells.size(); ++i) {
    const auto m = derauth::battery::extract_model(pack.cells[i]);
    std::printf("%zu,%.9f,%.9f,%.9f,%.9f,%.6f,%.6f\n", i, m.e0, m.k, m.a, m.b, m.r, m.q);
  }
  return kExitOk;
}

int run_curve(const std::string& pack_path, const std::string& out_path, std::size_t cell) {
  const auto pack = derauth::io::load_pack(pack_path);
  if (cell >= pack.cells.size())
    throw std::invalid_argument("--cell " + std::to_string(cell) + " out of range for a " +
                                std::to_string(pack.cells.size()) + "-cell pack");
  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!out_path.empty() && out_path != "-") {
    file.open(out_path);
    if (!file) throw std::runtime_error("cannot write " + out_path);
    out = &file;
  }
  // One block per C-rate, in 0.5, 1, 2 x nominal current order.
  *out << "it_ah,voltage_v,c_rate\n";
  const auto& p = pack.cells[cell];
  for (double factor : {0.5, 1.0, 2.0}) {
    for (const auto& pt : derauth::battery::discharge_curve(p, factor * p.nominal_current)) {
      char line[96];
      std::snprintf(line, sizeof line, "%.4f,%.9f,%.6f\n", pt.it_ah, pt.voltage_v, pt.c_rate);
      *out << line;
    }
  }
  return kExitOk;
}

std::mutex g_log_mutex;

void print_event(const derauth::agents::LogEvent& e) {
  std::lock_guard lock(g_log_mutex);
  std::cout << derauth::agents::format_log_line(e) << "\n" << std::flush;
}

derauth::live::LiveOptions live_options(const Common& c, double speed, const std::string& out_dir) {
  derauth::live::LiveOptions o;
  o.speed = speed;
  o.dt = c.dt;
  o.horizon = c.horizon;
  o.timing = timing_of(c);
  if (!out_dir.empty()) o.store_dir = std::filesystem::path(out_dir);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DER battery-entropy challenge-reply authentication"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Common common;
  std::string scenario_path, pack_path, faults, out_dir, listen_addr = "0.0.0.0:20000",
                                                         connect_addr = "127.0.0.1:20000",
                                                         store_file;
  bool full_rate = false;
  double speed = 1.0;
  std::size_t cell = 0;

  auto* simulate = app.add_subcommand("simulate", "Run the deterministic co-simulation");
  simulate->add_option("--scenario", scenario_path, "Scenario file (time_s, op, power_w)")
      ->required();
  simulate->add_option("--pack", pack_path, "Pack definition file")->required();
  simulate->add_option("--faults", faults, "Fault schedule file or preset (e.g. replay_round2)");
  simulate->add_option("--out", out_dir, "Output directory for CSV, logs and session store");
  simulate->add_flag("--full-rate", full_rate, "Trace every tick instead of once per second");
  add_common(simulate, common);

  auto* outstation = app.add_subcommand("outstation", "Serve one master over TCP");
  outstation->add_option("--pack", pack_path, "Pack definition file")->required();
  outstation->add_option("--listen", listen_addr, "Listen address host:port")
      ->envname("DERAUTH_LISTEN")
      ->capture_default_str();
  outstation->add_option("--speed", speed, "Simulated seconds per wall second")
      ->envname("DERAUTH_SPEED")
      ->check(CLI::Range(0.01, 10000.0))
      ->capture_default_str();
  add_common(outstation, common);

  auto* master = app.add_subcommand("master", "Connect to an outstation and run a scenario");
  master->add_option("--connect", connect_addr, "Outstation address host:port")
      ->envname("DERAUTH_CONNECT")
      ->capture_default_str();
  master->add_option("--scenario", scenario_path, "Scenario file")->required();
  master->add_option("--pack", pack_path, "Pack definition for the shadow model")->required();
  master->add_option("--speed", speed, "Simulated seconds per wall second")
      ->envname("DERAUTH_SPEED")
      ->check(CLI::Range(0.01, 10000.0))
      ->capture_default_str();
  master->add_option("--out", out_dir, "Directory for the session store");
  add_common(master, common);

  auto* extract = app.add_subcommand("extract-params", "Print fitted model parameters per cell");
  extract->add_option("--pack", pack_path, "Pack definition file")->required();

  auto* curve = app.add_subcommand("discharge-curve", "Emit discharge curves at 0.5/1/2 x nominal");
  curve->add_option("--pack", pack_path, "Pack definition file")->required();
  curve->add_option("--out", out_dir, "CSV output path ('-' for stdout)")->capture_default_str();
  curve->add_option("--cell", cell, "Cell index to characterize")->capture_default_str();

  auto* verify = app.add_subcommand("verify-store", "Replay-verify a session store file");
  verify->add_option("file", store_file, "Session file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  try {
    if (*simulate) return run_simulate(scenario_path, pack_path, faults, out_dir, full_rate, common);
    if (*extract) return run_extract(pack_path);
    if (*curve) return run_curve(pack_path, out_dir, cell);
    if (*verify) {
      const auto session = derauth::store::load_session(store_file);
      const auto rep = derauth::store::verify_session(session);
      nlohmann::ordered_json j{{"ok", rep.ok},
                               {"records", session.rounds.size()},
                               {"dropped_truncated_tail", session.dropped_truncated_tail},
                               {"message", rep.message}};
      if (rep.first_bad_seq) j["first_bad_seq"] = *rep.first_bad_seq;
      std::cout << j.dump() << "\n";
      return rep.ok ? kExitOk : kExitFailure;
    }
    if (*outstation) {
      const auto pack = derauth::io::load_pack(pack_path);
      derauth::live::Listener listener(derauth::live::parse_address(listen_addr));
      std::cerr << "outstation listening on port " << listener.port() << "\n";
      const auto report = derauth::live::run_outstation(
          listener, pack, live_options(common, speed, ""), common.seed, print_event, &g_stop);
      std::cerr << "session closed: " << report.applied.size() << " setpoints applied\n";
      return kExitOk;
    }
    if (*master) {
      const auto pack = derauth::io::load_pack(pack_path);
      const auto scenario = derauth::io::load_scenario(scenario_path);
      const auto report = derauth::live::run_master(derauth::live::parse_address(connect_addr),
                                                    pack, scenario,
                                                    live_options(common, speed, out_dir),
                                                    common.seed, print_event, &g_stop);
      if (report.interrupted) {
        print_fault("interrupted", "session interrupted; store flushed");
        return kExitFailure;
      }
      if (!report.all_operations_applied()) {
        print_fault("operation_failure", "not every scheduled operation was applied");
        return kExitFailure;
      }
      return kExitOk;
    }
  } catch (const derauth::io::ParseError& e) {
    print_fault("parse_error", e.what());
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    print_fault("usage_error", e.what());
    return kExitUsage;
  } catch (const derauth::live::NetworkError& e) {
    print_fault("network_error", e.what());
    return kExitFailure;
  } catch (const std::exception& e) {
    print_fault("failure", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
