#pragma once

// Deterministic co-simulation of master, outstation, pack and channel on a
// single dt grid. Per tick: channel deliveries (outstation first, then
// master), agent timers (outstation, master), trace sampling, physics.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "derauth/agents.hpp"
#include "derauth/link.hpp"

namespace derauth::sim {

enum class FaultKind { bit_flip, drop, replay, duplicate };

std::string_view to_string(FaultKind k) noexcept;

/// Hits the first frame of `target` sent at or after `time`. bit_flip
/// flips bit `arg` of the 64-bit analog value (or payload bit for other
/// types); replay substitutes the payload of the arg-th (1-based) earlier
/// frame of the same type. Tampered frames are re-framed with a valid CRC.
struct Fault {
  double time{};
  FaultKind kind{FaultKind::drop};
  link::MsgType target{link::MsgType::reply};
  std::uint64_t arg{};
};

struct ChannelModel {
  double latency{0.01};
  std::vector<Fault> faults;
};

struct SimConfig {
  battery::PackConfig pack;
  std::vector<agents::ScenarioEvent> scenario;
  std::uint64_t seed{1};
  double dt{0.1};
  double horizon{5000.0};
  agents::Timing timing;
  ChannelModel channel;
  bool full_rate{false};  // trace every tick instead of every second
  std::optional<std::filesystem::path> store_dir;
};

struct TraceRow {
  double time;
  std::size_t cell;
  double voltage;
  double soc;
};

struct FaultApplication {
  double time;
  Fault fault;
};

struct SimResult {
  std::vector<TraceRow> trace;
  std::vector<store::RoundRecord> rounds;  // master's view
  std::vector<agents::LogEvent> log;
  std::vector<agents::OperationOutcome> operations;
  std::vector<agents::AppliedSetpoint> applied;
  std::vector<double> accepted_at;  // outstation window openings
  std::vector<FaultApplication> faults_applied;
  protocol::CellReplyTable master_table;
  protocol::CellReplyTable outstation_table;
  std::vector<double> final_soc;
  std::vector<double> initial_soc;
  std::vector<double> charge_throughput;  // ∫i dt per cell, Ah
  std::vector<double> capacity;           // Q per cell, Ah
  std::optional<std::filesystem::path> store_file;
  std::uint64_t steps{};

  [[nodiscard]] std::size_t accepted_rounds() const;
  [[nodiscard]] bool all_operations_applied() const;
  [[nodiscard]] bool gating_ok(double window) const;
};

SimResult run_scenario(const SimConfig& config);

std::string trace_csv(const SimResult& r);
std::string auth_log_csv(const SimResult& r);
std::string event_log(const SimResult& r);
std::string report_json(const SimResult& r, const SimConfig& config);

/// Writes measurements.csv, auth_log.csv, events.log, report.json.
void write_outputs(const SimResult& r, const SimConfig& config, const std::filesystem::path& dir);

struct ReplayCase {
  bool replay_rejected{false};
  protocol::RejectReason reason{protocol::RejectReason::none};
  bool retry_accepted{false};
  std::uint64_t replayed_wire{};
};

/// Records the REPLY of authentication round `from_round` (1-based, among
/// accepted rounds) and substitutes it into the first attempt after
/// `rounds_between` further accepted rounds.
ReplayCase replay_attack_case(std::uint64_t seed, std::size_t from_round = 1,
                              std::size_t rounds_between = 0);

}  // namespace derauth::sim
