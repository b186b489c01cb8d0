#pragma once

// Master and outstation state machines. Both are transport-agnostic: they
// consume decoded frames plus timer ticks and return messages to send. The
// simulation kernel and the TCP runners drive the same objects.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "derauth/battery.hpp"
#include "derauth/link.hpp"
#include "derauth/protocol.hpp"
#include "derauth/store.hpp"

namespace derauth::agents {

enum class Op { charge, discharge, no_op };

std::string_view to_string(Op op) noexcept;

struct ScenarioEvent {
  double time{};   // s
  Op op{Op::no_op};
  double power{};  // W, magnitude

  /// Pack power with the battery sign convention (> 0 discharges).
  [[nodiscard]] double pack_power() const noexcept;
};

struct Timing {
  double lead{5.0};      // challenge issued this long before the operation
  double window{10.0};   // authenticated window length
  double timeout{2.0};   // REPLY deadline
  int max_retries{3};
  int tolerance{protocol::kDefaultTolerance};
};

/// Machine-parseable event line (one per protocol event).
struct LogEvent {
  double time{};
  std::string agent;
  std::string kind;
  std::optional<std::uint64_t> challenge;
  std::optional<std::uint64_t> reply;
  std::optional<protocol::Verdict> verdict;
  protocol::RejectReason reason{protocol::RejectReason::none};
  std::string detail;
};

std::string format_log_line(const LogEvent& e);

using EventSink = std::function<void(const LogEvent&)>;

enum class MasterSession : std::uint8_t {
  unenrolled,
  idle,
  challenge_sent,
  authenticated_window,
};

inline constexpr MasterSession kAllMasterSessions[] = {
    MasterSession::unenrolled, MasterSession::idle, MasterSession::challenge_sent,
    MasterSession::authenticated_window};

std::string_view to_string(MasterSession s) noexcept;

/// Transition table of the master session. Every state change in Master
/// goes through it; the window is reachable only from challenge_sent.
bool master_transition_allowed(MasterSession from, MasterSession to) noexcept;

struct OperationOutcome {
  std::size_t index{};
  ScenarioEvent event;
  enum class Status { pending, applied, skipped, refused } status{Status::pending};
  double dispatched_at{-1.0};
  int attempts{};
};

class Master {
 public:
  Master(const battery::PackConfig& pack, std::vector<ScenarioEvent> scenario, Timing timing,
         std::uint64_t seed);

  std::vector<link::Message> on_frame(const link::Frame& frame, double now);
  std::vector<link::Message> on_tick(double now);

  /// Advances the noise-free shadow pack.
  void advance(double dt);

  /// Corrects the shadow cells of an accepted round to the received
  /// quantized SoC (bin centre).
  void shadow_sync(const protocol::Challenge& c, std::span<const protocol::Quantized> received);

  /// Expected quantized readings for the polled cells, from the shadow pack.
  [[nodiscard]] std::vector<protocol::Quantized> expected_readings(const protocol::Challenge& c) const;

  void set_sink(EventSink sink) { sink_ = std::move(sink); }
  void set_store(store::SessionStore* s) { store_ = s; }

  [[nodiscard]] MasterSession session() const noexcept { return session_; }
  [[nodiscard]] const protocol::CellReplyTable& table() const noexcept { return table_; }
  [[nodiscard]] const battery::Pack& shadow() const noexcept { return shadow_; }
  [[nodiscard]] const std::vector<store::RoundRecord>& rounds() const noexcept { return rounds_; }
  [[nodiscard]] const std::vector<OperationOutcome>& operations() const noexcept { return ops_; }
  [[nodiscard]] bool finished() const noexcept;
  [[nodiscard]] int retry_count() const noexcept { return retry_count_; }
  [[nodiscard]] std::optional<protocol::CellReplyTable> enrollment_table() const { return enrolled_; }

 private:
  void transition(MasterSession to);
  void emit(LogEvent e);
  link::Message issue_challenge(double now);
  void fail_round(double now, std::uint64_t reply, protocol::RejectReason reason,
                  std::vector<link::Message>& out);
  void record_round(double now, std::uint64_t reply, protocol::Verdict v, protocol::RejectReason r);

  Timing timing_;
  battery::Pack shadow_;
  double shadow_power_{0.0};
  Rng rng_;
  protocol::CellReplyTable table_;
  std::optional<protocol::CellReplyTable> enrolled_;
  MasterSession session_{MasterSession::unenrolled};
  bool enroll_requested_{false};
  std::vector<OperationOutcome> ops_;
  std::size_t next_op_{0};
  int retry_count_{0};
  protocol::Challenge challenge_{};
  double deadline_{0.0};
  double window_expiry_{0.0};
  std::optional<double> pending_setpoint_;  // pack power awaiting ACK
  std::size_t pending_op_{0};
  std::uint64_t attempt_seq_{0};
  std::vector<store::RoundRecord> rounds_;
  EventSink sink_;
  store::SessionStore* store_{nullptr};
};

enum class OutstationSession : std::uint8_t { unenrolled, idle, awaiting_result };

struct AppliedSetpoint {
  double time{};
  double pack_power{};
  double authorized_at{};  // time the covering window was opened
};

class Outstation {
 public:
  Outstation(const battery::PackConfig& pack, Timing timing, std::uint64_t seed);

  std::vector<link::Message> on_frame(const link::Frame& frame, double now);
  std::vector<link::Message> on_tick(double now);
  void advance(double dt);

  void set_sink(EventSink sink) { sink_ = std::move(sink); }

  [[nodiscard]] OutstationSession session() const noexcept { return session_; }
  [[nodiscard]] const protocol::CellReplyTable& table() const noexcept { return table_; }
  [[nodiscard]] const battery::Pack& pack() const noexcept { return pack_; }
  [[nodiscard]] double power() const noexcept { return power_; }
  [[nodiscard]] const std::vector<AppliedSetpoint>& applied() const noexcept { return applied_; }
  [[nodiscard]] const std::vector<double>& accepted_rounds() const noexcept { return accepted_at_; }
  [[nodiscard]] bool window_open(double now) const noexcept;

 private:
  void emit(LogEvent e);

  Timing timing_;
  battery::Pack pack_;
  double power_{0.0};
  std::uint64_t seed_;
  protocol::CellReplyTable table_;
  OutstationSession session_{OutstationSession::unenrolled};
  protocol::Challenge held_challenge_{};
  std::uint64_t held_pre_{0};
  std::optional<double> window_opened_;
  double window_expiry_{-1.0};
  std::vector<AppliedSetpoint> applied_;
  std::vector<double> accepted_at_;
  EventSink sink_;
};

/// Gating audit: every applied setpoint must fall inside a window opened by
/// an accepted round no more than `window` seconds earlier.
bool audit_gating(std::span<const AppliedSetpoint> applied, std::span<const double> accepted_at,
                  double window);

}  // namespace derauth::agents
