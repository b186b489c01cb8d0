#pragma once

// Live TCP mode. The outstation listens and serves exactly one master
// session; the master connects. Both sides run the same agent objects as
// the simulation kernel on a dt grid derived from the wall clock scaled by
// `speed` (simulated seconds per wall second).

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "derauth/agents.hpp"

namespace derauth::live {

struct NetworkError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Address {
  std::string host{"127.0.0.1"};
  std::uint16_t port{link::kDefaultPort};
};

/// Accepts "host:port", ":port", "port" or "host".
Address parse_address(const std::string& text);

struct LiveOptions {
  double speed{1.0};
  double dt{0.1};
  double horizon{5000.0};
  agents::Timing timing;
  int connect_attempts{5};
  double connect_retry_wall_s{0.2};
  double accept_timeout_wall_s{30.0};
  std::optional<std::filesystem::path> store_dir;
};

struct LiveReport {
  std::vector<store::RoundRecord> rounds;
  std::vector<agents::OperationOutcome> operations;
  std::vector<agents::AppliedSetpoint> applied;
  std::vector<double> accepted_at;
  std::vector<agents::LogEvent> log;
  protocol::CellReplyTable table;
  std::optional<std::filesystem::path> store_file;
  bool interrupted{false};

  [[nodiscard]] bool all_operations_applied() const;
};

class Listener {
 public:
  explicit Listener(const Address& addr);
  ~Listener();
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  [[nodiscard]] std::uint16_t port() const noexcept { return port_; }

  /// Waits for one connection; the listening socket is closed afterwards so
  /// further connection attempts are refused.
  int accept_one(double timeout_wall_s);
  void close() noexcept;

 private:
  int fd_{-1};
  std::uint16_t port_{0};
};

LiveReport run_outstation(Listener& listener, const battery::PackConfig& pack,
                          const LiveOptions& options, std::uint64_t seed,
                          const agents::EventSink& sink = {},
                          const std::atomic<bool>* stop = nullptr);

LiveReport run_master(const Address& addr, const battery::PackConfig& pack,
                      const std::vector<agents::ScenarioEvent>& scenario, const LiveOptions& options,
                      std::uint64_t seed, const agents::EventSink& sink = {},
                      const std::atomic<bool>* stop = nullptr);

}  // namespace derauth::live
