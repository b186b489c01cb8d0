#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "derauth/protocol.hpp"

namespace derauth::store {

/// One authentication attempt as seen by the verifying agent.
struct RoundRecord {
  std::uint64_t seq{};  // attempt number, strictly increasing per session
  double timestamp{};
  std::uint64_t challenge{};
  std::uint64_t reply_wire{};
  protocol::Verdict verdict{protocol::Verdict::rejected};
  protocol::RejectReason reason{protocol::RejectReason::none};
  std::uint64_t round_counter{};  // table counter after the attempt
  std::uint64_t table_digest{};   // table digest after the attempt
  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

std::string format_enrollment(const protocol::CellReplyTable& table);
std::string format_round(const RoundRecord& r);

/// Append-only session file. Every line ends in `*XXXX`, the CRC-16/DNP of
/// everything before the asterisk; see docs/store.md.
class SessionStore {
 public:
  /// Opens (creating if needed) the file for appending.
  explicit SessionStore(std::filesystem::path file);

  /// session-<enroll time ms>-<seed hex>.drs inside `dir`.
  static std::filesystem::path session_path(const std::filesystem::path& dir,
                                            double enroll_time, std::uint64_t seed);

  void write_enrollment(const protocol::CellReplyTable& table);
  void append_round(const RoundRecord& record);
  void flush();

  [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

 private:
  void write_line(const std::string& body);

  std::filesystem::path path_;
  std::ofstream out_;
};

struct LoadedSession {
  std::optional<protocol::CellReplyTable> enrollment;
  std::vector<RoundRecord> rounds;
  bool dropped_truncated_tail{false};
  std::optional<std::size_t> corrupt_line;  // 1-based line with a bad CRC or syntax
  std::optional<std::uint64_t> corrupt_seq;  // attempt number, when still readable
  std::string corrupt_reason;
};

/// Reads a session file. A missing file is an empty session.
LoadedSession load_session(const std::filesystem::path& file);

struct VerifyReport {
  bool ok{true};
  std::optional<std::uint64_t> first_bad_seq;
  std::string message;
};

/// Replays update_table over the accepted records from the enrollment
/// table and checks every stored counter and digest.
VerifyReport verify_session(const LoadedSession& session);

}  // namespace derauth::store
