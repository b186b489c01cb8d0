#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "derauth/link.hpp"
#include "derauth/store.hpp"

using namespace derauth;
using namespace derauth::store;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("derauth-store-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "-" +
            std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

std::string with_crc(const std::string& body) {
  const auto crc = link::crc16_dnp(
      std::span(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
  char buf[8];
  std::snprintf(buf, sizeof buf, "*%04x", crc);
  return body + buf;
}

// A session of `n` accepted rounds with one rejected attempt after the first.
struct Session {
  protocol::CellReplyTable enrollment;
  std::vector<RoundRecord> records;
};

Session make_session(int n) {
  Session s;
  std::vector<protocol::Quantized> init(6, protocol::Quantized{150, 160});
  s.enrollment = protocol::enrollment_init(7, init);
  auto table = s.enrollment;
  Rng rng(9);
  std::uint64_t seq = 0;
  for (int k = 0; k < n; ++k) {
    const auto c = protocol::build_challenge(rng, 6);
    const std::array<protocol::Quantized, 2> q{{{150, static_cast<std::uint8_t>(160 - k)}, {151, 161}}};
    const auto reply = protocol::build_reply(c, q, table);
    table = protocol::update_table(table, c, reply.pre_transform);
    s.records.push_back({++seq, 495.2 + 1500.0 * k, c.encode(), reply.wire,
                         protocol::Verdict::accepted, protocol::RejectReason::none,
                         table.round_counter(), table.digest()});
    if (k == 0) {
      s.records.push_back({++seq, 1995.2, 0x0003000000030000ULL, 0xDEADBEEF,
                           protocol::Verdict::rejected, protocol::RejectReason::auth_block_mismatch,
                           table.round_counter(), table.digest()});
    }
  }
  return s;
}

fs::path write_session(const fs::path& dir, const Session& s) {
  const auto path = SessionStore::session_path(dir, 0.2, 0xABCDEF);
  SessionStore store(path);
  store.write_enrollment(s.enrollment);
  for (const auto& r : s.records) store.append_round(r);
  return path;
}

}  // namespace

TEST_CASE("session file naming and record format") {
  CHECK(SessionStore::session_path("d", 0.2, 0xABCDEF).filename() ==
        "session-200-0000000000abcdef.drs");
  RoundRecord r{3, 495.2, 0x0003000000030000ULL, 0x99A399A6AA550000ULL, protocol::Verdict::accepted,
                protocol::RejectReason::none, 1, 0x0123456789ABCDEFULL};
  CHECK(format_round(r) ==
        "R|3|495.200|0003000000030000|99a399a6aa550000|accepted|none|1|0123456789abcdef");
  protocol::CellReplyTable t({0xAA, 0x05});
  CHECK(format_enrollment(t) == "E|2|aa05|0");
}

TEST_CASE("round-trip and replay verification") {
  TempDir dir;
  const auto s = make_session(4);
  const auto path = write_session(dir.path, s);
  const auto loaded = load_session(path);
  REQUIRE(loaded.enrollment);
  CHECK(*loaded.enrollment == s.enrollment);
  CHECK(loaded.rounds == s.records);
  CHECK_FALSE(loaded.dropped_truncated_tail);
  CHECK_FALSE(loaded.corrupt_line.has_value());
  const auto rep = verify_session(loaded);
  CHECK(rep.ok);
  CHECK(rep.message.empty());
}

TEST_CASE("every line carries a valid CRC") {
  TempDir dir;
  const auto path = write_session(dir.path, make_session(2));
  std::istringstream in(read(path));
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto star = line.rfind('*');
    REQUIRE(star != std::string::npos);
    CHECK(with_crc(line.substr(0, star)) == line);
    ++n;
  }
  CHECK(n == 4);
}

TEST_CASE("hand-edited reply is flagged at its round") {
  TempDir dir;
  const auto s = make_session(4);
  const auto path = write_session(dir.path, s);
  const auto text = read(path);
  const auto& target = s.records[2];  // seq 3, second accepted round
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(target.reply_wire));
  char edited_hex[17];
  std::snprintf(edited_hex, sizeof edited_hex, "%016llx",
                static_cast<unsigned long long>(target.reply_wire ^ 0x100));

  SUBCASE("edit without fixing the CRC") {
    auto edited = text;
    edited.replace(edited.find(hex), 16, edited_hex);
    write(path, edited);
    const auto loaded = load_session(path);
    CHECK(loaded.corrupt_line == std::optional<std::size_t>(4));
    CHECK(loaded.corrupt_seq == std::optional<std::uint64_t>(target.seq));
    const auto rep = verify_session(loaded);
    CHECK_FALSE(rep.ok);
    CHECK(rep.first_bad_seq == std::optional<std::uint64_t>(target.seq));
  }
  SUBCASE("edit with a recomputed CRC") {
    auto bad = target;
    bad.reply_wire ^= 0x100;
    std::istringstream in(text);
    std::string line, rebuilt;
    int idx = 0;
    while (std::getline(in, line)) {
      rebuilt += (++idx == 4 ? with_crc(format_round(bad)) : line) + "\n";
    }
    write(path, rebuilt);
    const auto loaded = load_session(path);
    CHECK_FALSE(loaded.corrupt_line.has_value());
    const auto rep = verify_session(loaded);
    CHECK_FALSE(rep.ok);
    CHECK(rep.first_bad_seq == std::optional<std::uint64_t>(target.seq));
    CHECK(rep.message.find("digest") != std::string::npos);
  }
}

TEST_CASE("truncated tail is dropped") {
  TempDir dir;
  const auto s = make_session(4);
  const auto path = write_session(dir.path, s);
  auto text = read(path);
  text.resize(text.size() - 10);  // crash mid-record
  write(path, text);
  const auto loaded = load_session(path);
  CHECK(loaded.dropped_truncated_tail);
  CHECK_FALSE(loaded.corrupt_line.has_value());
  CHECK(loaded.rounds.size() == s.records.size() - 1);
  CHECK(verify_session(loaded).ok);
}

TEST_CASE("empty and missing stores") {
  TempDir dir;
  const auto missing = load_session(dir.path / "nope.drs");
  CHECK_FALSE(missing.enrollment.has_value());
  CHECK(missing.rounds.empty());
  CHECK(verify_session(missing).ok);
  write(dir.path / "empty.drs", "");
  const auto empty = load_session(dir.path / "empty.drs");
  CHECK(empty.rounds.empty());
  CHECK(verify_session(empty).ok);
}

TEST_CASE("out-of-order sequence is rejected") {
  TempDir dir;
  auto s = make_session(2);
  std::swap(s.records[0].seq, s.records[1].seq);
  const auto path = write_session(dir.path, s);
  CHECK_FALSE(verify_session(load_session(path)).ok);
}
