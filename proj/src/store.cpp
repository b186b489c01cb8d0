#include "derauth/store.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "derauth/link.hpp"

namespace derauth::store {

namespace {

std::uint16_t line_crc(const std::string& body) {
  return link::crc16_dnp(
      std::span(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(s);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::optional<std::uint64_t> parse_hex(const std::string& s, std::size_t digits) {
  if (s.size() != digits) return std::nullopt;
  std::uint64_t v = 0;
  for (char ch : s) {
    int d;
    if (ch >= '0' && ch <= '9') d = ch - '0';
    else if (ch >= 'a' && ch <= 'f') d = ch - 'a' + 10;
    else return std::nullopt;
    v = (v << 4) | static_cast<std::uint64_t>(d);
  }
  return v;
}

std::optional<std::uint64_t> parse_dec(const std::string& s) {
  if (s.empty() || s.size() > 20) return std::nullopt;
  std::uint64_t v = 0;
  for (char ch : s) {
    if (ch < '0' || ch > '9') return std::nullopt;
    v = v * 10 + static_cast<std::uint64_t>(ch - '0');
  }
  return v;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::optional<protocol::RejectReason> parse_reason(const std::string& s) {
  for (std::uint8_t r = 0; r <= 5; ++r) {
    const auto reason = static_cast<protocol::RejectReason>(r);
    if (protocol::to_string(reason) == s) return reason;
  }
  return std::nullopt;
}

std::optional<protocol::CellReplyTable> parse_enrollment(const std::vector<std::string>& f) {
  if (f.size() != 4) return std::nullopt;
  auto n = parse_dec(f[1]);
  auto counter = parse_dec(f[3]);
  if (!n || !counter || f[2].size() != 2 * *n) return std::nullopt;
  std::vector<std::uint8_t> replies;
  for (std::size_t i = 0; i < *n; ++i) {
    auto byte = parse_hex(f[2].substr(2 * i, 2), 2);
    if (!byte) return std::nullopt;
    replies.push_back(static_cast<std::uint8_t>(*byte));
  }
  return protocol::CellReplyTable(std::move(replies), *counter);
}

std::optional<RoundRecord> parse_round(const std::vector<std::string>& f) {
  if (f.size() != 9) return std::nullopt;
  RoundRecord r;
  auto seq = parse_dec(f[1]);
  auto ch = parse_hex(f[3], 16);
  auto reply = parse_hex(f[4], 16);
  auto reason = parse_reason(f[6]);
  auto counter = parse_dec(f[7]);
  auto digest = parse_hex(f[8], 16);
  if (!seq || !ch || !reply || !reason || !counter || !digest) return std::nullopt;
  if (f[5] != "accepted" && f[5] != "rejected") return std::nullopt;
  char* end = nullptr;
  r.timestamp = std::strtod(f[2].c_str(), &end);
  if (end == f[2].c_str() || *end != '\0') return std::nullopt;
  r.seq = *seq;
  r.challenge = *ch;
  r.reply_wire = *reply;
  r.verdict = f[5] == "accepted" ? protocol::Verdict::accepted : protocol::Verdict::rejected;
  r.reason = *reason;
  r.round_counter = *counter;
  r.table_digest = *digest;
  return r;
}

}  // namespace

std::string format_enrollment(const protocol::CellReplyTable& table) {
  std::string hex;
  char buf[3];
  for (auto r : table.replies()) {
    std::snprintf(buf, sizeof buf, "%02x", r);
    hex += buf;
  }
  return "E|" + std::to_string(table.size()) + "|" + hex + "|" +
         std::to_string(table.round_counter());
}

std::string format_round(const RoundRecord& r) {
  char ts[32];
  std::snprintf(ts, sizeof ts, "%.3f", r.timestamp);
  std::string out = "R|" + std::to_string(r.seq) + "|" + ts + "|" + hex16(r.challenge) + "|" +
                    hex16(r.reply_wire) + "|" + std::string(protocol::to_string(r.verdict)) + "|" +
                    std::string(protocol::to_string(r.reason)) + "|" +
                    std::to_string(r.round_counter) + "|" + hex16(r.table_digest);
  return out;
}

SessionStore::SessionStore(std::filesystem::path file)
    : path_(std::move(file)), out_(path_, std::ios::app | std::ios::binary) {
  if (!out_) throw std::runtime_error("cannot open session store " + path_.string());
}

std::filesystem::path SessionStore::session_path(const std::filesystem::path& dir,
                                                 double enroll_time, std::uint64_t seed) {
  const auto ms = static_cast<long long>(std::llround(enroll_time * 1000.0));
  return dir / ("session-" + std::to_string(ms) + "-" + hex16(seed) + ".drs");
}

void SessionStore::write_line(const std::string& body) {
  char crc[8];
  std::snprintf(crc, sizeof crc, "*%04x", line_crc(body));
  out_ << body << crc << '\n';
  out_.flush();
}

void SessionStore::write_enrollment(const protocol::CellReplyTable& table) {
  write_line(format_enrollment(table));
}

void SessionStore::append_round(const RoundRecord& record) { write_line(format_round(record)); }

void SessionStore::flush() { out_.flush(); }

LoadedSession load_session(const std::filesystem::path& file) {
  LoadedSession s;
  std::ifstream in(file, std::ios::binary);
  if (!in) return s;
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  std::vector<std::string> lines;
  std::size_t start = 0;
  bool last_terminated = true;
  while (start < text.size()) {
    const auto nl = text.find('\n', start);
    if (nl == std::string::npos) {
      lines.push_back(text.substr(start));
      last_terminated = false;
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }

  for (std::size_t i = 0; i < lines.size(); ++i) {
    const bool is_last = i + 1 == lines.size();
    const auto& line = lines[i];
    const auto star = line.rfind('*');
    bool valid = star != std::string::npos && line.size() == star + 5;
    if (valid) {
      auto crc = parse_hex(line.substr(star + 1), 4);
      valid = crc && *crc == line_crc(line.substr(0, star));
    }
    std::vector<std::string> fields;
    if (valid) fields = split(line.substr(0, star), '|');
    if (valid && !fields.empty() && fields[0] == "E" && !s.enrollment && s.rounds.empty()) {
      s.enrollment = parse_enrollment(fields);
      valid = s.enrollment.has_value();
    } else if (valid && !fields.empty() && fields[0] == "R") {
      auto r = parse_round(fields);
      valid = r.has_value();
      if (r) s.rounds.push_back(*r);
    } else {
      valid = false;
    }

    if (!valid) {
      if (is_last && !last_terminated) {
        s.dropped_truncated_tail = true;
      } else {
        s.corrupt_line = i + 1;
        s.corrupt_reason = "bad record at line " + std::to_string(i + 1);
        const auto raw = split(line.substr(0, star), '|');
        if (raw.size() > 1 && raw[0] == "R") s.corrupt_seq = parse_dec(raw[1]);
      }
      break;
    }
  }
  return s;
}

VerifyReport verify_session(const LoadedSession& session) {
  VerifyReport rep;
  if (session.corrupt_line) {
    rep.ok = false;
    rep.message = session.corrupt_reason;
    rep.first_bad_seq = session.corrupt_seq;
    return rep;
  }
  if (session.rounds.empty()) return rep;
  if (!session.enrollment) {
    rep.ok = false;
    rep.message = "round records without an enrollment record";
    rep.first_bad_seq = session.rounds.front().seq;
    return rep;
  }

  auto table = *session.enrollment;
  std::optional<std::uint64_t> last_seq;
  for (const auto& r : session.rounds) {
    const auto fail = [&](std::string why) {
      rep.ok = false;
      rep.first_bad_seq = r.seq;
      rep.message = "round " + std::to_string(r.seq) + ": " + std::move(why);
      return rep;
    };
    if (last_seq && r.seq <= *last_seq) return fail("sequence not strictly increasing");
    last_seq = r.seq;
    if (r.verdict == protocol::Verdict::accepted) {
      auto decoded = protocol::decode_challenge(r.challenge, table.size());
      if (!decoded.ok()) return fail("accepted round carries a malformed challenge");
      const auto pre = protocol::inverse_transform(r.reply_wire, decoded.challenge->transform);
      table = protocol::update_table(table, *decoded.challenge, pre);
    }
    if (r.round_counter != table.round_counter()) return fail("round counter mismatch");
    if (r.table_digest != table.digest()) return fail("table digest mismatch");
  }
  return rep;
}

}  // namespace derauth::store
