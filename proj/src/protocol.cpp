#include "derauth/protocol.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>

namespace derauth::protocol {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t key_word(TransformDescriptor t) noexcept {
  return 0x0001000100010001ULL * t.word;
}

std::uint64_t reverse_bits(std::uint64_t x) noexcept {
  std::uint64_t r = 0;
  for (int i = 0; i < 64; ++i) {
    r = (r << 1) | (x & 1u);
    x >>= 1;
  }
  return r;
}

std::uint64_t byteswap64(std::uint64_t x) noexcept {
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) {
    r = (r << 8) | (x & 0xFFu);
    x >>= 8;
  }
  return r;
}

unsigned rotation(TransformDescriptor t) noexcept { return (t.param() % 63u) + 1u; }

std::uint8_t quantize_unit(double unit) {
  const double clamped = std::clamp(unit, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(clamped * 255.0 + 0.5));
}

std::vector<std::size_t> mask_bits(std::uint64_t mask) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; mask != 0; ++k, mask >>= 1)
    if (mask & 1u) out.push_back(k);
  return out;
}

// k distinct indices in [0, n) via partial Fisher-Yates.
std::uint64_t sample_mask(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  std::uint64_t mask = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_below(rng, n - i));
    std::swap(ids[i], ids[j]);
    mask |= 1ULL << ids[i];
  }
  return mask;
}

}  // namespace

Quantized quantize_measurement(double voltage, double soc) {
  return {quantize_unit((voltage - 2.0) / 2.5), quantize_unit(soc / 100.0)};
}

double dequantize_voltage(std::uint8_t q) { return 2.0 + 2.5 * q / 255.0; }
double dequantize_soc(std::uint8_t q) { return 100.0 * q / 255.0; }

std::uint64_t transform(std::uint64_t x, TransformDescriptor t) noexcept {
  const std::uint64_t keyed = x ^ key_word(t);
  switch (t.mode()) {
    case 0: return keyed;
    case 1: return std::rotl(keyed, static_cast<int>(rotation(t)));
    case 2: return byteswap64(keyed);
    default: return reverse_bits(keyed);
  }
}

std::uint64_t inverse_transform(std::uint64_t y, TransformDescriptor t) noexcept {
  std::uint64_t keyed;
  switch (t.mode()) {
    case 0: keyed = y; break;
    case 1: keyed = std::rotr(y, static_cast<int>(rotation(t))); break;
    case 2: keyed = byteswap64(y); break;
    default: keyed = reverse_bits(y); break;
  }
  return keyed ^ key_word(t);
}

std::uint64_t Challenge::encode() const noexcept {
  return (static_cast<std::uint64_t>(poll_mask) << 48) |
         (static_cast<std::uint64_t>(auth_mask) << 16) | transform.word;
}

std::vector<std::size_t> Challenge::polled_cells() const { return mask_bits(poll_mask); }
std::vector<std::size_t> Challenge::auth_cells() const { return mask_bits(auth_mask); }

std::string_view to_string(Verdict v) noexcept {
  return v == Verdict::accepted ? "accepted" : "rejected";
}

std::string_view to_string(RejectReason r) noexcept {
  switch (r) {
    case RejectReason::none: return "none";
    case RejectReason::auth_block_mismatch: return "auth_block_mismatch";
    case RejectReason::measurement_out_of_tolerance: return "measurement_out_of_tolerance";
    case RejectReason::malformed_challenge: return "malformed_challenge";
    case RejectReason::decode_failure: return "decode_failure";
    case RejectReason::timeout: return "timeout";
  }
  return "unknown";
}

DecodedChallenge decode_challenge(std::uint64_t wire, std::size_t n_cells) {
  Challenge c;
  c.poll_mask = static_cast<std::uint16_t>(wire >> 48);
  c.auth_mask = static_cast<std::uint32_t>(wire >> 16);
  c.transform.word = static_cast<std::uint16_t>(wire);

  const auto in_range = [n_cells](std::uint64_t mask) {
    return n_cells >= 64 || (mask >> n_cells) == 0;
  };
  const int polled = std::popcount(c.poll_mask);
  const int authed = std::popcount(c.auth_mask);
  if (polled != kPolledCells || authed < 1 || authed > kMaxAuthCells || !in_range(c.poll_mask) ||
      !in_range(c.auth_mask)) {
    return {std::nullopt, RejectReason::malformed_challenge};
  }
  return {c, RejectReason::none};
}

Challenge build_challenge(Rng& rng, std::size_t n_cells) {
  if (n_cells < 2) throw ConfigError("challenge needs at least two cells");
  const std::size_t poll_span = std::min<std::size_t>(n_cells, 16);
  const std::size_t auth_span = std::min<std::size_t>(n_cells, 32);
  const auto max_auth = std::min<std::size_t>(auth_span, kMaxAuthCells);

  Challenge c;
  c.poll_mask = static_cast<std::uint16_t>(sample_mask(rng, poll_span, kPolledCells));
  const auto n_auth = 1 + static_cast<std::size_t>(uniform_below(rng, max_auth));
  c.auth_mask = static_cast<std::uint32_t>(sample_mask(rng, auth_span, n_auth));
  c.transform.word = static_cast<std::uint16_t>(uniform_below(rng, 1u << 16));
  return c;
}

std::uint64_t CellReplyTable::digest() const noexcept {
  std::uint64_t d = replies_.size();
  for (std::size_t i = 0; i < replies_.size(); ++i)
    d = mix64(d ^ ((static_cast<std::uint64_t>(i) << 8) | replies_[i]));
  return d;
}

CellReplyTable enrollment_init(std::uint64_t seed, std::span<const Quantized> initial) {
  std::vector<std::uint8_t> replies(initial.size());
  for (std::size_t i = 0; i < initial.size(); ++i) {
    const std::uint64_t in = seed ^ i ^ (static_cast<std::uint64_t>(initial[i].voltage) << 8) ^
                             initial[i].soc;
    replies[i] = static_cast<std::uint8_t>(mix64(in));
  }
  return CellReplyTable(std::move(replies));
}

std::uint32_t secret_block(const Challenge& c, const CellReplyTable& table) {
  std::uint32_t block = 0;
  int shift = 24;
  for (auto k : c.auth_cells()) {
    block |= static_cast<std::uint32_t>(table.reply(k)) << shift;
    shift -= 8;
  }
  return block;
}

std::uint32_t binding_tag(std::uint32_t measurement_block, std::uint32_t secret) noexcept {
  return static_cast<std::uint32_t>(
      mix64((static_cast<std::uint64_t>(measurement_block) << 32) | secret));
}

std::uint32_t measurement_block(std::span<const Quantized> polled) {
  std::uint32_t block = 0;
  int shift = 24;
  for (const auto& q : polled) {
    block |= static_cast<std::uint32_t>(q.voltage) << shift;
    block |= static_cast<std::uint32_t>(q.soc) << (shift - 8);
    shift -= 16;
  }
  return block;
}

Reply build_reply(const Challenge& c, std::span<const Quantized> polled,
                  const CellReplyTable& table) {
  if (polled.size() != c.polled_cells().size())
    throw std::logic_error("build_reply: measurements must match the polled cells");
  const std::uint32_t meas = measurement_block(polled);
  const std::uint32_t secret = secret_block(c, table);
  Reply r;
  r.pre_transform = (static_cast<std::uint64_t>(meas) << 32) | (secret ^ binding_tag(meas, secret));
  r.wire = transform(r.pre_transform, c.transform);
  return r;
}

AuthOutcome verify_reply(const Challenge& c, std::uint64_t wire, const CellReplyTable& table,
                         std::span<const Quantized> expected, int tolerance) {
  AuthOutcome out;
  out.pre_transform = inverse_transform(wire, c.transform);
  const auto meas = static_cast<std::uint32_t>(out.pre_transform >> 32);
  const auto auth = static_cast<std::uint32_t>(out.pre_transform);

  out.received.push_back({static_cast<std::uint8_t>(meas >> 24), static_cast<std::uint8_t>(meas >> 16)});
  out.received.push_back({static_cast<std::uint8_t>(meas >> 8), static_cast<std::uint8_t>(meas)});

  if (expected.size() != out.received.size()) {
    out.reason = RejectReason::decode_failure;
    return out;
  }

  const std::uint32_t secret = secret_block(c, table);
  if (auth != (secret ^ binding_tag(meas, secret))) {
    out.reason = RejectReason::auth_block_mismatch;
    return out;
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (std::abs(int{out.received[i].voltage} - int{expected[i].voltage}) > tolerance ||
        std::abs(int{out.received[i].soc} - int{expected[i].soc}) > tolerance) {
      out.reason = RejectReason::measurement_out_of_tolerance;
      return out;
    }
  }
  out.verdict = Verdict::accepted;
  out.reason = RejectReason::none;
  return out;
}

CellReplyTable update_table(const CellReplyTable& table, const Challenge& c,
                            std::uint64_t pre_transform) {
  CellReplyTable next = table;
  next.round_counter_ += 1;
  const std::uint64_t touched = static_cast<std::uint64_t>(c.poll_mask) | c.auth_mask;
  for (auto k : mask_bits(touched)) {
    if (k >= next.replies_.size()) continue;
    const std::uint64_t old = table.replies_[k];
    next.replies_[k] =
        static_cast<std::uint8_t>(mix64(pre_transform ^ (old * kGolden) ^ k ^ next.round_counter_));
  }
  return next;
}

}  // namespace derauth::protocol
