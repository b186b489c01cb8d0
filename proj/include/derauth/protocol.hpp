#pragma once

// 64-bit challenge-reply scheme driven by battery cell measurements.
//
// Challenge word: bits 63..48 poll mask, 47..16 auth mask, 15..0 transform.
// Reply word before transformation: bits 63..32 carry (q_v, q_soc) byte
// pairs of the polled cells in ascending id order; bits 31..0 carry the
// auth block (secret block of selected r_i bound to the measurement block).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "derauth/mix.hpp"

namespace derauth::protocol {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kPolledCells = 2;
inline constexpr int kMaxAuthCells = 4;
inline constexpr int kDefaultTolerance = 2;

struct Quantized {
  std::uint8_t voltage{};
  std::uint8_t soc{};
  friend bool operator==(const Quantized&, const Quantized&) = default;
};

/// Maps [2.0, 4.5] V and [0, 100] % onto 0..255, clamped, round-half-up.
Quantized quantize_measurement(double voltage, double soc);
double dequantize_voltage(std::uint8_t q);
double dequantize_soc(std::uint8_t q);

struct TransformDescriptor {
  std::uint16_t word{};

  [[nodiscard]] constexpr unsigned mode() const noexcept { return word >> 14; }
  [[nodiscard]] constexpr unsigned param() const noexcept { return word & 0x3FFFu; }
  static constexpr TransformDescriptor make(unsigned mode, unsigned param) noexcept {
    return {static_cast<std::uint16_t>(((mode & 0x3u) << 14) | (param & 0x3FFFu))};
  }
  friend bool operator==(const TransformDescriptor&, const TransformDescriptor&) = default;
};

std::uint64_t transform(std::uint64_t x, TransformDescriptor t) noexcept;
std::uint64_t inverse_transform(std::uint64_t y, TransformDescriptor t) noexcept;

struct Challenge {
  std::uint16_t poll_mask{};
  std::uint32_t auth_mask{};
  TransformDescriptor transform{};

  [[nodiscard]] std::uint64_t encode() const noexcept;
  [[nodiscard]] std::vector<std::size_t> polled_cells() const;
  [[nodiscard]] std::vector<std::size_t> auth_cells() const;
  friend bool operator==(const Challenge&, const Challenge&) = default;
};

enum class Verdict : std::uint8_t { accepted = 1, rejected = 2 };

enum class RejectReason : std::uint8_t {
  none = 0,
  auth_block_mismatch = 1,
  measurement_out_of_tolerance = 2,
  malformed_challenge = 3,
  decode_failure = 4,
  timeout = 5,
};

std::string_view to_string(Verdict v) noexcept;
std::string_view to_string(RejectReason r) noexcept;

struct DecodedChallenge {
  std::optional<Challenge> challenge;
  RejectReason reason{RejectReason::none};
  [[nodiscard]] bool ok() const noexcept { return challenge.has_value(); }
};

/// Splits a wire word 16/32/16 and checks popcounts and cell bounds against
/// the local cell count.
DecodedChallenge decode_challenge(std::uint64_t wire, std::size_t n_cells);

/// Samples a valid challenge: two distinct polled cells, one to four
/// distinct authenticated cells, and a uniform 16-bit transform word.
Challenge build_challenge(Rng& rng, std::size_t n_cells);

class CellReplyTable {
 public:
  CellReplyTable() = default;
  explicit CellReplyTable(std::vector<std::uint8_t> replies, std::uint64_t round_counter = 0)
      : replies_(std::move(replies)), round_counter_(round_counter) {}

  [[nodiscard]] std::size_t size() const noexcept { return replies_.size(); }
  [[nodiscard]] std::uint8_t reply(std::size_t cell) const { return replies_.at(cell); }
  [[nodiscard]] std::uint64_t round_counter() const noexcept { return round_counter_; }
  [[nodiscard]] std::span<const std::uint8_t> replies() const noexcept { return replies_; }

  /// mix64 fold over (i << 8 | r_i), seeded with the cell count.
  [[nodiscard]] std::uint64_t digest() const noexcept;

  friend bool operator==(const CellReplyTable&, const CellReplyTable&) = default;

 private:
  friend CellReplyTable update_table(const CellReplyTable&, const Challenge&, std::uint64_t);
  std::vector<std::uint8_t> replies_;
  std::uint64_t round_counter_{0};
};

CellReplyTable enrollment_init(std::uint64_t seed, std::span<const Quantized> initial);

/// Selected r_i left-aligned in ascending cell order, zero padded.
std::uint32_t secret_block(const Challenge& c, const CellReplyTable& table);

/// Keyed tag that ties the measurement block to the secret block.
std::uint32_t binding_tag(std::uint32_t measurement_block, std::uint32_t secret) noexcept;

std::uint32_t measurement_block(std::span<const Quantized> polled);

struct Reply {
  std::uint64_t pre_transform{};
  std::uint64_t wire{};
};

/// `polled` holds quantized readings for exactly the polled cells, ascending.
Reply build_reply(const Challenge& c, std::span<const Quantized> polled, const CellReplyTable& table);

struct AuthOutcome {
  Verdict verdict{Verdict::rejected};
  RejectReason reason{RejectReason::decode_failure};
  std::uint64_t pre_transform{};
  std::vector<Quantized> received;  // polled readings carried by the reply

  [[nodiscard]] bool accepted() const noexcept { return verdict == Verdict::accepted; }
};

AuthOutcome verify_reply(const Challenge& c, std::uint64_t wire, const CellReplyTable& table,
                         std::span<const Quantized> expected, int tolerance = kDefaultTolerance);

/// Pure table update applied by both ends after an accepted round.
CellReplyTable update_table(const CellReplyTable& table, const Challenge& c,
                            std::uint64_t pre_transform);

}  // namespace derauth::protocol
