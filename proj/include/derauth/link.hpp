#pragma once

// Framed transport with DNP3 link-layer flavor:
//
//   0x05 0x64 | len | type | seq | payload[len] | crc_hi crc_lo
//
// The CRC (CRC-16/DNP) covers len, type, seq and payload. All multi-byte
// fields are big-endian.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace derauth::link {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint8_t kStart0 = 0x05;
inline constexpr std::uint8_t kStart1 = 0x64;
inline constexpr std::size_t kHeaderSize = 5;
inline constexpr std::size_t kOverhead = kHeaderSize + 2;
inline constexpr std::size_t kMaxPayload = 255;
inline constexpr std::uint16_t kDefaultPort = 20000;

enum class MsgType : std::uint8_t {
  enroll = 1,
  challenge = 2,
  reply = 3,
  auth_result = 4,
  setpoint = 5,
  ack = 6,
  error = 7,
};

enum class ErrorCode : std::uint8_t {
  bad_crc = 1,
  bad_seq = 2,
  malformed = 3,
  unauthenticated = 4,
};

std::string_view to_string(MsgType t) noexcept;
std::optional<MsgType> parse_msg_type(std::string_view name) noexcept;
std::string_view to_string(ErrorCode e) noexcept;

struct FrameError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Frame {
  MsgType type{MsgType::ack};
  std::uint8_t seq{};
  Bytes payload;
  friend bool operator==(const Frame&, const Frame&) = default;
};

/// CRC-16/DNP: poly 0x3D65 reflected, init 0, final complement.
std::uint16_t crc16_dnp(std::span<const std::uint8_t> data) noexcept;

Bytes encode_frame(const Frame& frame);

enum class DecodeError : std::uint8_t { none, bad_start, truncated, bad_crc, bad_type };

std::string_view to_string(DecodeError e) noexcept;

struct DecodeResult {
  std::optional<Frame> frame;
  DecodeError error{DecodeError::none};
  std::size_t consumed{};
};

/// Decodes exactly one frame starting at data[0].
DecodeResult decode_frame(std::span<const std::uint8_t> data);

/// Incremental decoder over a byte stream. Garbage between frames is
/// skipped; a corrupted frame is reported once and scanning resumes one
/// byte past its start marker.
class StreamDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes);

  /// Next decoded frame or error. `end_of_stream` drops incomplete
  /// candidates instead of waiting for more bytes.
  std::optional<DecodeResult> next(bool end_of_stream = false);

  [[nodiscard]] std::size_t buffered() const noexcept { return buffer_.size(); }

 private:
  std::deque<std::uint8_t> buffer_;
};

// 64-bit analog point: 2-byte index followed by 8 value bytes. The value
// bits travel opaque, including patterns that alias float NaNs.
struct AnalogPayload {
  std::uint16_t point_index{};
  std::uint64_t value_bits{};
  friend bool operator==(const AnalogPayload&, const AnalogPayload&) = default;
};

inline constexpr std::uint16_t kChallengePoint = 0;
inline constexpr std::uint16_t kReplyPoint = 1;
inline constexpr std::uint16_t kSetpointPoint = 2;

Bytes pack_analog(std::uint16_t point_index, std::uint64_t bits);
std::optional<AnalogPayload> unpack_analog(std::span<const std::uint8_t> payload);

/// SETPOINT carries a numeric float64; positive = charge, negative = discharge.
Bytes pack_setpoint(double watts);
std::optional<double> unpack_setpoint(std::span<const std::uint8_t> payload);

/// Per-direction sequence numbers. Forward distance 1..127 from the last
/// accepted value is fresh; anything else is a duplicate or stale.
class SeqTracker {
 public:
  std::uint8_t next_tx() noexcept { return tx_++; }
  bool accept_rx(std::uint8_t seq) noexcept;

 private:
  std::uint8_t tx_{0};
  std::optional<std::uint8_t> last_rx_;
};

struct Message {
  MsgType type;
  Bytes payload;
};

struct Delivery {
  std::vector<Frame> frames;  // frames that passed CRC and sequence checks
  std::vector<Bytes> replies;  // link-level ERROR frames to send back
};

/// One end of a connection: framing, sequence numbering, and the NAKs the
/// link layer emits on its own.
class Endpoint {
 public:
  Bytes send(const Message& m);
  Delivery receive(std::span<const std::uint8_t> bytes, bool end_of_stream = false);

 private:
  StreamDecoder decoder_;
  SeqTracker seq_;
};

}  // namespace derauth::link
