#include "derauth/link.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>

namespace derauth::link {

namespace {

constexpr std::array<std::uint16_t, 256> make_crc_table() {
  std::array<std::uint16_t, 256> table{};
  for (unsigned i = 0; i < 256; ++i) {
    std::uint16_t crc = static_cast<std::uint16_t>(i);
    for (int b = 0; b < 8; ++b) crc = (crc & 1u) ? (crc >> 1) ^ 0xA6BCu : crc >> 1;
    table[i] = crc;
  }
  return table;
}

constexpr auto kCrcTable = make_crc_table();

void put_u64(Bytes& out, std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::uint64_t get_u64(std::span<const std::uint8_t> in) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v = (v << 8) | in[i];
  return v;
}

bool valid_type(std::uint8_t t) { return t >= 1 && t <= 7; }

}  // namespace

std::string_view to_string(MsgType t) noexcept {
  switch (t) {
    case MsgType::enroll: return "ENROLL";
    case MsgType::challenge: return "CHALLENGE";
    case MsgType::reply: return "REPLY";
    case MsgType::auth_result: return "AUTH_RESULT";
    case MsgType::setpoint: return "SETPOINT";
    case MsgType::ack: return "ACK";
    case MsgType::error: return "ERROR";
  }
  return "UNKNOWN";
}

std::optional<MsgType> parse_msg_type(std::string_view name) noexcept {
  for (std::uint8_t t = 1; t <= 7; ++t) {
    const auto type = static_cast<MsgType>(t);
    if (to_string(type) == name) return type;
  }
  return std::nullopt;
}

std::string_view to_string(ErrorCode e) noexcept {
  switch (e) {
    case ErrorCode::bad_crc: return "bad_crc";
    case ErrorCode::bad_seq: return "bad_seq";
    case ErrorCode::malformed: return "malformed";
    case ErrorCode::unauthenticated: return "unauthenticated";
  }
  return "unknown";
}

std::string_view to_string(DecodeError e) noexcept {
  switch (e) {
    case DecodeError::none: return "none";
    case DecodeError::bad_start: return "bad_start";
    case DecodeError::truncated: return "truncated";
    case DecodeError::bad_crc: return "bad_crc";
    case DecodeError::bad_type: return "bad_type";
  }
  return "unknown";
}

std::uint16_t crc16_dnp(std::span<const std::uint8_t> data) noexcept {
  std::uint16_t crc = 0;
  for (auto byte : data) crc = (crc >> 8) ^ kCrcTable[(crc ^ byte) & 0xFFu];
  return static_cast<std::uint16_t>(~crc);
}

Bytes encode_frame(const Frame& frame) {
  if (frame.payload.size() > kMaxPayload)
    throw FrameError("payload of " + std::to_string(frame.payload.size()) +
                     " bytes exceeds the 255-byte frame limit");
  Bytes out;
  out.reserve(kOverhead + frame.payload.size());
  out.push_back(kStart0);
  out.push_back(kStart1);
  out.push_back(static_cast<std::uint8_t>(frame.payload.size()));
  out.push_back(static_cast<std::uint8_t>(frame.type));
  out.push_back(frame.seq);
  out.insert(out.end(), frame.payload.begin(), frame.payload.end());
  const auto crc = crc16_dnp(std::span(out).subspan(2));
  out.push_back(static_cast<std::uint8_t>(crc >> 8));
  out.push_back(static_cast<std::uint8_t>(crc));
  return out;
}

DecodeResult decode_frame(std::span<const std::uint8_t> data) {
  if (data.size() >= 2 && (data[0] != kStart0 || data[1] != kStart1))
    return {std::nullopt, DecodeError::bad_start, 1};
  if (data.size() < kHeaderSize) return {std::nullopt, DecodeError::truncated, 0};
  const std::size_t total = kOverhead + data[2];
  if (data.size() < total) return {std::nullopt, DecodeError::truncated, 0};

  const auto body = data.subspan(2, total - 4);
  const std::uint16_t crc = static_cast<std::uint16_t>((data[total - 2] << 8) | data[total - 1]);
  if (crc16_dnp(body) != crc) return {std::nullopt, DecodeError::bad_crc, total};
  if (!valid_type(data[3])) return {std::nullopt, DecodeError::bad_type, total};

  Frame f;
  f.type = static_cast<MsgType>(data[3]);
  f.seq = data[4];
  f.payload.assign(data.begin() + kHeaderSize, data.begin() + static_cast<std::ptrdiff_t>(total) - 2);
  return {std::move(f), DecodeError::none, total};
}

void StreamDecoder::feed(std::span<const std::uint8_t> bytes) {
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<DecodeResult> StreamDecoder::next(bool end_of_stream) {
  for (;;) {
    // Skip to the next start marker.
    while (!buffer_.empty() && buffer_.front() != kStart0) buffer_.pop_front();
    if (buffer_.size() < 2) {
      if (end_of_stream) buffer_.clear();
      return std::nullopt;
    }
    if (buffer_[1] != kStart1) {
      buffer_.pop_front();
      continue;
    }
    if (buffer_.size() < kHeaderSize) {
      if (end_of_stream) {
        buffer_.pop_front();
        continue;
      }
      return std::nullopt;
    }
    const std::size_t total = kOverhead + buffer_[2];
    if (buffer_.size() < total) {
      if (end_of_stream) {
        buffer_.pop_front();
        continue;
      }
      return std::nullopt;
    }
    Bytes candidate(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(total));
    auto result = decode_frame(candidate);
    if (result.frame) {
      buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(total));
      return result;
    }
    // Corrupted candidate: resume just past its start byte so that a real
    // frame hidden inside a false header is still found.
    buffer_.pop_front();
    result.consumed = 1;
    return result;
  }
}

Bytes pack_analog(std::uint16_t point_index, std::uint64_t bits) {
  Bytes out;
  out.reserve(10);
  out.push_back(static_cast<std::uint8_t>(point_index >> 8));
  out.push_back(static_cast<std::uint8_t>(point_index));
  put_u64(out, bits);
  return out;
}

std::optional<AnalogPayload> unpack_analog(std::span<const std::uint8_t> payload) {
  if (payload.size() != 10) return std::nullopt;
  AnalogPayload a;
  a.point_index = static_cast<std::uint16_t>((payload[0] << 8) | payload[1]);
  a.value_bits = get_u64(payload.subspan(2));
  return a;
}

Bytes pack_setpoint(double watts) {
  return pack_analog(kSetpointPoint, std::bit_cast<std::uint64_t>(watts));
}

std::optional<double> unpack_setpoint(std::span<const std::uint8_t> payload) {
  auto a = unpack_analog(payload);
  if (!a || a->point_index != kSetpointPoint) return std::nullopt;
  return std::bit_cast<double>(a->value_bits);
}

bool SeqTracker::accept_rx(std::uint8_t seq) noexcept {
  if (last_rx_) {
    const auto distance = static_cast<std::uint8_t>(seq - *last_rx_);
    if (distance == 0 || distance >= 128) return false;
  }
  last_rx_ = seq;
  return true;
}

Bytes Endpoint::send(const Message& m) {
  return encode_frame(Frame{m.type, seq_.next_tx(), m.payload});
}

Delivery Endpoint::receive(std::span<const std::uint8_t> bytes, bool end_of_stream) {
  Delivery d;
  decoder_.feed(bytes);
  while (auto r = decoder_.next(end_of_stream)) {
    if (!r->frame) {
      const auto code = r->error == DecodeError::bad_type ? ErrorCode::malformed : ErrorCode::bad_crc;
      d.replies.push_back(send({MsgType::error, {static_cast<std::uint8_t>(code)}}));
      continue;
    }
    if (!seq_.accept_rx(r->frame->seq)) {
      // Never answer an ERROR with an ERROR.
      if (r->frame->type != MsgType::error)
        d.replies.push_back(
            send({MsgType::error, {static_cast<std::uint8_t>(ErrorCode::bad_seq)}}));
      continue;
    }
    d.frames.push_back(std::move(*r->frame));
  }
  return d;
}

}  // namespace derauth::link
