#include <doctest.h>

#include <bit>
#include <cmath>
#include <random>
#include <string_view>

#include "derauth/link.hpp"
#include "golden.hpp"

using namespace derauth::link;

namespace {

// Bitwise CRC-16/DNP with the non-reflected polynomial and explicit
// reflection of input bytes and the final register.
std::uint16_t oracle_crc(std::span<const std::uint8_t> data) {
  auto reflect = [](std::uint32_t v, int width) {
    std::uint32_t r = 0;
    for (int i = 0; i < width; ++i) r |= ((v >> i) & 1u) << (width - 1 - i);
    return r;
  };
  std::uint32_t crc = 0;
  for (auto b : data) {
    crc ^= reflect(b, 8) << 8;
    for (int i = 0; i < 8; ++i) crc = (crc & 0x8000u) ? ((crc << 1) ^ 0x3D65u) & 0xFFFFu : (crc << 1) & 0xFFFFu;
  }
  return static_cast<std::uint16_t>(reflect(crc, 16) ^ 0xFFFFu);
}

Bytes ascii(std::string_view s) { return Bytes(s.begin(), s.end()); }

Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes b(n);
  for (auto& v : b) v = static_cast<std::uint8_t>(rng());
  return b;
}

}  // namespace

TEST_CASE("CRC check value and oracle agreement") {
  const auto check = ascii("123456789");
  CHECK(crc16_dnp(check) == golden::kCrcCheck);
  CHECK(oracle_crc(check) == golden::kCrcCheck);
  CHECK(crc16_dnp(Bytes{}) == golden::kCrcEmpty);
  CHECK(oracle_crc(Bytes{}) == golden::kCrcEmpty);
  std::mt19937_64 rng(1);
  for (int n = 0; n < 2000; ++n) {
    const auto data = random_bytes(rng, rng() % 300);
    CHECK(crc16_dnp(data) == oracle_crc(data));
  }
}

TEST_CASE("single bit flips change the CRC") {
  std::mt19937_64 rng(2);
  for (int n = 0; n < 10000; ++n) {
    auto data = random_bytes(rng, 1 + rng() % 64);
    const auto before = crc16_dnp(data);
    const auto bit = rng() % (data.size() * 8);
    data[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    CHECK(crc16_dnp(data) != before);
  }
}

TEST_CASE("frame round-trip for every message type") {
  std::mt19937_64 rng(3);
  for (std::uint8_t t = 1; t <= 7; ++t) {
    for (int n = 0; n < 200; ++n) {
      Frame f{static_cast<MsgType>(t), static_cast<std::uint8_t>(rng()), random_bytes(rng, rng() % 256)};
      const auto wire = encode_frame(f);
      CHECK(wire.size() == f.payload.size() + kOverhead);
      CHECK(wire[0] == 0x05);
      CHECK(wire[1] == 0x64);
      const auto d = decode_frame(wire);
      REQUIRE(d.frame);
      CHECK(*d.frame == f);
      CHECK(d.consumed == wire.size());
    }
  }
}

TEST_CASE("decode errors are distinct") {
  const auto wire = encode_frame({MsgType::challenge, 9, pack_analog(0, 0x0003000000030000ULL)});
  auto bad_crc = wire;
  bad_crc.back() ^= 1;
  CHECK(decode_frame(bad_crc).error == DecodeError::bad_crc);
  auto bad_start = wire;
  bad_start[0] = 0x06;
  CHECK(decode_frame(bad_start).error == DecodeError::bad_start);
  CHECK(decode_frame(std::span(wire).first(wire.size() - 1)).error == DecodeError::truncated);
  CHECK(decode_frame(std::span(wire).first(3)).error == DecodeError::truncated);
  Frame odd{MsgType::ack, 0, {}};
  auto bad_type = encode_frame(odd);
  bad_type[3] = 9;
  const auto crc = crc16_dnp(std::span(bad_type).subspan(2, 3));
  bad_type[5] = static_cast<std::uint8_t>(crc >> 8);
  bad_type[6] = static_cast<std::uint8_t>(crc);
  CHECK(decode_frame(bad_type).error == DecodeError::bad_type);
  CHECK_THROWS_AS(encode_frame({MsgType::reply, 0, Bytes(256)}), FrameError);
  CHECK_NOTHROW(encode_frame({MsgType::reply, 0, Bytes(255)}));
}

TEST_CASE("analog payload layout") {
  const auto p = pack_analog(0, 0x0003000000030000ULL);
  CHECK(p == Bytes{0x00, 0x00, 0x00, 0x03, 0x00, 0x00, 0x00, 0x03, 0x00, 0x00});
  const auto q = pack_analog(0xFFFF, 1);
  CHECK(unpack_analog(q)->point_index == 0xFFFF);
  CHECK_FALSE(unpack_analog(std::span(p).first(9)).has_value());
  // Signalling and quiet NaN patterns travel unchanged.
  for (std::uint64_t bits : {0x7FF0000000000001ULL, 0xFFF8DEADBEEF0001ULL, 0x7FF4000000000000ULL}) {
    CHECK(std::isnan(std::bit_cast<double>(bits)));
    CHECK(unpack_analog(pack_analog(kReplyPoint, bits))->value_bits == bits);
  }
  CHECK(*unpack_setpoint(pack_setpoint(-10.0)) == -10.0);
  CHECK_FALSE(unpack_setpoint(pack_analog(kReplyPoint, 0)).has_value());
}

TEST_CASE("stream resynchronizes across garbage") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    Bytes stream;
    std::vector<Frame> sent;
    for (int k = 0; k < 10; ++k) {
      auto junk = random_bytes(rng, rng() % 20);
      stream.insert(stream.end(), junk.begin(), junk.end());
      Frame f{MsgType::reply, static_cast<std::uint8_t>(k), pack_analog(kReplyPoint, rng())};
      const auto w = encode_frame(f);
      stream.insert(stream.end(), w.begin(), w.end());
      sent.push_back(f);
    }
    StreamDecoder dec;
    std::vector<Frame> got;
    // Feed in irregular chunks.
    std::size_t pos = 0;
    while (pos < stream.size()) {
      const auto n = std::min<std::size_t>(1 + rng() % 7, stream.size() - pos);
      dec.feed(std::span(stream).subspan(pos, n));
      pos += n;
      while (auto r = dec.next())
        if (r->frame) got.push_back(*r->frame);
    }
    while (auto r = dec.next(true))
      if (r->frame) got.push_back(*r->frame);
    CHECK(got == sent);
  }
}

TEST_CASE("corrupted frame is lost alone") {
  Bytes stream;
  std::vector<Bytes> frames;
  for (std::uint8_t k = 0; k < 3; ++k) frames.push_back(encode_frame({MsgType::reply, k, pack_analog(1, k)}));
  frames[1][8] ^= 0x10;
  for (const auto& f : frames) stream.insert(stream.end(), f.begin(), f.end());
  StreamDecoder dec;
  dec.feed(stream);
  std::vector<Frame> ok;
  int errors = 0;
  while (auto r = dec.next(true)) {
    if (r->frame) ok.push_back(*r->frame);
    else ++errors;
  }
  REQUIRE(ok.size() == 2);
  CHECK(ok[0].seq == 0);
  CHECK(ok[1].seq == 2);
  CHECK(errors >= 1);
}

TEST_CASE("sequence tracking and NAKs") {
  Endpoint a, b;
  const auto f0 = a.send({MsgType::challenge, pack_analog(0, 1)});
  auto d = b.receive(f0);
  CHECK(d.frames.size() == 1);
  CHECK(d.replies.empty());
  // Duplicate is dropped and answered with ERROR(bad_seq).
  d = b.receive(f0);
  CHECK(d.frames.empty());
  REQUIRE(d.replies.size() == 1);
  const auto nak = decode_frame(d.replies[0]);
  CHECK(nak.frame->type == MsgType::error);
  CHECK(nak.frame->payload == Bytes{static_cast<std::uint8_t>(ErrorCode::bad_seq)});
  // CRC failures never reach the caller.
  auto f1 = a.send({MsgType::challenge, pack_analog(0, 2)});
  f1[7] ^= 0x01;
  d = b.receive(f1);
  CHECK(d.frames.empty());
  REQUIRE(d.replies.size() >= 1);
  CHECK(decode_frame(d.replies[0]).frame->payload == Bytes{static_cast<std::uint8_t>(ErrorCode::bad_crc)});
  // Gap of one lost frame is fine.
  d = b.receive(a.send({MsgType::challenge, pack_analog(0, 3)}));
  CHECK(d.frames.size() == 1);

  SeqTracker t;
  CHECK(t.accept_rx(250));
  CHECK(t.accept_rx(5));  // wraps forward
  CHECK_FALSE(t.accept_rx(4));
  CHECK_FALSE(t.accept_rx(5));
  CHECK(t.accept_rx(132));
}

TEST_CASE("stale ERROR frames are not answered") {
  Endpoint a, b;
  const auto e = a.send({MsgType::error, {1}});
  CHECK(b.receive(e).frames.size() == 1);
  const auto d = b.receive(e);
  CHECK(d.frames.empty());
  CHECK(d.replies.empty());
}

TEST_CASE("message type names") {
  for (std::uint8_t t = 1; t <= 7; ++t) {
    const auto type = static_cast<MsgType>(t);
    CHECK(parse_msg_type(to_string(type)) == type);
  }
  CHECK_FALSE(parse_msg_type("BOGUS").has_value());
}
