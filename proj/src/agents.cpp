#include "derauth/agents.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>

namespace derauth::agents {

namespace {

constexpr double kEps = 1e-6;

using link::Message;
using link::MsgType;

Message error_message(link::ErrorCode code) {
  return {MsgType::error, {static_cast<std::uint8_t>(code)}};
}

std::string hex_word(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%016" PRIX64, v);
  return buf;
}

std::vector<protocol::Quantized> quantized_readings(const battery::Pack& pack,
                                                    const protocol::Challenge& c) {
  std::vector<protocol::Quantized> out;
  for (auto k : c.polled_cells()) {
    const auto m = pack.measure(k);
    out.push_back(protocol::quantize_measurement(m.voltage, m.soc));
  }
  return out;
}

battery::PackConfig noiseless(battery::PackConfig cfg) {
  cfg.noise_sigma = 0.0;
  return cfg;
}

}  // namespace

std::string_view to_string(Op op) noexcept {
  switch (op) {
    case Op::charge: return "charge";
    case Op::discharge: return "discharge";
    case Op::no_op: return "no_op";
  }
  return "unknown";
}

double ScenarioEvent::pack_power() const noexcept {
  switch (op) {
    case Op::discharge: return power;
    case Op::charge: return -power;
    case Op::no_op: return 0.0;
  }
  return 0.0;
}

std::string format_log_line(const LogEvent& e) {
  char t[32];
  std::snprintf(t, sizeof t, "%.3f", e.time);
  std::string line = std::string("time_s=") + t + " agent=" + e.agent + " event=" + e.kind;
  line += " challenge=" + (e.challenge ? hex_word(*e.challenge) : std::string("-"));
  line += " reply=" + (e.reply ? hex_word(*e.reply) : std::string("-"));
  line += " verdict=" + (e.verdict ? std::string(protocol::to_string(*e.verdict)) : std::string("-"));
  line += " reason=" + std::string(protocol::to_string(e.reason));
  if (!e.detail.empty()) line += " detail=" + e.detail;
  return line;
}

std::string_view to_string(MasterSession s) noexcept {
  switch (s) {
    case MasterSession::unenrolled: return "unenrolled";
    case MasterSession::idle: return "idle";
    case MasterSession::challenge_sent: return "challenge_sent";
    case MasterSession::authenticated_window: return "authenticated_window";
  }
  return "unknown";
}

bool master_transition_allowed(MasterSession from, MasterSession to) noexcept {
  using S = MasterSession;
  switch (from) {
    case S::unenrolled: return to == S::idle;
    case S::idle: return to == S::challenge_sent;
    case S::challenge_sent: return to == S::idle || to == S::authenticated_window;
    case S::authenticated_window: return to == S::idle;
  }
  return false;
}

// ---------------------------------------------------------------- Master

Master::Master(const battery::PackConfig& pack, std::vector<ScenarioEvent> scenario, Timing timing,
               std::uint64_t seed)
    : timing_(timing), shadow_(noiseless(pack)), rng_(seed) {
  ops_.reserve(scenario.size());
  for (std::size_t i = 0; i < scenario.size(); ++i) ops_.push_back({i, scenario[i]});
}

bool Master::finished() const noexcept {
  return session_ != MasterSession::unenrolled && next_op_ >= ops_.size() &&
         !pending_setpoint_ && session_ == MasterSession::idle;
}

void Master::transition(MasterSession to) {
  if (!master_transition_allowed(session_, to))
    throw std::logic_error("illegal master transition " + std::string(to_string(session_)) +
                           " -> " + std::string(to_string(to)));
  session_ = to;
}

void Master::emit(LogEvent e) {
  e.agent = "master";
  if (sink_) sink_(e);
}

void Master::advance(double dt) { shadow_.step(shadow_power_, dt); }

std::vector<protocol::Quantized> Master::expected_readings(const protocol::Challenge& c) const {
  return quantized_readings(shadow_, c);
}

void Master::shadow_sync(const protocol::Challenge& c,
                         std::span<const protocol::Quantized> received) {
  const auto cells = c.polled_cells();
  for (std::size_t i = 0; i < cells.size() && i < received.size(); ++i)
    shadow_.set_soc(cells[i], protocol::dequantize_soc(received[i].soc));
}

link::Message Master::issue_challenge(double now) {
  challenge_ = protocol::build_challenge(rng_, shadow_.size());
  deadline_ = now + timing_.timeout;
  ops_[next_op_].attempts += 1;
  transition(MasterSession::challenge_sent);
  emit({now, {}, "challenge", challenge_.encode(), std::nullopt, std::nullopt,
        protocol::RejectReason::none, "op=" + std::to_string(next_op_)});
  return {MsgType::challenge, link::pack_analog(link::kChallengePoint, challenge_.encode())};
}

void Master::record_round(double now, std::uint64_t reply, protocol::Verdict v,
                          protocol::RejectReason r) {
  store::RoundRecord rec{++attempt_seq_, now,          challenge_.encode(), reply, v, r,
                         table_.round_counter(), table_.digest()};
  rounds_.push_back(rec);
  if (store_) store_->append_round(rec);
}

void Master::fail_round(double now, std::uint64_t reply, protocol::RejectReason reason,
                        std::vector<Message>& out) {
  record_round(now, reply, protocol::Verdict::rejected, reason);
  emit({now, {}, "verdict", challenge_.encode(), reply, protocol::Verdict::rejected, reason, {}});
  out.push_back({MsgType::auth_result,
                 {static_cast<std::uint8_t>(protocol::Verdict::rejected),
                  static_cast<std::uint8_t>(reason)}});
  transition(MasterSession::idle);
  retry_count_ += 1;
  if (retry_count_ >= timing_.max_retries) {
    ops_[next_op_].status = OperationOutcome::Status::skipped;
    emit({now, {}, "fault", std::nullopt, std::nullopt, std::nullopt, reason,
          "operation_skipped op=" + std::to_string(next_op_) +
              " retries=" + std::to_string(retry_count_)});
    next_op_ += 1;
    retry_count_ = 0;
  }
}

std::vector<Message> Master::on_tick(double now) {
  std::vector<Message> out;
  if (session_ == MasterSession::unenrolled) {
    if (!enroll_requested_) {
      enroll_requested_ = true;
      emit({now, {}, "enroll_request", std::nullopt, std::nullopt, std::nullopt,
            protocol::RejectReason::none, {}});
      out.push_back({MsgType::enroll, {}});
    }
    return out;
  }

  if (session_ == MasterSession::challenge_sent && now >= deadline_ - kEps)
    fail_round(now, 0, protocol::RejectReason::timeout, out);

  if (session_ == MasterSession::authenticated_window) {
    auto& op = ops_[next_op_];
    if (now > window_expiry_ + kEps) {
      op.status = OperationOutcome::Status::skipped;
      emit({now, {}, "fault", std::nullopt, std::nullopt, std::nullopt,
            protocol::RejectReason::none, "window_expired op=" + std::to_string(next_op_)});
      transition(MasterSession::idle);
      next_op_ += 1;
    } else if (now >= op.event.time - kEps) {
      const double pack_power = op.event.pack_power();
      pending_setpoint_ = pack_power;
      pending_op_ = next_op_;
      op.dispatched_at = now;
      char detail[96];
      std::snprintf(detail, sizeof detail, "op=%zu kind=%s watts=%.3f", next_op_,
                    std::string(to_string(op.event.op)).c_str(), -pack_power + 0.0);
      emit({now, {}, "setpoint", std::nullopt, std::nullopt, std::nullopt,
            protocol::RejectReason::none, detail});
      out.push_back({MsgType::setpoint, link::pack_setpoint(-pack_power + 0.0)});
      transition(MasterSession::idle);
      next_op_ += 1;
    }
  }

  if (session_ == MasterSession::idle && next_op_ < ops_.size() &&
      now >= ops_[next_op_].event.time - timing_.lead - kEps) {
    out.push_back(issue_challenge(now));
  }
  return out;
}

std::vector<Message> Master::on_frame(const link::Frame& frame, double now) {
  std::vector<Message> out;
  switch (frame.type) {
    case MsgType::enroll: {
      if (session_ != MasterSession::unenrolled || frame.payload.empty() ||
          frame.payload.size() != 1u + frame.payload[0]) {
        emit({now, {}, "ignored", std::nullopt, std::nullopt, std::nullopt,
              protocol::RejectReason::none, "unexpected_enroll"});
        break;
      }
      if (frame.payload[0] != shadow_.size()) {
        emit({now, {}, "fault", std::nullopt, std::nullopt, std::nullopt,
              protocol::RejectReason::none, "enroll_cell_count_mismatch"});
        break;
      }
      table_ = protocol::CellReplyTable(
          std::vector<std::uint8_t>(frame.payload.begin() + 1, frame.payload.end()));
      enrolled_ = table_;
      if (store_) store_->write_enrollment(table_);
      transition(MasterSession::idle);
      emit({now, {}, "enrolled", std::nullopt, std::nullopt, std::nullopt,
            protocol::RejectReason::none, "cells=" + std::to_string(table_.size())});
      break;
    }
    case MsgType::reply: {
      if (session_ != MasterSession::challenge_sent) {
        emit({now, {}, "ignored", std::nullopt, std::nullopt, std::nullopt,
              protocol::RejectReason::none, "reply_without_challenge"});
        break;
      }
      auto analog = link::unpack_analog(frame.payload);
      if (!analog || analog->point_index != link::kReplyPoint) {
        fail_round(now, 0, protocol::RejectReason::decode_failure, out);
        break;
      }
      const auto expected = expected_readings(challenge_);
      auto outcome = protocol::verify_reply(challenge_, analog->value_bits, table_, expected,
                                            timing_.tolerance);
      if (!outcome.accepted()) {
        fail_round(now, analog->value_bits, outcome.reason, out);
        break;
      }
      table_ = protocol::update_table(table_, challenge_, outcome.pre_transform);
      shadow_sync(challenge_, outcome.received);
      record_round(now, analog->value_bits, protocol::Verdict::accepted,
                   protocol::RejectReason::none);
      emit({now, {}, "verdict", challenge_.encode(), analog->value_bits,
            protocol::Verdict::accepted, protocol::RejectReason::none,
            "round=" + std::to_string(table_.round_counter())});
      out.push_back({MsgType::auth_result,
                     {static_cast<std::uint8_t>(protocol::Verdict::accepted),
                      static_cast<std::uint8_t>(protocol::RejectReason::none)}});
      retry_count_ = 0;
      window_expiry_ = now + timing_.window;
      transition(MasterSession::authenticated_window);
      break;
    }
    case MsgType::ack: {
      if (!pending_setpoint_) break;
      shadow_power_ = *pending_setpoint_;
      ops_[pending_op_].status = OperationOutcome::Status::applied;
      pending_setpoint_.reset();
      emit({now, {}, "ack", std::nullopt, std::nullopt, std::nullopt,
            protocol::RejectReason::none, "op=" + std::to_string(pending_op_)});
      break;
    }
    case MsgType::error: {
      const auto code = frame.payload.empty() ? 0 : frame.payload[0];
      emit({now, {}, "error_received", std::nullopt, std::nullopt, std::nullopt,
            protocol::RejectReason::none,
            "code=" + std::string(link::to_string(static_cast<link::ErrorCode>(code)))});
      if (code == static_cast<std::uint8_t>(link::ErrorCode::malformed) &&
          session_ == MasterSession::challenge_sent) {
        fail_round(now, 0, protocol::RejectReason::malformed_challenge, out);
      } else if (code == static_cast<std::uint8_t>(link::ErrorCode::unauthenticated) &&
                 pending_setpoint_) {
        ops_[pending_op_].status = OperationOutcome::Status::refused;
        pending_setpoint_.reset();
        emit({now, {}, "fault", std::nullopt, std::nullopt, std::nullopt,
              protocol::RejectReason::none, "setpoint_refused op=" + std::to_string(pending_op_)});
      }
      break;
    }
    default:
      emit({now, {}, "ignored", std::nullopt, std::nullopt, std::nullopt,
            protocol::RejectReason::none,
            "type=" + std::string(link::to_string(frame.type))});
      break;
  }
  return out;
}

// ------------------------------------------------------------ Outstation

Outstation::Outstation(const battery::PackConfig& pack, Timing timing, std::uint64_t seed)
    : timing_(timing), pack_(pack), seed_(seed) {}

void Outstation::emit(LogEvent e) {
  e.agent = "outstation";
  if (sink_) sink_(e);
}

bool Outstation::window_open(double now) const noexcept {
  return window_opened_.has_value() && now <= window_expiry_ + kEps;
}

void Outstation::advance(double dt) { pack_.step(power_, dt); }

std::vector<Message> Outstation::on_tick(double now) {
  if (window_opened_ && now > window_expiry_ + kEps) {
    emit({now, {}, "window_closed", std::nullopt, std::nullopt, std::nullopt,
          protocol::RejectReason::none, "expired"});
    window_opened_.reset();
  }
  return {};
}

std::vector<Message> Outstation::on_frame(const link::Frame& frame, double now) {
  std::vector<Message> out;
  switch (frame.type) {
    case MsgType::enroll: {
      std::vector<protocol::Quantized> initial;
      for (std::size_t i = 0; i < pack_.size(); ++i) {
        const auto m = pack_.measure(i);
        initial.push_back(protocol::quantize_measurement(m.voltage, m.soc));
      }
      table_ = protocol::enrollment_init(seed_, initial);
      session_ = OutstationSession::idle;
      window_opened_.reset();
      link::Bytes payload{static_cast<std::uint8_t>(table_.size())};
      payload.insert(payload.end(), table_.replies().begin(), table_.replies().end());
      out.push_back({MsgType::enroll, std::move(payload)});
      emit({now, {}, "enrolled", std::nullopt, std::nullopt, std::nullopt,
            protocol::RejectReason::none, "cells=" + std::to_string(table_.size())});
      break;
    }
    case MsgType::challenge: {
      auto analog = link::unpack_analog(frame.payload);
      if (!analog || analog->point_index != link::kChallengePoint) {
        out.push_back(error_message(link::ErrorCode::malformed));
        break;
      }
      if (session_ == OutstationSession::unenrolled) {
        out.push_back(error_message(link::ErrorCode::unauthenticated));
        break;
      }
      auto decoded = protocol::decode_challenge(analog->value_bits, pack_.size());
      if (!decoded.ok()) {
        emit({now, {}, "challenge_rejected", analog->value_bits, std::nullopt,
              protocol::Verdict::rejected, decoded.reason, {}});
        out.push_back(error_message(link::ErrorCode::malformed));
        break;
      }
      const auto readings = quantized_readings(pack_, *decoded.challenge);
      const auto reply = protocol::build_reply(*decoded.challenge, readings, table_);
      held_challenge_ = *decoded.challenge;
      held_pre_ = reply.pre_transform;
      session_ = OutstationSession::awaiting_result;
      emit({now, {}, "reply", analog->value_bits, reply.wire, std::nullopt,
            protocol::RejectReason::none, {}});
      out.push_back({MsgType::reply, link::pack_analog(link::kReplyPoint, reply.wire)});
      break;
    }
    case MsgType::auth_result: {
      if (session_ != OutstationSession::awaiting_result || frame.payload.size() != 2) {
        emit({now, {}, "ignored", std::nullopt, std::nullopt, std::nullopt,
              protocol::RejectReason::none, "auth_result_without_round"});
        break;
      }
      session_ = OutstationSession::idle;
      const auto verdict = static_cast<protocol::Verdict>(frame.payload[0]);
      const auto reason = static_cast<protocol::RejectReason>(frame.payload[1]);
      if (verdict == protocol::Verdict::accepted) {
        table_ = protocol::update_table(table_, held_challenge_, held_pre_);
        window_opened_ = now;
        window_expiry_ = now + timing_.window;
        accepted_at_.push_back(now);
        emit({now, {}, "verdict", held_challenge_.encode(), std::nullopt, verdict, reason,
              "round=" + std::to_string(table_.round_counter())});
      } else {
        emit({now, {}, "verdict", held_challenge_.encode(), std::nullopt,
              protocol::Verdict::rejected, reason, "dropped"});
      }
      held_pre_ = 0;
      break;
    }
    case MsgType::setpoint: {
      auto watts = link::unpack_setpoint(frame.payload);
      if (!watts || !std::isfinite(*watts)) {
        out.push_back(error_message(link::ErrorCode::malformed));
        break;
      }
      if (!window_open(now)) {
        emit({now, {}, "setpoint_refused", std::nullopt, std::nullopt, std::nullopt,
              protocol::RejectReason::none, "unauthenticated"});
        out.push_back(error_message(link::ErrorCode::unauthenticated));
        break;
      }
      power_ = -*watts + 0.0;
      applied_.push_back({now, power_, *window_opened_});
      window_opened_.reset();
      char detail[64];
      std::snprintf(detail, sizeof detail, "watts=%.3f", *watts);
      emit({now, {}, "setpoint_applied", std::nullopt, std::nullopt, std::nullopt,
            protocol::RejectReason::none, detail});
      out.push_back({MsgType::ack, {frame.seq}});
      break;
    }
    default:
      emit({now, {}, "ignored", std::nullopt, std::nullopt, std::nullopt,
            protocol::RejectReason::none, "type=" + std::string(link::to_string(frame.type))});
      break;
  }
  return out;
}

bool audit_gating(std::span<const AppliedSetpoint> applied, std::span<const double> accepted_at,
                  double window) {
  return std::all_of(applied.begin(), applied.end(), [&](const AppliedSetpoint& s) {
    return std::any_of(accepted_at.begin(), accepted_at.end(), [&](double t) {
      return t <= s.time + kEps && s.time - t <= window + kEps;
    });
  });
}

}  // namespace derauth::agents
