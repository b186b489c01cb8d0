#include "derauth/sim.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

namespace derauth::sim {

namespace {

constexpr double kEps = 1e-9;

enum class Direction { to_outstation, to_master };

struct InFlight {
  double deliver_at;
  Direction dir;
  link::Bytes bytes;
};

// Scripted man-in-the-middle plus fixed latency.
class Channel {
 public:
  explicit Channel(const ChannelModel& model) : model_(model) {}

  void send(double now, Direction dir, link::Bytes bytes) {
    auto decoded = link::decode_frame(bytes);
    if (decoded.frame) {
      auto& history = history_[{dir, decoded.frame->type}];
      history.push_back(decoded.frame->payload);
      if (next_fault_ < model_.faults.size()) {
        const auto& f = model_.faults[next_fault_];
        if (now + kEps >= f.time && f.target == decoded.frame->type) {
          ++next_fault_;
          applied_.push_back({now, f});
          if (!apply(f, *decoded.frame, history, bytes)) return;  // dropped
          if (f.kind == FaultKind::duplicate) queue_.push_back({now + model_.latency, dir, bytes});
        }
      }
    }
    queue_.push_back({now + model_.latency, dir, std::move(bytes)});
  }

  std::vector<InFlight> due(double now) {
    std::vector<InFlight> out;
    std::deque<InFlight> keep;
    for (auto& m : queue_) {
      if (m.deliver_at <= now + kEps) out.push_back(std::move(m));
      else keep.push_back(std::move(m));
    }
    queue_ = std::move(keep);
    return out;
  }

  [[nodiscard]] const std::vector<FaultApplication>& applied() const { return applied_; }

 private:
  // Returns false when the frame must not be delivered.
  static bool apply(const Fault& f, link::Frame frame, const std::vector<link::Bytes>& history,
                    link::Bytes& bytes) {
    switch (f.kind) {
      case FaultKind::drop: return false;
      case FaultKind::duplicate: return true;
      case FaultKind::bit_flip: {
        if (auto a = link::unpack_analog(frame.payload)) {
          a->value_bits ^= 1ULL << (f.arg % 64);
          frame.payload = link::pack_analog(a->point_index, a->value_bits);
        } else if (!frame.payload.empty()) {
          const auto bit = f.arg % (frame.payload.size() * 8);
          frame.payload[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
        }
        bytes = link::encode_frame(frame);
        return true;
      }
      case FaultKind::replay: {
        if (f.arg >= 1 && f.arg <= history.size()) frame.payload = history[f.arg - 1];
        bytes = link::encode_frame(frame);
        return true;
      }
    }
    return true;
  }

  ChannelModel model_;
  std::deque<InFlight> queue_;
  std::map<std::pair<Direction, link::MsgType>, std::vector<link::Bytes>> history_;
  std::size_t next_fault_{0};
  std::vector<FaultApplication> applied_;
};

std::string fmt_double(const char* f, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string hex_word(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%016" PRIX64, v);
  return buf;
}

}  // namespace

std::string_view to_string(FaultKind k) noexcept {
  switch (k) {
    case FaultKind::bit_flip: return "bit_flip";
    case FaultKind::drop: return "drop";
    case FaultKind::replay: return "replay";
    case FaultKind::duplicate: return "duplicate";
  }
  return "unknown";
}

std::size_t SimResult::accepted_rounds() const {
  std::size_t n = 0;
  for (const auto& r : rounds) n += r.verdict == protocol::Verdict::accepted;
  return n;
}

bool SimResult::all_operations_applied() const {
  for (const auto& op : operations)
    if (op.status != agents::OperationOutcome::Status::applied) return false;
  return true;
}

bool SimResult::gating_ok(double window) const {
  return agents::audit_gating(applied, accepted_at, window);
}

SimResult run_scenario(const SimConfig& config) {
  if (!(config.dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (!(config.horizon >= 0.0)) throw std::invalid_argument("horizon must be non-negative");
  for (std::size_t i = 0; i < config.scenario.size(); ++i) {
    const auto& e = config.scenario[i];
    if (e.time + kEps < config.timing.lead)
      throw std::invalid_argument("scenario event " + std::to_string(i) +
                                  " precedes the authentication lead time");
    if (i > 0 && e.time <= config.scenario[i - 1].time)
      throw std::invalid_argument("scenario event times must be strictly increasing");
  }

  SimResult result;
  const auto sink = [&result](const agents::LogEvent& e) { result.log.push_back(e); };

  agents::Outstation outstation(config.pack, config.timing, config.seed);
  agents::Master master(config.pack, config.scenario, config.timing, config.seed ^ 0x6D61737465720000ULL);
  outstation.set_sink(sink);
  master.set_sink(sink);

  std::optional<store::SessionStore> store;
  if (config.store_dir) {
    std::filesystem::create_directories(*config.store_dir);
    store.emplace(store::SessionStore::session_path(*config.store_dir, 0.0, config.seed));
    result.store_file = store->path();
    master.set_store(&*store);
  }

  link::Endpoint master_link;
  link::Endpoint outstation_link;
  Channel channel(config.channel);

  for (std::size_t i = 0; i < outstation.pack().size(); ++i)
    result.initial_soc.push_back(outstation.pack().cell(i).state.soc);

  const auto steps = static_cast<std::uint64_t>(std::llround(config.horizon / config.dt));
  const auto per_second = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(1.0 / config.dt)));

  for (std::uint64_t k = 0; k <= steps; ++k) {
    const double now = static_cast<double>(k) * config.dt;

    // Channel deliveries.
    auto arrivals = channel.due(now);
    for (auto pass : {Direction::to_outstation, Direction::to_master}) {
      for (auto& m : arrivals) {
        if (m.dir != pass) continue;
        auto& ep = pass == Direction::to_outstation ? outstation_link : master_link;
        const auto back = pass == Direction::to_outstation ? Direction::to_master : Direction::to_outstation;
        auto delivery = ep.receive(m.bytes);
        for (auto& nak : delivery.replies) channel.send(now, back, std::move(nak));
        for (const auto& frame : delivery.frames) {
          auto msgs = pass == Direction::to_outstation ? outstation.on_frame(frame, now)
                                                       : master.on_frame(frame, now);
          for (const auto& msg : msgs) channel.send(now, back, ep.send(msg));
        }
      }
    }

    // Timers.
    for (const auto& msg : outstation.on_tick(now))
      channel.send(now, Direction::to_master, outstation_link.send(msg));
    for (const auto& msg : master.on_tick(now))
      channel.send(now, Direction::to_outstation, master_link.send(msg));

    if (config.full_rate || k % per_second == 0) {
      const auto& pack = outstation.pack();
      for (std::size_t i = 0; i < pack.size(); ++i) {
        const auto m = pack.measure(i);
        result.trace.push_back({now, i, m.voltage, m.soc});
      }
    }

    if (k == steps) break;
    outstation.advance(config.dt);
    master.advance(config.dt);
  }

  result.steps = steps;
  result.rounds = master.rounds();
  result.operations = master.operations();
  result.applied = outstation.applied();
  result.accepted_at = outstation.accepted_rounds();
  result.faults_applied = channel.applied();
  result.master_table = master.table();
  result.outstation_table = outstation.table();
  for (std::size_t i = 0; i < outstation.pack().size(); ++i) {
    const auto& c = outstation.pack().cell(i);
    result.final_soc.push_back(c.state.soc);
    result.charge_throughput.push_back(c.charge_throughput);
    result.capacity.push_back(c.model.q);
  }
  if (store) store->flush();
  return result;
}

std::string trace_csv(const SimResult& r) {
  std::string out = "time_s,cell_id,voltage_v,soc_pct\n";
  for (const auto& row : r.trace) {
    out += fmt_double("%.1f", row.time) + "," + std::to_string(row.cell) + "," +
           fmt_double("%.6f", row.voltage) + "," + fmt_double("%.6f", row.soc) + "\n";
  }
  return out;
}

std::string auth_log_csv(const SimResult& r) {
  std::string out = "time_s,round,challenge_hex,reply_wire_hex,verdict,reason\n";
  for (const auto& rec : r.rounds) {
    out += fmt_double("%.3f", rec.timestamp) + "," + std::to_string(rec.seq) + "," +
           hex_word(rec.challenge) + "," + hex_word(rec.reply_wire) + "," +
           std::string(protocol::to_string(rec.verdict)) + "," +
           std::string(protocol::to_string(rec.reason)) + "\n";
  }
  return out;
}

std::string event_log(const SimResult& r) {
  std::string out;
  for (const auto& e : r.log) out += agents::format_log_line(e) + "\n";
  return out;
}

std::string report_json(const SimResult& r, const SimConfig& config) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["seed"] = config.seed;
  j["dt"] = config.dt;
  j["horizon_s"] = config.horizon;
  j["rounds"] = r.rounds.size();
  j["accepted_rounds"] = r.accepted_rounds();
  j["rejected_rounds"] = r.rounds.size() - r.accepted_rounds();
  j["tables_synchronized"] = r.master_table == r.outstation_table;
  j["gating_ok"] = r.gating_ok(config.timing.window);
  auto ops = ordered_json::array();
  for (const auto& op : r.operations) {
    static constexpr const char* kStatus[] = {"pending", "applied", "skipped", "refused"};
    ops.push_back({{"index", op.index},
                   {"time_s", op.event.time},
                   {"op", std::string(agents::to_string(op.event.op))},
                   {"power_w", op.event.power},
                   {"status", kStatus[static_cast<int>(op.status)]},
                   {"attempts", op.attempts},
                   {"dispatched_at", op.dispatched_at}});
  }
  j["operations"] = ops;
  auto faults = ordered_json::array();
  for (const auto& f : r.faults_applied)
    faults.push_back({{"time_s", f.time},
                      {"kind", std::string(to_string(f.fault.kind))},
                      {"target", std::string(link::to_string(f.fault.target))},
                      {"arg", f.fault.arg}});
  j["faults_applied"] = faults;
  j["final_soc"] = r.final_soc;
  j["success"] = r.all_operations_applied();
  return j.dump(2) + "\n";
}

void write_outputs(const SimResult& r, const SimConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto write = [&dir](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << text;
  };
  write("measurements.csv", trace_csv(r));
  write("auth_log.csv", auth_log_csv(r));
  write("events.log", event_log(r));
  write("report.json", report_json(r, config));
}

ReplayCase replay_attack_case(std::uint64_t seed, std::size_t from_round, std::size_t rounds_between) {
  SimConfig cfg;
  cfg.pack.cells = {battery::reference_cell_1(), battery::reference_cell_2()};
  cfg.pack.rng_seed = seed;
  cfg.seed = seed;
  cfg.dt = 0.1;

  const std::size_t total = from_round + rounds_between + 2;
  constexpr double kSpacing = 20.0;
  for (std::size_t i = 0; i < total; ++i)
    cfg.scenario.push_back({kSpacing * static_cast<double>(i + 1), agents::Op::no_op, 0.0});
  cfg.horizon = kSpacing * static_cast<double>(total + 1);

  const std::size_t target_op = from_round + rounds_between;  // 0-based op index
  const double attack_time = cfg.scenario[target_op].time - cfg.timing.lead;
  cfg.channel.faults.push_back({attack_time, FaultKind::replay, link::MsgType::reply, from_round});

  const auto result = run_scenario(cfg);

  ReplayCase out;
  const store::RoundRecord* original = nullptr;
  std::size_t accepted_seen = 0;
  for (const auto& r : result.rounds) {
    if (r.verdict == protocol::Verdict::accepted && ++accepted_seen == from_round) {
      original = &r;
      break;
    }
  }
  if (!original) return out;
  out.replayed_wire = original->reply_wire;
  for (std::size_t i = 0; i < result.rounds.size(); ++i) {
    const auto& r = result.rounds[i];
    if (r.timestamp + kEps < attack_time || r.reply_wire != original->reply_wire) continue;
    out.replay_rejected = r.verdict == protocol::Verdict::rejected;
    out.reason = r.reason;
    out.retry_accepted = i + 1 < result.rounds.size() &&
                         result.rounds[i + 1].verdict == protocol::Verdict::accepted;
    break;
  }
  return out;
}

}  // namespace derauth::sim
