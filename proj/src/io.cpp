#include "derauth/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace derauth::io {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string strip_comment(const std::string& line) {
  const auto hash = line.find('#');
  return trim(hash == std::string::npos ? line : line.substr(0, hash));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  return out;
}

double parse_number(const std::string& s, const std::string& source, std::size_t line,
                    const std::string& what) {
  double v{};
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || s.empty())
    throw ParseError(source, line, "invalid number for " + what + ": '" + s + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& s, const std::string& source, std::size_t line,
                         const std::string& what) {
  std::uint64_t v{};
  int base = 10;
  std::string_view digits = s;
  if (digits.starts_with("0x") || digits.starts_with("0X")) {
    base = 16;
    digits.remove_prefix(2);
  }
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v, base);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || digits.empty())
    throw ParseError(source, line, "invalid integer for " + what + ": '" + s + "'");
  return v;
}

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ParseError(file.string(), 0, "cannot open file");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CellSection {
  std::size_t line;
  std::map<std::string, std::pair<std::string, std::size_t>> fields;
};

const std::vector<std::string> kCellKeys = {
    "nominal_voltage_v",   "rated_capacity_ah",  "initial_soc_pct",   "response_time_s",
    "max_capacity_ah",     "cutoff_voltage_v",   "full_voltage_v",    "nominal_current_a",
    "internal_resistance_ohm", "nominal_capacity_ah", "exp_zone"};

battery::CellParams build_cell(const CellSection& sec, const std::string& source) {
  for (const auto& key : kCellKeys)
    if (!sec.fields.count(key))
      throw ParseError(source, sec.line, "cell is missing field '" + key + "'");
  const auto num = [&](const std::string& key) {
    const auto& [value, line] = sec.fields.at(key);
    return parse_number(value, source, line, key);
  };
  battery::CellParams p;
  p.nominal_voltage = num("nominal_voltage_v");
  p.rated_capacity = num("rated_capacity_ah");
  p.initial_soc = num("initial_soc_pct");
  p.response_time = num("response_time_s");
  p.max_capacity = num("max_capacity_ah");
  p.cutoff_voltage = num("cutoff_voltage_v");
  p.full_voltage = num("full_voltage_v");
  p.nominal_current = num("nominal_current_a");
  p.internal_resistance = num("internal_resistance_ohm");
  p.nominal_capacity = num("nominal_capacity_ah");
  const auto& [zone, zone_line] = sec.fields.at("exp_zone");
  const auto parts = split_csv(zone);
  if (parts.size() != 2)
    throw ParseError(source, zone_line, "exp_zone expects 'volts, amp_hours'");
  p.exp_voltage = parse_number(parts[0], source, zone_line, "exp_zone voltage");
  p.exp_capacity = parse_number(parts[1], source, zone_line, "exp_zone capacity");
  if (auto err = p.validate()) throw ParseError(source, sec.line, "invalid cell: " + *err);
  return p;
}

}  // namespace

battery::PackConfig parse_pack(const std::string& text, const std::string& source) {
  battery::PackConfig pack;
  pack.cells.clear();
  std::vector<CellSection> sections;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = strip_comment(raw);
    if (line.empty()) continue;
    if (line == "[cell]") {
      sections.push_back({line_no, {}});
      continue;
    }
    if (line.front() == '[') throw ParseError(source, line_no, "unknown section " + line);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source, line_no, "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (sections.empty()) {
      if (key == "noise_sigma_v") {
        pack.noise_sigma = parse_number(value, source, line_no, key);
        if (pack.noise_sigma < 0.0) throw ParseError(source, line_no, "noise_sigma_v must be >= 0");
      } else if (key == "seed") {
        pack.rng_seed = parse_uint(value, source, line_no, key);
      } else {
        throw ParseError(source, line_no, "unknown pack key '" + key + "'");
      }
    } else {
      if (std::find(kCellKeys.begin(), kCellKeys.end(), key) == kCellKeys.end())
        throw ParseError(source, line_no, "unknown cell key '" + key + "'");
      if (!sections.back().fields.emplace(key, std::make_pair(value, line_no)).second)
        throw ParseError(source, line_no, "duplicate cell key '" + key + "'");
    }
  }
  if (sections.empty()) throw ParseError(source, line_no, "pack defines no [cell] sections");
  for (const auto& sec : sections) pack.cells.push_back(build_cell(sec, source));
  return pack;
}

battery::PackConfig load_pack(const std::filesystem::path& file) {
  return parse_pack(read_file(file), file.string());
}

std::vector<agents::ScenarioEvent> parse_scenario(const std::string& text, const std::string& source) {
  std::vector<agents::ScenarioEvent> events;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = strip_comment(raw);
    if (line.empty() || line.starts_with("time_s")) continue;
    const auto f = split_csv(line);
    if (f.size() != 3) throw ParseError(source, line_no, "expected 'time_s, op, power_w'");
    agents::ScenarioEvent e;
    e.time = parse_number(f[0], source, line_no, "time_s");
    if (f[1] == "charge") e.op = agents::Op::charge;
    else if (f[1] == "discharge") e.op = agents::Op::discharge;
    else if (f[1] == "no_op" || f[1] == "no-op" || f[1] == "noop") e.op = agents::Op::no_op;
    else throw ParseError(source, line_no, "unknown op '" + f[1] + "'");
    e.power = parse_number(f[2], source, line_no, "power_w");
    if (e.power < 0.0) throw ParseError(source, line_no, "power_w must be a non-negative magnitude");
    if (!events.empty() && e.time <= events.back().time)
      throw ParseError(source, line_no, "event times must be strictly increasing");
    events.push_back(e);
  }
  return events;
}

std::vector<agents::ScenarioEvent> load_scenario(const std::filesystem::path& file) {
  return parse_scenario(read_file(file), file.string());
}

std::vector<sim::Fault> parse_faults(const std::string& text, const std::string& source) {
  std::vector<sim::Fault> faults;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = strip_comment(raw);
    if (line.empty() || line.starts_with("time_s")) continue;
    const auto f = split_csv(line);
    if (f.size() < 3 || f.size() > 4)
      throw ParseError(source, line_no, "expected 'time_s, kind, msg_type[, arg]'");
    sim::Fault fault;
    fault.time = parse_number(f[0], source, line_no, "time_s");
    if (f[1] == "bit_flip") fault.kind = sim::FaultKind::bit_flip;
    else if (f[1] == "drop") fault.kind = sim::FaultKind::drop;
    else if (f[1] == "replay") fault.kind = sim::FaultKind::replay;
    else if (f[1] == "duplicate") fault.kind = sim::FaultKind::duplicate;
    else throw ParseError(source, line_no, "unknown fault kind '" + f[1] + "'");
    auto type = link::parse_msg_type(f[2]);
    if (!type) throw ParseError(source, line_no, "unknown message type '" + f[2] + "'");
    fault.target = *type;
    if (f.size() == 4) fault.arg = parse_uint(f[3], source, line_no, "arg");
    if (!faults.empty() && fault.time < faults.back().time)
      throw ParseError(source, line_no, "faults must be in time order");
    faults.push_back(fault);
  }
  return faults;
}

std::vector<sim::Fault> load_faults(const std::filesystem::path& file) {
  return parse_faults(read_file(file), file.string());
}

std::vector<sim::Fault> fault_preset(const std::string& name,
                                     const std::vector<agents::ScenarioEvent>& scenario,
                                     double lead) {
  const auto pos = name.find("_round");
  if (pos == std::string::npos) throw std::invalid_argument("unknown fault preset '" + name + "'");
  const auto kind = name.substr(0, pos);
  std::size_t round = 0;
  const auto digits = name.substr(pos + 6);
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), round);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || round == 0 ||
      round > scenario.size())
    throw std::invalid_argument("fault preset '" + name + "' names a round outside the scenario");
  const double t = scenario[round - 1].time - lead;

  sim::Fault f;
  f.time = t;
  f.target = link::MsgType::reply;
  if (kind == "replay") {
    if (round < 2) throw std::invalid_argument("replay preset needs a round >= 2");
    f.kind = sim::FaultKind::replay;
    f.arg = round - 1;
  } else if (kind == "bitflip") {
    f.kind = sim::FaultKind::bit_flip;
    f.arg = 40;
  } else if (kind == "drop") {
    f.kind = sim::FaultKind::drop;
  } else if (kind == "duplicate") {
    f.kind = sim::FaultKind::duplicate;
  } else {
    throw std::invalid_argument("unknown fault preset '" + name + "'");
  }
  return {f};
}

std::string format_pack(const battery::PackConfig& pack) {
  std::ostringstream out;
  out.precision(17);
  out << "noise_sigma_v = " << pack.noise_sigma << "\n";
  out << "seed = " << pack.rng_seed << "\n";
  for (const auto& c : pack.cells) {
    out << "\n[cell]\n"
        << "nominal_voltage_v = " << c.nominal_voltage << "\n"
        << "rated_capacity_ah = " << c.rated_capacity << "\n"
        << "initial_soc_pct = " << c.initial_soc << "\n"
        << "response_time_s = " << c.response_time << "\n"
        << "max_capacity_ah = " << c.max_capacity << "\n"
        << "cutoff_voltage_v = " << c.cutoff_voltage << "\n"
        << "full_voltage_v = " << c.full_voltage << "\n"
        << "nominal_current_a = " << c.nominal_current << "\n"
        << "internal_resistance_ohm = " << c.internal_resistance << "\n"
        << "nominal_capacity_ah = " << c.nominal_capacity << "\n"
        << "exp_zone = " << c.exp_voltage << ", " << c.exp_capacity << "\n";
  }
  return out.str();
}

}  // namespace derauth::io
