#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "derauth/agents.hpp"
#include "derauth/battery.hpp"
#include "derauth/sim.hpp"

namespace derauth::io {

struct ParseError : std::runtime_error {
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};

/// Pack definition: `key = value` lines, `[cell]` sections, `#` comments.
battery::PackConfig parse_pack(const std::string& text, const std::string& source = "<pack>");
battery::PackConfig load_pack(const std::filesystem::path& file);

/// Scenario: `time_s, op, power_w` records.
std::vector<agents::ScenarioEvent> parse_scenario(const std::string& text,
                                                  const std::string& source = "<scenario>");
std::vector<agents::ScenarioEvent> load_scenario(const std::filesystem::path& file);

/// Fault schedule: `time_s, kind, msg_type[, arg]` records.
std::vector<sim::Fault> parse_faults(const std::string& text, const std::string& source = "<faults>");
std::vector<sim::Fault> load_faults(const std::filesystem::path& file);

/// Named presets such as `replay_round2`, `bitflip_round2`, `drop_round3`,
/// `duplicate_round1`; the round number indexes the scenario's operations.
std::vector<sim::Fault> fault_preset(const std::string& name,
                                     const std::vector<agents::ScenarioEvent>& scenario,
                                     double lead);

std::string format_pack(const battery::PackConfig& pack);

}  // namespace derauth::io
