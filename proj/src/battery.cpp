#include "derauth/battery.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace derauth::battery {

namespace {

constexpr double kSecondsPerHour = 3600.0;

// Polarization resistance factor Q/(Q − it), bounded near full depletion.
double depth_factor(double q, double it) {
  return q / std::max(q - it, 1e-9 * q);
}

double solve3_det(const std::array<std::array<double, 3>, 3>& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

}  // namespace

std::optional<std::string> CellParams::validate() const {
  if (!(cutoff_voltage < nominal_voltage && nominal_voltage < full_voltage))
    return "voltages must satisfy cutoff < nominal < full";
  if (!(0.0 < exp_capacity && exp_capacity < nominal_capacity && nominal_capacity < max_capacity))
    return "capacities must satisfy 0 < Q_exp < Q_nom < Q";
  if (!(initial_soc >= 0.0 && initial_soc <= 100.0)) return "initial SoC must lie in [0, 100]";
  if (!(response_time > 0.0)) return "response time must be positive";
  if (!(nominal_current > 0.0)) return "nominal discharge current must be positive";
  if (!(internal_resistance >= 0.0)) return "internal resistance must be non-negative";
  return std::nullopt;
}

CellParams reference_cell_1() { return CellParams{}; }

CellParams reference_cell_2() {
  CellParams p;
  p.initial_soc = 65.0;
  p.max_capacity = 2.02;
  p.cutoff_voltage = 2.622;
  p.internal_resistance = 0.012;
  p.nominal_capacity = 1.7897;
  p.exp_voltage = 3.81;
  return p;
}

DischargeModel extract_model(const CellParams& params) {
  if (auto err = params.validate()) throw ExtractionError("invalid cell parameters: " + *err);

  const double amplitude_seed = params.full_voltage - params.exp_voltage;
  if (!(amplitude_seed > 0.0)) {
    std::ostringstream msg;
    msg << "degenerate exponential zone: full_voltage (" << params.full_voltage
        << ") must exceed exp_voltage (" << params.exp_voltage << ")";
    throw ExtractionError(msg.str());
  }

  DischargeModel m;
  m.q = params.max_capacity;
  m.r = params.internal_resistance;
  m.b = 3.0 / params.exp_capacity;

  const double i = params.nominal_current;
  const std::array<double, 3> its{0.0, params.exp_capacity, params.nominal_capacity};
  const std::array<double, 3> vs{params.full_voltage, params.exp_voltage, params.nominal_voltage};

  // Rows: E0 − K·Q/(Q−it)·(it+i) + A·exp(−B·it) = V + R·i
  std::array<std::array<double, 3>, 3> lhs{};
  std::array<double, 3> rhs{};
  for (std::size_t row = 0; row < 3; ++row) {
    lhs[row] = {1.0, -depth_factor(m.q, its[row]) * (its[row] + i), std::exp(-m.b * its[row])};
    rhs[row] = vs[row] + m.r * i;
  }

  const double det = solve3_det(lhs);
  if (std::abs(det) < 1e-12) {
    std::ostringstream msg;
    msg << "singular anchor system for exp_capacity=" << params.exp_capacity
        << " nominal_capacity=" << params.nominal_capacity << " max_capacity=" << params.max_capacity;
    throw ExtractionError(msg.str());
  }
  std::array<double, 3> solution{};
  for (std::size_t col = 0; col < 3; ++col) {
    auto replaced = lhs;
    for (std::size_t row = 0; row < 3; ++row) replaced[row][col] = rhs[row];
    solution[col] = solve3_det(replaced) / det;
  }
  m.e0 = solution[0];
  m.k = solution[1];
  m.a = solution[2];

  if (!(m.a > 0.0 && m.k > 0.0 && m.e0 > 0.0)) {
    std::ostringstream msg;
    msg << "extracted model violates positivity (E0=" << m.e0 << ", K=" << m.k << ", A=" << m.a
        << "); check full_voltage/exp_voltage/nominal_voltage anchors";
    throw ExtractionError(msg.str());
  }
  return m;
}

double model_voltage(const DischargeModel& m, double it, double current, double filtered) {
  const double exp_zone = m.a * std::exp(-m.b * it);
  const double ohmic = m.r * current;
  double v;
  if (filtered >= 0.0) {
    v = m.e0 - ohmic - m.k * depth_factor(m.q, it) * (it + filtered) + exp_zone;
  } else {
    v = m.e0 - ohmic - m.k * (m.q / (it + 0.1 * m.q)) * filtered -
        m.k * depth_factor(m.q, it) * it + exp_zone;
  }
  return std::max(v, 0.0);
}

CellState initial_state(const CellParams& params, const DischargeModel& model) {
  CellState s;
  s.extracted_charge = model.q * (1.0 - params.initial_soc / 100.0);
  s.soc = params.initial_soc;
  s.filtered_current = 0.0;
  s.terminal_voltage = model_voltage(model, s.extracted_charge, 0.0, 0.0);
  return s;
}

CellState step_cell(const DischargeModel& model, const CellState& state, double current,
                    double dt, double response_time, double cutoff_voltage) {
  if (!(dt > 0.0)) throw SimulationFault("step_cell: dt must be positive");
  CellState next = state;
  next.extracted_charge =
      std::clamp(state.extracted_charge + current * dt / kSecondsPerHour, 0.0, model.q);
  const double alpha = std::min(dt / response_time, 1.0);
  next.filtered_current = state.filtered_current + alpha * (current - state.filtered_current);
  next.soc = 100.0 * (1.0 - next.extracted_charge / model.q);
  next.terminal_voltage =
      model_voltage(model, next.extracted_charge, current, next.filtered_current);
  next.time = state.time + dt;
  if (current > 0.0) {
    next.depleted = next.extracted_charge >= model.q || next.terminal_voltage <= cutoff_voltage;
  } else if (current < 0.0) {
    next.depleted = false;
  }
  return next;
}

Pack::Pack(const PackConfig& config) : noise_sigma_(config.noise_sigma), rng_(config.rng_seed) {
  if (config.cells.empty()) throw SimulationFault("pack has no cells");
  if (config.noise_sigma < 0.0) throw SimulationFault("noise sigma must be non-negative");
  cells_.reserve(config.cells.size());
  for (const auto& p : config.cells) {
    Cell c;
    c.params = p;
    c.model = extract_model(p);
    c.state = initial_state(p, c.model);
    cells_.push_back(c);
  }
  report_voltages();
}

bool Pack::depleted() const noexcept {
  return std::any_of(cells_.begin(), cells_.end(), [](const Cell& c) { return c.state.depleted; });
}

std::vector<Measurement> Pack::step(double power_setpoint, double dt) {
  if (!(dt > 0.0)) throw SimulationFault("pack step: dt must be positive");
  double pack_voltage = 0.0;
  for (const auto& c : cells_) pack_voltage += c.state.terminal_voltage;
  double current = 0.0;
  if (power_setpoint != 0.0 && !(power_setpoint > 0.0 && depleted())) {
    if (!(pack_voltage > 0.0)) throw SimulationFault("pack voltage is zero or negative");
    current = power_setpoint / pack_voltage;
  }

  for (auto& c : cells_) {
    c.state = step_cell(c.model, c.state, current, dt, c.params.response_time,
                        c.params.cutoff_voltage);
    c.charge_throughput += current * dt / kSecondsPerHour;
  }
  last_current_ = current;
  time_ += dt;
  report_voltages();

  std::vector<Measurement> out;
  out.reserve(cells_.size());
  for (std::size_t i = 0; i < cells_.size(); ++i) out.push_back(measure(i));
  return out;
}

void Pack::report_voltages() {
  for (auto& c : cells_) {
    const double noise = noise_sigma_ > 0.0 ? noise_sigma_ * noise_(rng_) : 0.0;
    c.reported_voltage = std::max(c.state.terminal_voltage + noise, 0.0);
  }
}

Measurement Pack::measure(std::size_t cell_index) const {
  if (cell_index >= cells_.size())
    throw std::out_of_range("cell index " + std::to_string(cell_index) + " out of range");
  const auto& c = cells_[cell_index];
  return {c.reported_voltage, c.state.soc};
}

void Pack::set_soc(std::size_t cell_index, double soc) {
  auto& c = cells_.at(cell_index);
  c.state.extracted_charge = std::clamp(c.model.q * (1.0 - soc / 100.0), 0.0, c.model.q);
  c.state.soc = 100.0 * (1.0 - c.state.extracted_charge / c.model.q);
  c.state.terminal_voltage =
      model_voltage(c.model, c.state.extracted_charge, last_current_, c.state.filtered_current);
  c.reported_voltage = c.state.terminal_voltage;
}

std::vector<CurvePoint> discharge_curve(const CellParams& params, double current, double step_ah) {
  const auto model = extract_model(params);
  const double c_rate = current / model.q;
  std::vector<CurvePoint> out;
  for (std::size_t n = 0;; ++n) {
    const double it = static_cast<double>(n) * step_ah;
    if (it >= model.q) break;
    const double v = model_voltage(model, it, current, current);
    out.push_back({it, v, c_rate});
    if (v <= params.cutoff_voltage) break;
  }
  return out;
}

}  // namespace derauth::battery
