#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace derauth::battery {

// Sign convention used everywhere: current > 0 discharges, < 0 charges.

struct ExtractionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SimulationFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Datasheet description of one li-ion cell.
struct CellParams {
  double nominal_voltage{3.5};        // V
  double rated_capacity{2.0};         // Ah
  double initial_soc{64.0};           // %
  double response_time{5.0};          // s, current filter time constant
  double max_capacity{2.05};          // Q, Ah
  double cutoff_voltage{2.625};       // V
  double full_voltage{4.1};           // V
  double nominal_current{0.4};        // A
  double internal_resistance{0.017};  // Ohm
  double nominal_capacity{1.8087};    // Ah extracted at nominal voltage
  double exp_voltage{3.88};           // V, end of exponential zone
  double exp_capacity{0.2};           // Ah, end of exponential zone

  // Empty when valid, otherwise a description of the first violated invariant.
  [[nodiscard]] std::optional<std::string> validate() const;
};

// Datasheet parameters of the two characterized reference cells.
CellParams reference_cell_1();
CellParams reference_cell_2();

struct DischargeModel {
  double e0{};  // constant voltage, V
  double k{};   // polarization constant, V/Ah
  double a{};   // exponential zone amplitude, V
  double b{};   // exponential zone decay, 1/Ah
  double r{};   // internal resistance, Ohm
  double q{};   // maximum capacity, Ah
};

struct CellState {
  double extracted_charge{};  // it, Ah
  double soc{};               // %
  double filtered_current{};  // i*, A
  double terminal_voltage{};  // V, noise free
  double time{};              // s
  bool depleted{false};
};

/// Fits the generic li-ion discharge model to the three datasheet anchors
/// (0, V_full), (Q_exp, V_exp), (Q_nom, V_nom) at steady nominal current.
/// B is fixed to 3/Q_exp; E0, K and A come from the resulting linear system,
/// so the fitted curve passes through all three anchors exactly.
DischargeModel extract_model(const CellParams& params);

/// Terminal voltage of the model at extracted charge `it` for instantaneous
/// current `current` and filtered current `filtered`.
double model_voltage(const DischargeModel& m, double it, double current, double filtered);

CellState initial_state(const CellParams& params, const DischargeModel& model);

/// One forward-Euler step of the cell. Noise is never applied here.
CellState step_cell(const DischargeModel& model, const CellState& state, double current,
                    double dt, double response_time, double cutoff_voltage);

struct Cell {
  CellParams params;
  DischargeModel model;
  CellState state;
  double reported_voltage{};  // latest noisy measurement
  double charge_throughput{};  // ∫i dt in Ah, unclamped
};

struct PackConfig {
  std::vector<CellParams> cells;
  double noise_sigma{0.002};  // V
  std::uint64_t rng_seed{1};
};

struct Measurement {
  double voltage{};
  double soc{};
};

/// Series pack of cells sharing one current.
class Pack {
 public:
  explicit Pack(const PackConfig& config);

  /// Advances every cell by dt at the given pack power (W, > 0 discharges).
  /// Returns the per-cell measurement vector after the step.
  std::vector<Measurement> step(double power_setpoint, double dt);

  /// Latest noisy voltage and exact SoC. Throws std::out_of_range.
  [[nodiscard]] Measurement measure(std::size_t cell_index) const;

  [[nodiscard]] std::size_t size() const noexcept { return cells_.size(); }
  [[nodiscard]] const Cell& cell(std::size_t i) const { return cells_.at(i); }
  [[nodiscard]] double time() const noexcept { return time_; }
  [[nodiscard]] double last_current() const noexcept { return last_current_; }
  [[nodiscard]] bool depleted() const noexcept;
  [[nodiscard]] double noise_sigma() const noexcept { return noise_sigma_; }

  /// Forces a cell's SoC (and extracted charge) to the given value. Used by
  /// the master's shadow model when it resynchronizes.
  void set_soc(std::size_t cell_index, double soc);

 private:
  void report_voltages();

  std::vector<Cell> cells_;
  double noise_sigma_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> noise_{0.0, 1.0};
  double time_{0.0};
  double last_current_{0.0};
};

struct CurvePoint {
  double it_ah;
  double voltage_v;
  double c_rate;
};

/// Constant-current discharge curve from full charge down to the cutoff
/// voltage (or Q), sampled every `step_ah`.
std::vector<CurvePoint> discharge_curve(const CellParams& params, double current,
                                        double step_ah = 0.01);

}  // namespace derauth::battery
