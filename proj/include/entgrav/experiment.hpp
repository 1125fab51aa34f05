#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "entgrav/bouncer_basis.hpp"
#include "entgrav/dynamics.hpp"

namespace entgrav {

/// One measured point of a transmission scan. omega is angular (rad/s).
struct MeasurementRecord {
  double strength = 0.0;      // a * omega [m/s]
  double omega = 0.0;         // rad/s
  double transmission = 0.0;  // relative count rate
  double error = 1.0;         // > 0

  Drive drive() const { return {strength, omega}; }
};

/// Throws std::invalid_argument unless error > 0, strength >= 0, omega > 0
/// and every field is finite.
void validate(const MeasurementRecord& record);

using Populations = std::array<double, 3>;
using Coefficients = std::array<double, 3>;

/// Throws std::invalid_argument unless c0 >= c1 >= c2 >= 0.
void require_ordered(const Coefficients& c);

struct VelocityBounds {
  double lower = 5.6;  // m/s
  double upper = 9.5;

  bool contains(double v) const { return v >= lower && v <= upper; }
};

struct ProtocolConfig {
  Populations initial_populations{0.597, 0.340, 0.063};
  double flight_length = 0.30;  // m
  VelocityBounds velocity_bounds;
  std::optional<Coefficients> coefficients;
  /// Accept velocities outside velocity_bounds.
  bool allow_any_velocity = false;

  /// Throws std::invalid_argument when an invariant is broken.
  void validate() const;
};

/// Unitless flight time (length / velocity) / time_scale. Throws
/// std::invalid_argument for nonpositive inputs, or for a velocity outside
/// the bounds unless allow_out_of_bounds is set.
double flight_time(const BasisContext& ctx, double velocity, double length = 0.30,
                   const VelocityBounds& bounds = {}, bool allow_out_of_bounds = false);

/// Final populations of the three lowest states for each velocity, from a
/// single propagation of the prepared mixture under the record's drive.
/// Row i of the result belongs to velocities[i]; the velocities need not be
/// sorted. Populations for a velocity do not depend on the other velocities.
PopulationSeries simulate_velocities(const BasisContext& ctx, const OperatorSet& ops,
                                     std::span<const double> velocities, const Drive& drive,
                                     const ProtocolConfig& config,
                                     const PropagationOptions& options = {});

/// (P0, P1, P2) after the region-II flight at the given velocity.
Populations simulate_point(const BasisContext& ctx, const OperatorSet& ops, double velocity,
                           const Drive& drive, const ProtocolConfig& config,
                           const PropagationOptions& options = {});
Populations simulate_point(const BasisContext& ctx, Coupling sigma, double velocity,
                           const Drive& drive, const ProtocolConfig& config,
                           const PropagationOptions& options = {});

/// c0 P0 + c1 P1 + c2 P2. Throws std::invalid_argument for unordered c.
double transmission(const Populations& p, const Coefficients& c);

/// Error raised for malformed measurement files; the message carries the
/// source name and line number.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* record_csv_header = "strength_m_per_s,omega_rad_per_s,transmission,error";

std::vector<MeasurementRecord> parse_records(std::istream& in, const std::string& source = "<stream>");
/// Throws DataError when the file cannot be opened or a row is malformed.
std::vector<MeasurementRecord> load_records(const std::filesystem::path& path);

void write_records(std::ostream& out, std::span<const MeasurementRecord> records);

struct SimulatedRow {
  MeasurementRecord record;
  Populations populations{};
  double model_transmission = 0.0;
};

/// Record columns followed by P0,P1,P2,T_model.
void write_simulated_scan(std::ostream& out, std::span<const SimulatedRow> rows);

struct DriveSetting {
  double strength = 0.0;  // m/s
  double omega = 0.0;     // rad/s
};

/// Twenty drive settings: ten frequencies across the 0 -> 3 resonance at
/// a*omega = 2.05 mm/s, and ten strengths in [0, 4 mm/s] on resonance.
std::vector<DriveSetting> default_synthetic_grid(const BasisContext& ctx);

struct SyntheticSpec {
  Coupling sigma = Coupling::finite(500.0);
  double velocity = 6.58;
  Coefficients coefficients{1.46, 0.50, 0.50};
  std::vector<DriveSetting> grid;
  std::uint64_t seed = 1;
  double noise_scale = 1.0;
  double error = 0.03;  // reported transmission error of every record
  ProtocolConfig config;
  // Truncation leakage is part of the model error here, as in a fit.
  PropagationOptions propagation = [] {
    PropagationOptions o;
    o.on_trace_drift = TraceDriftAction::record;
    return o;
  }();
};

/// Noise-free records: transmission equals the model prediction.
std::vector<MeasurementRecord> model_dataset(const BasisContext& ctx, const SyntheticSpec& spec);

/// Copies `records` with Gaussian noise of standard deviation
/// noise_scale * error added to each transmission, drawn from a mt19937_64
/// seeded with `seed`.
std::vector<MeasurementRecord> add_noise(std::span<const MeasurementRecord> records,
                                         std::uint64_t seed, double noise_scale);

/// add_noise(model_dataset(ctx, spec), spec.seed, spec.noise_scale).
std::vector<MeasurementRecord> generate_synthetic_dataset(const BasisContext& ctx,
                                                          const SyntheticSpec& spec);

}  // namespace entgrav
