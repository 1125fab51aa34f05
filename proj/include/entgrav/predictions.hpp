#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "entgrav/bouncer_basis.hpp"

namespace entgrav {

/// Expected energy gain rate of the entropic model, g hbar / (2 x0 sigma), in
/// watts. Independent of the state. Throws for nonpositive sigma.
double entropic_power(const BasisContext& ctx, double sigma);

/// Diosi-Penrose heating rate m G hbar / (4 sqrt(pi) R0^3) in watts, doubled
/// when backreaction is included. Throws for nonpositive inputs.
double dp_power(double mass, double r0 = constants::nucleon_radius, bool backreaction = false);

/// sigma whose entropic power equals target_power.
double sigma_from_energy_match(const BasisContext& ctx, double target_power);

/// sigma at which the entropic gain over delta_t equals delta_e:
/// g hbar delta_t / (2 x0 delta_e).
double sigma_bound_from_storage(const BasisContext& ctx, double delta_t, double delta_e);

/// kappa^(-1/3) t_d for a mass kappa times larger.
double decoherence_time_scaled(double t_d, double kappa);

struct ScaledTime {
  double kappa = 1.0;
  double t_original = 0.0;  // s
  double t_scaled = 0.0;    // s
};

struct PredictionReport {
  std::string particle;
  double mass = 0.0;  // kg
  double gravity_accel = 0.0;
  double sigma = 0.0;
  double r0 = constants::nucleon_radius;
  double entropic_power = 0.0;           // W
  double dp_power = 0.0;                 // W
  double dp_power_backreaction = 0.0;    // W, exactly twice dp_power
  bool backreaction = false;             // selects the doubled D-P rate
  double sigma_energy_match = 0.0;       // sigma reproducing dp_power
  double storage_time = constants::neutron_lifetime;  // s
  double storage_energy = 0.0;           // J, E1 - E0
  double sigma_bound = 0.0;
  std::vector<ScaledTime> scaled_times;
};

/// Report for the context's particle. The storage bound uses the neutron
/// lifetime and the 0 -> 1 gap; the scaled times cover the Planck-mass
/// mapping in both directions.
PredictionReport make_report(const BasisContext& ctx, const std::string& particle, double sigma,
                             double r0 = constants::nucleon_radius, bool backreaction = false);

void write_report_json(std::ostream& out, const PredictionReport& report);

}  // namespace entgrav
