#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "entgrav/bouncer_basis.hpp"

namespace entgrav {

/// Oscillating-mirror drive in physical units.
struct Drive {
  double strength = 0.0;  // a * omega [m/s]
  double omega = 1.0;     // angular frequency [rad/s]
};

/// Drive in unitless time: w(tau) = i * amplitude * cos(frequency * tau) * W.
struct UnitlessDrive {
  double amplitude = 0.0;
  double frequency = 0.0;

  double coefficient(double tau) const;
};

/// Converts a physical drive to unitless form for the given context.
/// Throws std::invalid_argument for negative strength or nonpositive omega.
UnitlessDrive to_unitless(const BasisContext& ctx, const Drive& drive);

struct StateDiagnostics {
  double trace_drift = 0.0;         // |Tr rho - 1|
  double hermiticity_defect = 0.0;  // max |rho - rho^dagger|
  double min_eigenvalue = 0.0;
};

/// Complex n x n density matrix in the bouncer eigenbasis.
class DensityMatrix {
 public:
  static constexpr double hermiticity_tolerance = 1e-9;
  static constexpr double positivity_tolerance = 1e-8;

  /// Throws std::invalid_argument if `data` is not square.
  explicit DensityMatrix(Eigen::MatrixXcd data);

  /// Incoherent mixture sum_j p_j |E_j><E_j| padded with zeros to n states.
  static DensityMatrix mixture(std::span<const double> populations, std::size_t n);
  /// |psi><psi| for a normalized state vector.
  static DensityMatrix pure(const Eigen::VectorXcd& psi);

  const Eigen::MatrixXcd& data() const { return data_; }
  std::size_t size() const { return static_cast<std::size_t>(data_.rows()); }
  double population(std::size_t j) const {
    return data_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)).real();
  }

  StateDiagnostics diagnose() const;

  /// Throws std::invalid_argument unless Hermitian to 1e-9, trace within
  /// trace_tolerance of one, and min eigenvalue >= -1e-8.
  void validate(double trace_tolerance) const;

 private:
  Eigen::MatrixXcd data_;
};

/// -i [h + xi + w(tau), rho]. Works with operators built in either mode.
Eigen::MatrixXcd conservative_rhs(const OperatorSet& ops, const DensityMatrix& rho, double tau,
                                  const UnitlessDrive& drive);

/// -i [h + w(tau), rho] + sigma (D rho D^dagger - rho). The potential xi is
/// absent from the commutator; gravity enters only through D.
/// Throws std::invalid_argument for a conservative-mode OperatorSet.
Eigen::MatrixXcd entropic_rhs(const OperatorSet& ops, const DensityMatrix& rho, double tau,
                              const UnitlessDrive& drive);

/// Tr(rho^2).
double purity(const DensityMatrix& rho);

/// Exact purity derivative of the entropic generator,
/// -2 sigma Tr(rho^2 - rho D rho D^dagger); the commutator part does not
/// contribute.
double entropic_purity_rate(const OperatorSet& ops, const DensityMatrix& rho);

/// Expected energy Tr(diag(-a) rho) in units of energy_scale.
double mean_energy(const OperatorSet& ops, const DensityMatrix& rho);

struct Trajectory {
  std::vector<double> times;
  std::vector<DensityMatrix> states;
  std::vector<Eigen::VectorXd> populations;
  std::vector<double> purity;
  std::vector<double> energy;  // units of energy_scale
  std::vector<double> trace_drift;
  double step = 0.0;  // RK4 step actually used
};

class PropagationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TraceDriftAction {
  raise,   // throw PropagationError
  record,  // keep going; the caller reads the recorded drift
};

struct PropagationOptions {
  static constexpr double default_trace_tolerance = 1e-4;

  /// Fixed RK4 step; 0 selects min(0.002, 0.02 / drive frequency).
  double step = 0.0;
  /// Halve the step until final populations move by less than
  /// convergence_tolerance between successive refinements.
  bool validate_step = true;
  double convergence_tolerance = 1e-8;
  int max_halvings = 6;
  double trace_tolerance = default_trace_tolerance;
  TraceDriftAction on_trace_drift = TraceDriftAction::raise;
  double positivity_floor = -1e-6;
};

/// Step chosen by the default policy for this drive.
double default_step(const UnitlessDrive& drive);

/// Fixed-step RK4 propagation. The generator is entropic when ops.sigma is
/// finite and conservative otherwise. The state is re-symmetrized after every
/// step and never renormalized. Diagnostics are recorded at n_outputs evenly
/// spaced checkpoints ending at tau_final (tau = 0 included when n_outputs > 1).
/// Throws PropagationError when trace drift exceeds the tolerance, the minimum
/// eigenvalue falls below the positivity floor, or step validation fails.
Trajectory propagate(const OperatorSet& ops, const DensityMatrix& rho0, const UnitlessDrive& drive,
                     double tau_final, std::size_t n_outputs, const PropagationOptions& options = {});

/// Populations of the lowest `keep` states at each of the ascending times.
/// Every time is reached from the uniform step grid k*step by one partial
/// step, and step validation is judged per time, so each row depends only on
/// its own time, never on which other times were requested.
struct PopulationSeries {
  Eigen::MatrixXd populations;  // times x keep
  std::vector<double> trace_drift;
  std::vector<double> steps;    // accepted RK4 step per time
};
PopulationSeries propagate_populations(const OperatorSet& ops, const DensityMatrix& rho0,
                                       const UnitlessDrive& drive, std::span<const double> times,
                                       std::size_t keep, const PropagationOptions& options = {});

struct EnergyRate {
  double numeric_rate = 0.0;   // W, least-squares slope of <H>(t)
  double analytic_rate = 0.0;  // W, g hbar / (2 x0 sigma)
};

/// Drive-off entropic evolution over [0, tau_window]; compares the slope of
/// the expected bouncer energy with the closed-form gain rate.
/// Throws std::invalid_argument for conservative-mode operators.
EnergyRate energy_rate_check(const BasisContext& ctx, const OperatorSet& ops,
                             const DensityMatrix& rho0, double tau_window);

/// Writes tau, P0..P(n-1), purity, energy_J, trace_drift.
void write_trajectory_csv(std::ostream& out, const BasisContext& ctx, const Trajectory& traj);

}  // namespace entgrav
