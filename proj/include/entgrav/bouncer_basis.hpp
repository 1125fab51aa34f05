#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "entgrav/constants.hpp"
#include "entgrav/special_functions.hpp"

namespace entgrav {

/// Coupling constant sigma of the entropic model, or the conservative
/// (sigma -> infinity) marker. Conservative mode is never encoded as a large
/// float.
class Coupling {
 public:
  static Coupling conservative() { return Coupling(); }
  /// Throws std::invalid_argument unless sigma is positive and finite.
  static Coupling finite(double sigma);
  /// Accepts "inf"/"infinity"/"conservative" or a positive number.
  static Coupling parse(std::string_view text);

  bool is_conservative() const { return conservative_; }
  /// Finite sigma; throws std::logic_error in conservative mode.
  double value() const;
  /// sigma as a double, +infinity in conservative mode (for sorting/output).
  double as_double() const;
  std::string to_string() const;

  friend bool operator==(const Coupling&, const Coupling&) = default;

 private:
  Coupling() = default;
  bool conservative_ = true;
  double sigma_ = 0.0;
};

/// Particle and gravity constants together with the truncated bouncer
/// eigenbasis: |E_n> has wave function Ai(x/x0 + a_{n+1}) / (sqrt(x0) N_n) and
/// energy -a_{n+1} m g x0.
struct BasisContext {
  double mass = 0.0;           // kg
  double gravity_accel = 0.0;  // m/s^2
  double hbar = constants::hbar;
  double x0 = 0.0;            // m
  double energy_scale = 0.0;  // J, m g x0
  double time_scale = 0.0;    // s, hbar / (m g x0)
  std::size_t n_states = 0;
  AiryZeroTable zeros;
  std::vector<double> norms;  // N_j
  QuadratureScheme scheme;

  /// Eigenenergy E_n in joules.
  double energy(std::size_t n) const { return -zeros[n] * energy_scale; }
  /// Angular transition frequency (E_j - E_k)/hbar in rad/s.
  double transition_frequency(std::size_t j, std::size_t k) const {
    return (energy(j) - energy(k)) / hbar;
  }
  /// Converts a duration in seconds to unitless time tau.
  double to_tau(double seconds) const { return seconds / time_scale; }
};

inline constexpr std::size_t default_n_states = 20;
inline constexpr std::size_t max_n_states = 50;

/// Builds the context for a particle of the given mass in gravity g.
/// Throws std::invalid_argument for nonpositive inputs or n_states outside
/// [1, 50].
BasisContext build_context(double mass, double gravity_accel = constants::standard_gravity,
                           std::size_t n_states = default_n_states);

/// Neutron in standard gravity with the default 20-state basis.
BasisContext neutron_context(std::size_t n_states = default_n_states);

/// Unitless operator matrices in the bouncer eigenbasis.
struct OperatorSet {
  Eigen::VectorXd energies;             // -a_{j+1}
  Eigen::MatrixXd h;                    // kinetic + boundary: diag(-a) - xi
  Eigen::MatrixXd xi;                   // x / x0
  Eigen::MatrixXd drive_integral;       // int Ai_j d/dxi Ai_k / (N_j N_k)
  Eigen::MatrixXcd dissipator_d;        // <E_j| exp(-i xi / sigma) |E_k>
  Eigen::MatrixXcd dissipator_offset;   // dissipator_d - identity, integrated directly
  Eigen::MatrixXcd momentum;            // p in units hbar / x0
  Eigen::MatrixXd boundary_curvature;   // delta''_jk
  Coupling sigma = Coupling::conservative();

  std::size_t size() const { return static_cast<std::size_t>(h.rows()); }
};

/// Fills every matrix from overlap integrals divided by N_j N_k. In
/// conservative mode the dissipator is the identity (offset zero).
OperatorSet build_operators(const BasisContext& ctx, Coupling sigma);

/// (4 m / (hbar g))^(1/3), converting the drive strength a*omega [m/s] into the
/// unitless amplitude of the accelerating-frame term.
double drive_prefactor(const BasisContext& ctx);

/// Real scalar c(tau) such that the unitless drive matrix is i c(tau) W, with
/// W = drive_integral: (4m/(hbar g))^(1/3) * strength * cos(omega t), t = tau
/// time_scale. Throws for negative strength or nonpositive omega.
double drive_coefficient(const BasisContext& ctx, double strength, double omega, double tau);

/// Context for mass kappa*m together with the time ratio kappa^(-1/3) that maps
/// decoherence times of the original mass onto the new one.
std::pair<BasisContext, double> mass_scaled_context(const BasisContext& ctx, double kappa);

}  // namespace entgrav
