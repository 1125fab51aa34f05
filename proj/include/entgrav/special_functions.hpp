#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace entgrav {

/// Airy function Ai(x).
///
/// Evaluation regimes (chosen so each is accurate to ~1e-12 relative, or
/// absolute near the zeros on the negative axis):
///   x < -7.5         oscillatory asymptotic expansion
///   -7.5 <= x <= 2   Maclaurin series summed in extended precision
///   2 < x <= 8       Ai(x) = sqrt(x/3) K_{1/3}(zeta) / pi, with K evaluated by
///                    trapezoidal quadrature of its cosh integral
///   x > 8            exponentially decaying asymptotic expansion
/// Throws std::domain_error on non-finite input.
double airy_ai(double x);

/// Derivative Ai'(x); same regimes and accuracy as airy_ai.
double airy_ai_prime(double x);

/// Value and derivative evaluated together (shares the regime work).
struct AiryValue {
  double ai;
  double ai_prime;
};
AiryValue airy_ai_both(double x);

/// Regime boundaries of airy_ai, exposed for seam-continuity tests.
namespace airy_regime {
inline constexpr double negative_asymptotic = -7.5;
inline constexpr double series_upper = 2.0;
inline constexpr double positive_asymptotic = 8.0;
}  // namespace airy_regime

/// The first n zeros a_1 > a_2 > ... > a_n of Ai on the negative axis.
class AiryZeroTable {
 public:
  explicit AiryZeroTable(std::vector<double> zeros);

  std::size_t count() const { return zeros_.size(); }
  double operator[](std::size_t k) const { return zeros_[k]; }
  std::span<const double> zeros() const { return zeros_; }

 private:
  std::vector<double> zeros_;
};

/// Computes the first n zeros of Ai. Each zero is seeded by the asymptotic
/// estimate -(3 pi (4k-1)/8)^(2/3), bracketed, and polished by a safeguarded
/// Newton iteration until Ai(a_k) vanishes to 1e-12.
/// Throws std::invalid_argument for n == 0 and std::runtime_error if a
/// bracket does not contain a sign change.
AiryZeroTable airy_zeros(std::size_t n);

/// Composite Gauss-Legendre rule on [0, xi_max].
class QuadratureScheme {
 public:
  static constexpr double default_xi_max = 40.0;
  static constexpr std::size_t default_panel_count = 40;
  static constexpr std::size_t default_nodes_per_panel = 32;

  QuadratureScheme(double xi_max = default_xi_max,
                   std::size_t panel_count = default_panel_count,
                   std::size_t nodes_per_panel = default_nodes_per_panel);

  /// Smallest default-resolution scheme whose cutoff decays every Airy tail
  /// of the table below 1e-15. Equals the default scheme for n <= 20.
  static QuadratureScheme for_zeros(const AiryZeroTable& zeros);

  double xi_max() const { return xi_max_; }
  std::size_t panel_count() const { return panel_count_; }
  std::size_t nodes_per_panel() const { return nodes_per_panel_; }
  std::span<const double> nodes() const { return nodes_; }
  std::span<const double> weights() const { return weights_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  double xi_max_;
  std::size_t panel_count_;
  std::size_t nodes_per_panel_;
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

/// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(std::size_t n, std::vector<double>& nodes, std::vector<double>& weights);

/// Selects the weight f(xi) and the right-hand factor g of an overlap integral
///   integral_0^xi_max f(xi) Ai(xi + a_{j+1}) g(xi + a_{k+1}) dxi.
struct OverlapWeight {
  enum class Kind {
    one,             // f = 1, g = Ai
    xi,              // f = xi, g = Ai
    exp_phase,       // f = exp(-i xi / sigma), g = Ai
    exp_phase_offset,// f = exp(-i xi / sigma) - 1, g = Ai (cancellation-free D - I)
    ai_derivative,   // f = 1, g = Ai'
  };

  Kind kind = Kind::one;
  double sigma = 0.0;

  static OverlapWeight one() { return {Kind::one, 0.0}; }
  static OverlapWeight xi() { return {Kind::xi, 0.0}; }
  static OverlapWeight exp_phase(double sigma) { return {Kind::exp_phase, sigma}; }
  static OverlapWeight exp_phase_offset(double sigma) { return {Kind::exp_phase_offset, sigma}; }
  static OverlapWeight ai_derivative() { return {Kind::ai_derivative, 0.0}; }
};

/// Tail magnitude |Ai(xi_max + a_{j+1})| below which a scheme is accepted.
inline constexpr double overlap_tail_tolerance = 1e-15;

/// Throws std::invalid_argument if the cutoff of `scheme` leaves the Airy tail
/// of state j above overlap_tail_tolerance.
void require_tail_decay(const AiryZeroTable& zeros, const QuadratureScheme& scheme, std::size_t j);

/// Overlap integral of two shifted Airy functions (unnormalized). Real weights
/// return an exactly zero imaginary part.
std::complex<double> airy_overlap(std::size_t j, std::size_t k, OverlapWeight weight,
                                  const AiryZeroTable& zeros, const QuadratureScheme& scheme);

}  // namespace entgrav
