#include "entgrav/special_functions.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "entgrav/constants.hpp"

namespace entgrav {
namespace {

using constants::pi;

constexpr long double ai_at_zero = 0.355028053887817239260063186004183176L;
constexpr long double minus_ai_prime_at_zero = 0.258819403792806798405183560189203963L;

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw std::domain_error(std::string(what) + ": argument must be finite");
  }
}

// Ai = c1 f - c2 g, Ai' = c1 f' - c2 g'.
AiryValue airy_series(double xd) {
  const long double x = xd;
  const long double x3 = x * x * x;
  constexpr long double eps = std::numeric_limits<long double>::epsilon();

  long double f = 1.0L, t = 1.0L;        // f terms: x^{3k}
  long double g = x, s = x;              // g terms: x^{3k+1}
  long double fp = 0.0L, b = x * x / 2;  // f' terms: x^{3k-1}, k >= 1
  long double gp = 1.0L, e = 1.0L;       // g' terms: x^{3k}
  fp = b;
  for (int k = 1; k < 200; ++k) {
    const long double k3 = 3.0L * k;
    t *= x3 / ((k3 - 1) * k3);
    s *= x3 / (k3 * (k3 + 1));
    e *= x3 / (k3 * (k3 - 2));
    f += t;
    g += s;
    gp += e;
    if (k >= 2) {
      b *= x3 / ((k3 - 1) * (k3 - 3));
      fp += b;
    }
    const long double tail = std::fabs(t) + std::fabs(s) + std::fabs(e) + std::fabs(b);
    const long double scale = std::fabs(f) + std::fabs(g) + std::fabs(fp) + std::fabs(gp);
    if (k > 2 && tail <= eps * scale) break;
  }
  return {static_cast<double>(ai_at_zero * f - minus_ai_prime_at_zero * g),
          static_cast<double>(ai_at_zero * fp - minus_ai_prime_at_zero * gp)};
}

// Sums sum_k (-1)^k c_k / zeta^k for the u (value) and v (derivative)
// coefficient sequences, stopping at the smallest term. When `split` is set
// the even and odd parts are returned separately (oscillatory expansion).
struct AsymptoticSums {
  double u_even = 0, u_odd = 0, v_even = 0, v_odd = 0;
};

AsymptoticSums asymptotic_sums(double zeta, bool alternate_pairs) {
  AsymptoticSums out;
  double u = 1.0, v = 1.0, zk = 1.0;
  double last_u = std::numeric_limits<double>::infinity();
  double last_v = std::numeric_limits<double>::infinity();
  bool u_done = false, v_done = false;
  for (int k = 0; k < 60 && !(u_done && v_done); ++k) {
    if (k > 0) {
      u *= (6.0 * k - 5) * (6.0 * k - 3) * (6.0 * k - 1) / ((2.0 * k - 1) * 216.0 * k);
      v = -(6.0 * k + 1) / (6.0 * k - 1) * u;
      zk *= zeta;
    }
    // Oscillatory sums use (-1)^floor(k/2) within each parity; the
    // exponentially decaying sums use (-1)^k.
    const double sign = alternate_pairs ? (((k / 2) % 2) ? -1.0 : 1.0) : ((k % 2) ? -1.0 : 1.0);
    const double tu = sign * u / zk;
    const double tv = sign * v / zk;
    const bool odd = k % 2;
    if (!u_done) {
      if (std::fabs(tu) >= last_u) {
        u_done = true;
      } else {
        (odd ? out.u_odd : out.u_even) += tu;
        last_u = std::fabs(tu);
        if (last_u < 1e-18) u_done = true;
      }
    }
    if (!v_done) {
      if (std::fabs(tv) >= last_v) {
        v_done = true;
      } else {
        (odd ? out.v_odd : out.v_even) += tv;
        last_v = std::fabs(tv);
        if (last_v < 1e-18) v_done = true;
      }
    }
  }
  return out;
}

AiryValue airy_negative_asymptotic(double x) {
  const double z = -x;
  const double zeta = 2.0 / 3.0 * z * std::sqrt(z);
  const AsymptoticSums s = asymptotic_sums(zeta, true);
  const double theta = zeta - pi / 4;
  const double c = std::cos(theta), sn = std::sin(theta);
  const double z14 = std::sqrt(std::sqrt(z));
  const double root_pi = std::sqrt(pi);
  return {(c * s.u_even + sn * s.u_odd) / (root_pi * z14),
          z14 / root_pi * (sn * s.v_even - c * s.v_odd)};
}

AiryValue airy_positive_asymptotic(double x) {
  const double zeta = 2.0 / 3.0 * x * std::sqrt(x);
  const AsymptoticSums s = asymptotic_sums(zeta, false);
  const double decay = std::exp(-zeta) / (2.0 * std::sqrt(pi));
  const double x14 = std::sqrt(std::sqrt(x));
  return {decay / x14 * (s.u_even + s.u_odd), -decay * x14 * (s.v_even + s.v_odd)};
}

// K_nu(zeta) e^{zeta} = int_0^inf exp(-zeta (cosh t - 1)) cosh(nu t) dt by the
// trapezoidal rule, which converges geometrically for this analytic integrand.
AiryValue airy_bessel_k(double x) {
  const double zeta = 2.0 / 3.0 * x * std::sqrt(x);
  constexpr double h = 0.125;
  double k13 = 0.5, k23 = 0.5;
  for (int i = 1; i < 2000; ++i) {
    const double t = i * h;
    const double damp = std::exp(-zeta * (std::cosh(t) - 1.0));
    k13 += damp * std::cosh(t / 3.0);
    k23 += damp * std::cosh(2.0 * t / 3.0);
    if (damp < 1e-20) break;
  }
  const double scale = h * std::exp(-zeta) / pi;
  return {std::sqrt(x / 3.0) * k13 * scale, -x / std::sqrt(3.0) * k23 * scale};
}

}  // namespace

AiryValue airy_ai_both(double x) {
  require_finite(x, "airy_ai");
  if (x < airy_regime::negative_asymptotic) return airy_negative_asymptotic(x);
  if (x <= airy_regime::series_upper) return airy_series(x);
  if (x <= airy_regime::positive_asymptotic) return airy_bessel_k(x);
  return airy_positive_asymptotic(x);
}

double airy_ai(double x) { return airy_ai_both(x).ai; }

double airy_ai_prime(double x) {
  require_finite(x, "airy_ai_prime");
  return airy_ai_both(x).ai_prime;
}

AiryZeroTable::AiryZeroTable(std::vector<double> zeros) : zeros_(std::move(zeros)) {
  if (zeros_.empty()) throw std::invalid_argument("AiryZeroTable: empty zero list");
  for (std::size_t k = 0; k < zeros_.size(); ++k) {
    if (!(zeros_[k] < 0.0)) throw std::invalid_argument("AiryZeroTable: zeros must be negative");
    if (k > 0 && !(zeros_[k] < zeros_[k - 1])) {
      throw std::invalid_argument("AiryZeroTable: zeros must be strictly decreasing");
    }
  }
}

AiryZeroTable airy_zeros(std::size_t n) {
  if (n == 0) throw std::invalid_argument("airy_zeros: n must be positive");
  std::vector<double> zeros;
  zeros.reserve(n);
  for (std::size_t k = 1; k <= n; ++k) {
    const double t = 3.0 * pi * (4.0 * static_cast<double>(k) - 1.0) / 8.0;
    const double seed = -std::pow(t, 2.0 / 3.0);
    // A quarter of the local zero spacing pi/sqrt|a|.
    const double half_width = 0.25 * pi / std::sqrt(-seed);
    double lo = seed - half_width, hi = seed + half_width;
    double f_lo = airy_ai(lo), f_hi = airy_ai(hi);
    if (f_lo * f_hi > 0.0) {
      throw std::runtime_error("airy_zeros: bracket around zero " + std::to_string(k) +
                               " has no sign change");
    }
    double x = seed;
    for (int iter = 0; iter < 100; ++iter) {
      const AiryValue v = airy_ai_both(x);
      if (v.ai == 0.0) break;
      if ((v.ai < 0.0) == (f_lo < 0.0)) {
        lo = x;
        f_lo = v.ai;
      } else {
        hi = x;
        f_hi = v.ai;
      }
      double next = x - v.ai / v.ai_prime;
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      const double step = std::fabs(next - x);
      x = next;
      if (step < 1e-15 * std::fabs(x)) break;
    }
    if (std::fabs(airy_ai(x)) > 1e-12) {
      throw std::runtime_error("airy_zeros: zero " + std::to_string(k) + " failed to converge");
    }
    zeros.push_back(x);
  }
  return AiryZeroTable(std::move(zeros));
}

void gauss_legendre(std::size_t n, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.assign(n, 0.0);
  weights.assign(n, 0.0);
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (std::size_t m = 2; m <= n; ++m) {
        const double p2 = ((2.0 * m - 1.0) * x * p1 - (m - 1.0) * p0) / static_cast<double>(m);
        p0 = p1;
        p1 = p2;
      }
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::fabs(dx) < 1e-16) break;
    }
    // Recompute the derivative at the converged node for the weight.
    double p0 = 1.0, p1 = x;
    for (std::size_t m = 2; m <= n; ++m) {
      const double p2 = ((2.0 * m - 1.0) * x * p1 - (m - 1.0) * p0) / static_cast<double>(m);
      p0 = p1;
      p1 = p2;
    }
    dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    nodes[i] = -x;
    nodes[n - 1 - i] = x;
    weights[i] = w;
    weights[n - 1 - i] = w;
  }
}

QuadratureScheme::QuadratureScheme(double xi_max, std::size_t panel_count,
                                   std::size_t nodes_per_panel)
    : xi_max_(xi_max), panel_count_(panel_count), nodes_per_panel_(nodes_per_panel) {
  if (!(xi_max > 0.0) || !std::isfinite(xi_max)) {
    throw std::invalid_argument("QuadratureScheme: xi_max must be positive and finite");
  }
  if (panel_count == 0 || nodes_per_panel == 0) {
    throw std::invalid_argument("QuadratureScheme: panel and node counts must be positive");
  }
  std::vector<double> ref_nodes, ref_weights;
  gauss_legendre(nodes_per_panel, ref_nodes, ref_weights);
  const double width = xi_max / static_cast<double>(panel_count);
  nodes_.reserve(panel_count * nodes_per_panel);
  weights_.reserve(panel_count * nodes_per_panel);
  for (std::size_t p = 0; p < panel_count; ++p) {
    const double mid = (static_cast<double>(p) + 0.5) * width;
    for (std::size_t i = 0; i < nodes_per_panel; ++i) {
      nodes_.push_back(mid + 0.5 * width * ref_nodes[i]);
      weights_.push_back(0.5 * width * ref_weights[i]);
    }
  }
}

QuadratureScheme QuadratureScheme::for_zeros(const AiryZeroTable& zeros) {
  // Ai(y) < 1e-16 for y >= 15; keep roughly unit-width panels.
  const double deepest = -zeros[zeros.count() - 1];
  const double xi_max = std::max(default_xi_max, std::ceil(deepest + 15.0));
  const auto panels = static_cast<std::size_t>(std::ceil(xi_max / default_xi_max *
                                                         static_cast<double>(default_panel_count)));
  return QuadratureScheme(xi_max, panels, default_nodes_per_panel);
}

void require_tail_decay(const AiryZeroTable& zeros, const QuadratureScheme& scheme, std::size_t j) {
  if (j >= zeros.count()) throw std::out_of_range("airy overlap: state index out of range");
  const double tail = std::fabs(airy_ai(scheme.xi_max() + zeros[j]));
  if (tail > overlap_tail_tolerance) {
    throw std::invalid_argument("airy overlap: xi_max = " + std::to_string(scheme.xi_max()) +
                                " leaves Airy tail of state " + std::to_string(j) +
                                " undecayed (|Ai| = " + std::to_string(tail) + ")");
  }
}

std::complex<double> airy_overlap(std::size_t j, std::size_t k, OverlapWeight weight,
                                  const AiryZeroTable& zeros, const QuadratureScheme& scheme) {
  require_tail_decay(zeros, scheme, j);
  require_tail_decay(zeros, scheme, k);
  const bool phased = weight.kind == OverlapWeight::Kind::exp_phase ||
                      weight.kind == OverlapWeight::Kind::exp_phase_offset;
  if (phased && !(weight.sigma > 0.0)) {
    throw std::invalid_argument("airy_overlap: exp_phase weight needs sigma > 0");
  }
  const auto nodes = scheme.nodes();
  const auto weights = scheme.weights();
  double re = 0.0, im = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double xi = nodes[i];
    const double left = airy_ai(xi + zeros[j]);
    const double right = weight.kind == OverlapWeight::Kind::ai_derivative
                             ? airy_ai_prime(xi + zeros[k])
                             : airy_ai(xi + zeros[k]);
    const double base = weights[i] * left * right;
    switch (weight.kind) {
      case OverlapWeight::Kind::one:
      case OverlapWeight::Kind::ai_derivative:
        re += base;
        break;
      case OverlapWeight::Kind::xi:
        re += base * xi;
        break;
      case OverlapWeight::Kind::exp_phase: {
        const double theta = xi / weight.sigma;
        re += base * std::cos(theta);
        im -= base * std::sin(theta);
        break;
      }
      case OverlapWeight::Kind::exp_phase_offset: {
        const double theta = xi / weight.sigma;
        const double half = std::sin(0.5 * theta);
        re -= base * 2.0 * half * half;
        im -= base * std::sin(theta);
        break;
      }
    }
  }
  return {re, im};
}

}  // namespace entgrav
