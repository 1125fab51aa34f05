#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <boost/math/special_functions/airy.hpp>
#include <cmath>
#include <limits>
#include <random>

#include "entgrav/constants.hpp"
#include "entgrav/special_functions.hpp"

using namespace entgrav;

namespace {

// Scale of Ai on the oscillatory side, |x|^(-1/4) / sqrt(pi); absolute
// errors are judged against it there.
double amplitude(double x) { return x < 0 ? std::pow(-x, -0.25) / std::sqrt(constants::pi) : 1.0; }

}  // namespace

TEST_CASE("Ai and Ai' agree with Boost across every regime") {
  double worst_ai = 0.0, worst_aip = 0.0;
  for (double x = -40.0; x <= 8.0; x += 0.0137) {
    const double ai = boost::math::airy_ai(x), aip = boost::math::airy_ai_prime(x);
    const AiryValue v = airy_ai_both(x);
    worst_ai = std::max(worst_ai, std::fabs(v.ai - ai) / amplitude(x));
    worst_aip = std::max(worst_aip, std::fabs(v.ai_prime - aip) / (amplitude(x) * std::sqrt(std::fabs(x) + 1.0)));
    CHECK(airy_ai(x) == v.ai);
    CHECK(airy_ai_prime(x) == v.ai_prime);
  }
  CHECK(worst_ai < 1e-12);
  CHECK(worst_aip < 1e-12);
}

TEST_CASE("Ai is relatively accurate on the decaying side") {
  for (double x = 0.0; x <= 80.0; x += 0.173) {
    const double ai = boost::math::airy_ai(x), aip = boost::math::airy_ai_prime(x);
    CHECK(std::fabs(airy_ai(x) / ai - 1.0) < 1e-12);
    CHECK(std::fabs(airy_ai_prime(x) / aip - 1.0) < 1e-12);
  }
}

TEST_CASE("Reference values") {
  // Ai(0) = 3^(-2/3) / Gamma(2/3), Ai'(0) = -3^(-1/3) / Gamma(1/3)
  CHECK(airy_ai(0.0) == doctest::Approx(std::pow(3.0, -2.0 / 3.0) / std::tgamma(2.0 / 3.0)).epsilon(1e-15));
  CHECK(airy_ai_prime(0.0) == doctest::Approx(-std::pow(3.0, -1.0 / 3.0) / std::tgamma(1.0 / 3.0)).epsilon(1e-15));
}

TEST_CASE("Wronskian with Boost Bi") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-30.0, 5.0);
  for (int i = 0; i < 200; ++i) {
    const double x = u(rng);
    const AiryValue v = airy_ai_both(x);
    const double w = v.ai * boost::math::airy_bi_prime(x) - v.ai_prime * boost::math::airy_bi(x);
    CHECK(std::fabs(w * constants::pi - 1.0) < 1e-11 * (1.0 + std::sqrt(std::fabs(x))));
  }
}

TEST_CASE("Regime seams are continuous") {
  for (double seam : {airy_regime::negative_asymptotic, airy_regime::series_upper, airy_regime::positive_asymptotic}) {
    const double below = std::nextafter(seam, -1e9), above = std::nextafter(seam, 1e9);
    const double scale = std::fabs(airy_ai(seam)) + 1e-300;
    CHECK(std::fabs(airy_ai(below) - airy_ai(above)) / scale < 1e-12);
    CHECK(std::fabs(airy_ai_prime(below) - airy_ai_prime(above)) / std::fabs(airy_ai_prime(seam)) < 1e-12);
  }
}

TEST_CASE("Non-finite input is rejected") {
  CHECK_THROWS_AS(airy_ai(std::numeric_limits<double>::quiet_NaN()), std::domain_error);
  CHECK_THROWS_AS(airy_ai_prime(std::numeric_limits<double>::infinity()), std::domain_error);
}

TEST_CASE("Zeros match Boost and are strictly decreasing") {
  const AiryZeroTable zeros = airy_zeros(60);
  REQUIRE(zeros.count() == 60);
  CHECK(zeros[0] == doctest::Approx(-2.338107410459767).epsilon(1e-14));
  for (std::size_t k = 0; k < zeros.count(); ++k) {
    const double ref = boost::math::airy_ai_zero<double>(static_cast<int>(k + 1));
    CHECK(std::fabs(zeros[k] - ref) < 1e-13 * std::fabs(ref));
    CHECK(std::fabs(airy_ai(zeros[k])) < 1e-12);
    if (k > 0) CHECK(zeros[k] < zeros[k - 1]);
  }
}

TEST_CASE("Zero table validation") {
  CHECK_THROWS_AS(airy_zeros(0), std::invalid_argument);
  CHECK_THROWS_AS(AiryZeroTable({-1.0, -0.5}), std::invalid_argument);
  CHECK_THROWS_AS(AiryZeroTable({0.5}), std::invalid_argument);
}

TEST_CASE("Gauss-Legendre integrates polynomials exactly") {
  std::vector<double> x, w;
  gauss_legendre(8, x, w);
  double sum = 0.0;
  for (double wi : w) sum += wi;
  CHECK(sum == doctest::Approx(2.0).epsilon(1e-15));
  for (int p = 0; p <= 15; ++p) {
    double integral = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) integral += w[i] * std::pow(x[i], p);
    const double exact = p % 2 ? 0.0 : 2.0 / (p + 1);
    CHECK(std::fabs(integral - exact) < 1e-14);
  }
}

TEST_CASE("Composite rule covers [0, xi_max]") {
  const QuadratureScheme q(10.0, 5, 16);
  CHECK(q.size() == 80);
  double sum = 0.0, cube = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    sum += q.weights()[i];
    cube += q.weights()[i] * std::pow(q.nodes()[i], 3);
  }
  CHECK(sum == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(cube == doctest::Approx(2500.0).epsilon(1e-14));
  CHECK_THROWS(QuadratureScheme(-1.0));
  CHECK_THROWS(QuadratureScheme(10.0, 0));
}

TEST_CASE("Scheme widening for many states") {
  const auto small = QuadratureScheme::for_zeros(airy_zeros(20));
  CHECK(small.xi_max() == QuadratureScheme::default_xi_max);
  const auto zeros = airy_zeros(50);
  const auto wide = QuadratureScheme::for_zeros(zeros);
  CHECK(wide.xi_max() > QuadratureScheme::default_xi_max);
  for (std::size_t j = 0; j < zeros.count(); ++j) CHECK_NOTHROW(require_tail_decay(zeros, wide, j));
  CHECK_THROWS_AS(require_tail_decay(zeros, small, 49), std::invalid_argument);
}

TEST_CASE("Overlap closed forms") {
  const AiryZeroTable zeros = airy_zeros(20);
  const QuadratureScheme q = QuadratureScheme::for_zeros(zeros);
  for (std::size_t j = 0; j < 20; ++j) {
    const double d = airy_ai_prime(zeros[j]);
    // int Ai(x + a)^2 = Ai'(a)^2 and int x Ai(x + a)^2 = -(2/3) a Ai'(a)^2
    CHECK(airy_overlap(j, j, OverlapWeight::one(), zeros, q).real() == doctest::Approx(d * d).epsilon(1e-12));
    CHECK(airy_overlap(j, j, OverlapWeight::xi(), zeros, q).real() ==
          doctest::Approx(-2.0 / 3.0 * zeros[j] * d * d).epsilon(1e-12));
    // int Ai Ai' over the half line = -Ai(a)^2 / 2 = 0
    CHECK(std::fabs(airy_overlap(j, j, OverlapWeight::ai_derivative(), zeros, q).real()) < 1e-13);
    for (std::size_t k = 0; k < 20; ++k) {
      if (k == j) continue;
      CHECK(std::fabs(airy_overlap(j, k, OverlapWeight::one(), zeros, q).real()) < 1e-13);
      const double dk = airy_ai_prime(zeros[k]);
      const double gap = zeros[j] - zeros[k];
      CHECK(airy_overlap(j, k, OverlapWeight::xi(), zeros, q).real() ==
            doctest::Approx(-2.0 * d * dk / (gap * gap)).epsilon(1e-11));
    }
  }
}

TEST_CASE("Phase-weighted overlaps") {
  const AiryZeroTable zeros = airy_zeros(10);
  const QuadratureScheme q;
  // Real weights give exactly zero imaginary parts.
  CHECK(airy_overlap(1, 3, OverlapWeight::xi(), zeros, q).imag() == 0.0);
  for (double sigma : {10.0, 500.0, 1e6}) {
    for (std::size_t j = 0; j < 5; ++j) {
      for (std::size_t k = 0; k < 5; ++k) {
        const auto full = airy_overlap(j, k, OverlapWeight::exp_phase(sigma), zeros, q);
        const auto offset = airy_overlap(j, k, OverlapWeight::exp_phase_offset(sigma), zeros, q);
        const double one = airy_overlap(j, k, OverlapWeight::one(), zeros, q).real();
        CHECK(std::abs(full - (offset + one)) < 1e-13);
        // First order in 1/sigma: -i xi_jk / sigma
        const double xi = airy_overlap(j, k, OverlapWeight::xi(), zeros, q).real();
        CHECK(std::fabs(offset.imag() + xi / sigma) < 50.0 / (sigma * sigma) + 1e-15);
      }
    }
  }
  CHECK_THROWS(airy_overlap(0, 0, OverlapWeight::exp_phase(0.0), zeros, q));
  CHECK_THROWS(airy_overlap(0, 10, OverlapWeight::one(), zeros, q));
}
