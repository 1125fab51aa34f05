#include "entgrav/bouncer_basis.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace entgrav {

Coupling Coupling::finite(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("sigma must be positive and finite (use conservative mode for infinity)");
  }
  Coupling c;
  c.conservative_ = false;
  c.sigma_ = sigma;
  return c;
}

Coupling Coupling::parse(std::string_view text) {
  if (text == "inf" || text == "infinity" || text == "conservative" || text == "Inf") {
    return conservative();
  }
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, value);
  if (res.ec != std::errc() || res.ptr != end) {
    throw std::invalid_argument("cannot parse sigma from '" + std::string(text) + "'");
  }
  if (std::isinf(value) && value > 0) return conservative();
  return finite(value);
}

double Coupling::value() const {
  if (conservative_) throw std::logic_error("conservative coupling has no finite sigma");
  return sigma_;
}

double Coupling::as_double() const {
  return conservative_ ? std::numeric_limits<double>::infinity() : sigma_;
}

std::string Coupling::to_string() const {
  if (conservative_) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", sigma_);
  return buf;
}

BasisContext build_context(double mass, double gravity_accel, std::size_t n_states) {
  if (!(mass > 0.0) || !std::isfinite(mass)) throw std::invalid_argument("mass must be positive");
  if (!(gravity_accel > 0.0) || !std::isfinite(gravity_accel)) {
    throw std::invalid_argument("gravity_accel must be positive");
  }
  if (n_states < 1 || n_states > max_n_states) {
    throw std::invalid_argument("n_states must lie in [1, 50]");
  }
  const double hbar = constants::hbar;
  const double x0 = std::cbrt(hbar * hbar / (2.0 * mass * mass * gravity_accel));
  const double energy_scale = mass * gravity_accel * x0;

  AiryZeroTable zeros = airy_zeros(n_states);
  QuadratureScheme scheme = QuadratureScheme::for_zeros(zeros);
  std::vector<double> norms(n_states);
  for (std::size_t j = 0; j < n_states; ++j) {
    norms[j] = std::sqrt(airy_overlap(j, j, OverlapWeight::one(), zeros, scheme).real());
  }
  return BasisContext{mass,  gravity_accel, hbar, x0, energy_scale, hbar / energy_scale,
                      n_states, std::move(zeros), std::move(norms), std::move(scheme)};
}

BasisContext neutron_context(std::size_t n_states) {
  return build_context(constants::neutron_mass, constants::standard_gravity, n_states);
}

OperatorSet build_operators(const BasisContext& ctx, Coupling sigma) {
  const auto n = static_cast<Eigen::Index>(ctx.n_states);
  for (std::size_t j = 0; j < ctx.n_states; ++j) require_tail_decay(ctx.zeros, ctx.scheme, j);

  const auto nodes = ctx.scheme.nodes();
  const auto weights = ctx.scheme.weights();
  const auto m = static_cast<Eigen::Index>(nodes.size());

  // Normalized samples phi_j(xi) = Ai(xi + a_{j+1}) / N_j and their derivatives.
  Eigen::MatrixXd phi(m, n), dphi(m, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double a = ctx.zeros[static_cast<std::size_t>(j)];
    const double inv_norm = 1.0 / ctx.norms[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < m; ++i) {
      const AiryValue v = airy_ai_both(nodes[static_cast<std::size_t>(i)] + a);
      phi(i, j) = v.ai * inv_norm;
      dphi(i, j) = v.ai_prime * inv_norm;
    }
  }
  const Eigen::Map<const Eigen::VectorXd> w(weights.data(), m);
  const Eigen::Map<const Eigen::VectorXd> x(nodes.data(), m);

  OperatorSet ops;
  ops.sigma = sigma;
  ops.energies.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) ops.energies(j) = -ctx.zeros[static_cast<std::size_t>(j)];

  const Eigen::MatrixXd weighted = w.asDiagonal() * phi;
  Eigen::MatrixXd xi = weighted.transpose() * (x.asDiagonal() * phi);
  ops.xi = 0.5 * (xi + xi.transpose());
  ops.h = -ops.xi;
  ops.h.diagonal() += ops.energies;

  Eigen::MatrixXd drive = weighted.transpose() * dphi;
  ops.drive_integral = 0.5 * (drive - drive.transpose());
  ops.momentum = std::complex<double>(0.0, -1.0) * ops.drive_integral.cast<std::complex<double>>();

  ops.boundary_curvature.resize(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index k = 0; k < n; ++k) {
      ops.boundary_curvature(j, k) =
          airy_ai_prime(ctx.zeros[static_cast<std::size_t>(j)]) *
          airy_ai_prime(ctx.zeros[static_cast<std::size_t>(k)]) /
          (ctx.norms[static_cast<std::size_t>(j)] * ctx.norms[static_cast<std::size_t>(k)]);
    }
  }

  if (sigma.is_conservative()) {
    ops.dissipator_offset = Eigen::MatrixXcd::Zero(n, n);
  } else {
    // exp(-i theta) - 1 = -2 sin^2(theta/2) - i sin(theta), free of cancellation.
    const double s = sigma.value();
    Eigen::VectorXd re(m), im(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double theta = x(i) / s;
      const double half = std::sin(0.5 * theta);
      re(i) = -2.0 * half * half * w(i);
      im(i) = -std::sin(theta) * w(i);
    }
    const Eigen::MatrixXd offset_re = phi.transpose() * (re.asDiagonal() * phi);
    const Eigen::MatrixXd offset_im = phi.transpose() * (im.asDiagonal() * phi);
    Eigen::MatrixXcd offset(n, n);
    offset.real() = 0.5 * (offset_re + offset_re.transpose());
    offset.imag() = 0.5 * (offset_im + offset_im.transpose());
    ops.dissipator_offset = offset;
  }
  ops.dissipator_d = ops.dissipator_offset;
  ops.dissipator_d.diagonal().array() += 1.0;
  return ops;
}

double drive_prefactor(const BasisContext& ctx) {
  return std::cbrt(4.0 * ctx.mass / (ctx.hbar * ctx.gravity_accel));
}

double drive_coefficient(const BasisContext& ctx, double strength, double omega, double tau) {
  if (!(strength >= 0.0) || !std::isfinite(strength)) {
    throw std::invalid_argument("drive strength must be nonnegative");
  }
  if (!(omega > 0.0) || !std::isfinite(omega)) throw std::invalid_argument("drive omega must be positive");
  return drive_prefactor(ctx) * strength * std::cos(omega * tau * ctx.time_scale);
}

std::pair<BasisContext, double> mass_scaled_context(const BasisContext& ctx, double kappa) {
  if (!(kappa > 0.0) || !std::isfinite(kappa)) throw std::invalid_argument("kappa must be positive");
  return {build_context(ctx.mass * kappa, ctx.gravity_accel, ctx.n_states), std::cbrt(1.0 / kappa)};
}

}  // namespace entgrav
