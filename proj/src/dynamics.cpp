#include "entgrav/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

namespace entgrav {
namespace {

using cd = std::complex<double>;
constexpr cd minus_i{0.0, -1.0};

void require_same_size(const OperatorSet& ops, const DensityMatrix& rho) {
  if (rho.size() != ops.size()) {
    throw std::invalid_argument("density matrix dimension " + std::to_string(rho.size()) +
                                " does not match operator dimension " + std::to_string(ops.size()));
  }
}

// Right-hand side specialised to Hermitian states: [H, rho] = K - K^dagger
// with K = H rho. Every operator is real except E = A + iB, which is complex
// symmetric, so all products reduce to two stacked real matrix products.
class Generator {
 public:
  Generator(const OperatorSet& ops, const UnitlessDrive& drive)
      : entropic_(!ops.sigma.is_conservative()),
        sigma_(entropic_ ? ops.sigma.value() : 0.0),
        drive_(drive),
        energies_(ops.energies) {
    const Eigen::Index n = energies_.size();
    n_ = n;
    if (entropic_) {
      // rows: A, B, xi, W
      stack_.resize(4 * n, n);
      stack_.middleRows(0, n) = ops.dissipator_offset.real();
      stack_.middleRows(n, n) = ops.dissipator_offset.imag();
      stack_.middleRows(2 * n, n) = ops.xi;
      stack_.middleRows(3 * n, n) = ops.drive_integral;
      offset_cols_.resize(n, 2 * n);
      offset_cols_.leftCols(n) = ops.dissipator_offset.real();
      offset_cols_.rightCols(n) = ops.dissipator_offset.imag();
      m_parts_.resize(2 * n, n);
      n_parts_.resize(2 * n, 2 * n);
    } else {
      stack_ = ops.drive_integral;
    }
    parts_.resize(n, 2 * n);
    prod_.resize(stack_.rows(), 2 * n);
    kr_.resize(n, n);
    ki_.resize(n, n);
  }

  void operator()(double tau, const Eigen::MatrixXcd& rho, Eigen::MatrixXcd& out) {
    const Eigen::Index n = n_;
    const double c = drive_.coefficient(tau);
    parts_.leftCols(n) = rho.real();
    parts_.rightCols(n) = rho.imag();
    prod_.noalias() = stack_ * parts_;
    const Eigen::Index w_row = entropic_ ? 3 * n : 0;
    // K = diag(E) rho [- xi rho] + i c W rho
    kr_.noalias() = energies_.asDiagonal() * parts_.leftCols(n);
    ki_.noalias() = energies_.asDiagonal() * parts_.rightCols(n);
    if (c != 0.0) {
      kr_ -= c * prod_.block(w_row, n, n, n);
      ki_ += c * prod_.block(w_row, 0, n, n);
    }
    if (entropic_) {
      kr_ -= prod_.block(2 * n, 0, n, n);
      ki_ -= prod_.block(2 * n, n, n, n);
    }
    // -i (K - K^dagger)
    out.real() = ki_ + ki_.transpose();
    out.imag() = kr_.transpose() - kr_;
    if (entropic_) {
      // sigma (E rho + rho E^dagger + E rho E^dagger) with M = E rho and
      // M E^dagger = M (A - iB).
      m_parts_.topRows(n) = prod_.block(0, 0, n, n) - prod_.block(n, n, n, n);
      m_parts_.bottomRows(n) = prod_.block(0, n, n, n) + prod_.block(n, 0, n, n);
      n_parts_.noalias() = m_parts_ * offset_cols_;
      const auto mr = m_parts_.topRows(n);
      const auto mi = m_parts_.bottomRows(n);
      out.real() += sigma_ * (mr + mr.transpose() + n_parts_.block(0, 0, n, n) +
                              n_parts_.block(n, n, n, n));
      out.imag() += sigma_ * (mi - mi.transpose() + n_parts_.block(n, 0, n, n) -
                              n_parts_.block(0, n, n, n));
    }
  }

 private:
  bool entropic_;
  double sigma_;
  UnitlessDrive drive_;
  Eigen::VectorXd energies_;
  Eigen::Index n_ = 0;
  Eigen::MatrixXd stack_, offset_cols_;
  Eigen::MatrixXd parts_, prod_, m_parts_, n_parts_, kr_, ki_;
};

class Rk4 {
 public:
  explicit Rk4(Generator& f, Eigen::Index n) : f_(f) {
    for (auto* m : {&k1_, &k2_, &k3_, &k4_, &tmp_}) m->resize(n, n);
  }

  void step(double t, double h, Eigen::MatrixXcd& y) {
    f_(t, y, k1_);
    tmp_ = y + (0.5 * h) * k1_;
    f_(t + 0.5 * h, tmp_, k2_);
    tmp_ = y + (0.5 * h) * k2_;
    f_(t + 0.5 * h, tmp_, k3_);
    tmp_ = y + h * k3_;
    f_(t + h, tmp_, k4_);
    y += (h / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
    tmp_ = 0.5 * (y + y.adjoint());
    y = tmp_;
  }

 private:
  Generator& f_;
  Eigen::MatrixXcd k1_, k2_, k3_, k4_, tmp_;
};

double min_eigenvalue(const Eigen::MatrixXcd& rho) {
  const Eigen::MatrixXcd herm = 0.5 * (rho + rho.adjoint());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(herm, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

void check_state(const Eigen::MatrixXcd& rho, double tau, const PropagationOptions& options) {
  const double drift = std::fabs(rho.trace().real() - 1.0);
  if (drift > options.trace_tolerance && options.on_trace_drift == TraceDriftAction::raise) {
    throw PropagationError("trace drift " + std::to_string(drift) + " exceeds tolerance " +
                           std::to_string(options.trace_tolerance) + " at tau = " +
                           std::to_string(tau));
  }
  const double lowest = min_eigenvalue(rho);
  if (lowest < options.positivity_floor) {
    throw PropagationError("minimum eigenvalue " + std::to_string(lowest) + " at tau = " +
                           std::to_string(tau) + " violates positivity");
  }
}

// Integrates on the uniform grid k*h and visits each requested time, reached
// by a single partial step from the last grid point at or before it.
template <typename Visit>
void run_grid(Generator& f, const Eigen::MatrixXcd& rho0, std::span<const double> times, double h,
              Visit&& visit) {
  const Eigen::Index n = rho0.rows();
  Rk4 rk(f, n);
  Eigen::MatrixXcd y = rho0;
  Eigen::MatrixXcd partial(n, n);
  long long k = 0;
  for (std::size_t idx = 0; idx < times.size(); ++idx) {
    const double t = times[idx];
    const auto target = static_cast<long long>(std::floor(t / h * (1.0 + 1e-14)));
    while (k < target) {
      rk.step(static_cast<double>(k) * h, h, y);
      ++k;
    }
    const double grid_t = static_cast<double>(k) * h;
    const double rest = t - grid_t;
    if (rest > 1e-12 * h) {
      partial = y;
      rk.step(grid_t, rest, partial);
      visit(idx, partial);
    } else {
      visit(idx, y);
    }
  }
}

void require_times(std::span<const double> times) {
  if (times.empty()) throw std::invalid_argument("propagation needs at least one output time");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] >= 0.0) || !std::isfinite(times[i])) {
      throw std::invalid_argument("output times must be finite and nonnegative");
    }
    if (i > 0 && times[i] < times[i - 1]) throw std::invalid_argument("output times must ascend");
  }
}

Eigen::MatrixXd collect_populations(Generator& f, const Eigen::MatrixXcd& rho0,
                                    std::span<const double> times, std::size_t keep, double h,
                                    const PropagationOptions& options,
                                    std::vector<double>& drift) {
  Eigen::MatrixXd pops(static_cast<Eigen::Index>(times.size()), static_cast<Eigen::Index>(keep));
  drift.assign(times.size(), 0.0);
  run_grid(f, rho0, times, h, [&](std::size_t idx, const Eigen::MatrixXcd& rho) {
    check_state(rho, times[idx], options);
    drift[idx] = std::fabs(rho.trace().real() - 1.0);
    for (std::size_t j = 0; j < keep; ++j) {
      pops(static_cast<Eigen::Index>(idx), static_cast<Eigen::Index>(j)) =
          rho(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)).real();
    }
  });
  return pops;
}

// Halves the step until successive refinements agree on the compared
// populations and returns the finer run.
template <typename Run, typename Key>
auto converge_step(double h, const PropagationOptions& options, Run&& run, Key&& key) {
  auto coarse = run(h);
  if (!options.validate_step) return coarse;
  for (int halving = 0; halving < options.max_halvings; ++halving) {
    h *= 0.5;
    auto fine = run(h);
    const double change = (key(fine) - key(coarse)).cwiseAbs().maxCoeff();
    if (change < options.convergence_tolerance) return fine;
    coarse = std::move(fine);
  }
  throw PropagationError("RK4 step did not converge to the population tolerance after " +
                         std::to_string(options.max_halvings) + " halvings");
}

}  // namespace

double UnitlessDrive::coefficient(double tau) const {
  return amplitude == 0.0 ? 0.0 : amplitude * std::cos(frequency * tau);
}

UnitlessDrive to_unitless(const BasisContext& ctx, const Drive& drive) {
  if (!(drive.strength >= 0.0) || !std::isfinite(drive.strength)) {
    throw std::invalid_argument("drive strength must be nonnegative");
  }
  if (!(drive.omega > 0.0) || !std::isfinite(drive.omega)) {
    throw std::invalid_argument("drive omega must be positive");
  }
  return {drive_prefactor(ctx) * drive.strength, drive.omega * ctx.time_scale};
}

DensityMatrix::DensityMatrix(Eigen::MatrixXcd data) : data_(std::move(data)) {
  if (data_.rows() != data_.cols() || data_.rows() == 0) {
    throw std::invalid_argument("density matrix must be square and non-empty");
  }
}

DensityMatrix DensityMatrix::mixture(std::span<const double> populations, std::size_t n) {
  if (populations.size() > n) throw std::invalid_argument("more populations than basis states");
  Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < populations.size(); ++j) {
    if (!(populations[j] >= 0.0)) throw std::invalid_argument("populations must be nonnegative");
    rho(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) = populations[j];
  }
  return DensityMatrix(std::move(rho));
}

DensityMatrix DensityMatrix::pure(const Eigen::VectorXcd& psi) {
  return DensityMatrix(psi * psi.adjoint());
}

StateDiagnostics DensityMatrix::diagnose() const {
  return {std::fabs(data_.trace().real() - 1.0), (data_ - data_.adjoint()).cwiseAbs().maxCoeff(),
          min_eigenvalue(data_)};
}

void DensityMatrix::validate(double trace_tolerance) const {
  const StateDiagnostics d = diagnose();
  if (d.hermiticity_defect > hermiticity_tolerance) {
    throw std::invalid_argument("density matrix is not Hermitian (defect " +
                                std::to_string(d.hermiticity_defect) + ")");
  }
  if (d.trace_drift > trace_tolerance) {
    throw std::invalid_argument("density matrix trace differs from one by " +
                                std::to_string(d.trace_drift));
  }
  if (d.min_eigenvalue < -positivity_tolerance) {
    throw std::invalid_argument("density matrix has negative eigenvalue " +
                                std::to_string(d.min_eigenvalue));
  }
}

Eigen::MatrixXcd conservative_rhs(const OperatorSet& ops, const DensityMatrix& rho, double tau,
                                  const UnitlessDrive& drive) {
  require_same_size(ops, rho);
  Eigen::MatrixXcd hamiltonian = (ops.h + ops.xi).cast<cd>();
  hamiltonian += cd(0.0, drive.coefficient(tau)) * ops.drive_integral.cast<cd>();
  const Eigen::MatrixXcd& r = rho.data();
  return minus_i * (hamiltonian * r - r * hamiltonian);
}

Eigen::MatrixXcd entropic_rhs(const OperatorSet& ops, const DensityMatrix& rho, double tau,
                              const UnitlessDrive& drive) {
  if (ops.sigma.is_conservative()) {
    throw std::invalid_argument("entropic_rhs requires operators built with finite sigma");
  }
  require_same_size(ops, rho);
  Eigen::MatrixXcd hamiltonian = ops.h.cast<cd>();
  hamiltonian += cd(0.0, drive.coefficient(tau)) * ops.drive_integral.cast<cd>();
  const Eigen::MatrixXcd& r = rho.data();
  const Eigen::MatrixXcd& e = ops.dissipator_offset;
  const Eigen::MatrixXcd er = e * r;
  return minus_i * (hamiltonian * r - r * hamiltonian) +
         ops.sigma.value() * (er + r * e.adjoint() + er * e.adjoint());
}

double purity(const DensityMatrix& rho) {
  const Eigen::MatrixXcd& r = rho.data();
  return (r.cwiseProduct(r.transpose())).sum().real();
}

double entropic_purity_rate(const OperatorSet& ops, const DensityMatrix& rho) {
  require_same_size(ops, rho);
  const Eigen::MatrixXcd& r = rho.data();
  const Eigen::MatrixXcd& e = ops.dissipator_offset;
  // rho^2 - rho D rho D^dagger = -(rho E rho + rho rho E^dagger + rho E rho E^dagger)
  const Eigen::MatrixXcd er = e * r;
  const cd deficit = -(r * er).trace() - (r * r * e.adjoint()).trace() - (r * er * e.adjoint()).trace();
  return -2.0 * ops.sigma.value() * deficit.real();
}

double mean_energy(const OperatorSet& ops, const DensityMatrix& rho) {
  require_same_size(ops, rho);
  return (ops.energies.cast<cd>().asDiagonal() * rho.data()).trace().real();
}

double default_step(const UnitlessDrive& drive) {
  double h = 0.002;
  if (drive.amplitude != 0.0 && drive.frequency > 0.0) h = std::min(h, 0.02 / drive.frequency);
  return h;
}

PopulationSeries propagate_populations(const OperatorSet& ops, const DensityMatrix& rho0,
                                       const UnitlessDrive& drive, std::span<const double> times,
                                       std::size_t keep, const PropagationOptions& options) {
  require_same_size(ops, rho0);
  require_times(times);
  if (keep == 0 || keep > ops.size()) throw std::invalid_argument("invalid number of populations to keep");
  rho0.validate(options.trace_tolerance);
  Generator f(ops, drive);
  double h = options.step > 0.0 ? options.step : default_step(drive);

  const auto n_times = static_cast<Eigen::Index>(times.size());
  PopulationSeries series;
  series.populations.resize(n_times, static_cast<Eigen::Index>(keep));
  series.trace_drift.assign(times.size(), 0.0);
  series.steps.assign(times.size(), h);

  std::vector<double> drift;
  Eigen::MatrixXd coarse = collect_populations(f, rho0.data(), times, keep, h, options, drift);
  if (!options.validate_step) {
    series.populations = coarse;
    series.trace_drift = drift;
    return series;
  }
  // Each time is accepted at the first level where it has converged, so its
  // value does not depend on the other requested times.
  std::vector<std::size_t> open(times.size());
  for (std::size_t i = 0; i < open.size(); ++i) open[i] = i;
  for (int halving = 0; halving < options.max_halvings && !open.empty(); ++halving) {
    h *= 0.5;
    std::vector<double> subset(open.size());
    for (std::size_t i = 0; i < open.size(); ++i) subset[i] = times[open[i]];
    Eigen::MatrixXd fine = collect_populations(f, rho0.data(), subset, keep, h, options, drift);
    std::vector<std::size_t> still_open;
    Eigen::MatrixXd next(static_cast<Eigen::Index>(open.size()), fine.cols());
    std::size_t kept = 0;
    for (std::size_t i = 0; i < open.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const double change = (fine.row(r) - coarse.row(r)).cwiseAbs().maxCoeff();
      if (change < options.convergence_tolerance) {
        const auto dst = static_cast<Eigen::Index>(open[i]);
        series.populations.row(dst) = fine.row(r);
        series.trace_drift[open[i]] = drift[i];
        series.steps[open[i]] = h;
      } else {
        still_open.push_back(open[i]);
        next.row(static_cast<Eigen::Index>(kept++)) = fine.row(r);
      }
    }
    open = std::move(still_open);
    coarse = next.topRows(static_cast<Eigen::Index>(kept));
  }
  if (!open.empty()) {
    throw PropagationError("RK4 step did not converge to the population tolerance after " +
                           std::to_string(options.max_halvings) + " halvings at tau = " +
                           std::to_string(times[open.front()]));
  }
  return series;
}

Trajectory propagate(const OperatorSet& ops, const DensityMatrix& rho0, const UnitlessDrive& drive,
                     double tau_final, std::size_t n_outputs, const PropagationOptions& options) {
  require_same_size(ops, rho0);
  if (!(tau_final > 0.0) || !std::isfinite(tau_final)) {
    throw std::invalid_argument("tau_final must be positive and finite");
  }
  if (n_outputs == 0) throw std::invalid_argument("n_outputs must be positive");
  rho0.validate(options.trace_tolerance);

  std::vector<double> times(n_outputs);
  if (n_outputs == 1) {
    times[0] = tau_final;
  } else {
    for (std::size_t i = 0; i < n_outputs; ++i) {
      times[i] = tau_final * static_cast<double>(i) / static_cast<double>(n_outputs - 1);
    }
    times.back() = tau_final;
  }

  Generator f(ops, drive);
  const double h0 = options.step > 0.0 ? options.step : default_step(drive);
  return converge_step(
      h0, options,
      [&](double step) {
        Trajectory traj;
        traj.step = step;
        run_grid(f, rho0.data(), times, step, [&](std::size_t idx, const Eigen::MatrixXcd& rho) {
          check_state(rho, times[idx], options);
          DensityMatrix state(rho);
          traj.times.push_back(times[idx]);
          traj.populations.push_back(rho.diagonal().real());
          traj.purity.push_back(purity(state));
          traj.energy.push_back(mean_energy(ops, state));
          traj.trace_drift.push_back(std::fabs(rho.trace().real() - 1.0));
          traj.states.push_back(std::move(state));
        });
        return traj;
      },
      [](const Trajectory& t) -> Eigen::MatrixXd { return t.populations.back(); });
}

EnergyRate energy_rate_check(const BasisContext& ctx, const OperatorSet& ops,
                             const DensityMatrix& rho0, double tau_window) {
  if (ops.sigma.is_conservative()) {
    throw std::invalid_argument("energy_rate_check needs the entropic model (finite sigma)");
  }
  constexpr std::size_t samples = 41;
  const Trajectory traj = propagate(ops, rho0, UnitlessDrive{}, tau_window, samples);
  double mean_t = 0.0, mean_e = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    mean_t += traj.times[i];
    mean_e += traj.energy[i];
  }
  mean_t /= samples;
  mean_e /= samples;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    sxy += (traj.times[i] - mean_t) * (traj.energy[i] - mean_e);
    sxx += (traj.times[i] - mean_t) * (traj.times[i] - mean_t);
  }
  const double slope = sxy / sxx;  // energy_scale per unit tau
  EnergyRate rate;
  rate.numeric_rate = slope * ctx.energy_scale / ctx.time_scale;
  rate.analytic_rate = ctx.gravity_accel * ctx.hbar / (2.0 * ctx.x0 * ops.sigma.value());
  return rate;
}

void write_trajectory_csv(std::ostream& out, const BasisContext& ctx, const Trajectory& traj) {
  const std::size_t n = traj.populations.empty() ? 0 : static_cast<std::size_t>(traj.populations[0].size());
  out << "tau";
  for (std::size_t j = 0; j < n; ++j) out << ",P" << j;
  out << ",purity,energy_J,trace_drift\n";
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    put(traj.times[i]);
    for (std::size_t j = 0; j < n; ++j) {
      out << ',';
      put(traj.populations[i](static_cast<Eigen::Index>(j)));
    }
    out << ',';
    put(traj.purity[i]);
    out << ',';
    put(traj.energy[i] * ctx.energy_scale);
    out << ',';
    put(traj.trace_drift[i]);
    out << '\n';
  }
}

}  // namespace entgrav
