#include "entgrav/predictions.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

namespace entgrav {
namespace {

void require_positive(double x, const char* name) {
  if (!(x > 0.0) || !std::isfinite(x)) throw std::invalid_argument(std::string(name) + " must be positive");
}

}  // namespace

double entropic_power(const BasisContext& ctx, double sigma) {
  require_positive(sigma, "sigma");
  return ctx.gravity_accel * ctx.hbar / (2.0 * ctx.x0 * sigma);
}

double dp_power(double mass, double r0, bool backreaction) {
  require_positive(mass, "mass");
  require_positive(r0, "R0");
  const double p = mass * constants::G * constants::hbar / (4.0 * std::sqrt(constants::pi) * r0 * r0 * r0);
  return backreaction ? 2.0 * p : p;
}

double sigma_from_energy_match(const BasisContext& ctx, double target_power) {
  require_positive(target_power, "target power");
  return ctx.gravity_accel * ctx.hbar / (2.0 * ctx.x0 * target_power);
}

double sigma_bound_from_storage(const BasisContext& ctx, double delta_t, double delta_e) {
  require_positive(delta_t, "delta_t");
  require_positive(delta_e, "delta_e");
  return ctx.gravity_accel * ctx.hbar * delta_t / (2.0 * ctx.x0 * delta_e);
}

double decoherence_time_scaled(double t_d, double kappa) {
  require_positive(t_d, "t_d");
  require_positive(kappa, "kappa");
  return t_d / std::cbrt(kappa);
}

PredictionReport make_report(const BasisContext& ctx, const std::string& particle, double sigma, double r0,
                             bool backreaction) {
  PredictionReport r;
  r.particle = particle;
  r.mass = ctx.mass;
  r.gravity_accel = ctx.gravity_accel;
  r.sigma = sigma;
  r.r0 = r0;
  r.backreaction = backreaction;
  r.entropic_power = entropic_power(ctx, sigma);
  r.dp_power = dp_power(ctx.mass, r0, false);
  r.dp_power_backreaction = dp_power(ctx.mass, r0, true);
  r.sigma_energy_match = sigma_from_energy_match(ctx, r.dp_power);
  if (ctx.n_states >= 2) {
    r.storage_energy = ctx.energy(1) - ctx.energy(0);
    r.sigma_bound = sigma_bound_from_storage(ctx, r.storage_time, r.storage_energy);
  }
  const double kappa = constants::planck_to_neutron_mass_ratio;
  r.scaled_times.push_back({kappa, constants::neutron_lifetime,
                            decoherence_time_scaled(constants::neutron_lifetime, kappa)});
  r.scaled_times.push_back({1.0 / kappa, 1.0, decoherence_time_scaled(1.0, 1.0 / kappa)});
  return r;
}

void write_report_json(std::ostream& out, const PredictionReport& r) {
  using nlohmann::json;
  json times = json::array();
  for (const auto& t : r.scaled_times) {
    times.push_back({{"kappa", t.kappa}, {"t_original_s", t.t_original}, {"t_scaled_s", t.t_scaled}});
  }
  json j;
  j["particle"] = r.particle;
  j["mass_kg"] = r.mass;
  j["gravity_accel_m_per_s2"] = r.gravity_accel;
  j["sigma"] = r.sigma;
  j["r0_m"] = r.r0;
  j["entropic_power_W"] = r.entropic_power;
  j["dp_power_W"] = r.dp_power;
  j["dp_power_backreaction_W"] = r.dp_power_backreaction;
  j["backreaction"] = r.backreaction;
  j["dp_power_selected_W"] = r.backreaction ? r.dp_power_backreaction : r.dp_power;
  j["sigma_energy_match"] = r.sigma_energy_match;
  j["storage_time_s"] = r.storage_time;
  j["storage_energy_J"] = r.storage_energy;
  j["sigma_bound"] = r.sigma_bound;
  j["scaled_times"] = times;
  out << j.dump(2) << '\n';
}

}  // namespace entgrav
