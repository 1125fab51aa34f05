#include "entgrav/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "entgrav/bouncer_basis.hpp"
#include "entgrav/dynamics.hpp"
#include "entgrav/experiment.hpp"
#include "entgrav/fitting.hpp"
#include "entgrav/predictions.hpp"

namespace entgrav::cli {
namespace {

std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Writes to the path, or to `fallback` when the path is empty. Content is
// produced before the file is opened so failed runs leave no partial file.
void emit(const std::string& path, const std::string& content, std::ostream& fallback) {
  if (path.empty()) {
    fallback << content;
    return;
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw UsageError("cannot open '" + path + "' for writing");
  file << content;
  file.flush();
  if (!file) throw UsageError("failed writing '" + path + "'");
}

BasisContext make_context(const RunConfig& c) {
  if (c.particle == "neutron") {
    if (c.mass) throw UsageError("--mass applies only to --particle custom");
    return build_context(constants::neutron_mass, c.g, c.n_states);
  }
  if (c.particle == "custom") {
    if (!c.mass) throw UsageError("--particle custom needs --mass");
    return build_context(*c.mass, c.g, c.n_states);
  }
  throw UsageError("unknown particle '" + c.particle + "' (expected neutron or custom)");
}

Coupling single_sigma(const RunConfig& c, const char* fallback) {
  if (c.sigma.size() > 1) throw UsageError("this command takes a single --sigma");
  return Coupling::parse(c.sigma.empty() ? fallback : c.sigma.front());
}

double single_velocity(const RunConfig& c) {
  if (c.velocity.size() > 1) throw UsageError("this command takes a single --velocity");
  return c.velocity.empty() ? 6.58 : c.velocity.front();
}

double resonance_03(const BasisContext& ctx) {
  if (ctx.n_states < 4) throw UsageError("the default drive frequency needs --n-states >= 4; pass --omega");
  return ctx.transition_frequency(3, 0);
}

Coefficients coefficients_or(const RunConfig& c, Coefficients fallback) {
  const Coefficients out = c.coefficients ? *c.coefficients : fallback;
  require_ordered(out);
  return out;
}

ProtocolConfig protocol(const RunConfig& c) {
  ProtocolConfig p;
  p.allow_any_velocity = c.allow_any_velocity;
  return p;
}

PropagationOptions propagation(const RunConfig& c, bool record_default) {
  PropagationOptions o;
  o.trace_tolerance = c.trace_tolerance;
  o.on_trace_drift = (record_default || c.record_drift) ? TraceDriftAction::record : TraceDriftAction::raise;
  return o;
}

std::vector<double> linspace(double from, double to, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = n == 1 ? from : from + (to - from) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return v;
}

std::string cmd_spectrum(const RunConfig& c) {
  const BasisContext ctx = make_context(c);
  std::ostringstream s;
  s << "n,a,E_peV";
  for (std::size_t k = 0; k < ctx.n_states; ++k) s << ",omega_" << k;
  s << '\n';
  for (std::size_t n = 0; n < ctx.n_states; ++n) {
    s << n << ',' << g17(ctx.zeros[n]) << ',' << g17(ctx.energy(n) / constants::pico_electron_volt);
    for (std::size_t k = 0; k < ctx.n_states; ++k) s << ',' << g17(ctx.transition_frequency(n, k));
    s << '\n';
  }
  return s.str();
}

std::string cmd_simulate(const RunConfig& c) {
  const BasisContext ctx = make_context(c);
  const Coupling sigma = single_sigma(c, "inf");
  const double velocity = single_velocity(c);
  const ProtocolConfig proto = protocol(c);
  const PropagationOptions opts = propagation(c, false);
  const OperatorSet ops = build_operators(ctx, sigma);
  std::ostringstream s;
  if (!c.data.empty()) {
    const auto records = load_records(c.data);
    const Coefficients coef = coefficients_or(c, {1.0, 1.0, 1.0});
    std::vector<SimulatedRow> rows;
    for (const auto& r : records) {
      const Populations p = simulate_point(ctx, ops, velocity, r.drive(), proto, opts);
      rows.push_back({r, p, transmission(p, coef)});
    }
    write_simulated_scan(s, rows);
    return s.str();
  }
  if (c.outputs == 0) throw UsageError("--outputs must be positive");
  const Drive drive{c.strength.value_or(2.05e-3), c.omega ? *c.omega : resonance_03(ctx)};
  const double tau = flight_time(ctx, velocity, proto.flight_length, proto.velocity_bounds, proto.allow_any_velocity);
  const DensityMatrix rho0 = DensityMatrix::mixture(proto.initial_populations, ctx.n_states);
  const Trajectory traj = propagate(ops, rho0, to_unitless(ctx, drive), tau, c.outputs, opts);
  write_trajectory_csv(s, ctx, traj);
  return s.str();
}

std::string cmd_sweep(const RunConfig& c) {
  const BasisContext ctx = make_context(c);
  std::vector<Coupling> sigmas;
  for (const auto& text : c.sigma) sigmas.push_back(Coupling::parse(text));
  bool has_conservative = false;
  for (const auto& s : sigmas) has_conservative = has_conservative || s.is_conservative();
  if (!has_conservative) sigmas.push_back(Coupling::conservative());

  const double velocity = single_velocity(c);
  const Coefficients coef = coefficients_or(c, {1.0, 1.0, 1.0});
  const ProtocolConfig proto = protocol(c);
  const PropagationOptions opts = propagation(c, true);

  std::vector<Drive> drives;
  if (c.sweep_mode == "strength") {
    const double omega = c.omega ? *c.omega : resonance_03(ctx);
    for (double a : linspace(c.sweep_from, c.sweep_to, c.sweep_points)) drives.push_back({a, omega});
  } else if (c.sweep_mode == "frequency") {
    const double strength = c.strength.value_or(2.05e-3);
    for (double w : linspace(c.sweep_from, c.sweep_to, c.sweep_points)) drives.push_back({strength, w});
  } else {
    throw UsageError("--mode must be strength or frequency");
  }
  for (const auto& d : drives) validate(MeasurementRecord{d.strength, d.omega, 0.0, 1.0});
  flight_time(ctx, velocity, proto.flight_length, proto.velocity_bounds, proto.allow_any_velocity);

  std::ostringstream s;
  s << "sigma,strength_m_per_s,omega_rad_per_s,velocity,P0,P1,P2,T_model,trace_drift\n";
  if (drives.empty()) return s.str();
  const double v[1] = {velocity};
  for (const auto& sigma : sigmas) {
    const OperatorSet ops = build_operators(ctx, sigma);
    for (const auto& d : drives) {
      const PopulationSeries series = simulate_velocities(ctx, ops, v, d, proto, opts);
      const Populations p{series.populations(0, 0), series.populations(0, 1), series.populations(0, 2)};
      s << sigma.to_string() << ',' << g17(d.strength) << ',' << g17(d.omega) << ',' << g17(velocity) << ','
        << g17(p[0]) << ',' << g17(p[1]) << ',' << g17(p[2]) << ',' << g17(transmission(p, coef)) << ','
        << g17(series.trace_drift[0]) << '\n';
    }
  }
  return s.str();
}

void cmd_fit(const RunConfig& c, std::ostream& out) {
  if (c.data.empty()) throw UsageError("fit needs --data");
  const auto records = load_records(c.data);
  if (records.empty()) throw UsageError("'" + c.data + "' contains no records");
  const BasisContext ctx = make_context(c);

  std::vector<Coupling> sigmas;
  for (const auto& text : c.sigma) sigmas.push_back(Coupling::parse(text));
  if (sigmas.empty()) sigmas = default_sigma_grid();
  const std::vector<double> velocities = c.velocity.empty() ? default_velocity_grid() : c.velocity;

  std::optional<PopulationCache> cache;
  if (!c.cache.empty()) cache.emplace(c.cache);
  FitOptions options;
  options.config = protocol(c);
  options.propagation = propagation(c, true);
  options.cache = cache ? &*cache : nullptr;
  options.threads = c.threads;
  options.confidence_level = c.level;
  // Rejects out-of-range levels before any propagation.
  delta_chi2_for_level(c.level);
  for (double v : velocities) {
    flight_time(ctx, v, options.config.flight_length, options.config.velocity_bounds,
                options.config.allow_any_velocity);
  }

  const ScanSurface surface = scan(ctx, records, sigmas, velocities, options);
  const ConfidenceRegion region = confidence_region(surface, c.level, c.delta_chi2);
  std::ostringstream csv, json;
  write_surface_csv(csv, surface);
  write_summary_json(json, surface, region);

  std::string summary = c.summary;
  if (summary.empty() && !c.out.empty()) summary = std::filesystem::path(c.out).replace_extension(".json").string();
  if (!c.out.empty() && summary == c.out) throw UsageError("--summary must differ from --out");
  emit(c.out, csv.str(), out);
  emit(summary, json.str(), out);
}

std::string cmd_predict(const RunConfig& c) {
  const BasisContext ctx = make_context(c);
  const Coupling sigma = single_sigma(c, "500");
  if (sigma.is_conservative()) throw UsageError("predict needs a finite --sigma");
  const std::string label = c.particle == "neutron" ? "neutron" : "custom";
  std::ostringstream s;
  write_report_json(s, make_report(ctx, label, sigma.value(), c.r0, c.backreaction));
  return s.str();
}

std::string cmd_synth(const RunConfig& c) {
  const BasisContext ctx = make_context(c);
  SyntheticSpec spec;
  spec.sigma = single_sigma(c, "500");
  spec.velocity = single_velocity(c);
  spec.coefficients = coefficients_or(c, {1.46, 0.50, 0.50});
  spec.grid = default_synthetic_grid(ctx);
  spec.seed = c.seed;
  spec.noise_scale = c.noise_scale;
  spec.error = c.error;
  spec.config = protocol(c);
  spec.propagation = propagation(c, true);
  std::ostringstream s;
  write_records(s, generate_synthetic_dataset(ctx, spec));
  return s.str();
}

}  // namespace

std::optional<RunConfig> parse_arguments(const std::vector<std::string>& args, std::ostream& out) {
  RunConfig c;
  CLI::App app{"Entropic-gravity quantum bouncer: spectra, simulations, fits and predictions", "entgrav"};
  app.set_config("--config", "", "Read key=value settings; flags on the command line win");
  app.require_subcommand(1, 1);
  app.fallthrough();

  app.add_option("--particle", c.particle, "neutron or custom")->check(CLI::IsMember({"neutron", "custom"}));
  app.add_option("--mass", c.mass, "Particle mass in kg (custom particles)");
  app.add_option("--g", c.g, "Gravitational acceleration in m/s^2");
  app.add_option("--n-states", c.n_states, "Basis size (1-50)");
  app.add_option("--sigma", c.sigma, "Coupling constant(s), a number or inf")->delimiter(',');
  app.add_option("--velocity", c.velocity, "Horizontal velocity in m/s (list for fit)")->delimiter(',');
  app.add_option("--data", c.data, "Measurement CSV");
  app.add_option("--out", c.out, "Output path (default: standard output)");
  app.add_option("--seed", c.seed, "Noise seed");
  app.add_option("--threads", c.threads, "Worker threads (0 = all cores)");

  std::vector<double> coefficients;
  auto add_drive = [&](CLI::App* sub) {
    sub->add_option("--strength", c.strength, "Drive strength a*omega in m/s");
    sub->add_option("--omega", c.omega, "Drive angular frequency in rad/s (default: 0 -> 3 resonance)");
    sub->add_option("--coefficients", coefficients, "c0,c1,c2 for T_model")->delimiter(',')->expected(3);
    sub->add_flag("--allow-any-velocity", c.allow_any_velocity, "Accept velocities outside [5.6, 9.5] m/s");
    sub->add_option("--trace-tolerance", c.trace_tolerance, "Trace drift tolerance");
  };

  auto* spectrum = app.add_subcommand("spectrum", "Energies and transition frequencies");
  auto* simulate = app.add_subcommand("simulate", "Trajectory of one flight, or populations for --data");
  add_drive(simulate);
  simulate->add_option("--outputs", c.outputs, "Trajectory checkpoints");
  simulate->add_flag("--record-drift", c.record_drift, "Record trace drift instead of failing");
  auto* sweep = app.add_subcommand("sweep", "Transmission versus drive strength or frequency");
  add_drive(sweep);
  sweep->add_option("--mode", c.sweep_mode, "strength or frequency")->check(CLI::IsMember({"strength", "frequency"}));
  std::optional<double> from, to;
  sweep->add_option("--from", from, "First sweep value");
  sweep->add_option("--to", to, "Last sweep value");
  sweep->add_option("--points", c.sweep_points, "Number of sweep points");
  auto* fit = app.add_subcommand("fit", "chi2 scan over (sigma, velocity) with constrained coefficients");
  fit->add_option("--summary", c.summary, "Summary JSON path (default: --out with .json)");
  fit->add_option("--cache", c.cache, "Population cache directory");
  fit->add_option("--level", c.level, "Confidence level");
  fit->add_option("--delta-chi2", c.delta_chi2, "Override the chi2 offset of the region");
  fit->add_flag("--allow-any-velocity", c.allow_any_velocity, "Accept velocities outside [5.6, 9.5] m/s");
  fit->add_option("--trace-tolerance", c.trace_tolerance, "Trace drift tolerance for flagging nodes");
  auto* predict = app.add_subcommand("predict", "Energy-gain rates and bounds as JSON");
  predict->add_option("--r0", c.r0, "Mass-density smearing radius in m");
  predict->add_flag("--backreaction", c.backreaction, "Select the doubled Diosi-Penrose rate");
  auto* synth = app.add_subcommand("synth", "Synthetic measurement CSV from the model");
  synth->add_option("--coefficients", coefficients, "c0,c1,c2")->delimiter(',')->expected(3);
  synth->add_option("--noise-scale", c.noise_scale, "Noise in units of the record error");
  synth->add_option("--error", c.error, "Reported error of every record");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return std::nullopt;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return std::nullopt;
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  if (*spectrum) c.command = Command::spectrum;
  if (*simulate) c.command = Command::simulate;
  if (*sweep) c.command = Command::sweep;
  if (*fit) c.command = Command::fit;
  if (*predict) c.command = Command::predict;
  if (*synth) c.command = Command::synth;

  if (!coefficients.empty()) c.coefficients = std::array<double, 3>{coefficients[0], coefficients[1], coefficients[2]};
  if (c.command == Command::sweep) {
    const bool strength_mode = c.sweep_mode == "strength";
    c.sweep_from = from.value_or(strength_mode ? 0.0 : 3.25e3);
    c.sweep_to = to.value_or(strength_mode ? 4e-3 : 4.9e3);
  }
  return c;
}

int execute(const RunConfig& c, std::ostream& out, std::ostream& err) {
  try {
    switch (c.command) {
      case Command::spectrum:
        emit(c.out, cmd_spectrum(c), out);
        break;
      case Command::simulate:
        emit(c.out, cmd_simulate(c), out);
        break;
      case Command::sweep:
        emit(c.out, cmd_sweep(c), out);
        break;
      case Command::fit:
        cmd_fit(c, out);
        break;
      case Command::predict:
        emit(c.out, cmd_predict(c), out);
        break;
      case Command::synth:
        emit(c.out, cmd_synth(c), out);
        break;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return exit_usage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return exit_usage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return exit_usage;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << '\n';
    return exit_failure;
  }
  return exit_success;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::optional<RunConfig> config;
  try {
    config = parse_arguments(args, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return exit_usage;
  }
  if (!config) return exit_success;
  return execute(*config, out, err);
}

}  // namespace entgrav::cli
