#include "entgrav/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <string_view>

namespace entgrav {
namespace {

bool finite_all(std::initializer_list<double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

void validate(const MeasurementRecord& r) {
  if (!finite_all({r.strength, r.omega, r.transmission, r.error})) {
    throw std::invalid_argument("measurement record has a non-finite field");
  }
  if (!(r.error > 0.0)) throw std::invalid_argument("measurement error must be positive");
  if (!(r.strength >= 0.0)) throw std::invalid_argument("drive strength must be nonnegative");
  if (!(r.omega > 0.0)) throw std::invalid_argument("drive omega must be positive");
}

void require_ordered(const Coefficients& c) {
  if (!finite_all({c[0], c[1], c[2]}) || !(c[0] >= c[1] && c[1] >= c[2] && c[2] >= 0.0)) {
    throw std::invalid_argument("coefficients must satisfy c0 >= c1 >= c2 >= 0");
  }
}

void ProtocolConfig::validate() const {
  double sum = 0.0;
  for (double p : initial_populations) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("initial populations must be nonnegative");
    sum += p;
  }
  if (sum > 1.0 + 1e-12) throw std::invalid_argument("initial populations sum to more than one");
  if (!(flight_length > 0.0) || !std::isfinite(flight_length)) {
    throw std::invalid_argument("flight length must be positive");
  }
  if (!(velocity_bounds.lower > 0.0) || !(velocity_bounds.upper >= velocity_bounds.lower) ||
      !std::isfinite(velocity_bounds.upper)) {
    throw std::invalid_argument("velocity bounds must satisfy 0 < lower <= upper");
  }
  if (coefficients) require_ordered(*coefficients);
}

double flight_time(const BasisContext& ctx, double velocity, double length, const VelocityBounds& bounds,
                   bool allow_out_of_bounds) {
  if (!(velocity > 0.0) || !std::isfinite(velocity)) throw std::invalid_argument("velocity must be positive");
  if (!(length > 0.0) || !std::isfinite(length)) throw std::invalid_argument("flight length must be positive");
  if (!allow_out_of_bounds && !bounds.contains(velocity)) {
    throw std::invalid_argument("velocity " + g17(velocity) + " m/s outside [" + g17(bounds.lower) + ", " +
                                g17(bounds.upper) + "]");
  }
  return (length / velocity) / ctx.time_scale;
}

PopulationSeries simulate_velocities(const BasisContext& ctx, const OperatorSet& ops,
                                     std::span<const double> velocities, const Drive& drive,
                                     const ProtocolConfig& config, const PropagationOptions& options) {
  config.validate();
  if (ops.size() < 3) throw std::invalid_argument("the protocol needs at least three basis states");
  std::vector<double> taus(velocities.size());
  for (std::size_t i = 0; i < velocities.size(); ++i) {
    taus[i] = flight_time(ctx, velocities[i], config.flight_length, config.velocity_bounds,
                          config.allow_any_velocity);
  }
  std::vector<std::size_t> order(taus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return taus[a] < taus[b]; });
  std::vector<double> sorted(taus.size());
  for (std::size_t i = 0; i < order.size(); ++i) sorted[i] = taus[order[i]];

  const DensityMatrix rho0 = DensityMatrix::mixture(config.initial_populations, ops.size());
  const PopulationSeries raw =
      propagate_populations(ops, rho0, to_unitless(ctx, drive), sorted, 3, options);

  PopulationSeries out;
  out.populations.resize(raw.populations.rows(), raw.populations.cols());
  out.trace_drift.resize(order.size());
  out.steps.resize(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto dst = static_cast<Eigen::Index>(order[i]);
    out.populations.row(dst) = raw.populations.row(static_cast<Eigen::Index>(i));
    out.trace_drift[order[i]] = raw.trace_drift[i];
    out.steps[order[i]] = raw.steps[i];
  }
  return out;
}

Populations simulate_point(const BasisContext& ctx, const OperatorSet& ops, double velocity, const Drive& drive,
                           const ProtocolConfig& config, const PropagationOptions& options) {
  const double v[1] = {velocity};
  const PopulationSeries s = simulate_velocities(ctx, ops, v, drive, config, options);
  return {s.populations(0, 0), s.populations(0, 1), s.populations(0, 2)};
}

Populations simulate_point(const BasisContext& ctx, Coupling sigma, double velocity, const Drive& drive,
                           const ProtocolConfig& config, const PropagationOptions& options) {
  return simulate_point(ctx, build_operators(ctx, sigma), velocity, drive, config, options);
}

double transmission(const Populations& p, const Coefficients& c) {
  require_ordered(c);
  return c[0] * p[0] + c[1] * p[1] + c[2] * p[2];
}

std::vector<MeasurementRecord> parse_records(std::istream& in, const std::string& source) {
  std::vector<MeasurementRecord> records;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  auto fail = [&](const std::string& what) {
    throw DataError(source + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (line_no == 1 && view.starts_with("\xEF\xBB\xBF")) view.remove_prefix(3);
    if (view.empty()) continue;
    if (!header_seen) {
      std::string compact;
      for (char ch : view) {
        if (ch != ' ' && ch != '\t') compact.push_back(ch);
      }
      if (compact != record_csv_header) fail(std::string("expected header '") + record_csv_header + "'");
      header_seen = true;
      continue;
    }
    double fields[4];
    std::size_t count = 0;
    std::size_t pos = 0;
    while (true) {
      const auto comma = view.find(',', pos);
      const std::string_view cell = trim(view.substr(pos, comma == std::string_view::npos ? view.npos : comma - pos));
      if (count == 4) fail("expected 4 columns");
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), fields[count]);
      if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
        fail("cannot parse number '" + std::string(cell) + "' in column " + std::to_string(count + 1));
      }
      ++count;
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (count != 4) fail("expected 4 columns, found " + std::to_string(count));
    MeasurementRecord r{fields[0], fields[1], fields[2], fields[3]};
    try {
      validate(r);
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
    records.push_back(r);
  }
  if (!header_seen) {
    line_no = 1;
    fail("missing header");
  }
  return records;
}

std::vector<MeasurementRecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path.string() + "'");
  return parse_records(in, path.string());
}

void write_records(std::ostream& out, std::span<const MeasurementRecord> records) {
  out << record_csv_header << '\n';
  for (const auto& r : records) {
    out << g17(r.strength) << ',' << g17(r.omega) << ',' << g17(r.transmission) << ',' << g17(r.error) << '\n';
  }
}

void write_simulated_scan(std::ostream& out, std::span<const SimulatedRow> rows) {
  out << record_csv_header << ",P0,P1,P2,T_model\n";
  for (const auto& row : rows) {
    const auto& r = row.record;
    out << g17(r.strength) << ',' << g17(r.omega) << ',' << g17(r.transmission) << ',' << g17(r.error) << ','
        << g17(row.populations[0]) << ',' << g17(row.populations[1]) << ',' << g17(row.populations[2]) << ','
        << g17(row.model_transmission) << '\n';
  }
}

std::vector<DriveSetting> default_synthetic_grid(const BasisContext& ctx) {
  if (ctx.n_states < 4) throw std::invalid_argument("the synthetic grid needs at least four basis states");
  const double w03 = ctx.transition_frequency(3, 0);
  std::vector<DriveSetting> grid;
  for (int i = 0; i < 10; ++i) grid.push_back({2.05e-3, w03 * (0.85 + 0.3 * i / 9.0)});
  for (int i = 0; i < 10; ++i) grid.push_back({4.0e-3 * i / 9.0, w03});
  return grid;
}

std::vector<MeasurementRecord> model_dataset(const BasisContext& ctx, const SyntheticSpec& spec) {
  require_ordered(spec.coefficients);
  if (!(spec.error > 0.0) || !std::isfinite(spec.error)) throw std::invalid_argument("error must be positive");
  const OperatorSet ops = build_operators(ctx, spec.sigma);
  std::vector<MeasurementRecord> records;
  records.reserve(spec.grid.size());
  for (const auto& d : spec.grid) {
    const Populations p = simulate_point(ctx, ops, spec.velocity, {d.strength, d.omega}, spec.config,
                                         spec.propagation);
    MeasurementRecord r{d.strength, d.omega, transmission(p, spec.coefficients), spec.error};
    validate(r);
    records.push_back(r);
  }
  return records;
}

std::vector<MeasurementRecord> add_noise(std::span<const MeasurementRecord> records, std::uint64_t seed,
                                         double noise_scale) {
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) {
    throw std::invalid_argument("noise scale must be nonnegative");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<MeasurementRecord> out(records.begin(), records.end());
  for (auto& r : out) {
    const double z = normal(rng);
    if (noise_scale > 0.0) r.transmission += noise_scale * r.error * z;
  }
  return out;
}

std::vector<MeasurementRecord> generate_synthetic_dataset(const BasisContext& ctx, const SyntheticSpec& spec) {
  const auto clean = model_dataset(ctx, spec);
  return add_noise(clean, spec.seed, spec.noise_scale);
}

}  // namespace entgrav
