#include "entgrav/fitting.hpp"

#include <algorithm>
#include <atomic>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace entgrav {
namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();

std::string hexfloat(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// c = M u with u >= 0 encodes c0 >= c1 >= c2 >= 0.
Eigen::Matrix3d increment_map() {
  Eigen::Matrix3d m;
  m << 1, 1, 1,
       0, 1, 1,
       0, 0, 1;
  return m;
}

nlohmann::json sigma_json(const Coupling& s) {
  if (s.is_conservative()) return "inf";
  return s.value();
}

struct RecordOutcome {
  std::vector<CachedPopulations> per_velocity;
  std::string error;
};

std::string describe(std::size_t index, const MeasurementRecord& r) {
  return "record " + std::to_string(index) + " (strength " + g17(r.strength) + " m/s, omega " + g17(r.omega) +
         " rad/s)";
}

// Populations of one record at every velocity, from the cache where
// possible and from a single propagation for the rest.
RecordOutcome evaluate_record(const BasisContext& ctx, const OperatorSet& ops, Coupling sigma,
                              std::span<const double> velocities, const MeasurementRecord& record,
                              const FitOptions& options) {
  RecordOutcome out;
  out.per_velocity.resize(velocities.size());
  std::vector<std::size_t> missing;
  std::vector<std::uint64_t> keys(velocities.size());
  for (std::size_t i = 0; i < velocities.size(); ++i) {
    keys[i] = population_key(ctx, options.config, options.propagation, sigma, velocities[i], record.drive());
    const auto hit = options.cache ? options.cache->find(keys[i]) : std::nullopt;
    if (hit) {
      out.per_velocity[i] = *hit;
    } else {
      missing.push_back(i);
    }
  }
  if (missing.empty()) return out;
  std::vector<double> todo(missing.size());
  for (std::size_t i = 0; i < missing.size(); ++i) todo[i] = velocities[missing[i]];
  const PopulationSeries series =
      simulate_velocities(ctx, ops, todo, record.drive(), options.config, options.propagation);
  for (std::size_t i = 0; i < missing.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    CachedPopulations value{{series.populations(r, 0), series.populations(r, 1), series.populations(r, 2)},
                            series.trace_drift[i]};
    out.per_velocity[missing[i]] = value;
    if (options.cache) options.cache->store(keys[missing[i]], value);
  }
  return out;
}

template <typename Job>
void run_parallel(std::size_t n_jobs, std::size_t threads, Job&& job) {
  if (threads == 0) threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(n_jobs, 1));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n_jobs; i = next++) job(i);
  };
  if (threads <= 1) {
    worker();
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
}

void validate_records(std::span<const MeasurementRecord> records) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      validate(records[i]);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(describe(i, records[i]) + ": " + e.what());
    }
  }
}

}  // namespace

Eigen::VectorXd nnls(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  const Eigen::Index n = a.cols();
  if (a.rows() != b.size()) throw std::invalid_argument("nnls: dimension mismatch");
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::vector<bool> passive(static_cast<std::size_t>(n), false);
  const double tol = 10.0 * std::numeric_limits<double>::epsilon() *
                     std::max<double>(1.0, a.cwiseAbs().colwise().sum().maxCoeff()) *
                     static_cast<double>(std::max(a.rows(), n));

  auto solve_passive = [&]() {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (passive[static_cast<std::size_t>(j)]) cols.push_back(j);
    }
    Eigen::MatrixXd sub(a.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = a.col(cols[k]);
    const Eigen::VectorXd zs = sub.completeOrthogonalDecomposition().solve(b);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k < cols.size(); ++k) z(cols[k]) = zs(static_cast<Eigen::Index>(k));
    return z;
  };

  for (int outer = 0; outer < 3 * static_cast<int>(n) + 3; ++outer) {
    const Eigen::VectorXd w = a.transpose() * (b - a * x);
    Eigen::Index pick = -1;
    double best = tol;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!passive[static_cast<std::size_t>(j)] && w(j) > best) {
        best = w(j);
        pick = j;
      }
    }
    if (pick < 0) break;
    passive[static_cast<std::size_t>(pick)] = true;
    for (int inner = 0; inner <= static_cast<int>(n); ++inner) {
      const Eigen::VectorXd z = solve_passive();
      bool feasible = true;
      double alpha = 1.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[static_cast<std::size_t>(j)] && z(j) <= 0.0) {
          feasible = false;
          alpha = std::min(alpha, x(j) / (x(j) - z(j)));
        }
      }
      if (feasible) {
        x = z;
        break;
      }
      x += alpha * (z - x);
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[static_cast<std::size_t>(j)] && x(j) <= tol) {
          passive[static_cast<std::size_t>(j)] = false;
          x(j) = 0.0;
        }
      }
    }
  }
  return x.cwiseMax(0.0);
}

CoefficientFit constrained_coefficient_fit(const Eigen::MatrixXd& p, const Eigen::VectorXd& t,
                                           const Eigen::VectorXd& err) {
  if (p.cols() != 3) throw std::invalid_argument("population matrix must have three columns");
  if (p.rows() == 0) throw std::invalid_argument("fit needs at least one record");
  if (t.size() != p.rows() || err.size() != p.rows()) {
    throw std::invalid_argument("populations, transmissions and errors differ in length");
  }
  if (!p.allFinite() || !t.allFinite() || !err.allFinite()) throw std::invalid_argument("non-finite fit input");
  if ((err.array() <= 0.0).any()) throw std::invalid_argument("errors must be positive");
  if ((p.array() == 0.0).all()) throw std::invalid_argument("population matrix is zero (rank 0)");

  const Eigen::VectorXd inv = err.cwiseInverse();
  const Eigen::MatrixXd a = inv.asDiagonal() * (p * increment_map());
  const Eigen::VectorXd b = inv.asDiagonal() * t;
  const Eigen::VectorXd u = nnls(a, b);

  CoefficientFit fit;
  fit.coefficients[2] = u(2);
  fit.coefficients[1] = u(1) + fit.coefficients[2];
  fit.coefficients[0] = u(0) + fit.coefficients[1];
  const Eigen::Vector3d c(fit.coefficients[0], fit.coefficients[1], fit.coefficients[2]);
  fit.chi2 = (inv.asDiagonal() * (t - p * c)).squaredNorm();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-12);
  fit.underdetermined = p.rows() < 3 || qr.rank() < 3;
  return fit;
}

PopulationCache::PopulationCache(std::filesystem::path directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw std::runtime_error("cannot create cache directory '" + directory.string() + "': " + ec.message());
  file_ = directory / "populations.tsv";
  std::ifstream in(*file_);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string key, f[4];
    if (!(row >> key >> f[0] >> f[1] >> f[2] >> f[3])) continue;  // torn write
    char* end = nullptr;
    const std::uint64_t k = std::strtoull(key.c_str(), &end, 16);
    if (*end != '\0') continue;
    double v[4];
    bool ok = true;
    for (int i = 0; i < 4; ++i) {
      v[i] = std::strtod(f[i].c_str(), &end);
      ok = ok && *end == '\0';
    }
    if (ok) entries_.insert_or_assign(k, CachedPopulations{{v[0], v[1], v[2]}, v[3]});
  }
}

std::optional<CachedPopulations> PopulationCache::find(std::uint64_t key) const {
  std::lock_guard lock(mutex_);
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void PopulationCache::store(std::uint64_t key, const CachedPopulations& value) {
  std::lock_guard lock(mutex_);
  entries_.insert_or_assign(key, value);
  if (!file_) return;
  std::ofstream out(*file_, std::ios::app);
  if (!out) throw std::runtime_error("cannot write cache file '" + file_->string() + "'");
  char key_text[24];
  std::snprintf(key_text, sizeof key_text, "%016llx", static_cast<unsigned long long>(key));
  out << key_text << '\t' << hexfloat(value.populations[0]) << '\t' << hexfloat(value.populations[1]) << '\t'
      << hexfloat(value.populations[2]) << '\t' << hexfloat(value.trace_drift) << '\n';
}

std::size_t PopulationCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::uint64_t population_key(const BasisContext& ctx, const ProtocolConfig& config,
                             const PropagationOptions& options, Coupling sigma, double velocity,
                             const Drive& drive) {
  std::string text = "populations-v1";
  auto add = [&](const char* name, double x) {
    text += '|';
    text += name;
    text += '=';
    text += hexfloat(x);
  };
  add("mass", ctx.mass);
  add("g", ctx.gravity_accel);
  add("hbar", ctx.hbar);
  add("n", static_cast<double>(ctx.n_states));
  add("xi_max", ctx.scheme.xi_max());
  add("panels", static_cast<double>(ctx.scheme.panel_count()));
  add("nodes", static_cast<double>(ctx.scheme.nodes_per_panel()));
  text += "|sigma=" + (sigma.is_conservative() ? std::string("inf") : hexfloat(sigma.value()));
  for (double p : config.initial_populations) add("p", p);
  add("length", config.flight_length);
  add("velocity", velocity);
  add("strength", drive.strength);
  add("omega", drive.omega);
  add("step", options.step);
  add("validate", options.validate_step ? 1.0 : 0.0);
  add("convergence", options.convergence_tolerance);
  add("halvings", options.max_halvings);
  // A raising run must not reuse values that were accepted without the check.
  add("raise", options.on_trace_drift == TraceDriftAction::raise ? options.trace_tolerance : -1.0);
  add("floor", options.positivity_floor);

  std::uint64_t hash = 14695981039346656037ull;
  for (unsigned char ch : text) {
    hash ^= ch;
    hash *= 1099511628211ull;
  }
  return hash;
}

Eigen::MatrixXd population_matrix(const BasisContext& ctx, Coupling sigma, double velocity,
                                  std::span<const MeasurementRecord> records, const FitOptions& options) {
  validate_records(records);
  std::optional<OperatorSet> ops;
  Eigen::MatrixXd p(static_cast<Eigen::Index>(records.size()), 3);
  const double v[1] = {velocity};
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto key = population_key(ctx, options.config, options.propagation, sigma, velocity, records[r].drive());
    auto hit = options.cache ? options.cache->find(key) : std::nullopt;
    if (!hit) {
      if (!ops) ops = build_operators(ctx, sigma);
      try {
        hit = evaluate_record(ctx, *ops, sigma, v, records[r], options).per_velocity[0];
      } catch (const PropagationError& e) {
        throw PropagationError(describe(r, records[r]) + ": " + e.what());
      }
    }
    for (int j = 0; j < 3; ++j) p(static_cast<Eigen::Index>(r), j) = hit->populations[static_cast<std::size_t>(j)];
  }
  return p;
}

std::vector<double> ScanSurface::profile() const {
  std::vector<double> out(sigma_grid.size(), nan);
  const auto nodes_of = profile_nodes();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (nodes_of[i]) out[i] = nodes[*nodes_of[i]].chi2;
  }
  return out;
}

std::vector<std::optional<std::size_t>> ScanSurface::profile_nodes() const {
  std::vector<std::optional<std::size_t>> out(sigma_grid.size());
  const std::size_t nv = velocity_grid.size();
  for (std::size_t i = 0; i < sigma_grid.size(); ++i) {
    for (std::size_t j = 0; j < nv; ++j) {
      const std::size_t k = i * nv + j;
      if (!nodes[k].valid) continue;
      if (!out[i] || nodes[k].chi2 < nodes[*out[i]].chi2) out[i] = k;
    }
  }
  return out;
}

std::size_t ScanSurface::invalid_nodes() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const FitResult& n) { return !n.valid; }));
}

std::size_t ScanSurface::drift_flagged_nodes() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [&](const FitResult& n) {
    return n.valid && n.max_trace_drift > trace_tolerance;
  }));
}

double ScanSurface::max_trace_drift() const {
  double m = 0.0;
  for (const auto& n : nodes) {
    if (n.valid) m = std::max(m, n.max_trace_drift);
  }
  return m;
}

std::vector<Coupling> default_sigma_grid() {
  std::vector<Coupling> grid;
  for (int i = 0; i < 25; ++i) grid.push_back(Coupling::finite(std::pow(10.0, 2.0 + i / 24.0)));
  grid.push_back(Coupling::conservative());
  return grid;
}

std::vector<double> default_velocity_grid() {
  std::vector<double> grid;
  for (int i = 0; i < 40; ++i) grid.push_back(5.6 + (9.5 - 5.6) * i / 39.0);
  return grid;
}

ScanSurface scan(const BasisContext& ctx, std::span<const MeasurementRecord> records,
                 std::span<const Coupling> sigma_grid, std::span<const double> velocity_grid,
                 const FitOptions& options) {
  if (sigma_grid.empty() || velocity_grid.empty()) throw std::invalid_argument("scan grids must be non-empty");
  if (records.empty()) throw std::invalid_argument("scan needs at least one record");
  validate_records(records);
  options.config.validate();
  for (double v : velocity_grid) {
    flight_time(ctx, v, options.config.flight_length, options.config.velocity_bounds,
                options.config.allow_any_velocity);
  }
  const double delta = delta_chi2_for_level(options.confidence_level);

  const std::size_t ns = sigma_grid.size(), nv = velocity_grid.size(), nr = records.size();
  std::vector<OperatorSet> ops;
  ops.reserve(ns);
  for (const auto& s : sigma_grid) ops.push_back(build_operators(ctx, s));

  std::vector<RecordOutcome> outcomes(ns * nr);
  run_parallel(ns * nr, options.threads, [&](std::size_t job) {
    const std::size_t is = job / nr, r = job % nr;
    try {
      outcomes[job] = evaluate_record(ctx, ops[is], sigma_grid[is], velocity_grid, records[r], options);
    } catch (const std::exception& e) {
      outcomes[job].error = describe(r, records[r]) + ": " + e.what();
    }
  });

  ScanSurface surface;
  surface.sigma_grid.assign(sigma_grid.begin(), sigma_grid.end());
  surface.velocity_grid.assign(velocity_grid.begin(), velocity_grid.end());
  surface.chi2 = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(ns), static_cast<Eigen::Index>(nv), nan);
  surface.nodes.resize(ns * nv);
  surface.trace_tolerance = options.propagation.trace_tolerance;

  Eigen::VectorXd t(static_cast<Eigen::Index>(nr)), err(static_cast<Eigen::Index>(nr));
  for (std::size_t r = 0; r < nr; ++r) {
    t(static_cast<Eigen::Index>(r)) = records[r].transmission;
    err(static_cast<Eigen::Index>(r)) = records[r].error;
  }
  for (std::size_t is = 0; is < ns; ++is) {
    std::string row_error;
    for (std::size_t r = 0; r < nr && row_error.empty(); ++r) row_error = outcomes[is * nr + r].error;
    for (std::size_t iv = 0; iv < nv; ++iv) {
      FitResult& node = surface.nodes[is * nv + iv];
      node.sigma = sigma_grid[is];
      node.velocity = velocity_grid[iv];
      node.n_points = nr;
      if (!row_error.empty()) {
        node.valid = false;
        node.chi2 = nan;
        node.error = row_error;
        continue;
      }
      Eigen::MatrixXd p(static_cast<Eigen::Index>(nr), 3);
      for (std::size_t r = 0; r < nr; ++r) {
        const CachedPopulations& c = outcomes[is * nr + r].per_velocity[iv];
        for (int j = 0; j < 3; ++j) p(static_cast<Eigen::Index>(r), j) = c.populations[static_cast<std::size_t>(j)];
        node.max_trace_drift = std::max(node.max_trace_drift, c.trace_drift);
      }
      try {
        const CoefficientFit fit = constrained_coefficient_fit(p, t, err);
        node.coefficients = fit.coefficients;
        node.chi2 = fit.chi2;
        node.underdetermined = fit.underdetermined;
        surface.chi2(static_cast<Eigen::Index>(is), static_cast<Eigen::Index>(iv)) = fit.chi2;
      } catch (const std::exception& e) {
        node.valid = false;
        node.chi2 = nan;
        node.error = e.what();
      }
    }
  }

  bool found = false;
  for (std::size_t k = 0; k < surface.nodes.size(); ++k) {
    const FitResult& n = surface.nodes[k];
    if (n.valid && (!found || n.chi2 < surface.chi2_min)) {
      surface.chi2_min = n.chi2;
      surface.best = k;
      found = true;
    }
  }
  if (!found) throw std::runtime_error("every scan node failed; first error: " + surface.nodes.front().error);
  surface.confidence_threshold = surface.chi2_min + delta;
  return surface;
}

double delta_chi2_for_level(double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("confidence level must lie in (0, 1)");
  return boost::math::quantile(boost::math::chi_squared(1.0), level);
}

ConfidenceRegion confidence_region(const ScanSurface& surface, double level, std::optional<double> delta) {
  if (surface.nodes.empty() || surface.sigma_grid.empty()) throw std::invalid_argument("empty scan surface");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("confidence level must lie in (0, 1)");
  ConfidenceRegion region;
  region.level = level;
  region.delta_chi2 = delta ? *delta : delta_chi2_for_level(level);
  if (!(region.delta_chi2 >= 0.0) || !std::isfinite(region.delta_chi2)) {
    throw std::invalid_argument("delta chi2 must be nonnegative");
  }
  region.threshold = surface.chi2_min + region.delta_chi2;

  const std::vector<double> prof = surface.profile();
  std::vector<std::size_t> order(prof.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return surface.sigma_grid[a].as_double() < surface.sigma_grid[b].as_double();
  });

  std::optional<double> conservative_chi2;
  for (std::size_t i = 0; i < prof.size(); ++i) {
    if (surface.sigma_grid[i].is_conservative() && !std::isnan(prof[i])) conservative_chi2 = prof[i];
  }
  for (std::size_t i : order) {
    if (std::isnan(prof[i])) continue;
    if (prof[i] <= region.threshold) region.members.push_back(surface.sigma_grid[i]);
    if (conservative_chi2 && !region.parity_sigma && !surface.sigma_grid[i].is_conservative() &&
        prof[i] <= *conservative_chi2 * (1.0 + 1e-3)) {
      region.parity_sigma = surface.sigma_grid[i];
    }
  }
  if (!region.members.empty()) region.lower_bound = region.members.front();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (std::isnan(prof[*it])) continue;
    region.unbounded_above = prof[*it] <= region.threshold;
    break;
  }
  return region;
}

void write_surface_csv(std::ostream& out, const ScanSurface& surface) {
  out << "sigma,velocity,c0,c1,c2,chi2\n";
  for (const auto& n : surface.nodes) {
    out << n.sigma.to_string() << ',' << g17(n.velocity);
    if (n.valid) {
      out << ',' << g17(n.coefficients[0]) << ',' << g17(n.coefficients[1]) << ',' << g17(n.coefficients[2]) << ','
          << g17(n.chi2) << '\n';
    } else {
      out << ",nan,nan,nan,nan\n";
    }
  }
}

void write_summary_json(std::ostream& out, const ScanSurface& surface, const ConfidenceRegion& region) {
  using nlohmann::json;
  const FitResult& best = surface.nodes[surface.best];
  json members = json::array();
  for (const auto& s : region.members) members.push_back(sigma_json(s));
  json j;
  j["chi2_min"] = surface.chi2_min;
  j["best"] = {{"sigma", sigma_json(best.sigma)},
               {"velocity", best.velocity},
               {"c0", best.coefficients[0]},
               {"c1", best.coefficients[1]},
               {"c2", best.coefficients[2]}};
  j["confidence_level"] = region.level;
  j["delta_chi2"] = region.delta_chi2;
  j["sigma_lower_bound"] = region.lower_bound ? sigma_json(*region.lower_bound) : json(nullptr);
  j["region_unbounded_above"] = region.unbounded_above;
  j["region_members"] = members;
  j["parity_sigma"] = region.parity_sigma ? sigma_json(*region.parity_sigma) : json(nullptr);
  j["n_points"] = best.n_points;
  j["underdetermined"] = best.underdetermined;
  j["invalid_nodes"] = surface.invalid_nodes();
  j["trace_tolerance"] = surface.trace_tolerance;
  j["max_trace_drift"] = surface.max_trace_drift();
  j["trace_drift_flagged_nodes"] = surface.drift_flagged_nodes();
  out << j.dump(2) << '\n';
}

}  // namespace entgrav
