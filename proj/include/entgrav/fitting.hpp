#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "entgrav/bouncer_basis.hpp"
#include "entgrav/dynamics.hpp"
#include "entgrav/experiment.hpp"

namespace entgrav {

struct CoefficientFit {
  Coefficients coefficients{};
  double chi2 = 0.0;
  /// Fewer than three records or a rank-deficient weighted design: the
  /// minimum chi2 is still exact but the coefficients are not unique.
  bool underdetermined = false;
};

/// Minimizes sum ((t - P c) / err)^2 subject to c0 >= c1 >= c2 >= 0 by
/// non-negative least squares on the increments u (c2 = u2, c1 = u1 + u2,
/// c0 = u0 + u1 + u2). P is n x 3. Throws std::invalid_argument for
/// mismatched sizes, nonpositive errors or an all-zero P.
CoefficientFit constrained_coefficient_fit(const Eigen::MatrixXd& populations,
                                           const Eigen::VectorXd& transmissions,
                                           const Eigen::VectorXd& errors);

/// Lawson-Hanson active-set solution of min |A x - b| subject to x >= 0.
Eigen::VectorXd nnls(const Eigen::MatrixXd& a, const Eigen::VectorXd& b);

/// Cached final populations of one (context, protocol, sigma, velocity,
/// drive) combination.
struct CachedPopulations {
  Populations populations{};
  double trace_drift = 0.0;
};

/// Thread-safe population cache. With a directory, entries are appended to
/// `populations.tsv` in hexadecimal float notation and reloaded on
/// construction, so a second run reproduces the first bitwise. Concurrent
/// writes of one key are harmless because values are deterministic.
class PopulationCache {
 public:
  PopulationCache() = default;
  /// Throws std::runtime_error when the directory cannot be created.
  explicit PopulationCache(std::filesystem::path directory);

  std::optional<CachedPopulations> find(std::uint64_t key) const;
  void store(std::uint64_t key, const CachedPopulations& value);
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::unordered_map<std::uint64_t, CachedPopulations> entries_;
  std::optional<std::filesystem::path> file_;
};

/// 64-bit FNV-1a digest of everything a population result depends on.
std::uint64_t population_key(const BasisContext& ctx, const ProtocolConfig& config,
                             const PropagationOptions& options, Coupling sigma, double velocity,
                             const Drive& drive);

/// Options shared by population_matrix and scan. Propagation records trace
/// drift instead of throwing: leakage out of the truncated basis is counted
/// as model error and reported per node.
struct FitOptions {
  ProtocolConfig config;
  PropagationOptions propagation = [] {
    PropagationOptions o;
    o.on_trace_drift = TraceDriftAction::record;
    return o;
  }();
  PopulationCache* cache = nullptr;
  /// Worker threads; 0 uses the hardware concurrency.
  std::size_t threads = 0;
  /// Level of the confidence threshold stored in the surface.
  double confidence_level = 0.90;
};

/// n_records x 3 matrix of final populations. Propagation failures are
/// rethrown as PropagationError naming the offending record.
Eigen::MatrixXd population_matrix(const BasisContext& ctx, Coupling sigma, double velocity,
                                  std::span<const MeasurementRecord> records, const FitOptions& options = {});

struct FitResult {
  Coupling sigma = Coupling::conservative();
  double velocity = 0.0;
  Coefficients coefficients{};
  double chi2 = 0.0;
  std::size_t n_points = 0;
  bool valid = true;
  bool underdetermined = false;
  double max_trace_drift = 0.0;
  std::string error;  // set when the node is invalid
};

struct ScanSurface {
  std::vector<Coupling> sigma_grid;
  std::vector<double> velocity_grid;
  Eigen::MatrixXd chi2;        // sigma x velocity; NaN at invalid nodes
  std::vector<FitResult> nodes;  // row-major over (sigma, velocity)
  double chi2_min = 0.0;
  std::size_t best = 0;  // index into nodes
  double confidence_threshold = 0.0;
  double trace_tolerance = PropagationOptions::default_trace_tolerance;

  const FitResult& node(std::size_t i_sigma, std::size_t i_velocity) const {
    return nodes[i_sigma * velocity_grid.size() + i_velocity];
  }
  /// chi2(sigma) = min over velocity; NaN when every node of the row failed.
  std::vector<double> profile() const;
  /// Node index achieving the profile minimum of each sigma row (or none).
  std::vector<std::optional<std::size_t>> profile_nodes() const;
  std::size_t invalid_nodes() const;
  /// Nodes whose trace drift exceeded trace_tolerance.
  std::size_t drift_flagged_nodes() const;
  double max_trace_drift() const;
};

/// 25 log-spaced points in [1e2, 1e3] followed by the conservative marker.
std::vector<Coupling> default_sigma_grid();
/// 40 evenly spaced velocities in [5.6, 9.5] m/s.
std::vector<double> default_velocity_grid();

/// Fits every (sigma, velocity) node. Each (sigma, record) pair is propagated
/// once for all velocities; pairs run in parallel. A failed pair marks the
/// affected nodes invalid and the scan continues. Throws std::invalid_argument
/// for empty grids or records, and std::runtime_error if every node fails.
ScanSurface scan(const BasisContext& ctx, std::span<const MeasurementRecord> records,
                 std::span<const Coupling> sigma_grid, std::span<const double> velocity_grid,
                 const FitOptions& options = {});

/// chi2 offset for a one-parameter profile at the given confidence level:
/// the chi-square(1) quantile, 2.7055 at 0.90. Throws std::invalid_argument
/// unless 0 < level < 1.
double delta_chi2_for_level(double level);

struct ConfidenceRegion {
  double level = 0.90;
  double delta_chi2 = 0.0;
  double threshold = 0.0;
  std::vector<Coupling> members;          // ascending sigma
  std::optional<Coupling> lower_bound;    // smallest sigma in the region
  bool unbounded_above = false;           // largest grid sigma is a member
  std::optional<Coupling> parity_sigma;   // smallest sigma with chi2 <= chi2_cons (1 + 1e-3)
};

/// Profile-likelihood region {sigma : chi2(sigma) <= chi2_min + delta}. When
/// delta is not given it is delta_chi2_for_level(level). Throws
/// std::invalid_argument for an empty surface or a level outside (0, 1).
ConfidenceRegion confidence_region(const ScanSurface& surface, double level = 0.90,
                                   std::optional<double> delta = std::nullopt);

/// sigma,velocity,c0,c1,c2,chi2 with one row per node.
void write_surface_csv(std::ostream& out, const ScanSurface& surface);

/// JSON summary of the best node and the confidence region.
void write_summary_json(std::ostream& out, const ScanSurface& surface, const ConfidenceRegion& region);

}  // namespace entgrav
