#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace entgrav::cli {

enum class Command { spectrum, simulate, sweep, fit, predict, synth };

enum ExitCode : int { exit_success = 0, exit_failure = 1, exit_usage = 2 };

/// Usage or I/O problem (exit code 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  Command command = Command::spectrum;

  std::string particle = "neutron";  // neutron | custom
  std::optional<double> mass;        // kg, custom particles only
  double g = 9.81;
  std::size_t n_states = 20;

  std::vector<std::string> sigma;    // numbers or "inf"; meaning depends on command
  std::vector<double> velocity;      // m/s
  std::optional<double> strength;    // m/s
  std::optional<double> omega;       // rad/s
  std::optional<std::array<double, 3>> coefficients;

  std::string sweep_mode = "strength";  // strength | frequency
  double sweep_from = 0.0;
  double sweep_to = 4e-3;
  std::size_t sweep_points = 21;

  std::size_t outputs = 101;
  bool record_drift = false;
  double trace_tolerance = 1e-4;
  bool allow_any_velocity = false;

  std::string data;
  std::string out;
  std::string summary;
  std::string cache;

  std::uint64_t seed = 1;
  double noise_scale = 1.0;
  double error = 0.03;
  double level = 0.90;
  std::optional<double> delta_chi2;
  double r0 = 1e-15;
  bool backreaction = false;
  std::size_t threads = 0;
};

/// Parses arguments (without the program name). Values from --config are
/// overridden by flags. Throws UsageError; returns nullopt after printing
/// help to `out`.
std::optional<RunConfig> parse_arguments(const std::vector<std::string>& args, std::ostream& out);

/// Validates the configuration and runs the command. Returns an exit code
/// and reports problems on `err`.
int execute(const RunConfig& config, std::ostream& out, std::ostream& err);

/// parse_arguments followed by execute.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace entgrav::cli
