#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "entgrav/experiment.hpp"

using namespace entgrav;

namespace {

const Populations initial{0.597, 0.340, 0.063};

std::vector<MeasurementRecord> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_records(in, "mem.csv");
}

std::string parse_error(const std::string& text) {
  try {
    parse(text);
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("Flight time") {
  const BasisContext ctx = neutron_context();
  CHECK(flight_time(ctx, 6.58) == doctest::Approx(41.7).epsilon(0.01));
  CHECK(flight_time(ctx, 9.5) / flight_time(ctx, 5.6) == doctest::Approx(5.6 / 9.5).epsilon(1e-14));
  CHECK(flight_time(ctx, 7.0, 0.60) == doctest::Approx(2.0 * flight_time(ctx, 7.0, 0.30)).epsilon(1e-15));
  CHECK_THROWS_AS(flight_time(ctx, 12.0), std::invalid_argument);
  CHECK_THROWS_AS(flight_time(ctx, 5.0), std::invalid_argument);
  CHECK(flight_time(ctx, 12.0, 0.30, {}, true) == doctest::Approx(flight_time(ctx, 6.0) / 2.0));
  CHECK_THROWS(flight_time(ctx, 7.0, 0.0));
  CHECK_THROWS(flight_time(ctx, -7.0, 0.3, {}, true));
}

TEST_CASE("Transmission") {
  CHECK(transmission(initial, {1, 1, 1}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(transmission(initial, {1.46, 0.50, 0.50}) == doctest::Approx(1.073).epsilon(1e-3));
  CHECK(transmission(initial, {0, 0, 0}) == 0.0);
  CHECK_THROWS_AS(transmission(initial, {0.5, 1.0, 0.2}), std::invalid_argument);
  CHECK_THROWS_AS(transmission(initial, {1.0, 0.5, -0.1}), std::invalid_argument);
}

TEST_CASE("Transmission is monotone in each coefficient") {
  const Coefficients base{1.2, 0.7, 0.3};
  const double t0 = transmission(initial, base);
  for (std::size_t j = 0; j < 3; ++j) {
    Coefficients c = base;
    c[j] += 0.05;
    if (j > 0 && c[j] > c[j - 1]) continue;
    CHECK(transmission(initial, c) >= t0);
  }
}

TEST_CASE("Protocol configuration validation") {
  ProtocolConfig config;
  CHECK_NOTHROW(config.validate());
  config.initial_populations = {0.6, 0.5, 0.1};
  CHECK_THROWS(config.validate());
  config = {};
  config.coefficients = Coefficients{0.1, 0.2, 0.3};
  CHECK_THROWS(config.validate());
  config = {};
  config.velocity_bounds = {9.0, 6.0};
  CHECK_THROWS(config.validate());
}

TEST_CASE("Measurement record parsing") {
  const std::string header = "strength_m_per_s,omega_rad_per_s,transmission,error\n";
  CHECK(parse(header).empty());
  const auto one = parse(header + "2.05e-3,4070,0.71,0.05\n");
  REQUIRE(one.size() == 1);
  CHECK(one[0].strength == 2.05e-3);
  CHECK(one[0].omega == 4070.0);
  CHECK(one[0].transmission == 0.71);
  CHECK(one[0].error == 0.05);
  // Header with spaces, BOM, blank lines and duplicates are accepted.
  const auto many = parse("\xEF\xBB\xBFstrength_m_per_s, omega_rad_per_s, transmission, error\n\n1,2,3,4\n1,2,3,4\r\n");
  CHECK(many.size() == 2);

  const std::string negative = parse_error(header + "1,2,3,0.1\n2.05e-3,4070,0.71,-0.05\n");
  CHECK(negative.find("mem.csv:3:") == 0);
  CHECK(negative.find("error") != std::string::npos);
  CHECK(parse_error("a,b,c,d\n1,2,3,4\n").find("mem.csv:1:") == 0);
  CHECK(parse_error(header + "1,2,3\n").find("mem.csv:2:") == 0);
  CHECK(parse_error(header + "1,2,3,4,5\n").find("mem.csv:2:") == 0);
  CHECK(parse_error(header + "1,2,x,4\n").find("mem.csv:2:") == 0);
  CHECK(parse_error(header + "1,0,3,4\n").find("mem.csv:2:") == 0);
  CHECK_FALSE(parse_error("").empty());
  CHECK_THROWS_AS(load_records("/nonexistent/records.csv"), DataError);
}

TEST_CASE("Record files round-trip exactly") {
  std::vector<MeasurementRecord> records{{2.05e-3, 4067.2361, 0.1 + 0.2, 0.03}, {0.0, 1e4, 1.0 / 3.0, 1e-7}};
  const auto path = std::filesystem::temp_directory_path() / "entgrav_roundtrip.csv";
  {
    std::ofstream out(path);
    write_records(out, records);
  }
  const auto back = load_records(path);
  std::filesystem::remove(path);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::memcmp(&back[i], &records[i], sizeof(MeasurementRecord)) == 0);
  }
}

TEST_CASE("Zero drive leaves the initial mixture unchanged") {
  const BasisContext ctx = neutron_context();
  const Populations p = simulate_point(ctx, Coupling::conservative(), 6.58, {0.0, 4067.0}, ProtocolConfig{});
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::fabs(p[j] - initial[j]) < 1e-6);
}

TEST_CASE("Resonant depletion and bitwise determinism") {
  const BasisContext ctx = neutron_context();
  const Drive drive{2.05e-3, ctx.transition_frequency(3, 0)};
  const Populations a = simulate_point(ctx, Coupling::conservative(), 6.58, drive, ProtocolConfig{});
  const Populations b = simulate_point(ctx, Coupling::conservative(), 6.58, drive, ProtocolConfig{});
  CHECK(a[0] < 0.597 - 0.05);
  CHECK(std::memcmp(a.data(), b.data(), sizeof a) == 0);
}

TEST_CASE("Far-detuned drive barely changes the populations") {
  const BasisContext ctx = neutron_context();
  // Ten times the 0 -> 3 frequency lies above every transition of the basis.
  const Drive drive{2.05e-3, 10.0 * ctx.transition_frequency(3, 0)};
  const Populations p = simulate_point(ctx, Coupling::conservative(), 6.58, drive, ProtocolConfig{});
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::fabs(p[j] - initial[j]) < 0.01);
}

TEST_CASE("Velocity batches match single velocities") {
  const BasisContext ctx = neutron_context();
  const OperatorSet ops = build_operators(ctx, Coupling::conservative());
  const Drive drive{2.05e-3, 0.95 * ctx.transition_frequency(3, 0)};
  const double velocities[] = {7.9, 6.1, 9.2};
  const PopulationSeries batch = simulate_velocities(ctx, ops, velocities, drive, ProtocolConfig{});
  for (std::size_t i = 0; i < 3; ++i) {
    const Populations p = simulate_point(ctx, ops, velocities[i], drive, ProtocolConfig{});
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(batch.populations(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) == p[j]);
    }
  }
  const double outside[] = {4.0};
  CHECK_THROWS_AS(simulate_velocities(ctx, ops, outside, drive, ProtocolConfig{}), std::invalid_argument);
}

TEST_CASE("Synthetic datasets") {
  const BasisContext ctx = neutron_context();
  SyntheticSpec spec;
  spec.sigma = Coupling::conservative();
  const auto grid = default_synthetic_grid(ctx);
  REQUIRE(grid.size() == 20);
  spec.grid = {grid[4], grid[12], grid[19]};
  spec.noise_scale = 0.0;
  const auto clean = generate_synthetic_dataset(ctx, spec);
  const auto model = model_dataset(ctx, spec);
  REQUIRE(clean.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(clean[i].transmission == model[i].transmission);
    const Populations p = simulate_point(ctx, Coupling::conservative(), spec.velocity,
                                         {spec.grid[i].strength, spec.grid[i].omega}, spec.config, spec.propagation);
    CHECK(clean[i].transmission == transmission(p, spec.coefficients));
    CHECK(clean[i].error == spec.error);
  }

  const auto n1 = add_noise(model, 42, 1.0);
  const auto n2 = add_noise(model, 42, 1.0);
  const auto n3 = add_noise(model, 43, 1.0);
  bool differs = false;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(n1[i].transmission == n2[i].transmission);
    CHECK(n1[i].strength == model[i].strength);
    differs = differs || n1[i].transmission != n3[i].transmission;
  }
  CHECK(differs);
  CHECK_THROWS(add_noise(model, 1, -1.0));

  // Noise standard deviation is noise_scale * error.
  std::vector<MeasurementRecord> flat(4000, MeasurementRecord{0.0, 1.0, 1.0, 0.2});
  const auto noisy = add_noise(flat, 9, 0.5);
  double sum = 0.0, sq = 0.0;
  for (const auto& r : noisy) {
    sum += r.transmission - 1.0;
    sq += (r.transmission - 1.0) * (r.transmission - 1.0);
  }
  const double mean = sum / 4000.0;
  CHECK(std::fabs(mean) < 0.01);
  CHECK(std::sqrt(sq / 4000.0 - mean * mean) == doctest::Approx(0.1).epsilon(0.05));
}

TEST_CASE("Default synthetic grid") {
  const BasisContext ctx = neutron_context();
  const auto grid = default_synthetic_grid(ctx);
  const double w03 = ctx.transition_frequency(3, 0);
  CHECK(grid.front().omega == doctest::Approx(0.85 * w03));
  CHECK(grid[9].omega == doctest::Approx(1.15 * w03));
  CHECK(grid[10].strength == 0.0);
  CHECK(grid[19].strength == doctest::Approx(4e-3));
  CHECK_THROWS(default_synthetic_grid(neutron_context(3)));
}
