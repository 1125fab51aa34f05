#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "entgrav/cli.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using entgrav::cli::run;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream cs(line);
    std::string cell;
    while (std::getline(cs, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "entgrav_cli_test";
  fs::create_directories(dir);
  return dir / name;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  REQUIRE(it != header.end());
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

TEST_CASE("spectrum") {
  const Result r = invoke({"spectrum"});
  REQUIRE(r.code == 0);
  const auto rows = parse_csv(r.out);
  REQUIRE(rows.size() == 21);
  CHECK(rows[0][0] == "n");
  CHECK(rows[0][1] == "a");
  CHECK(rows[0][2] == "E_peV");
  const std::size_t w0 = column(rows[0], "omega_0");
  CHECK(std::stod(rows[4][w0]) == doctest::Approx(4.07e3).epsilon(0.005));
  CHECK(std::stod(rows[1][2]) == doctest::Approx(1.407).epsilon(1e-3));

  const Result one = invoke({"--n-states", "1", "spectrum"});
  REQUIRE(one.code == 0);
  const auto single = parse_csv(one.out);
  REQUIRE(single.size() == 2);
  CHECK(single[1][1] == parse_csv(r.out)[1][1]);

  CHECK(invoke({"spectrum", "--out", "/nonexistent-dir/spectrum.csv"}).code == 2);
  CHECK(invoke({"--n-states", "0", "spectrum"}).code == 2);
  CHECK(invoke({"--particle", "custom", "spectrum"}).code == 2);
}

TEST_CASE("usage errors") {
  CHECK(invoke({}).code == 2);
  CHECK(invoke({"frobnicate"}).code == 2);
  CHECK(invoke({"spectrum", "predict"}).code == 2);
  CHECK(invoke({"--sigma", "-5", "predict"}).code == 2);
  CHECK(invoke({"--sigma", "inf", "predict"}).code == 2);
  const Result help = invoke({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("synth") != std::string::npos);
}

TEST_CASE("predict") {
  const Result r = invoke({"predict"});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["entropic_power_W"].get<double>() == doctest::Approx(1.76e-31).epsilon(0.01));
  CHECK(j["dp_power_W"].get<double>() == doctest::Approx(1.66e-27).epsilon(0.01));
  CHECK(j["sigma_bound"].get<double>() == doctest::Approx(4.6e5).epsilon(0.02));

  const auto kg = nlohmann::json::parse(invoke({"--particle", "custom", "--mass", "1", "predict"}).out);
  CHECK(kg["dp_power_W"].get<double>() == doctest::Approx(1.0).epsilon(0.02));
  CHECK(kg["entropic_power_W"].get<double>() == doctest::Approx(1.25e-13).epsilon(0.01));

  const auto doubled = nlohmann::json::parse(invoke({"predict", "--backreaction"}).out);
  CHECK(doubled["dp_power_selected_W"].get<double>() == 2.0 * j["dp_power_W"].get<double>());
  CHECK(j["dp_power_selected_W"].get<double>() == j["dp_power_W"].get<double>());
}

TEST_CASE("config file, with flags taking precedence") {
  const fs::path cfg = scratch("run.ini");
  {
    std::ofstream out(cfg);
    out << "sigma=250\n";
  }
  const auto from_file = nlohmann::json::parse(invoke({"--config", cfg.string(), "predict"}).out);
  CHECK(from_file["sigma"].get<double>() == 250.0);
  const auto overridden = nlohmann::json::parse(invoke({"--config", cfg.string(), "--sigma", "1000", "predict"}).out);
  CHECK(overridden["sigma"].get<double>() == 1000.0);
  CHECK(invoke({"--config", scratch("missing.ini").string(), "predict"}).code == 2);
}

TEST_CASE("simulate") {
  const Result traj = invoke({"--n-states", "8", "simulate", "--outputs", "5"});
  REQUIRE(traj.code == 0);
  const auto rows = parse_csv(traj.out);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].front() == "tau");
  CHECK(rows[0].back() == "trace_drift");
  CHECK(std::stod(rows[5][0]) == doctest::Approx(41.7).epsilon(0.01));

  // Strong coupling leaks past the trace tolerance: fails by default.
  CHECK(invoke({"--n-states", "8", "--sigma", "20", "simulate", "--outputs", "2"}).code == 1);
  CHECK(invoke({"--n-states", "8", "--sigma", "20", "simulate", "--outputs", "2", "--record-drift"}).code == 0);
  CHECK(invoke({"--velocity", "3", "simulate"}).code == 2);
  CHECK(invoke({"--n-states", "8", "--velocity", "12", "simulate", "--allow-any-velocity", "--outputs", "2"}).code == 0);

  const fs::path data = scratch("sim.csv");
  {
    std::ofstream out(data);
    out << "strength_m_per_s,omega_rad_per_s,transmission,error\n0,4067,1,0.03\n";
  }
  const Result scan = invoke({"--n-states", "8", "--data", data.string(), "simulate", "--coefficients", "1.46,0.5,0.5"});
  REQUIRE(scan.code == 0);
  const auto srows = parse_csv(scan.out);
  REQUIRE(srows.size() == 2);
  CHECK(srows[0].back() == "T_model");
  CHECK(std::stod(srows[1].back()) == doctest::Approx(1.073).epsilon(1e-3));
}

TEST_CASE("sweep") {
  const Result empty = invoke({"sweep", "--points", "0"});
  CHECK(empty.code == 0);
  CHECK(parse_csv(empty.out).size() == 1);

  const Result strength = invoke({"--sigma", "inf", "sweep", "--mode", "strength", "--points", "17",
                                  "--coefficients", "1.46,0.5,0.5"});
  REQUIRE(strength.code == 0);
  const auto rows = parse_csv(strength.out);
  REQUIRE(rows.size() == 18);
  const std::size_t tcol = column(rows[0], "T_model");
  std::vector<double> t;
  for (std::size_t i = 1; i < rows.size(); ++i) t.push_back(std::stod(rows[i][tcol]));
  const auto dip = std::min_element(t.begin(), t.end());
  CHECK(dip != t.begin());
  CHECK(dip != t.end() - 1);
  CHECK(t.front() - *dip > 0.05);
  CHECK(t.back() - *dip > 0.01);

  const Result both = invoke({"--sigma", "1e6", "sweep", "--mode", "frequency", "--from", "3800", "--to", "4300",
                              "--points", "3"});
  REQUIRE(both.code == 0);
  const auto brows = parse_csv(both.out);
  REQUIRE(brows.size() == 7);
  const std::size_t bt = column(brows[0], "T_model");
  for (std::size_t i = 1; i <= 3; ++i) {
    CHECK(brows[i][0] == "1000000");
    CHECK(brows[i + 3][0] == "inf");
    CHECK(std::fabs(std::stod(brows[i][bt]) - std::stod(brows[i + 3][bt])) < 1e-3);
  }
  CHECK(invoke({"sweep", "--mode", "volume"}).code == 2);
}

TEST_CASE("synth output is byte-identical across runs") {
  const fs::path a = scratch("synth_a.csv"), b = scratch("synth_b.csv"), c = scratch("synth_c.csv");
  const std::vector<std::string> base{"--n-states", "8", "--sigma", "inf", "--seed", "17"};
  auto args = [&](const fs::path& out) {
    std::vector<std::string> v = base;
    v.insert(v.end(), {"--out", out.string(), "synth"});
    return v;
  };
  REQUIRE(invoke(args(a)).code == 0);
  REQUIRE(invoke(args(b)).code == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(parse_csv(slurp(a)).size() == 21);
  REQUIRE(invoke({"--n-states", "8", "--sigma", "inf", "--seed", "18", "--out", c.string(), "synth"}).code == 0);
  CHECK(slurp(a) != slurp(c));
}

TEST_CASE("fit") {
  CHECK(invoke({"fit"}).code == 2);
  CHECK(invoke({"--data", scratch("absent.csv").string(), "fit"}).code == 2);

  const fs::path bad = scratch("bad.csv");
  {
    std::ofstream out(bad);
    out << "strength_m_per_s,omega_rad_per_s,transmission,error\n0.002,4067,0.8,-1\n";
  }
  const Result rejected = invoke({"--data", bad.string(), "fit"});
  CHECK(rejected.code == 2);
  CHECK(rejected.err.find(":2:") != std::string::npos);

  const fs::path one = scratch("one.csv");
  {
    std::ofstream out(one);
    out << "strength_m_per_s,omega_rad_per_s,transmission,error\n0.00205,4067,0.8,0.03\n";
  }
  const fs::path surface = scratch("surface.csv");
  fs::remove(scratch("surface.json"));
  const Result r = invoke({"--n-states", "10", "--data", one.string(), "--sigma", "500,inf", "--velocity", "6.58,7",
                           "--out", surface.string(), "--threads", "1", "fit"});
  REQUIRE(r.code == 0);
  const auto rows = parse_csv(slurp(surface));
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == std::vector<std::string>{"sigma", "velocity", "c0", "c1", "c2", "chi2"});
  const auto summary = nlohmann::json::parse(slurp(scratch("surface.json")));
  CHECK(summary["underdetermined"].get<bool>());
  CHECK(summary["n_points"].get<int>() == 1);
  CHECK(summary["chi2_min"].get<double>() < 1e-12);
  CHECK(summary["confidence_level"].get<double>() == 0.9);
  CHECK(summary.contains("sigma_lower_bound"));
  CHECK(summary["best"].contains("velocity"));
}

TEST_CASE("installed binary reports exit codes") {
  const fs::path out = scratch("bin_spectrum.csv");
  const std::string cli = ENTGRAV_CLI_PATH;
  const int ok = std::system((cli + " --n-states 3 spectrum --out " + out.string() + " > /dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(ok) == 0);
  CHECK(parse_csv(slurp(out)).size() == 4);
  const int usage = std::system((cli + " --n-states 3 spectrum --bogus > /dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(usage) == 2);
}
