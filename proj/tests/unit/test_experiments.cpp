#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <span>
#include <string>

#include "doctest.h"
#include "divshape/error.hpp"
#include "divshape/experiments.hpp"
#include "divshape/mesh.hpp"

using namespace divshape;

namespace {

std::string config_error(const std::string& text) {
  try {
    parse_config(text, "run.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

ExperimentConfig cheap_family_check(std::uint64_t seed) {
  ExperimentConfig c = parse_config(R"({"preset": "check-family", "triples": 5, "samples": 3})");
  c.seed = seed;
  c.h = 1.0 / 64.0;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("preset names round trip") {
  for (const Preset p : {Preset::Decomposition, Preset::Localization, Preset::Periods, Preset::IdentityWitness,
                         Preset::NseVerify, Preset::Optimize, Preset::OptimizeInterior, Preset::CheckFamily})
    CHECK(parse_preset(preset_name(p)) == p);
  CHECK_THROWS_WITH_AS(parse_preset("sphere"), doctest::Contains("unknown preset 'sphere'"), ConfigError);
}

TEST_CASE("config parsing") {
  const ExperimentConfig c = parse_config(R"({
    "preset": "decomposition",
    "seed": 7,
    "h": 0.1,
    "fields": 3,
    "tolerances": {"identity_error_2": 1e-11}
  })");
  CHECK(c.preset == Preset::Decomposition);
  CHECK(c.seed == 7);
  CHECK(c.mesh_size() == 0.1);
  CHECK(c.params.at("fields") == 3);
  CHECK(c.tolerance("identity_error_2", 1.0) == 1e-11);
  CHECK(c.tolerance("support_leak", 0.5) == 0.5);
  CHECK(default_config(Preset::NseVerify).mesh_size() == 0.1);

  CHECK(config_error("{\n  \"preset\": \"periods\",\n  \"h\": 0.1,,\n}").find("run.json: syntax error at line 3") !=
        std::string::npos);
  CHECK(config_error(R"({"preset": "nope"})").find("unknown preset 'nope'") != std::string::npos);
  CHECK(config_error(R"({"seed": 1})").find("preset: required") != std::string::npos);
  CHECK(config_error(R"({"preset": "periods", "h": -1})").find("h: must be positive") != std::string::npos);
  CHECK(config_error(R"({"preset": "periods", "seed": "x"})").find("seed:") != std::string::npos);
  CHECK(config_error(R"({"preset": "periods", "fields": 3})").find("fields: unknown field") != std::string::npos);
  CHECK(config_error(R"({"preset": "periods", "tolerances": {"a": "b"}})").find("tolerances.a") != std::string::npos);
  CHECK(config_error("[1, 2]").find("expected a JSON object") != std::string::npos);
}

TEST_CASE("nested optimizer settings are checked when the preset runs") {
  ExperimentConfig c = parse_config(R"({"preset": "optimize", "family": {"B": {"disk": [0.5, 0.5, -1]}}})");
  CHECK_THROWS_WITH_AS(run_preset(c), doctest::Contains("optimize: family.B.disk"), ConfigError);
  c = parse_config(R"({"preset": "optimize", "functional": {"kind": "custom", "integrand": "u1 +"}})");
  CHECK_THROWS_WITH_AS(run_preset(c), doctest::Contains("syntax error at column"), ConfigError);
  c = parse_config(R"({"preset": "optimize", "solver": {"gamma": 0}})");
  CHECK_THROWS_WITH_AS(run_preset(c), doctest::Contains("gamma"), ConfigError);
  c = parse_config(R"({"preset": "optimize", "optimizer": {"max_iter": 3}})");
  CHECK_THROWS_AS(run_preset(c), ConfigError);
}

TEST_CASE("check-family preset reports its criterion once and is deterministic") {
  const ReportBundle a = run_preset(cheap_family_check(11));
  const ReportBundle b = run_preset(cheap_family_check(11));
  REQUIRE(a.criteria.size() == 1);
  CHECK(a.criteria[0].id == 8);
  CHECK(a.passed());
  CHECK(a.summary().dump() == b.summary().dump());
  CHECK_FALSE(a.summary().contains("timestamps"));
  CHECK(a.summary_with_timestamps().contains("timestamps"));
  CHECK(compare_reports(a, b).empty());
  CHECK_FALSE(compare_reports(a, run_preset(cheap_family_check(12))).empty());
}

TEST_CASE("check-family validates listed domains") {
  ExperimentConfig c = parse_config(R"({"preset": "check-family", "triples": 1, "samples": 1, "domains": [
      {"center": [0.5, 0.5], "radial_coeffs": [0.2],
       "family": {"D": {"box": [0, 0, 1, 1]}, "B": {"disk": [0.5, 0.5, 0.45]}}},
      {"center": [0.5, 0.5], "radial_coeffs": [0.6],
       "family": {"D": {"box": [0, 0, 1, 1]}, "B": {"disk": [0.5, 0.5, 0.45]}}}]})");
  c.h = 1.0 / 64.0;
  const ReportBundle r = run_preset(c);
  CHECK_FALSE(r.passed());
  CHECK(r.measured.at("domains")[0].at("status") == "valid");
  CHECK(r.measured.at("domains")[1].at("status").get<std::string>().find("infeasible") == 0);
}

TEST_CASE("nse-verify preset: rates, zero force and scaling") {
  ExperimentConfig c = default_config(Preset::NseVerify);
  c.h = 0.2;
  const ReportBundle r = run_preset(c);
  REQUIRE(r.criteria.size() == 1);
  CHECK(r.criteria[0].id == 6);
  for (const Check& k : r.criteria[0].checks) {
    CAPTURE(k.name);
    if (k.name == "zero_force_max" || k.name == "uniqueness_scaling" || k.name == "energy_identity_residual" ||
        k.name == "unconverged_solves")
      CHECK(k.passed);
  }
  CHECK(r.tables.count("manufactured.csv") == 1);
}

TEST_CASE("nse-verify solves on a given mesh") {
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / "divshape_nse_mesh";
  std::filesystem::create_directories(dir);
  const std::string mesh = (dir / "square.txt").string();
  save_mesh(mesh, triangulate(BoundaryCurve::box({0.0, 0.0}, {1.0, 1.0}), std::span<const BoundaryCurve>{}, 0.2));
  ExperimentConfig c = parse_config(R"({"preset": "nse-verify", "h": 0.2, "force": {"x": "0", "y": "0"}})");
  c.params["mesh"] = mesh;
  const ReportBundle r = run_preset(c);
  CHECK(r.measured.at("mesh_solve").at("converged") == true);
  CHECK(r.measured.at("mesh_solve").at("energy_residual") == 0.0);
  const auto written = r.write((dir / "out").string());
  CHECK(std::filesystem::exists(dir / "out" / "solution" / "velocity.csv"));
  CHECK(std::filesystem::exists(dir / "out" / "solution" / "summary.json"));
  CHECK(written.size() == 1 + r.tables.size() + r.artifacts.size());
  c.params["mesh"] = (dir / "missing.txt").string();
  CHECK_THROWS_AS(run_preset(c), Error);
}

TEST_CASE("report bundles round trip through summary.json") {
  const ReportBundle a = run_preset(cheap_family_check(5));
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / "divshape_roundtrip";
  std::filesystem::remove_all(dir);
  a.write(dir.string());
  CHECK(slurp(dir / "star_samples.csv") == a.tables.at("star_samples.csv"));
  const ReportBundle b = ReportBundle::load(dir.string());
  CHECK(b.preset == a.preset);
  CHECK(b.summary().dump() == a.summary().dump());
  CHECK(compare_reports(a, b).empty());
  CHECK_THROWS_AS(ReportBundle::load((dir / "star_samples.csv").string()), ConfigError);
}

TEST_CASE("compare_reports") {
  ReportBundle a;
  a.preset = "decomposition";
  a.measured = {{"constant_estimate", 6.0}, {"nested", {{"x", 1.0}}}, {"list", {1.0, 2.0}}};
  ReportBundle b = a;
  b.measured["constant_estimate"] = 6.6;
  b.measured["list"] = {1.0, 3.0};
  const auto d = compare_reports(a, b, 0.2);
  REQUIRE(d.size() == 2);
  CHECK(d[0].field == "measured.constant_estimate");
  CHECK(d[0].relative == doctest::Approx(0.6 / 6.6));
  CHECK_FALSE(d[0].exceeds);
  CHECK(d[1].field == "measured.list[1]");
  CHECK(d[1].exceeds);
  CHECK(diff_to_json(d, 0.2).at("exceeded") == true);
  b.preset = "periods";
  CHECK_THROWS_WITH_AS(compare_reports(a, b), doctest::Contains("different presets"), PreconditionError);
}

TEST_CASE("decomposition bundles at h and h/2 keep the constant within 20%") {
  ExperimentConfig c = parse_config(R"({"preset": "decomposition", "fields": 1, "levels": 2})");
  c.h = 0.05;
  const ReportBundle coarse = run_preset(c);
  c.h = 0.025;
  const ReportBundle fine = run_preset(c);
  CHECK(coarse.passed());
  REQUIRE(coarse.criteria.size() == 2);
  CHECK(coarse.criteria[0].id == 1);
  CHECK(coarse.criteria[1].id == 2);
  bool seen = false;
  for (const DiffEntry& e : compare_reports(coarse, fine, 0.2))
    if (e.field == "measured.constant_estimate") {
      seen = true;
      CHECK_FALSE(e.exceeds);
    }
  CHECK(seen);
}

TEST_CASE("module errors carry the preset name") {
  ExperimentConfig c = parse_config(R"({"preset": "optimize", "optimizer": {"initial": [0.7]}})");
  c.h = 0.1;
  CHECK_THROWS_WITH_AS(run_preset(c), doctest::Contains("optimize: no feasible initial simplex"), InfeasibleError);
}
