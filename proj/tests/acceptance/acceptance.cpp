#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <string>
#include <vector>

#include "divshape/experiments.hpp"

using namespace divshape;

namespace {

struct Pinned {
  int criterion;
  Preset preset;
  double h;
  std::map<std::string, double> tolerances;
  nlohmann::json params = nlohmann::json::object();
};

std::vector<Pinned> pinned() {
  const double res = 1.0 / 128.0;
  return {
      {1, Preset::Decomposition, 0.05,
       {{"identity_error_2", 1e-12}, {"identity_error_4", 1e-12}, {"support_leak", 0.0}, {"divergence_residual", 1e-10}},
       {{"fields", 20}, {"levels", 3}}},
      {2, Preset::Decomposition, 0.05, {{"constant_variation_2", 0.2}, {"constant_variation_4", 0.2}},
       {{"fields", 20}, {"levels", 3}}},
      {3, Preset::Localization, 0.02,
       {{"one_disk_constant_error", 1e-10}, {"one_disk_obstacle_ratio", 1e-8},
        {"two_disks_constant_error", 1e-10}, {"two_disks_obstacle_ratio", 1e-8},
        {"arc_constant_error", 1e-10}, {"arc_obstacle_ratio", 1e-8}}},
      {4, Preset::Periods, 0.05,
       {{"winding_period_error", 1e-8}, {"period_error", 1e-8}, {"post_subtraction_period", 1e-8},
        {"path_independence", 1e-8}, {"potential_reconstruction", 1e-6}},
       {{"paths", 10}}},
      {5, Preset::IdentityWitness, 0.02,
       {{"tables_not_decreasing", 0.0}, {"relative_distance", 0.05}, {"refinement_ratio", 1.0},
        {"approximant_divergence", 1e-10}}},
      {6, Preset::NseVerify, 0.1,
       {{"velocity_h1_rate", 1.8}, {"pressure_l2_rate", 1.8}, {"energy_identity_residual", 1e-10},
        {"unconverged_solves", 0.0}, {"zero_force_max", 0.0}, {"uniqueness_scaling", 0.0}}},
      {7, Preset::Optimize, 0.05,
       {{"accepted_cost_increase", 0.0}, {"vanishing_ratio", 1e-6}, {"norm_gap", 0.01}, {"fatou_gap", 1e-8},
        {"unwitnessed_probes", 0.0}, {"sweep_run_cost_increase", 0.0}},
       {{"optimizer", {{"max_evals", 200}}}}},
      {8, Preset::CheckFamily, res,
       {{"asymmetry", 0.0}, {"triangle_excess", 4.0 * res}, {"offset_disk_error", 2.0 * res},
        {"star_samples_invalid", 0.0}, {"listed_domains_invalid", 0.0}},
       {{"triples", 100}, {"samples", 10}}},
  };
}

// Thresholds fixed by the run size rather than by a tolerance entry.
std::map<std::string, double> structural(int criterion) {
  if (criterion == 7) return {{"solves", 200.0}, {"sweep_agreement", 0.01}};
  if (criterion == 8) return {{"star_samples_accepted", 10.0}};
  return {};
}

}  // namespace

int main() {
  std::map<Preset, ReportBundle> runs;
  int failures = 0;
  const auto start = std::chrono::steady_clock::now();
  for (const Pinned& p : pinned()) {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::string detail;
    try {
      ExperimentConfig cfg = default_config(p.preset);
      cfg.seed = 20240501;
      cfg.h = p.h;
      for (auto it = p.params.begin(); it != p.params.end(); ++it) cfg.params[it.key()] = it.value();
      // Pin every tolerance, including the two criteria a preset shares.
      for (const Pinned& q : pinned())
        if (q.preset == p.preset) cfg.tolerances.insert(q.tolerances.begin(), q.tolerances.end());
      if (!runs.count(p.preset)) runs.emplace(p.preset, run_preset(cfg));
      const ReportBundle& r = runs.at(p.preset);
      const Criterion* found = nullptr;
      int seen = 0;
      for (const Criterion& c : r.criteria)
        if (c.id == p.criterion) {
          found = &c;
          ++seen;
        }
      if (seen != 1) {
        ok = false;
        detail = "criterion reported " + std::to_string(seen) + " times";
      } else {
        std::map<std::string, double> expected = p.tolerances;
        for (const auto& [k, v] : structural(p.criterion)) expected[k] = v;
        for (const auto& [name, tol] : expected) {
          bool present = false;
          for (const Check& k : found->checks)
            if (k.name == name) {
              present = true;
              if (std::abs(k.threshold - tol) > 1e-12 * std::abs(tol)) {
                ok = false;
                detail += " " + name + " threshold drifted";
              }
            }
          if (!present) {
            ok = false;
            detail += " " + name + " missing";
          }
        }
        for (const Check& k : found->checks) {
          char buf[160];
          std::snprintf(buf, sizeof buf, " %s=%.3g%s%.3g%s", k.name.c_str(), k.value, k.relation.c_str(), k.threshold,
                        k.passed ? "" : "!");
          detail += buf;
        }
        ok = ok && found->passed();
      }
    } catch (const std::exception& e) {
      ok = false;
      detail = std::string(" error: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d (%.1fs):%s\n", ok ? "PASS" : "FAIL", p.criterion, secs, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%d of 8 criteria failed, %.1fs total\n", failures, total);
  return failures == 0 ? 0 : 1;
}
