#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "divshape_c.h"

namespace {

constexpr int kPass = 0;
constexpr int kFail = 1;
constexpr int kConfig = 2;

struct Common {
  std::string config;
  std::string out;
  std::string mesh;
  uint64_t seed = 0;
  double h = 0.0;
};

int report_error(dvs_status s) {
  std::fprintf(stderr, "divshape: %s error: %s\n", dvs_status_name(s), dvs_last_error());
  return s == DVS_ERR_CONFIG || s == DVS_ERR_ARGUMENT ? kConfig : kFail;
}

int run_preset(const std::string& command, const std::vector<std::string>& presets, const Common& c,
               const CLI::App& sub) {
  dvs_config* cfg = nullptr;
  dvs_status s = c.config.empty() ? dvs_config_default(presets.front().c_str(), &cfg) : dvs_config_load(c.config.c_str(), &cfg);
  if (s != DVS_OK) return report_error(s);
  const char* preset = nullptr;
  dvs_config_preset(cfg, &preset);
  bool allowed = false;
  for (const std::string& p : presets) allowed = allowed || p == preset;
  if (!allowed) {
    std::fprintf(stderr, "divshape: config error: %s: preset '%s' does not belong to '%s'\n", c.config.c_str(), preset,
                 command.c_str());
    dvs_config_free(cfg);
    return kConfig;
  }
  if (sub.count("--seed")) s = dvs_config_set_seed(cfg, c.seed);
  if (s == DVS_OK && sub.count("--h")) s = dvs_config_set_h(cfg, c.h);
  if (s == DVS_OK && !c.mesh.empty()) s = dvs_config_set_param(cfg, "mesh", ("\"" + c.mesh + "\"").c_str());
  if (s != DVS_OK) {
    dvs_config_free(cfg);
    return report_error(s);
  }

  dvs_report* rep = nullptr;
  s = dvs_run(cfg, &rep);
  dvs_config_free(cfg);
  if (s != DVS_OK) return report_error(s);
  for (size_t i = 0; i < dvs_report_criterion_count(rep); ++i) {
    int id = 0, passed = 0;
    const char* name = nullptr;
    dvs_report_criterion(rep, i, &id, &name, &passed);
    std::printf("%s criterion %d (%s)\n", passed ? "PASS" : "FAIL", id, name);
  }
  if (!c.out.empty()) {
    s = dvs_report_write(rep, c.out.c_str());
    if (s != DVS_OK) {
      dvs_report_free(rep);
      return report_error(s);
    }
    std::printf("report written to %s\n", c.out.c_str());
  } else {
    std::printf("%s\n", dvs_report_summary(rep));
  }
  const int code = dvs_report_passed(rep) ? kPass : kFail;
  dvs_report_free(rep);
  return code;
}

int run_diff(const std::string& a, const std::string& b, double threshold, const std::string& out) {
  dvs_report *ra = nullptr, *rb = nullptr;
  dvs_status s = dvs_report_load(a.c_str(), &ra);
  if (s == DVS_OK) s = dvs_report_load(b.c_str(), &rb);
  dvs_diff* d = nullptr;
  if (s == DVS_OK) s = dvs_compare(ra, rb, threshold, &d);
  dvs_report_free(ra);
  dvs_report_free(rb);
  if (s != DVS_OK) return report_error(s);
  for (size_t i = 0; i < dvs_diff_count(d); ++i) {
    const char* field = nullptr;
    double va = 0, vb = 0, rel = 0;
    int ex = 0;
    dvs_diff_entry(d, i, &field, &va, &vb, &rel, &ex);
    std::printf("%s %s: %.10g -> %.10g (relative %.3g)\n", ex ? "EXCEEDS" : "differs", field, va, vb, rel);
  }
  const size_t exceeding = dvs_diff_exceeding(d);
  std::printf("%zu fields differ, %zu above threshold %g\n", dvs_diff_count(d), exceeding, threshold);
  int code = exceeding == 0 ? kPass : kFail;
  if (!out.empty()) {
    if (std::FILE* f = std::fopen(out.c_str(), "w")) {
      std::fprintf(f, "%s\n", dvs_diff_json(d));
      std::fclose(f);
    } else {
      std::fprintf(stderr, "divshape: io error: cannot write %s\n", out.c_str());
      code = kFail;
    }
  }
  dvs_diff_free(d);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Divergence-free decompositions and Navier-Stokes shape optimization experiments"};
  app.require_subcommand(1);
  app.set_help_flag("--help", "Print this help message and exit");

  const std::vector<std::tuple<std::string, std::vector<std::string>, std::string>> commands{
      {"decompose", {"decomposition"}, "Divergence-free partition of random fields and constant stability"},
      {"localize", {"localization"}, "Localized decomposition around obstacles"},
      {"periods", {"periods"}, "Periods of closed forms and potential reconstruction on an annulus"},
      {"witness", {"identity-witness"}, "Compactly supported approximants by shifted pieces"},
      {"solve-nse", {"nse-verify"}, "Stationary Navier-Stokes verification, optionally on a given mesh"},
      {"optimize", {"optimize", "optimize-interior"}, "Shape optimization with convergence diagnostics"},
      {"check-family", {"check-family"}, "Hausdorff-Pompeiu and class-C validation checks"}};

  std::map<std::string, Common> opts;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, presets, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->set_help_flag("--help", "Print this help message and exit");
    Common& c = opts[name];
    sub->add_option("--config", c.config, "JSON experiment configuration");
    sub->add_option("--out", c.out, "Output directory for summary.json, tables and artifacts");
    sub->add_option("--seed", c.seed, "Seed of every random choice");
    sub->add_option("--h", c.h, "Base mesh size")->check(CLI::PositiveNumber);
    if (name == "solve-nse") sub->add_option("--mesh", c.mesh, "Mesh file to solve on");
    subs[name] = sub;
  }
  std::string diff_a, diff_b, diff_out;
  double threshold = 0.2;
  CLI::App* diff = app.add_subcommand("report-diff", "Field-wise relative differences of two report summaries");
  diff->set_help_flag("--help", "Print this help message and exit");
  diff->add_option("a", diff_a, "First summary.json or report directory")->required();
  diff->add_option("b", diff_b, "Second summary.json or report directory")->required();
  diff->add_option("--threshold", threshold, "Relative difference flagged as exceeding")->check(CLI::NonNegativeNumber);
  diff->add_option("--out", diff_out, "Write the diff as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  if (diff->parsed()) return run_diff(diff_a, diff_b, threshold, diff_out);
  for (const auto& [name, presets, help] : commands)
    if (subs[name]->parsed()) return run_preset(name, presets, opts[name], *subs[name]);
  return kConfig;
}
