#include "divshape_c.h"

#include <exception>
#include <string>

#include "divshape/error.hpp"
#include "divshape/experiments.hpp"

struct dvs_config {
  divshape::ExperimentConfig cfg;
  std::string preset;
};

struct dvs_report {
  divshape::ReportBundle bundle;
  std::string summary;
};

struct dvs_diff {
  std::vector<divshape::DiffEntry> entries;
  std::string json;
};

namespace {

thread_local std::string last_error;

template <class F>
dvs_status guarded(F&& f) {
  last_error.clear();
  try {
    f();
    return DVS_OK;
  } catch (const divshape::ConfigError& e) {
    last_error = e.what();
    return DVS_ERR_CONFIG;
  } catch (const divshape::PreconditionError& e) {
    last_error = e.what();
    return DVS_ERR_PRECONDITION;
  } catch (const divshape::InfeasibleError& e) {
    last_error = e.what();
    return DVS_ERR_INFEASIBLE;
  } catch (const divshape::ConvergenceError& e) {
    last_error = e.what();
    return DVS_ERR_CONVERGENCE;
  } catch (const divshape::Error& e) {
    last_error = e.what();
    return DVS_ERR_IO;
  } catch (const std::exception& e) {
    last_error = e.what();
    return DVS_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown error";
    return DVS_ERR_INTERNAL;
  }
}

dvs_status bad_argument(const char* what) {
  last_error = what;
  return DVS_ERR_ARGUMENT;
}

dvs_config* wrap(divshape::ExperimentConfig c) {
  auto* h = new dvs_config{std::move(c), {}};
  h->preset = divshape::preset_name(h->cfg.preset);
  return h;
}

dvs_report* wrap(divshape::ReportBundle b) {
  auto* h = new dvs_report{std::move(b), {}};
  h->summary = h->bundle.summary().dump(2);
  return h;
}

}  // namespace

extern "C" {

const char* dvs_last_error(void) { return last_error.c_str(); }

const char* dvs_status_name(dvs_status s) {
  switch (s) {
    case DVS_OK: return "ok";
    case DVS_ERR_ARGUMENT: return "argument";
    case DVS_ERR_CONFIG: return "config";
    case DVS_ERR_PRECONDITION: return "precondition";
    case DVS_ERR_INFEASIBLE: return "infeasible";
    case DVS_ERR_CONVERGENCE: return "convergence";
    case DVS_ERR_IO: return "io";
    case DVS_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

dvs_status dvs_config_default(const char* preset, dvs_config** out) {
  if (!preset || !out) return bad_argument("null argument");
  return guarded([&] { *out = wrap(divshape::default_config(divshape::parse_preset(preset))); });
}

dvs_status dvs_config_parse(const char* json_text, dvs_config** out) {
  if (!json_text || !out) return bad_argument("null argument");
  return guarded([&] { *out = wrap(divshape::parse_config(json_text)); });
}

dvs_status dvs_config_load(const char* path, dvs_config** out) {
  if (!path || !out) return bad_argument("null argument");
  return guarded([&] { *out = wrap(divshape::load_config(path)); });
}

dvs_status dvs_config_preset(const dvs_config* cfg, const char** name) {
  if (!cfg || !name) return bad_argument("null argument");
  *name = cfg->preset.c_str();
  return DVS_OK;
}

dvs_status dvs_config_set_seed(dvs_config* cfg, uint64_t seed) {
  if (!cfg) return bad_argument("null config");
  cfg->cfg.seed = seed;
  return DVS_OK;
}

dvs_status dvs_config_set_h(dvs_config* cfg, double h) {
  if (!cfg) return bad_argument("null config");
  if (!(h > 0.0)) {
    last_error = "h: must be positive";
    return DVS_ERR_CONFIG;
  }
  cfg->cfg.h = h;
  return DVS_OK;
}

dvs_status dvs_config_set_param(dvs_config* cfg, const char* key, const char* json_value) {
  if (!cfg || !key || !json_value) return bad_argument("null argument");
  return guarded([&] {
    nlohmann::json j = cfg->cfg.params;
    j["preset"] = cfg->preset;
    try {
      j[key] = nlohmann::json::parse(json_value);
    } catch (const nlohmann::json::parse_error&) {
      throw divshape::ConfigError(std::string(key) + ": value is not valid JSON");
    }
    divshape::ExperimentConfig parsed = divshape::parse_config(j.dump(), cfg->cfg.source);
    parsed.seed = cfg->cfg.seed;
    parsed.h = cfg->cfg.h;
    parsed.tolerances = cfg->cfg.tolerances;
    cfg->cfg = std::move(parsed);
  });
}

void dvs_config_free(dvs_config* cfg) { delete cfg; }

dvs_status dvs_run(const dvs_config* cfg, dvs_report** out) {
  if (!cfg || !out) return bad_argument("null argument");
  return guarded([&] { *out = wrap(divshape::run_preset(cfg->cfg)); });
}

dvs_status dvs_report_load(const char* path, dvs_report** out) {
  if (!path || !out) return bad_argument("null argument");
  return guarded([&] { *out = wrap(divshape::ReportBundle::load(path)); });
}

int dvs_report_passed(const dvs_report* r) { return r && r->bundle.passed() ? 1 : 0; }

size_t dvs_report_criterion_count(const dvs_report* r) { return r ? r->bundle.criteria.size() : 0; }

dvs_status dvs_report_criterion(const dvs_report* r, size_t i, int* id, const char** name, int* passed) {
  if (!r) return bad_argument("null report");
  if (i >= r->bundle.criteria.size()) return bad_argument("criterion index out of range");
  const divshape::Criterion& c = r->bundle.criteria[i];
  if (id) *id = c.id;
  if (name) *name = c.name.c_str();
  if (passed) *passed = c.passed() ? 1 : 0;
  return DVS_OK;
}

const char* dvs_report_summary(const dvs_report* r) { return r ? r->summary.c_str() : ""; }

dvs_status dvs_report_write(const dvs_report* r, const char* dir) {
  if (!r || !dir) return bad_argument("null argument");
  return guarded([&] { r->bundle.write(dir); });
}

void dvs_report_free(dvs_report* r) { delete r; }

dvs_status dvs_compare(const dvs_report* a, const dvs_report* b, double threshold, dvs_diff** out) {
  if (!a || !b || !out) return bad_argument("null argument");
  return guarded([&] {
    auto* d = new dvs_diff{divshape::compare_reports(a->bundle, b->bundle, threshold), {}};
    d->json = divshape::diff_to_json(d->entries, threshold).dump(2);
    *out = d;
  });
}

size_t dvs_diff_count(const dvs_diff* d) { return d ? d->entries.size() : 0; }

size_t dvs_diff_exceeding(const dvs_diff* d) {
  size_t n = 0;
  if (d)
    for (const auto& e : d->entries) n += e.exceeds ? 1 : 0;
  return n;
}

dvs_status dvs_diff_entry(const dvs_diff* d, size_t i, const char** field, double* a, double* b, double* relative,
                          int* exceeds) {
  if (!d) return bad_argument("null diff");
  if (i >= d->entries.size()) return bad_argument("diff index out of range");
  const divshape::DiffEntry& e = d->entries[i];
  if (field) *field = e.field.c_str();
  if (a) *a = e.a;
  if (b) *b = e.b;
  if (relative) *relative = e.relative;
  if (exceeds) *exceeds = e.exceeds ? 1 : 0;
  return DVS_OK;
}

const char* dvs_diff_json(const dvs_diff* d) { return d ? d->json.c_str() : ""; }

void dvs_diff_free(dvs_diff* d) { delete d; }

}  // extern "C"
