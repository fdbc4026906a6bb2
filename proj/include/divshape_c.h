#ifndef DIVSHAPE_C_H
#define DIVSHAPE_C_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define DVS_API __declspec(dllexport)
#else
#define DVS_API __attribute__((visibility("default")))
#endif

typedef enum dvs_status {
  DVS_OK = 0,
  DVS_ERR_ARGUMENT = 1,     /* null handle or bad argument */
  DVS_ERR_CONFIG = 2,       /* malformed configuration or file */
  DVS_ERR_PRECONDITION = 3, /* operation called outside its preconditions */
  DVS_ERR_INFEASIBLE = 4,   /* parameters violate a family constraint */
  DVS_ERR_CONVERGENCE = 5,  /* nonlinear solve failed */
  DVS_ERR_IO = 6,
  DVS_ERR_INTERNAL = 7
} dvs_status;

typedef struct dvs_config dvs_config;
typedef struct dvs_report dvs_report;
typedef struct dvs_diff dvs_diff;

/* Message of the last failed call on this thread; empty when none. */
DVS_API const char* dvs_last_error(void);
DVS_API const char* dvs_status_name(dvs_status s);

/* Configurations. Presets: decomposition, localization, periods,
   identity-witness, nse-verify, optimize, optimize-interior, check-family. */
DVS_API dvs_status dvs_config_default(const char* preset, dvs_config** out);
DVS_API dvs_status dvs_config_parse(const char* json_text, dvs_config** out);
DVS_API dvs_status dvs_config_load(const char* path, dvs_config** out);
DVS_API dvs_status dvs_config_preset(const dvs_config* cfg, const char** name);
DVS_API dvs_status dvs_config_set_seed(dvs_config* cfg, uint64_t seed);
DVS_API dvs_status dvs_config_set_h(dvs_config* cfg, double h);
/* Sets a preset parameter from a JSON value, e.g. ("mesh", "\"m.txt\""). */
DVS_API dvs_status dvs_config_set_param(dvs_config* cfg, const char* key, const char* json_value);
DVS_API void dvs_config_free(dvs_config* cfg);

/* Runs the preset and its invariant checks. */
DVS_API dvs_status dvs_run(const dvs_config* cfg, dvs_report** out);
DVS_API dvs_status dvs_report_load(const char* path, dvs_report** out);
/* 1 when every check passed, 0 otherwise. */
DVS_API int dvs_report_passed(const dvs_report* r);
DVS_API size_t dvs_report_criterion_count(const dvs_report* r);
DVS_API dvs_status dvs_report_criterion(const dvs_report* r, size_t i, int* id, const char** name, int* passed);
/* Summary JSON without timestamps; owned by the report. */
DVS_API const char* dvs_report_summary(const dvs_report* r);
DVS_API dvs_status dvs_report_write(const dvs_report* r, const char* dir);
DVS_API void dvs_report_free(dvs_report* r);

/* Field-wise relative differences; threshold marks the entries that exceed it. */
DVS_API dvs_status dvs_compare(const dvs_report* a, const dvs_report* b, double threshold, dvs_diff** out);
DVS_API size_t dvs_diff_count(const dvs_diff* d);
DVS_API size_t dvs_diff_exceeding(const dvs_diff* d);
DVS_API dvs_status dvs_diff_entry(const dvs_diff* d, size_t i, const char** field, double* a, double* b,
                                  double* relative, int* exceeds);
DVS_API const char* dvs_diff_json(const dvs_diff* d);
DVS_API void dvs_diff_free(dvs_diff* d);

#ifdef __cplusplus
}
#endif

#endif
