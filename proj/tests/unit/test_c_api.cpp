#include <cstring>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "divshape_c.h"

TEST_CASE("config handles and errors") {
  dvs_config* cfg = nullptr;
  CHECK(dvs_config_default("sphere", &cfg) == DVS_ERR_CONFIG);
  CHECK(std::string(dvs_last_error()).find("unknown preset") != std::string::npos);
  CHECK(cfg == nullptr);
  CHECK(dvs_config_parse("{\"preset\": \"periods\",\n \"h\": }", &cfg) == DVS_ERR_CONFIG);
  CHECK(std::string(dvs_last_error()).find("line 2") != std::string::npos);
  CHECK(dvs_config_load("/nonexistent/run.json", &cfg) == DVS_ERR_CONFIG);
  CHECK(dvs_config_default(nullptr, &cfg) == DVS_ERR_ARGUMENT);
  CHECK(dvs_run(nullptr, nullptr) == DVS_ERR_ARGUMENT);

  REQUIRE(dvs_config_default("check-family", &cfg) == DVS_OK);
  CHECK(std::string(dvs_last_error()).empty());
  const char* name = nullptr;
  CHECK(dvs_config_preset(cfg, &name) == DVS_OK);
  CHECK(std::string(name) == "check-family");
  CHECK(dvs_config_set_h(cfg, -1.0) == DVS_ERR_CONFIG);
  CHECK(dvs_config_set_param(cfg, "fields", "3") == DVS_ERR_CONFIG);
  CHECK(dvs_config_set_param(cfg, "triples", "{") == DVS_ERR_CONFIG);
  dvs_config_free(cfg);
  dvs_config_free(nullptr);
}

TEST_CASE("run, write, reload and compare") {
  dvs_config* cfg = nullptr;
  REQUIRE(dvs_config_default("check-family", &cfg) == DVS_OK);
  REQUIRE(dvs_config_set_h(cfg, 1.0 / 64.0) == DVS_OK);
  REQUIRE(dvs_config_set_seed(cfg, 4) == DVS_OK);
  REQUIRE(dvs_config_set_param(cfg, "triples", "4") == DVS_OK);
  REQUIRE(dvs_config_set_param(cfg, "samples", "2") == DVS_OK);
  dvs_report* rep = nullptr;
  REQUIRE(dvs_run(cfg, &rep) == DVS_OK);
  dvs_config_free(cfg);
  CHECK(dvs_report_passed(rep) == 1);
  REQUIRE(dvs_report_criterion_count(rep) == 1);
  int id = 0, passed = 0;
  const char* name = nullptr;
  CHECK(dvs_report_criterion(rep, 0, &id, &name, &passed) == DVS_OK);
  CHECK(id == 8);
  CHECK(passed == 1);
  CHECK(dvs_report_criterion(rep, 1, &id, &name, &passed) == DVS_ERR_ARGUMENT);
  CHECK(std::strstr(dvs_report_summary(rep), "\"preset\": \"check-family\"") != nullptr);
  CHECK(std::strstr(dvs_report_summary(rep), "timestamps") == nullptr);

  const std::string dir = (std::filesystem::temp_directory_path() / "divshape_c_api").string();
  std::filesystem::remove_all(dir);
  REQUIRE(dvs_report_write(rep, dir.c_str()) == DVS_OK);
  dvs_report* back = nullptr;
  REQUIRE(dvs_report_load(dir.c_str(), &back) == DVS_OK);
  CHECK(std::string(dvs_report_summary(back)) == dvs_report_summary(rep));

  dvs_diff* diff = nullptr;
  REQUIRE(dvs_compare(rep, back, 0.2, &diff) == DVS_OK);
  CHECK(dvs_diff_count(diff) == 0);
  CHECK(dvs_diff_exceeding(diff) == 0);
  CHECK(std::strstr(dvs_diff_json(diff), "\"exceeded\": false") != nullptr);
  CHECK(dvs_diff_entry(diff, 0, nullptr, nullptr, nullptr, nullptr, nullptr) == DVS_ERR_ARGUMENT);
  dvs_diff_free(diff);

  dvs_config* other = nullptr;
  REQUIRE(dvs_config_parse(R"({"preset": "periods", "h": 0.1, "paths": 2})", &other) == DVS_OK);
  dvs_report* periods = nullptr;
  REQUIRE(dvs_run(other, &periods) == DVS_OK);
  dvs_config_free(other);
  CHECK(dvs_compare(rep, periods, 0.2, &diff) == DVS_ERR_PRECONDITION);
  CHECK(std::string(dvs_last_error()).find("different presets") != std::string::npos);

  dvs_report_free(periods);
  dvs_report_free(back);
  dvs_report_free(rep);
}

TEST_CASE("module errors map to status codes") {
  dvs_config* cfg = nullptr;
  REQUIRE(dvs_config_parse(R"({"preset": "optimize", "h": 0.1, "optimizer": {"initial": [0.7]}})", &cfg) == DVS_OK);
  dvs_report* rep = nullptr;
  CHECK(dvs_run(cfg, &rep) == DVS_ERR_INFEASIBLE);
  CHECK(rep == nullptr);
  CHECK(std::string(dvs_status_name(DVS_ERR_INFEASIBLE)) == "infeasible");
  dvs_config_free(cfg);
}
