#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "salab/salab.h"

namespace fs = std::filesystem;

TEST_CASE("status names and errors") {
  CHECK(std::string(salab_status_name(SALAB_OK)) == "ok");
  CHECK(std::string(salab_status_name(SALAB_ERR_CONFIG)) == "config");
  CHECK(std::string(salab_status_name(SALAB_ERR_INTERNAL)) == "internal");
  double p[2];
  const double z[2] = {1, 2};
  CHECK(salab_map("softermax", z, 2, p) == SALAB_ERR_CONFIG);
  CHECK(std::string(salab_last_error()).find("softermax") != std::string::npos);
  CHECK(salab_map("softmax", nullptr, 2, p) == SALAB_ERR_INVALID_ARGUMENT);
  CHECK(salab_map("softmax", z, 2, p) == SALAB_OK);
  CHECK(std::string(salab_last_error()).empty());
}

TEST_CASE("mappings") {
  const double z[3] = {1.0, 0.5, -2.0};
  double p[3];
  REQUIRE(salab_map("sparsemax", z, 3, p) == SALAB_OK);
  CHECK(p[0] == doctest::Approx(0.75));
  CHECK(p[1] == doctest::Approx(0.25));
  CHECK(p[2] == 0.0);
  REQUIRE(salab_map("entmax:2", z, 3, p) == SALAB_OK);
  CHECK(p[0] == doctest::Approx(0.75).epsilon(1e-9));

  const double u[3] = {1.0, 0.0, 0.0};
  double dz[3];
  const double at[3] = {0.75, 0.25, 0.0};
  REQUIRE(salab_map_backward("sparsemax", at, u, 3, dz) == SALAB_OK);
  CHECK(dz[0] == doctest::Approx(0.5));
  CHECK(dz[1] == doctest::Approx(-0.5));
  CHECK(dz[2] == 0.0);
}

TEST_CASE("metrics") {
  const double s[3] = {0.9, 0.8, 0.7};
  const int y[3] = {0, 1, 1};
  double v = 0;
  REQUIRE(salab_auc_pr(s, y, 3, &v) == SALAB_OK);
  CHECK(v == doctest::Approx(0.5833).epsilon(1e-4));
  REQUIRE(salab_auc_roc(s, y, 3, &v) == SALAB_OK);
  CHECK(v == 0.0);
  const double s2[2] = {0.8, 0.4};
  const int y2[2] = {1, 0};
  REQUIRE(salab_brier(s2, y2, 2, &v) == SALAB_OK);
  CHECK(v == doctest::Approx(0.10));
  const int ones[3] = {1, 1, 1};
  CHECK(salab_auc_roc(s, ones, 3, &v) == SALAB_ERR_UNDEFINED_METRIC);
}

TEST_CASE("config layering") {
  salab_config* cfg = nullptr;
  REQUIRE(salab_config_create(&cfg) == SALAB_OK);
  char buf[64];
  size_t needed = 0;
  REQUIRE(salab_config_get(cfg, "lr", buf, sizeof buf, &needed) == SALAB_OK);
  CHECK(std::stod(buf) == 1e-4);

  const auto path = (fs::temp_directory_path() / "salab_test_capi.cfg").string();
  std::ofstream(path) << "# comment\nepochs = 3\nembed-dim=16\nmapping=sparsemax\n";
  REQUIRE(salab_config_load(cfg, path.c_str()) == SALAB_OK);
  REQUIRE(salab_config_set(cfg, "mapping", "entmax15") == SALAB_OK);
  REQUIRE(salab_config_get(cfg, "embed_dim", buf, sizeof buf, &needed) == SALAB_OK);
  CHECK(std::string(buf) == "16");
  REQUIRE(salab_config_get(cfg, "mapping", buf, sizeof buf, &needed) == SALAB_OK);
  CHECK(std::string(buf) == "entmax15");

  CHECK(salab_config_set(cfg, "epochz", "3") == SALAB_ERR_CONFIG);
  CHECK(salab_config_set(cfg, "epochs", "three") == SALAB_ERR_CONFIG);
  REQUIRE(salab_config_get(cfg, "epochs", buf, sizeof buf, &needed) == SALAB_OK);
  CHECK(std::string(buf) == "3");

  REQUIRE(salab_config_dump(cfg, nullptr, 0, &needed) == SALAB_OK);
  std::vector<char> dump(needed);
  CHECK(salab_config_dump(cfg, dump.data(), 4, &needed) == SALAB_ERR_OUT_OF_RANGE);
  REQUIRE(salab_config_dump(cfg, dump.data(), dump.size(), &needed) == SALAB_OK);
  CHECK(std::string(dump.data()).find("epochs=3\n") != std::string::npos);

  CHECK(salab_config_load(cfg, "/nonexistent/x.cfg") == SALAB_ERR_IO);
  salab_config_destroy(cfg);
  fs::remove(path);
}

TEST_CASE("end-to-end run through the C interface") {
  const auto dir = fs::temp_directory_path() / "salab_test_capi_run";
  fs::remove_all(dir);
  salab_config* cfg = nullptr;
  REQUIRE(salab_config_create(&cfg) == SALAB_OK);
  const std::vector<std::pair<const char*, std::string>> settings{
      {"data", (dir / "data").string()}, {"out", (dir / "run").string()},
      {"docs", "300"},                   {"epochs", "1"},
      {"hidden", "16"},                  {"embed-dim", "8"},
      {"min-freq", "1"},                 {"instances", "1"}};
  for (const auto& [k, v] : settings) REQUIRE(salab_config_set(cfg, k, v.c_str()) == SALAB_OK);
  int outcome = -1;
  REQUIRE(salab_run("gen-data", cfg, &outcome) == SALAB_OK);
  REQUIRE(salab_run("train", cfg, &outcome) == SALAB_OK);
  CHECK(outcome == 0);
  REQUIRE(salab_run("gradcheck", cfg, &outcome) == SALAB_OK);
  CHECK(outcome == 0);
  CHECK(salab_run("dance", cfg, &outcome) == SALAB_ERR_CONFIG);
  salab_config_destroy(cfg);

  salab_model* model = nullptr;
  const auto ckpt = (dir / "run" / "best.ckpt").string();
  REQUIRE(salab_model_load(ckpt.c_str(), "sparsemax", &model) == SALAB_OK);
  char name[32];
  REQUIRE(salab_model_mapping(model, name, sizeof name, nullptr) == SALAB_OK);
  CHECK(std::string(name) == "sparsemax");
  const auto vocab = (dir / "run" / "vocab.txt").string();
  const auto test = (dir / "data" / "test.jsonl").string();
  size_t count = 0;
  CHECK(salab_model_score(model, vocab.c_str(), test.c_str(), nullptr, 0, &count) ==
        SALAB_ERR_OUT_OF_RANGE);
  REQUIRE(count == 45);
  std::vector<double> probs(count);
  REQUIRE(salab_model_score(model, vocab.c_str(), test.c_str(), probs.data(), probs.size(), &count) ==
          SALAB_OK);
  for (double p : probs) CHECK((p >= 0.0 && p <= 1.0));
  salab_model_destroy(model);

  CHECK(salab_model_load("/nonexistent.ckpt", nullptr, &model) == SALAB_ERR_IO);
  fs::remove_all(dir);
}
