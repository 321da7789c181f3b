#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "salm2/cli.hpp"
#include "salm2/model.hpp"
#include "testutil.hpp"

using namespace salm2;
namespace fs = std::filesystem;

namespace {

int run(std::initializer_list<std::string> args) {
  std::vector<std::string> full{"salm2"};
  full.insert(full.end(), args);
  std::vector<const char*> argv;
  for (const auto& s : full) argv.push_back(s.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string write_tiny_config(const fs::path& dir) {
  ModelConfig cfg;
  cfg.input_size = 64;
  cfg.stem_channels = {4, 8};
  cfg.scpm_channels = {8, 16};
  cfg.scpm_strides = {2, 1};
  cfg.state_size = 4;
  const std::string path = (dir / "config.json").string();
  std::ofstream(path) << cfg.to_json().dump(2);
  return path;
}

}  // namespace

TEST_CASE("cli: unknown flags and missing subcommands are usage errors") {
  CHECK(run({"gen-synthetic", "--n", "1", "--seed", "0", "--out", "/tmp/x", "--bogus"}) != 0);
  CHECK(run({}) != 0);
  CHECK(run({"predict", "--ckpt", "missing.salm2"}) != 0);  // missing required flags
}

TEST_CASE("cli: gen-synthetic is re-runnable and byte-identical") {
  testutil::TempDir tmp("cli_gen");
  const std::string root = tmp.str() + "/data";
  REQUIRE(run({"gen-synthetic", "--n", "4", "--seed", "0", "--out", root}) == 0);
  auto first = slurp(fs::path(root) / "train" / "images" / "000003.png");
  REQUIRE(run({"gen-synthetic", "--n", "4", "--seed", "0", "--out", root}) == 0);
  CHECK(slurp(fs::path(root) / "train" / "images" / "000003.png") == first);
}

TEST_CASE("cli: count-params prints and exits cleanly") {
  CHECK(run({"count-params"}) == 0);
  testutil::TempDir tmp("cli_cfg");
  auto cfg = write_tiny_config(tmp.path());
  CHECK(run({"count-params", "--config", cfg}) == 0);
}

TEST_CASE("cli: train, eval, predict, overlay round trip on a tiny run") {
  testutil::TempDir tmp("cli_flow");
  const std::string root = tmp.str() + "/data";
  const std::string out = tmp.str() + "/run";
  auto cfg = write_tiny_config(tmp.path());
  REQUIRE(run({"gen-synthetic", "--n", "4", "--seed", "1", "--out", root, "--size", "64"}) == 0);
  REQUIRE(run({"train", "--data", root, "--out", out, "--seed", "3", "--epochs", "2", "--batch",
               "2", "--config", cfg}) == 0);
  const std::string ckpt = out + "/checkpoint.salm2";
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(out + "/history.json"));
  auto history = nlohmann::json::parse(slurp(out + "/history.json"));
  CHECK(history.at("epochs").size() == 2);

  const std::string report = out + "/metrics.json";
  REQUIRE(run({"eval", "--data", root, "--ckpt", ckpt, "--split", "train", "--out", report}) == 0);
  auto doc = nlohmann::json::parse(slurp(report));
  for (const char* name : {"AUC_Borji", "AUC_Judd", "NSS", "CC", "SIM", "KLD"})
    CHECK(doc.at("metrics").contains(name));
  CHECK_FALSE(doc["metrics"]["AUC_Judd"].is_null());

  const std::string image = root + "/train/images/000000.png";
  const std::string map1 = out + "/map.png";
  REQUIRE(run({"predict", "--ckpt", ckpt, "--image", image, "--out", map1}) == 0);
  CHECK(fs::exists(map1));
  // output depends only on checkpoint + image bytes
  const std::string map2 = out + "/map2.png";
  REQUIRE(run({"predict", "--ckpt", ckpt, "--image", image, "--out", map2}) == 0);
  CHECK(slurp(map1) == slurp(map2));

  const std::string over = out + "/overlay.png";
  REQUIRE(run({"overlay", "--ckpt", ckpt, "--image", image, "--out", over}) == 0);
  CHECK(fs::exists(over));

  // metric subset selection validates names
  CHECK(run({"eval", "--data", root, "--ckpt", ckpt, "--split", "train", "--out", report,
             "--metrics", "cc,sim"}) == 0);
  CHECK(run({"eval", "--data", root, "--ckpt", ckpt, "--split", "train", "--out", report,
             "--metrics", "nope"}) != 0);
}

TEST_CASE("cli: eval on a fixation-absent dataset still exits 0") {
  testutil::TempDir tmp("cli_nofix");
  const std::string root = tmp.str() + "/data";
  const std::string out = tmp.str() + "/run";
  auto cfg = write_tiny_config(tmp.path());
  REQUIRE(run({"gen-synthetic", "--n", "3", "--seed", "2", "--out", root, "--size", "64"}) == 0);
  REQUIRE(run({"train", "--data", root, "--out", out, "--seed", "4", "--epochs", "1", "--batch",
               "3", "--config", cfg}) == 0);
  fs::remove_all(fs::path(root) / "train" / "fixmaps");
  const std::string report = out + "/metrics.json";
  REQUIRE(run({"eval", "--data", root, "--ckpt", out + "/checkpoint.salm2", "--split", "train",
               "--out", report}) == 0);
  auto doc = nlohmann::json::parse(slurp(report));
  CHECK(doc["metrics"]["AUC_Borji"].is_null());
  CHECK(doc["metrics"]["AUC_Judd"].is_null());
  CHECK(doc["metrics"]["NSS"].is_null());
  CHECK_FALSE(doc["metrics"]["CC"].is_null());
}

TEST_CASE("cli: missing clip weights fail loudly, never silently") {
  testutil::TempDir tmp("cli_clip");
  const std::string root = tmp.str() + "/data";
  auto cfg = write_tiny_config(tmp.path());
  REQUIRE(run({"gen-synthetic", "--n", "2", "--seed", "5", "--out", root, "--size", "64"}) == 0);
  CHECK(run({"train", "--data", root, "--out", tmp.str() + "/run", "--seed", "1", "--epochs", "1",
             "--batch", "2", "--config", cfg, "--clip-weights", "/does/not/exist.salm2"}) != 0);
}
