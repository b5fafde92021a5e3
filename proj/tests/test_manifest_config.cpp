#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "uavpd/config.hpp"
#include "uavpd/errors.hpp"
#include "uavpd/manifest.hpp"

using namespace uavpd;
namespace fs = std::filesystem;

TEST_CASE("sha256 known vectors") {
  CHECK(sha256_hex(std::string("")) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex(std::string("abc")) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex(std::string(
            "abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq")) ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
  // streaming over chunk boundaries
  std::string million(1000000, 'a');
  CHECK(sha256_hex(million) ==
        "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

TEST_CASE("manifest write/read determinism") {
  fs::path dir = fs::temp_directory_path() / "uavpd_manifest";
  fs::create_directories(dir);
  fs::path artifact = dir / "artifact.bin";
  {
    std::ofstream f(artifact, std::ios::binary);
    f << "payload";
  }
  RunManifest m;
  m.command = "test";
  m.config_hash = sha256_hex(std::string("cfg"));
  m.seed = 123;
  m.add_output("artifact", artifact);
  fs::path p1 = dir / "m1.json", p2 = dir / "m2.json";
  m.write(p1);
  m.write(p2);
  std::ifstream f1(p1), f2(p2);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  auto r = RunManifest::read(p1);
  CHECK(r.command == "test");
  CHECK(r.seed == 123);
  REQUIRE(r.outputs.size() == 1);
  CHECK(r.outputs[0].second == sha256_file(artifact));
  fs::remove_all(dir);
}

TEST_CASE("directory lock blocks concurrent writers") {
  fs::path dir = fs::temp_directory_path() / "uavpd_lock";
  fs::remove_all(dir);
  {
    DirLock lock(dir);
    CHECK_THROWS_AS(DirLock{dir}, IoError);
  }
  // released on scope exit
  DirLock again(dir);
  fs::remove_all(dir);
}

namespace {
fs::path write_config(const std::string& body) {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() / ("uavpd_cfg" + std::to_string(counter++) + ".json");
  std::ofstream f(p);
  f << body;
  return p;
}
}  // namespace

TEST_CASE("run config parsing, defaults and validation") {
  auto p = write_config(R"({
    "seed": 9,
    "out_dir": "runs/x",
    "dataset": {"type": "toy", "input_size": 96, "toy": {"train": 10, "val": 2, "test": 3}},
    "attack": {"steps": 50, "weight_tv": 1.25},
    "eval": {"runs": 2}
  })");
  RunConfig cfg = RunConfig::from_file(p);
  CHECK(cfg.seed == 9);
  CHECK(cfg.input_size == 96);
  CHECK(cfg.toy_train == 10);
  CHECK(cfg.attack.steps == 50);
  CHECK(cfg.attack.weight_tv == doctest::Approx(1.25f));
  CHECK(cfg.attack.weight_nps == doctest::Approx(0.01f));  // default
  CHECK(cfg.eval_runs == 2);
  CHECK(cfg.detector.num_classes == 4);
  // config hash is stable
  CHECK(cfg.config_hash() == RunConfig::from_file(p).config_hash());

  // missing seed
  auto p2 = write_config(R"({"out_dir": "runs/x"})");
  try {
    RunConfig::from_file(p2);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("config.seed") != std::string::npos);
  }

  // wrong type names the key path
  auto p3 = write_config(R"({"seed": 1, "attack": {"steps": "many"}})");
  try {
    RunConfig::from_file(p3);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("config.attack.steps") != std::string::npos);
  }

  // input size granularity
  auto p4 = write_config(R"({"seed": 1, "dataset": {"input_size": 100}})");
  CHECK_THROWS_AS(RunConfig::from_file(p4), ConfigError);

  // environment override: env beats file
  setenv("UAVPD_SEED", "77", 1);
  RunConfig cfg2 = RunConfig::from_file(p);
  CHECK(cfg2.seed == 77);
  unsetenv("UAVPD_SEED");
  fs::remove(p);
  fs::remove(p2);
  fs::remove(p3);
  fs::remove(p4);
}
