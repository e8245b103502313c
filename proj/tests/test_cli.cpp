#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

std::string cli() {
  const char* env = std::getenv("PSLAM_CLI");
  REQUIRE(env != nullptr);
  return env;
}

int run(const std::string& args) {
  const std::string cmd = cli() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pslam_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("synth emits a deterministic ASL sequence") {
  const auto a = temp_dir("synth_a");
  const auto b = temp_dir("synth_b");
  CHECK(run("synth --kind line --frames 4 --out " + a.string() +
            " --extent 0.5 --noise 1 --seed 9") == 0);
  CHECK(run("synth --kind line --frames 4 --out " + b.string() +
            " --extent 0.5 --noise 1 --seed 9") == 0);
  CHECK(fs::exists(a / "cam0" / "data.csv"));
  CHECK(fs::exists(a / "cam0" / "sensor.yaml"));
  CHECK(fs::exists(a / "groundtruth.txt"));
  CHECK(fs::exists(a / "surface.ply"));
  CHECK(slurp(a / "cam0" / "data.csv") == slurp(b / "cam0" / "data.csv"));
  CHECK(slurp(a / "cam0" / "data" / "frame_00002.pgm") ==
        slurp(b / "cam0" / "data" / "frame_00002.pgm"));
}

TEST_CASE("run rejects a malformed config with exit code 1 and no output") {
  const auto seq = temp_dir("cfg_seq");
  REQUIRE(run("synth --kind line --frames 3 --out " + seq.string()) == 0);

  const auto cfg = temp_dir("cfg_dir");
  fs::create_directories(cfg);
  std::ofstream(cfg / "bad.cfg") << "definitely_not_a_key = 42\n";

  const auto out = temp_dir("cfg_out");
  CHECK(run("run --input " + seq.string() + " --config " + (cfg / "bad.cfg").string() +
            " --output " + out.string()) == 1);
  CHECK(!fs::exists(out));
}

TEST_CASE("run reports io errors with exit code 2") {
  const auto out = temp_dir("io_out");
  CHECK(run("run --input /nonexistent_pslam_seq --output " + out.string()) == 2);
}

TEST_CASE("run reports bootstrap failure with exit code 3") {
  // A two-frame static line has no parallax to initialize from.
  const auto seq = temp_dir("boot_seq");
  REQUIRE(run("synth --kind line --frames 6 --out " + seq.string() + " --extent 0.0") ==
          0);
  const auto out = temp_dir("boot_out");
  CHECK(run("run --input " + seq.string() + " --output " + out.string()) == 3);
}

TEST_CASE("eval compares trajectories and reports io failures") {
  const auto dir = temp_dir("eval");
  fs::create_directories(dir);
  std::ofstream(dir / "t.txt") << "0.0 0 0 0 0 0 0 1\n"
                               << "0.1 1 0 0 0 0 0 1\n"
                               << "0.2 1 1 0 0 0 0 1\n"
                               << "0.3 0 1 1 0 0 0 1\n";
  CHECK(run("eval --est " + (dir / "t.txt").string() + " --gt " +
            (dir / "t.txt").string()) == 0);
  CHECK(run("eval --est " + (dir / "missing.txt").string() + " --gt " +
            (dir / "t.txt").string()) == 2);
}
