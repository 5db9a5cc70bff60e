// End-to-end checks of the command-line surface. The binary path arrives as
// argv[1]; everything runs inside a scratch directory.
#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "vicl/common.hpp"

namespace fs = std::filesystem;

namespace {

std::string g_binary;
fs::path g_work;

int run(const std::string& args) {
  std::string cmd = g_binary + " " + args + " >> " + (g_work / "cli.log").string() + " 2>&1";
  return std::system(cmd.c_str());
}

int exit_code(int system_status) {
#ifdef WEXITSTATUS
  return WEXITSTATUS(system_status);
#else
  return system_status;
#endif
}

std::string slurp(const fs::path& p) { return vicl::read_text_file(p.string()); }

void write_config(const fs::path& path, const std::string& body) {
  std::ofstream out(path);
  out << body;
}

}  // namespace

TEST_CASE("calibrate: synthetic protocol recovers the table row and reruns byte-identically") {
  fs::path out = g_work / "cal";
  write_config(g_work / "cal.json", R"({
    "out_root": ")" + out.string() + R"(",
    "calibrate": {"subject": "S2", "seed": 7}
  })");
  REQUIRE(exit_code(run("calibrate --config " + (g_work / "cal.json").string())) == 0);
  std::string first = slurp(out / "calibration_report.json");
  CHECK(first.find("\"a1\"") != std::string::npos);

  // Recovery within 1e-6 relative of the published row.
  auto val = [&](const std::string& key) {
    auto pos = first.find("\"" + key + "\":");
    REQUIRE(pos != std::string::npos);
    return std::stod(first.substr(pos + key.size() + 3));
  };
  CHECK(std::abs(val("a1") - 0.107) / 0.107 < 1e-6);
  CHECK(std::abs(val("b1") - 2678.765) / 2678.765 < 1e-6);

  REQUIRE(exit_code(run("calibrate --config " + (g_work / "cal.json").string())) == 0);
  CHECK(slurp(out / "calibration_report.json") == first);
}

TEST_CASE("full pipeline: learn, train, simulate, evaluate") {
  fs::path out = g_work / "pipe";
  write_config(g_work / "pipe.json", R"({
    "out_root": ")" + out.string() + R"(",
    "demos": {"count": 5, "seed": 11, "subject": "S5"},
    "learn": {"components": 5, "seed": 3, "max_T": 301},
    "train": {"hidden": 16, "epochs": 60, "seed": 5},
    "simulate": {"scenario": "transport", "method": "fic", "seed": 1},
    "evaluate": {"scenario": "transport", "methods": ["fic", "ablation"], "seeds": [1, 2]}
  })");
  std::string cfg = " --config " + (g_work / "pipe.json").string();

  SUBCASE("simulate before learn names the producing command") {
    int status = run("simulate" + cfg + " --out " + (g_work / "missing").string());
    CHECK(exit_code(status) == 2);
  }

  REQUIRE(exit_code(run("learn --scenario transport" + cfg)) == 0);
  CHECK(fs::exists(out / "schedule_transport.json"));
  CHECK(fs::exists(out / "model_transport.json"));
  CHECK(fs::exists(out / "manifest-learn.json"));
  CHECK(fs::exists(out / "demos" / "transport" / "demo_0.txt"));

  REQUIRE(exit_code(run("train --scenario transport" + cfg)) == 0);
  CHECK(fs::exists(out / "regnet_transport.json"));
  CHECK(fs::exists(out / "train_curves.csv"));
  CHECK(fs::exists(out / "train_metrics.csv"));

  REQUIRE(exit_code(run("simulate" + cfg)) == 0);
  CHECK(fs::exists(out / "results" / "run_transport_fic_s1.csv"));
  CHECK(fs::exists(out / "results" / "trace_transport_fic_s1.csv"));

  // FIC gains echoed exactly as the published pairing.
  std::string log = slurp(g_work / "cli.log");
  CHECK(log.find("K 300 N/m") != std::string::npos);
  CHECK(log.find("D 34.641") != std::string::npos);

  // simulate is byte-deterministic for a fixed (config, seed).
  std::string trace1 = slurp(out / "results" / "trace_transport_fic_s1.csv");
  REQUIRE(exit_code(run("simulate" + cfg)) == 0);
  CHECK(slurp(out / "results" / "trace_transport_fic_s1.csv") == trace1);

  // hi-imprsl uses the trained checkpoint.
  REQUIRE(exit_code(run("simulate --method hi-imprsl" + cfg)) == 0);
  CHECK(fs::exists(out / "results" / "trace_transport_hi-imprsl_s1.csv"));

  REQUIRE(exit_code(run("evaluate --jobs 2" + cfg)) == 0);
  std::string agg = slurp(out / "results" / "aggregate_transport.csv");
  // Header + methods x axes rows.
  int rows = 0;
  for (char ch : agg) {
    if (ch == '\n') ++rows;
  }
  CHECK(rows == 1 + 2 * 3);

  // evaluate rerun reproduces the aggregate byte-for-byte.
  REQUIRE(exit_code(run("evaluate --jobs 1" + cfg)) == 0);
  CHECK(slurp(out / "results" / "aggregate_transport.csv") == agg);

  REQUIRE(exit_code(run("report" + cfg)) == 0);
}

TEST_CASE("gradcheck subcommand reports below-tolerance error") {
  CHECK(exit_code(run("gradcheck")) == 0);
  std::string log = slurp(g_work / "cli.log");
  CHECK(log.find("gradcheck max relative error") != std::string::npos);
}

TEST_CASE("unknown method exits with the validation code") {
  write_config(g_work / "bad.json", R"({"out_root": ")" + (g_work / "bad").string() + R"("})");
  int status = run("simulate --method warp-drive --config " + (g_work / "bad.json").string());
  CHECK(exit_code(status) == 2);
}

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: test_cli <path-to-vicl-binary>\n");
    return 1;
  }
  g_binary = argv[1];
  g_work = fs::temp_directory_path() / "vicl_cli_test";
  fs::remove_all(g_work);
  fs::create_directories(g_work);
  setenv("SOURCE_DATE_EPOCH", "1700000000", 1);

  doctest::Context context;
  int res = context.run();
  return res;
}
