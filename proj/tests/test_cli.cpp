#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <doctest.h>

#include "fmms/eval.hpp"
#include "test_util.hpp"

using namespace fmms;
using namespace fmms::testutil;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string out_path = temp_path("fmms_cli_out.txt");
  const std::string cmd =
      std::string(FMMS_CLI_PATH) + " " + args + " > " + out_path + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  if (WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
  std::ifstream in(out_path);
  r.output.assign(std::istreambuf_iterator<char>(in),
                  std::istreambuf_iterator<char>());
  std::filesystem::remove(out_path);
  return r;
}

std::string write_config(const std::string& name, const std::string& body) {
  const std::string path = temp_path(name);
  std::ofstream out(path);
  out << body;
  return path;
}

}  // namespace

TEST_CASE("cli: unknown subcommand fails with usage text") {
  const RunResult r = run_cli("--config /nonexistent.json frobnicate");
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("subcommand") != std::string::npos);
}

TEST_CASE("cli: missing required config key names the key") {
  const std::string cfg = write_config("fmms_cli_badcfg.json",
                                       R"({"data": {"images": 8}})");
  const RunResult r = run_cli("--config " + cfg + " gen-data");
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("data.path") != std::string::npos);
  std::filesystem::remove(cfg);
}

TEST_CASE("cli: full pipeline smoke on a tiny config") {
  namespace fs = std::filesystem;
  const std::string dir = temp_path("fmms_cli_pipeline");
  fs::create_directories(dir);
  const std::string cfg = write_config("fmms_cli_pipeline.json", R"({
    "seed": 5,
    "data": {"path": ")" + dir + R"(/data.bin", "classes": 3, "images": 12,
             "captions_per_image": 2, "height": 6, "width": 6,
             "vocab_size": 32, "caption_length": 5,
             "class_token_pool_size": 4},
    "model": {"hidden": 10, "embed_dim": 8},
    "train": {"steps": 400, "batch": 8, "learning_rate": 0.1, "models": [
      {"id": "aligned", "kind": "aligned", "checkpoint": ")" + dir + R"(/a.ckpt"},
      {"id": "fused", "kind": "fused", "checkpoint": ")" + dir + R"(/f.ckpt"}
    ]},
    "search": {"rounds": 2},
    "experiment": {"surrogates": ["aligned"], "targets": ["fused"],
                   "methods": ["sga", "fmms-topn"], "seeds": [1, 2],
                   "pairs_limit": 6,
                   "report": ")" + dir + R"(/report.csv"}
  })");

  CHECK(run_cli("--config " + cfg + " gen-data").exit_code == 0);
  CHECK(fs::exists(dir + "/data.bin"));
  CHECK(run_cli("--config " + cfg + " train").exit_code == 0);
  CHECK(fs::exists(dir + "/a.ckpt"));
  CHECK(fs::exists(dir + "/f.ckpt"));
  CHECK(run_cli("--config " + cfg + " attack").exit_code == 0);
  CHECK(fs::exists(dir + "/report.csv"));
  CHECK(fs::exists(dir + "/report.csv.config.json"));

  const Report report = read_report_csv(dir + "/report.csv");
  CHECK(report.rows.size() == 4);  // 2 methods x 2 seeds
  for (const auto& row : report.rows) {
    CHECK(row.tr_asr >= 0.0);
    CHECK(row.tr_asr <= 1.0);
    CHECK(row.ir_asr >= 0.0);
    CHECK(row.ir_asr <= 1.0);
  }

  const RunResult summary = run_cli("--config " + cfg + " report");
  CHECK(summary.exit_code == 0);
  CHECK(summary.output.find("mean over seeds") != std::string::npos);

  fs::remove_all(dir);
  fs::remove(cfg);
}
