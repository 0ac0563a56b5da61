#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::path(FALSEVFL_TEST_WORK_DIR) / "cli";

int run(const std::string& args, const std::string& log = "last.log") {
  const std::string cmd =
      "\"" FALSEVFL_CLI_PATH "\" " + args + " > \"" + (kWork / log).string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string at(const std::string& name) { return "\"" + (kWork / name).string() + "\""; }

struct Workspace {
  Workspace() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    REQUIRE(run("synth-data --classes 3 --party-dims 2,2,2 --per-class 60 --seed 4 --out " + at("train.csv") +
                " --test-per-class 30 --test-out " + at("test.csv")) == 0);
    std::ofstream(kWork / "train_config.json")
        << R"({"kappa": 4, "dim_h": 4, "dim_z": 2, "hidden": 8, "epochs_stage1": 3, "epochs_stage2": 5,
              "batch_size": 16, "batch_size_stage1": 32})";
  }
};

const Workspace& workspace() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("help lists every subcommand and exits cleanly") {
  workspace();
  CHECK(run("--help", "help.log") == 0);
  const auto text = slurp(kWork / "help.log");
  for (const char* sub : {"synth-data", "gen-masks", "audit-masks", "pretrain", "train", "predict", "evaluate", "grid",
                          "plot"})
    CHECK_MESSAGE(text.find(sub) != std::string::npos, sub);
  CHECK(run("gen-masks --help", "gen_help.log") == 0);
  CHECK(slurp(kWork / "gen_help.log").find("--mechanism") != std::string::npos);
}

TEST_CASE("gen-masks is deterministic for a fixed seed") {
  workspace();
  const std::string base = "gen-masks --data " + at("train.csv") + " --party-dims 2,2,2 --mechanism mcar5 --seed 1";
  REQUIRE(run(base + " --out " + at("m1.csv")) == 0);
  REQUIRE(run(base + " --out " + at("m2.csv")) == 0);
  const auto a = slurp(kWork / "m1.csv");
  CHECK(!a.empty());
  CHECK(a == slurp(kWork / "m2.csv"));
  CHECK(a.find("format_version") != std::string::npos);
  REQUIRE(run(
              "gen-masks --data " + at("train.csv") + " --party-dims 2,2,2 --mechanism mcar5 --seed 2 --out " +
              at("m3.csv")) == 0);
  CHECK(a != slurp(kWork / "m3.csv"));
}

TEST_CASE("pretrain, train, evaluate and predict produce well-formed outputs") {
  workspace();
  const std::string train_data = "--data " + at("train.csv") + " --party-dims 2,2,2";
  const std::string test_data = "--data " + at("test.csv") + " --party-dims 2,2,2";
  REQUIRE(run("gen-masks " + train_data + " --mechanism mcar2 --seed 3 --labeled 60 --aligned 20 --out " +
              at("train_masks.csv")) == 0);
  REQUIRE(run("gen-masks " + test_data + " --mechanism mcar2 --seed 5 --out " + at("test_masks.csv")) == 0);
  REQUIRE(run("audit-masks --masks " + at("train_masks.csv") + " --out " + at("audit.json")) == 0);
  const auto audit = nlohmann::json::parse(slurp(kWork / "audit.json"));
  CHECK(audit.contains("party_missing_rate"));

  REQUIRE(run("pretrain " + train_data + " --masks " + at("train_masks.csv") + " --config " +
              at("train_config.json") + " --seed 1 --out " + at("pre.json")) == 0);
  REQUIRE(run("train --method falsevfl " + train_data + " --masks " + at("train_masks.csv") + " --checkpoint " +
              at("pre.json") + " --config " + at("train_config.json") + " --out " + at("model.json")) == 0);
  REQUIRE(run("evaluate " + test_data + " --masks " + at("test_masks.csv") + " --checkpoint " + at("model.json") +
              " --samples 20 --out " + at("metrics.json")) == 0);
  const auto m = nlohmann::json::parse(slurp(kWork / "metrics.json"));
  CHECK(m.at("format_version").is_number_integer());
  CHECK(m.at("n").get<int>() == 90);
  const double acc = m.at("accuracy").get<double>();
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  for (const char* k : {"fully_aligned", "partially_aligned", "fully_unaligned"})
    CHECK(m.at("by_alignment").contains(k));

  REQUIRE(run("predict " + test_data + " --masks " + at("test_masks.csv") + " --checkpoint " + at("model.json") +
              " --samples 20 --out " + at("pred.csv")) == 0);
  std::ifstream pred(kWork / "pred.csv");
  std::string line;
  std::size_t rows = 0;
  bool header = false;
  while (std::getline(pred, line)) {
    if (line.starts_with("#")) continue;
    if (!header) {
      CHECK(line == "sample,prediction,p0,p1,p2,ess");
      header = true;
      continue;
    }
    ++rows;
  }
  CHECK(rows == 90);

  REQUIRE(run("train --method vanilla " + train_data + " --masks " + at("train_masks.csv") + " --out " +
              at("vanilla.json")) == 0);
  REQUIRE(run("evaluate " + test_data + " --masks " + at("test_masks.csv") + " --checkpoint " + at("vanilla.json") +
              " --out " + at("vanilla_metrics.json")) == 0);
  CHECK(nlohmann::json::parse(slurp(kWork / "vanilla_metrics.json")).at("n").get<int>() == 90);
}

TEST_CASE("errors map to distinct nonzero exit codes") {
  workspace();
  const std::string data = "--data " + at("train.csv") + " --party-dims 2,2,2";
  CHECK(run("gen-masks " + data + " --mechanism mcar7 --out " + at("bad.csv"), "bad_mech.log") == 2);
  CHECK(slurp(kWork / "bad_mech.log").find("mcar7") != std::string::npos);
  CHECK(run("gen-masks --data " + at("missing.csv") + " --party-dims 2,2,2 --mechanism mcar2 --out " +
            at("bad.csv")) != 0);
  std::ofstream(kWork / "junk_masks.csv") << "garbage\n1,2\n";
  CHECK(run("audit-masks --masks " + at("junk_masks.csv"), "junk.log") == 3);
  CHECK(slurp(kWork / "junk.log").find("junk_masks.csv") != std::string::npos);
  CHECK(run("gen-masks --data " + at("train.csv") + " --party-dims 2,2 --mechanism mcar2 --out " + at("bad.csv")) !=
        0);
  CHECK(run("no-such-command") != 0);
  CHECK(run("gen-masks " + data + " --out " + at("bad.csv")) != 0);
}
