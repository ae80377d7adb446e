#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "csg/experiment.hpp"
#include "test_support.hpp"

using namespace csg;

namespace {

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(CSG_DST_BINARY) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) { return read_file(p.string()); }

const std::string kToy = "--toy --toy-dialogues 30 --toy-vocab 80";
const std::string kTrain = "--epochs 2 --batch-size 8 --dim 12 --seed 3";

}  // namespace

TEST_CASE("cli: help and usage errors") {
  auto dir = testing::scratch_dir("cli_usage");
  CHECK(run("--help", dir / "log") == 0);
  CHECK(run("", dir / "log") == 2);
  CHECK(run("prepare --toy", dir / "log") == 2);  // --out missing
  CHECK(run("prepare --toy --ratio 1.5 --out " + (dir / "x").string(), dir / "log") == 2);
  CHECK(slurp(dir / "log").find("outside [0,1]") != std::string::npos);
  CHECK(run("prepare --toy --corpus a.json --out " + (dir / "x").string(), dir / "log") == 2);
  CHECK(run("prepare --corpus /nonexistent.json --out " + (dir / "x").string(), dir / "log") == 2);
  CHECK(run("train --data " + (dir / "missing").string() + " --out " + (dir / "m").string(), dir / "log") == 2);
  CHECK(run("sweep " + kToy + " --ratios 0.1,0.1 --out " + (dir / "s").string(), dir / "log") == 2);
  CHECK(run("sweep " + kToy + " --scheme concat --out " + (dir / "s").string(), dir / "log") == 2);
  CHECK_FALSE(fs::exists(dir / "s" / "sweep.json"));
}

TEST_CASE("cli: prepare is byte-deterministic") {
  auto dir = testing::scratch_dir("cli_prepare");
  const std::string args = "prepare " + kToy + " --ratio 0.5 --seed 4 --out ";
  REQUIRE(run(args + (dir / "a").string(), dir / "log") == 0);
  REQUIRE(run(args + (dir / "b").string(), dir / "log") == 0);
  for (const char* f : {"corpus.json", "oov_plan.json", "vocab.json", "stats.json", "stats.txt", "prepare.json"})
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  REQUIRE(run("prepare " + kToy + " --ratio 0.5 --seed 5 --out " + (dir / "c").string(), dir / "log") == 0);
  CHECK(slurp(dir / "a" / "oov_plan.json") != slurp(dir / "c" / "oov_plan.json"));
  CHECK(slurp(dir / "log").find("USV-M in test set") != std::string::npos);
}

TEST_CASE("cli: train, eval and artifact errors") {
  auto dir = testing::scratch_dir("cli_train");
  REQUIRE(run("prepare " + kToy + " --ratio 0.3 --seed 1 --out " + (dir / "data").string(), dir / "log") == 0);
  REQUIRE(run("train --data " + (dir / "data").string() + " --model hybrid --scheme cat " + kTrain + " --out " +
                  (dir / "m").string(),
              dir / "log") == 0);
  std::ifstream log(dir / "m" / "log.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line);) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.at("epoch").get<int>() == lines + 1);
    ++lines;
  }
  CHECK(lines == 2);
  REQUIRE(fs::exists(dir / "m" / "checkpoint.bin"));

  const std::string eval = "eval --data " + (dir / "data").string() + " --checkpoint ";
  REQUIRE(run(eval + (dir / "m" / "checkpoint.bin").string(), dir / "log") == 0);
  auto report = nlohmann::json::parse(slurp(dir / "m" / "report.json"));
  CHECK(report.contains("by_value_type"));
  CHECK(report.at("config").at("model").get<std::string>() == "hybrid");
  CHECK(fs::exists(dir / "m" / "oov_count.csv"));
  CHECK(run(eval + (dir / "m" / "checkpoint.bin").string() + " --split dev --out " + (dir / "dev").string(),
            dir / "log") == 0);
  CHECK(run(eval + (dir / "m" / "checkpoint.bin").string() + " --split nope", dir / "log") == 2);

  // Version mismatch.
  std::string bytes = slurp(dir / "m" / "checkpoint.bin");
  bytes[4] = 7;
  write_file((dir / "bad.bin").string(), bytes);
  CHECK(run(eval + (dir / "bad.bin").string(), dir / "log") == 3);
  CHECK(slurp(dir / "log").find("version 7") != std::string::npos);
  // Truncated file.
  write_file((dir / "short.bin").string(), bytes.substr(0, 40));
  CHECK(run(eval + (dir / "short.bin").string(), dir / "log") == 3);
  // Checkpoint against a dataset with another vocabulary.
  REQUIRE(run("prepare " + kToy + " --ratio 0.9 --seed 1 --out " + (dir / "other").string(), dir / "log") == 0);
  CHECK(run("eval --data " + (dir / "other").string() + " --checkpoint " + (dir / "m" / "checkpoint.bin").string(),
            dir / "log") == 3);
}

TEST_CASE("cli: sweep grid and resume") {
  auto dir = testing::scratch_dir("cli_sweep");
  const std::string args = "sweep " + kToy + " --ratios 0,0.5 --model seq_ptr --scheme baseline,sum " + kTrain +
                           " --out " + (dir / "s").string();
  REQUIRE(run(args, dir / "log") == 0);
  auto table = SweepTable::from_json(nlohmann::json::parse(slurp(dir / "s" / "sweep.json")));
  CHECK(table.rows.size() == 2);
  CHECK(table.columns == std::vector<std::string>{"seq_ptr_baseline", "seq_ptr_sum"});
  CHECK(slurp(dir / "log").find("4 cells trained, 0 reused") != std::string::npos);
  const std::string before = slurp(dir / "s" / "0.50" / "seq_ptr_sum" / "report.json");

  // Remove one finished cell, as if the run had died while training it.
  fs::remove_all(dir / "s" / "0.50" / "seq_ptr_sum");
  REQUIRE(run(args, dir / "log") == 0);
  CHECK(slurp(dir / "log").find("1 cells trained, 3 reused") != std::string::npos);
  CHECK(slurp(dir / "s" / "0.50" / "seq_ptr_sum" / "report.json") == before);
  CHECK(SweepTable::from_json(nlohmann::json::parse(slurp(dir / "s" / "sweep.json"))) == table);
}
