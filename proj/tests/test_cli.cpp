// SPDX-License-Identifier: Apache-2.0
//
// End-to-end tests of the command-line binary: pipeline wiring, artifact
// formats and the exit-code contract (0 ok, 1 usage/config, 2 validation,
// 3 I/O). The binary path comes from the build system.
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kBin = MEMOSIGHT_CLI_PATH;

int run(const std::string& args, const std::string& log = "/dev/null") {
  const std::string cmd = kBin + " " + args + " > " + log + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc == -1) return -1;
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

long line_count(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  long n = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++n;
  }
  return n;
}

/// Shared workspace with a small-model config so every stage stays fast.
struct Workspace {
  std::string dir;
  std::string cfg;

  Workspace() {
    dir = "/tmp/memosight_cli_" + std::to_string(::getpid());
    fs::create_directories(dir);
    cfg = dir + "/cfg.json";
    json j;
    j["corpus"] = {{"n_traces", 8}, {"seed", 21}};
    j["build"] = {{"c", 3}, {"d_max", 2}, {"l_max", 8}};
    j["train"] = {{"epochs", 1}, {"batch_size", 4}};
    j["model"] = {{"n_layers", 2}, {"n_heads", 2}, {"d_model", 32}, {"max_pid", 512}};
    j["infer"] = {{"d", 2}, {"c", 3}, {"max_new_tokens", 32}};
    std::ofstream out(cfg);
    out << j.dump(2) << "\n";
  }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("gen-corpus is deterministic and honors flag overrides") {
  const std::string a = ws().dir + "/corpus.jsonl";
  const std::string b = ws().dir + "/corpus_again.jsonl";
  const std::string log = ws().dir + "/gen.log";
  REQUIRE(run("--config " + ws().cfg + " gen-corpus --out " + a, log) == 0);
  REQUIRE(run("--config " + ws().cfg + " gen-corpus --out " + b) == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(line_count(a) == 8);  // flag/config value, not the built-in default

  const std::string out = slurp(log);
  CHECK(out.find("wrote 8 traces") != std::string::npos);
  CHECK(out.find("steps per trace: min") != std::string::npos);
  CHECK(out.find("step-length histogram:") != std::string::npos);

  // Every artifact echoes the effective merged config.
  const json meta = json::parse(slurp(a + ".meta.json"));
  CHECK(meta["corpus"]["n_traces"] == 8);
  CHECK(meta["model"]["n_layers"] == 2);
  CHECK(meta["model"]["vocab_size"] == 26 + 8 + 2);  // filled by finalize

  // A different seed changes the bytes.
  const std::string c = ws().dir + "/corpus_seed.jsonl";
  REQUIRE(run("--config " + ws().cfg + " gen-corpus --out " + c + " --seed 99") == 0);
  CHECK(slurp(a) != slurp(c));
}

TEST_CASE("build-seq writes one dump line per trace plus a mask bitmap") {
  const std::string corpus = ws().dir + "/corpus.jsonl";
  const std::string seqs = ws().dir + "/seqs.jsonl";
  const std::string mask = ws().dir + "/mask.pbm";
  REQUIRE(fs::exists(corpus));
  REQUIRE(run("--config " + ws().cfg + " build-seq --in " + corpus + " --out " + seqs +
              " --dump-mask " + mask) == 0);
  CHECK(line_count(seqs) == 8);
  CHECK(slurp(mask).substr(0, 3) == "P1\n");

  std::ifstream in(seqs);
  std::string line;
  REQUIRE(std::getline(in, line));
  const json j = json::parse(line);
  for (const char* key : {"ids", "roles", "pids", "labels", "d_prime", "sample"}) {
    INFO(key);
    CHECK(j.contains(key));
  }
  CHECK(j["ids"].size() == j["pids"].size());
}

TEST_CASE("train, infer and bench run end to end on a small model") {
  const std::string corpus = ws().dir + "/corpus.jsonl";
  const std::string run_dir = ws().dir + "/run";
  const std::string log = ws().dir + "/train.log";
  REQUIRE(fs::exists(corpus));
  REQUIRE(run("--config " + ws().cfg + " train --corpus " + corpus + " --out-dir " + run_dir,
              log) == 0);
  CHECK(fs::exists(run_dir + "/final.ckpt"));
  CHECK(fs::exists(run_dir + "/final.ckpt.json"));
  CHECK(fs::exists(run_dir + "/epoch0.ckpt"));
  CHECK(fs::exists(run_dir + "/train_log.csv"));
  CHECK(fs::exists(run_dir + "/run_config.json"));
  CHECK(slurp(log).find("epoch 0:") != std::string::npos);

  const std::string infer_out = ws().dir + "/infer.json";
  REQUIRE(run("--config " + ws().cfg + " infer --checkpoint " + run_dir +
              "/final.ckpt --corpus " + corpus + " --out " + infer_out +
              " --n-prompts 2 --max-new 24") == 0);
  const json rep = json::parse(slurp(infer_out));
  REQUIRE(rep["results"].size() == 2);
  CHECK(rep["results"][0].contains("answer_match"));
  CHECK(rep["results"][0].contains("expected_answer"));
  for (const char* key : {"n_prompts", "accuracy_vs_task_oracle", "peak_context_tokens_mean",
                          "tokens_per_second", "acceptance_rate", "generated_tokens_mean"}) {
    INFO(key);
    CHECK(rep["summary"].contains(key));
  }
  CHECK(rep["config"]["infer"]["max_new_tokens"] == 24);  // flag override echoed

  const std::string bench_out = ws().dir + "/bench.csv";
  REQUIRE(run("--config " + ws().cfg + " bench --checkpoint " + run_dir +
              "/final.ckpt --corpus " + corpus + " --out " + bench_out +
              " --c-grid 2,4 --d-grid 0,1 --n-prompts 2 --max-new 16 --include-off") == 0);
  std::ifstream csv(bench_out);
  std::string header;
  REQUIRE(std::getline(csv, header));
  CHECK(header ==
        "c,d,accuracy_vs_task_oracle,peak_context_tokens_mean,tokens_per_second,"
        "acceptance_rate,generated_tokens_mean");
  long rows = 0;
  std::string line;
  std::vector<std::string> first_cols;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    ++rows;
    first_cols.push_back(line.substr(0, line.find(',')));
  }
  CHECK(rows == 2 * 2 + 2);  // grid cells plus two compression-off rows
  CHECK(first_cols.back() == "0");

  const std::string sweep_out = ws().dir + "/sweep.csv";
  REQUIRE(run("--config " + ws().cfg + " bench --checkpoint " + run_dir +
              "/final.ckpt --corpus " + corpus + " --out " + sweep_out +
              " --n-prompts 1 --max-new 8 --lambda-sweep 0.7=" + run_dir + "/final.ckpt") == 0);
  const std::string sweep = slurp(sweep_out);
  CHECK(sweep.substr(0, 9) == "lambda,c,");
  CHECK(sweep.find("0.7,3,2,") != std::string::npos);
}

TEST_CASE("check runs the oracle suites and prints one line per check") {
  const std::string log = ws().dir + "/check.log";
  REQUIRE(run("--config " + ws().cfg + " check --n-prompts 3 --max-new 32", log) == 0);
  const std::string out = slurp(log);
  CHECK(out.find("[PASS] mask") != std::string::npos);
  CHECK(out.find("[FAIL]") == std::string::npos);
  CHECK(out.find("self-checks passed") != std::string::npos);
}

TEST_CASE("exit code contract") {
  const std::string corpus = ws().dir + "/corpus.jsonl";
  REQUIRE(fs::exists(corpus));

  SUBCASE("usage errors exit 1") {
    CHECK(run("gen-corpus --nonsense-flag x") == 1);
    CHECK(run("") == 1);  // a subcommand is required
  }
  SUBCASE("config errors exit 1") {
    const std::string bad = ws().dir + "/bad_cfg.json";
    std::ofstream(bad) << R"({"corpus":{"bogus_key":1}})" << "\n";
    CHECK(run("--config " + bad + " gen-corpus --out " + ws().dir + "/x.jsonl") == 1);

    const std::string bad2 = ws().dir + "/bad_cfg2.json";
    std::ofstream(bad2) << R"({"build":{"c":0}})" << "\n";
    CHECK(run("--config " + bad2 + " gen-corpus --out " + ws().dir + "/x.jsonl") == 1);

    CHECK(run("--config " + ws().cfg + " infer --checkpoint " + ws().dir +
              "/run/final.ckpt --corpus " + corpus + " --out " + ws().dir +
              "/x.json --n-prompts 1 --max-new 4",
              "/dev/null") == 0);
    const std::string env_cmd = "MEMOSIGHT_THREADS=abc " + kBin + " --config " + ws().cfg +
                                " infer --checkpoint " + ws().dir + "/run/final.ckpt --corpus " +
                                corpus + " --out " + ws().dir + "/x.json --n-prompts 1" +
                                " --max-new 4 > /dev/null 2>&1";
    const int rc = std::system(env_cmd.c_str());
    CHECK(WEXITSTATUS(rc) == 1);
  }
  SUBCASE("validation errors exit 2") {
    // Default step lengths need at least ceil(8/1)=8 memory slots.
    CHECK(run("--config " + ws().cfg + " build-seq --in " + corpus + " --out " + ws().dir +
              "/overflow.jsonl --c 1 --l-max 2") == 2);
  }
  SUBCASE("io errors exit 3") {
    CHECK(run("--config " + ws().cfg + " build-seq --in /nonexistent/corpus.jsonl --out " +
              ws().dir + "/y.jsonl") == 3);
    CHECK(run("--config " + ws().cfg + " gen-corpus --out /nonexistent_dir/x.jsonl") == 3);
    CHECK(run("--config /nonexistent/cfg.json gen-corpus --out " + ws().dir + "/z.jsonl") == 3);
    CHECK(run("--config " + ws().cfg + " infer --checkpoint /nonexistent.ckpt --corpus " +
              corpus + " --out " + ws().dir + "/z.json") == 3);
  }
}

TEST_CASE("help exits 0") {
  CHECK(run("--help") == 0);
  CHECK(run("train --help") == 0);
}
