// SPDX-License-Identifier: Apache-2.0
//
// memosight: one binary for corpus generation, sequence building, training,
// inference, benchmarking and self-checks.
//
// Exit codes: 0 success, 1 usage/config, 2 validation/oracle failure, 3 I/O.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "memosight/checks.hpp"
#include "memosight/corpus.hpp"
#include "memosight/infer.hpp"
#include "memosight/model.hpp"
#include "memosight/reference.hpp"
#include "memosight/rng.hpp"
#include "memosight/run_config.hpp"
#include "memosight/seqbuild.hpp"
#include "memosight/train.hpp"

namespace ms = memosight;

namespace {

int worker_threads(int n_jobs) {
  int cap = static_cast<int>(std::thread::hardware_concurrency());
  if (cap < 1) cap = 1;
  if (const char* env = std::getenv("MEMOSIGHT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      throw ms::ConfigError("MEMOSIGHT_THREADS must be a positive integer");
    }
    cap = std::min<long>(cap, v);
  }
  return std::max(1, std::min(cap, n_jobs));
}

void ensure_readable(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ms::IoError("cannot open " + path);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ms::IoError("cannot write " + path);
  return out;
}

void write_meta(const std::string& artifact, const ms::RunConfig& cfg) {
  auto out = open_out(artifact + ".meta.json");
  out << cfg.to_json().dump(2) << "\n";
}

std::vector<int> parse_int_list(const std::string& s, const char* what) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (...) {
      throw ms::ConfigError(std::string(what) + ": bad integer list \"" + s + "\"");
    }
  }
  if (out.empty()) throw ms::ConfigError(std::string(what) + ": empty list");
  return out;
}

std::vector<ms::GenerationResult> run_prompts(const ms::Model& model,
                                              const std::vector<std::vector<ms::TokenId>>& prompts,
                                              const ms::InferConfig& icfg,
                                              const ms::SpecialIds& specials) {
  std::vector<ms::GenerationResult> out(prompts.size());
  const int nt = worker_threads(static_cast<int>(prompts.size()));
  if (nt <= 1) {
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      out[i] = ms::generate(model, prompts[i], icfg, specials);
    }
    return out;
  }
  std::atomic<std::size_t> cursor{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= prompts.size()) return;
      try {
        out[i] = ms::generate(model, prompts[i], icfg, specials);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

struct EvalSummary {
  long n = 0;
  long hits = 0;
  long offered = 0;
  long accepted = 0;
  double peak_sum = 0.0;
  double tps_sum = 0.0;
  double gen_sum = 0.0;

  double accuracy() const { return n ? static_cast<double>(hits) / n : 0.0; }
  double peak_mean() const { return n ? peak_sum / n : 0.0; }
  double tps_mean() const { return n ? tps_sum / n : 0.0; }
  double gen_mean() const { return n ? gen_sum / n : 0.0; }
  double acceptance() const {
    return offered ? static_cast<double>(accepted) / static_cast<double>(offered) : 0.0;
  }
};

EvalSummary summarize(const std::vector<std::vector<ms::TokenId>>& prompts,
                      const std::vector<ms::GenerationResult>& results, int modulus) {
  EvalSummary s;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const ms::GenerationResult& r = results[i];
    s.n += 1;
    const ms::ChainEval ev = ms::eval_chain(prompts[i], modulus);
    if (ms::extract_answer_digits(r.output_ids) == ms::digit_ids(ev.answer)) s.hits += 1;
    s.offered += r.offered_drafts;
    s.accepted += r.accepted_drafts;
    s.peak_sum += r.peak_context_tokens;
    s.tps_sum += r.tokens_per_second;
    s.gen_sum += static_cast<double>(r.generated_token_count);
  }
  return s;
}

std::vector<std::vector<ms::TokenId>> prompts_of(const std::vector<ms::CoTTrace>& traces,
                                                 long cap) {
  std::vector<std::vector<ms::TokenId>> out;
  for (const ms::CoTTrace& t : traces) {
    if (cap >= 0 && static_cast<long>(out.size()) >= cap) break;
    out.push_back(t.prompt);
  }
  return out;
}

int cmd_gen_corpus(const ms::RunConfig& cfg, const std::string& out_path) {
  { auto probe = open_out(out_path); }  // fail as I/O before generating
  const std::vector<ms::CoTTrace> traces = ms::gen_corpus(cfg.corpus);
  ms::save_jsonl(out_path, traces);
  write_meta(out_path, cfg);

  std::map<int, long> hist;
  int steps_min = 0, steps_max = 0;
  for (const ms::CoTTrace& t : traces) {
    const int ns = static_cast<int>(t.steps.size());
    if (steps_min == 0 || ns < steps_min) steps_min = ns;
    steps_max = std::max(steps_max, ns);
    for (const auto& s : t.steps) ++hist[static_cast<int>(s.size())];
  }
  std::cout << "wrote " << traces.size() << " traces to " << out_path << "\n";
  std::cout << "steps per trace: min " << steps_min << " max " << steps_max << "\n";
  std::cout << "step-length histogram:";
  for (const auto& [len, count] : hist) std::cout << " " << len << ":" << count;
  std::cout << "\n";
  return 0;
}

int cmd_build_seq(const ms::RunConfig& cfg, const std::string& in_path,
                  const std::string& out_path, const std::string& mask_path) {
  ensure_readable(in_path);
  const ms::SpecialIds specials = cfg.specials();
  const std::vector<ms::CoTTrace> traces = ms::load_jsonl(in_path, specials);
  auto out = open_out(out_path);

  for (std::size_t i = 0; i < traces.size(); ++i) {
    ms::TrainSequence seq;
    try {
      seq = ms::build_training_sequence(traces[i], cfg.build, specials,
                                        static_cast<std::uint64_t>(i));
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("sample " + std::to_string(i) + ": " + e.what());
    }
    nlohmann::json j = ms::sequence_to_json(seq);
    j["sample"] = i;
    out << j.dump() << "\n";
    if (i == 0 && !mask_path.empty()) {
      auto mout = open_out(mask_path);
      mout << ms::mask_to_pbm(ms::build_mask(seq));
    }
  }
  write_meta(out_path, cfg);
  std::cout << "built " << traces.size() << " sequences to " << out_path << "\n";
  return 0;
}

int cmd_train(const ms::RunConfig& cfg, const std::string& corpus_path,
              const std::string& out_dir) {
  ensure_readable(corpus_path);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw ms::IoError("cannot create " + out_dir + ": " + ec.message());
  {  // fail on unwritable directories before spending time training
    auto probe = open_out(out_dir + "/run_config.json");
    probe << cfg.to_json().dump(2) << "\n";
  }

  const ms::SpecialIds specials = cfg.specials();
  const std::vector<ms::CoTTrace> corpus = ms::load_jsonl(corpus_path, specials);
  const ms::TrainMode mode =
      cfg.mode == "plain" ? ms::TrainMode::PlainCausal : ms::TrainMode::Memosight;

  const ms::FitResult fit = ms::fit(corpus, cfg.build, cfg.train, cfg.model, specials, mode,
                                    out_dir);
  for (std::size_t e = 0; e < fit.epoch_reports.size(); ++e) {
    const ms::LossReport& r = fit.epoch_reports[e];
    std::cout << "epoch " << e << ": l_ntp=" << r.l_ntp << " l_mtp=" << r.l_mtp
              << " l_total=" << r.l_total << " (" << r.n_ntp << "+" << r.n_mtp
              << " supervised positions)\n";
  }
  std::cout << "checkpoint: " << out_dir << "/final.ckpt\n";
  return 0;
}

int cmd_infer(const ms::RunConfig& cfg, const std::string& ckpt_path,
              const std::string& corpus_path, const std::string& out_path, long n_prompts) {
  ensure_readable(ckpt_path);
  ensure_readable(corpus_path);
  ms::SpecialIds specials;
  const ms::Model model = ms::load_checkpoint(ckpt_path, &specials);
  const std::vector<ms::CoTTrace> traces = ms::load_jsonl(corpus_path, specials);
  const auto prompts = prompts_of(traces, n_prompts);
  if (prompts.empty()) throw std::runtime_error("no prompts in " + corpus_path);

  const auto results = run_prompts(model, prompts, cfg.infer, specials);
  const EvalSummary sum = summarize(prompts, results, cfg.corpus.modulus);

  nlohmann::json j;
  j["config"] = cfg.to_json();
  auto& arr = j["results"] = nlohmann::json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    nlohmann::json r = ms::result_to_json(results[i], specials);
    r["prompt_index"] = i;
    const ms::ChainEval ev = ms::eval_chain(prompts[i], cfg.corpus.modulus);
    r["expected_answer"] = ev.answer;
    r["answer_match"] =
        ms::extract_answer_digits(results[i].output_ids) == ms::digit_ids(ev.answer);
    arr.push_back(std::move(r));
  }
  j["summary"] = {{"n_prompts", sum.n},
                  {"accuracy_vs_task_oracle", sum.accuracy()},
                  {"peak_context_tokens_mean", sum.peak_mean()},
                  {"tokens_per_second", sum.tps_mean()},
                  {"acceptance_rate", sum.acceptance()},
                  {"generated_tokens_mean", sum.gen_mean()}};
  auto out = open_out(out_path);
  out << j.dump(2) << "\n";

  std::cout << "decoded " << sum.n << " prompts: accuracy=" << sum.accuracy()
            << " peak_mean=" << sum.peak_mean() << " acceptance=" << sum.acceptance()
            << " tps=" << sum.tps_mean() << "\n";
  return 0;
}

void csv_row(std::ostream& out, const std::string& head, const EvalSummary& s) {
  out << head << "," << s.accuracy() << "," << s.peak_mean() << "," << s.tps_mean() << ","
      << s.acceptance() << "," << s.gen_mean() << "\n";
}

int cmd_bench(const ms::RunConfig& cfg, const std::string& ckpt_path,
              const std::string& corpus_path, const std::string& out_path,
              const std::string& c_grid, const std::string& d_grid, long n_prompts,
              bool include_off, const std::string& lambda_sweep) {
  ensure_readable(ckpt_path);
  ensure_readable(corpus_path);
  ms::SpecialIds specials;
  const ms::Model model = ms::load_checkpoint(ckpt_path, &specials);
  const std::vector<ms::CoTTrace> traces = ms::load_jsonl(corpus_path, specials);
  const auto prompts = prompts_of(traces, n_prompts);
  if (prompts.empty()) throw std::runtime_error("no prompts in " + corpus_path);

  auto out = open_out(out_path);
  out << std::setprecision(10);

  if (!lambda_sweep.empty()) {
    // "<lambda>=<checkpoint>[,...]": evaluate one trained checkpoint per
    // lambda under the configured (c, d).
    out << "lambda,c,d,accuracy_vs_task_oracle,peak_context_tokens_mean,tokens_per_second,"
           "acceptance_rate,generated_tokens_mean\n";
    std::stringstream ss(lambda_sweep);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const std::size_t eq = item.find('=');
      if (eq == std::string::npos) {
        throw ms::ConfigError("--lambda-sweep expects lambda=checkpoint pairs");
      }
      const std::string lam = item.substr(0, eq);
      const std::string path = item.substr(eq + 1);
      ensure_readable(path);
      ms::SpecialIds sp;
      const ms::Model m = ms::load_checkpoint(path, &sp);
      const auto results = run_prompts(m, prompts, cfg.infer, sp);
      const EvalSummary s = summarize(prompts, results, cfg.corpus.modulus);
      csv_row(out, lam + "," + std::to_string(cfg.infer.c) + "," + std::to_string(cfg.infer.d),
              s);
    }
    write_meta(out_path, cfg);
    std::cout << "wrote lambda sweep to " << out_path << "\n";
    return 0;
  }

  out << "c,d,accuracy_vs_task_oracle,peak_context_tokens_mean,tokens_per_second,"
         "acceptance_rate,generated_tokens_mean\n";
  const std::vector<int> cs = parse_int_list(c_grid, "--c-grid");
  const std::vector<int> ds = parse_int_list(d_grid, "--d-grid");
  for (int c : cs) {
    for (int d : ds) {
      ms::InferConfig icfg = cfg.infer;
      icfg.c = c;
      icfg.d = d;
      icfg.compression_enabled = true;
      const auto results = run_prompts(model, prompts, icfg, specials);
      csv_row(out, std::to_string(c) + "," + std::to_string(d),
              summarize(prompts, results, cfg.corpus.modulus));
    }
  }
  if (include_off) {
    // c=0 rows: compression disabled (the vanilla-cache baseline).
    for (int d : ds) {
      ms::InferConfig icfg = cfg.infer;
      icfg.d = d;
      icfg.compression_enabled = false;
      const auto results = run_prompts(model, prompts, icfg, specials);
      csv_row(out, "0," + std::to_string(d), summarize(prompts, results, cfg.corpus.modulus));
    }
  }
  write_meta(out_path, cfg);
  std::cout << "wrote bench grid to " << out_path << "\n";
  return 0;
}

int cmd_check(const ms::RunConfig& cfg, const std::string& ckpt_path, long n_prompts,
              int max_new, std::uint64_t seed) {
  ms::CorpusParams held = cfg.corpus;
  held.seed = ms::mix_seed(cfg.corpus.seed, 0x9E3779B9ULL);
  held.n_traces = static_cast<int>(n_prompts);
  const std::vector<ms::CoTTrace> traces = ms::gen_corpus(held);
  const auto prompts = prompts_of(traces, n_prompts);

  const ms::SpecialIds specials = cfg.specials();
  ms::InferConfig icfg = cfg.infer;
  icfg.max_new_tokens = max_new;

  std::vector<ms::CheckResult> results =
      ms::run_all_checks(ms::Model::init(cfg.model), traces, icfg, specials, seed);
  if (!ckpt_path.empty()) {
    ensure_readable(ckpt_path);
    ms::SpecialIds tsp;
    const ms::Model trained = ms::load_checkpoint(ckpt_path, &tsp);
    for (ms::CheckResult r : {ms::check_eviction(trained, traces, icfg.c, tsp, 1e-5, 1),
                              ms::check_losslessness(trained, prompts, icfg, {1, 2, 3}, tsp),
                              ms::check_accounting(trained, prompts, icfg, tsp)}) {
      r.name += " [trained]";
      results.push_back(std::move(r));
    }
  }

  int failures = 0;
  for (const ms::CheckResult& r : results) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
    if (!r.pass) ++failures;
  }
  if (failures > 0) {
    throw std::runtime_error(std::to_string(failures) + " self-check(s) failed");
  }
  std::cout << "all " << results.size() << " self-checks passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MemoSight runtime: compressed-memory training sequences, dual-mask training, "
               "and foresight speculative inference for synthetic arithmetic traces"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON run config; flags override file values")
      ->expected(1);

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic trace corpus (JSONL)");
  std::string gen_out;
  long gen_n = -1;
  std::uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "output JSONL path")->required();
  auto* gen_n_opt = gen->add_option("--n", gen_n, "trace count");
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "corpus seed");

  // build-seq
  auto* bld = app.add_subcommand("build-seq", "build augmented training sequences from a corpus");
  std::string bld_in, bld_out, bld_mask;
  int bld_c = 0, bld_dmax = -1, bld_lmax = 0;
  std::uint64_t bld_seed = 0;
  bld->add_option("--in", bld_in, "corpus JSONL")->required();
  bld->add_option("--out", bld_out, "sequence dump path (JSONL)")->required();
  auto* bld_c_opt = bld->add_option("--c", bld_c, "compression ratio");
  auto* bld_dmax_opt = bld->add_option("--d-max", bld_dmax, "max foresight offset");
  auto* bld_lmax_opt = bld->add_option("--l-max", bld_lmax, "memory pool size");
  auto* bld_seed_opt = bld->add_option("--seed", bld_seed, "d' sampling seed");
  bld->add_option("--dump-mask", bld_mask, "write sample 0's attention mask as PBM");

  // train
  auto* trn = app.add_subcommand("train", "train a model on a corpus");
  std::string trn_corpus, trn_dir, trn_mode;
  double trn_lambda = -1.0, trn_lr = 0.0;
  int trn_epochs = 0, trn_batch = 0, trn_c = 0, trn_dmax = -1;
  std::uint64_t trn_seed = 0;
  trn->add_option("--corpus", trn_corpus, "corpus JSONL")->required();
  trn->add_option("--out-dir", trn_dir, "checkpoint/log directory")->required();
  auto* trn_mode_opt = trn->add_option("--mode", trn_mode, "memosight | plain");
  auto* trn_lambda_opt = trn->add_option("--lambda", trn_lambda, "joint-loss weight");
  auto* trn_lr_opt = trn->add_option("--lr", trn_lr, "peak learning rate");
  auto* trn_epochs_opt = trn->add_option("--epochs", trn_epochs, "epochs");
  auto* trn_batch_opt = trn->add_option("--batch-size", trn_batch, "batch size");
  auto* trn_c_opt = trn->add_option("--c", trn_c, "compression ratio");
  auto* trn_dmax_opt = trn->add_option("--d-max", trn_dmax, "max foresight offset");
  auto* trn_seed_opt = trn->add_option("--seed", trn_seed, "shuffle seed");

  // infer
  auto* inf = app.add_subcommand("infer", "decode prompts with a trained checkpoint");
  std::string inf_ckpt, inf_corpus, inf_out;
  int inf_d = -1, inf_c = 0, inf_max = 0;
  long inf_n = -1;
  bool inf_nocomp = false;
  inf->add_option("--checkpoint", inf_ckpt, "model checkpoint")->required();
  inf->add_option("--corpus", inf_corpus, "prompt source (corpus JSONL)")->required();
  inf->add_option("--out", inf_out, "per-prompt JSON results")->required();
  auto* inf_d_opt = inf->add_option("--d", inf_d, "foresight draft count");
  auto* inf_c_opt = inf->add_option("--c", inf_c, "compression ratio");
  auto* inf_max_opt = inf->add_option("--max-new", inf_max, "max generated tokens");
  inf->add_flag("--no-compression", inf_nocomp, "disable memory compression");
  inf->add_option("--n-prompts", inf_n, "cap on prompt count (default all)");

  // bench
  auto* bch = app.add_subcommand("bench", "grid benchmark; CSV per (c, d) cell");
  std::string bch_ckpt, bch_corpus, bch_out, bch_cgrid = "2,4,8,16", bch_dgrid = "0,1,2,3";
  std::string bch_sweep;
  long bch_n = 32;
  int bch_max = 0;
  bool bch_off = false;
  bch->add_option("--checkpoint", bch_ckpt, "model checkpoint")->required();
  bch->add_option("--corpus", bch_corpus, "prompt source (corpus JSONL)")->required();
  bch->add_option("--out", bch_out, "CSV path")->required();
  bch->add_option("--c-grid", bch_cgrid, "compression ratios (default 2,4,8,16)");
  bch->add_option("--d-grid", bch_dgrid, "draft counts (default 0,1,2,3)");
  bch->add_option("--n-prompts", bch_n, "prompts per cell (default 32)");
  auto* bch_max_opt = bch->add_option("--max-new", bch_max, "max generated tokens");
  bch->add_flag("--include-off", bch_off, "add c=0 rows with compression disabled");
  bch->add_option("--lambda-sweep", bch_sweep,
                  "lambda=checkpoint[,...]: evaluate per-lambda checkpoints instead of the grid");

  // check
  auto* chk = app.add_subcommand("check", "run the oracle self-check suites");
  std::string chk_ckpt;
  long chk_n = 8;
  int chk_max = 96;
  std::uint64_t chk_seed = 2026;
  chk->add_option("--checkpoint", chk_ckpt, "also audit this trained checkpoint");
  chk->add_option("--n-prompts", chk_n, "held-out prompts (default 8)");
  chk->add_option("--max-new", chk_max, "max generated tokens per check run (default 96)");
  chk->add_option("--seed", chk_seed, "suite seed");

  try {
    app.parse(argc, argv);

    ms::RunConfig cfg = ms::RunConfig::load(config_path);
    if (gen->parsed()) {
      if (gen_n_opt->count()) cfg.corpus.n_traces = static_cast<int>(gen_n);
      if (gen_seed_opt->count()) cfg.corpus.seed = gen_seed;
      cfg.finalize();
      return cmd_gen_corpus(cfg, gen_out);
    }
    if (bld->parsed()) {
      if (bld_c_opt->count()) cfg.build.c = bld_c;
      if (bld_dmax_opt->count()) cfg.build.d_max = bld_dmax;
      if (bld_lmax_opt->count()) cfg.build.l_max = bld_lmax;
      if (bld_seed_opt->count()) cfg.build.seed = bld_seed;
      cfg.finalize();
      return cmd_build_seq(cfg, bld_in, bld_out, bld_mask);
    }
    if (trn->parsed()) {
      if (trn_mode_opt->count()) cfg.mode = trn_mode;
      if (trn_lambda_opt->count()) cfg.train.lambda = trn_lambda;
      if (trn_lr_opt->count()) cfg.train.peak_lr = trn_lr;
      if (trn_epochs_opt->count()) cfg.train.epochs = trn_epochs;
      if (trn_batch_opt->count()) cfg.train.batch_size = trn_batch;
      if (trn_c_opt->count()) cfg.build.c = trn_c;
      if (trn_dmax_opt->count()) cfg.build.d_max = trn_dmax;
      if (trn_seed_opt->count()) cfg.train.seed = trn_seed;
      cfg.finalize();
      return cmd_train(cfg, trn_corpus, trn_dir);
    }
    if (inf->parsed()) {
      if (inf_d_opt->count()) cfg.infer.d = inf_d;
      if (inf_c_opt->count()) cfg.infer.c = inf_c;
      if (inf_max_opt->count()) cfg.infer.max_new_tokens = inf_max;
      if (inf_nocomp) cfg.infer.compression_enabled = false;
      cfg.finalize();
      return cmd_infer(cfg, inf_ckpt, inf_corpus, inf_out, inf_n);
    }
    if (bch->parsed()) {
      if (bch_max_opt->count()) cfg.infer.max_new_tokens = bch_max;
      cfg.finalize();
      return cmd_bench(cfg, bch_ckpt, bch_corpus, bch_out, bch_cgrid, bch_dgrid, bch_n, bch_off,
                       bch_sweep);
    }
    if (chk->parsed()) {
      cfg.finalize();
      return cmd_check(cfg, chk_ckpt, chk_n, chk_max, chk_seed);
    }
    return 1;  // unreachable: a subcommand is required
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const ms::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ms::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
