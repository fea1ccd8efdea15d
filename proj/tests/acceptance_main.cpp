// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate for the MemoSight runtime. Trains the default pipeline and
// its vanilla control, then verifies nine properties end to end, printing one
// PASS/FAIL line per criterion. Exit code is the number of failed criteria.
//
// Tolerances are pinned here, next to the check that uses them:
//   1. mask construction == pairwise oracle, 200 random sequences, bit-exact,
//      under 30 s.
//   2. golden layout file reproduced exactly (zero tolerance).
//   3. eviction == masking on >= 50 compression events, random + trained
//      weights, relative error < 1e-5, under 2 min.
//   4. speculative decoding lossless for d in {1,2,3} on 100 prompts,
//      random + trained weights, byte-identical to d=0, under 5 min.
//   5. float64 gradient check, eps 1e-4, >= 64 parameters including the
//      special embeddings, max relative error < 1e-3, plus a nonzero
//      memory-embedding gradient on a two-step sequence.
//   6. cache-length law exact at every compression boundary in 50 trained
//      generations.
//   7. d=0 + compression off reproduces a reference greedy decoder
//      byte-for-byte on 100 prompts; specials-disabled lambda=1 training
//      matches a reference causal trainer within 1e-6 per step.
//   8. default training run: (a) mean peak context <= 60% of the
//      compression-off baseline, (b) task accuracy within 10 absolute points
//      of the vanilla control, (c) pass counts consistent with the
//      acceptance rate; the whole training + evaluation block under 30 min.
//   9. mean peak context strictly decreasing across c in {2,4,8,16};
//      offered drafts == d * iterations exactly in every run.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "memosight/checks.hpp"
#include "memosight/corpus.hpp"
#include "memosight/infer.hpp"
#include "memosight/model.hpp"
#include "memosight/reference.hpp"
#include "memosight/rng.hpp"
#include "memosight/seqbuild.hpp"
#include "memosight/train.hpp"

namespace ms = memosight;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double secs() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "[PASS]" : "[FAIL]") << " criterion " << id << " (" << name
            << "): " << detail << "\n"
            << std::flush;
  if (!pass) ++g_failures;
}

// A criterion that throws must still produce its line.
template <typename Fn>
void guarded(int id, const std::string& name, Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

struct EvalStats {
  long n = 0;
  long hits = 0;
  double peak_sum = 0.0;
  long offered = 0;
  long accepted = 0;
  long iterations = 0;
  bool identities_ok = true;
  std::string identity_fail;

  double accuracy() const { return n ? static_cast<double>(hits) / n : 0.0; }
  double peak_mean() const { return n ? peak_sum / n : 0.0; }
  double acceptance() const {
    return offered ? static_cast<double>(accepted) / static_cast<double>(offered) : 0.0;
  }
};

EvalStats evaluate(const ms::Model& model, const std::vector<std::vector<ms::TokenId>>& prompts,
                   const ms::InferConfig& icfg, const ms::SpecialIds& sp, int modulus) {
  EvalStats s;
  for (const auto& prompt : prompts) {
    const ms::GenerationResult r = ms::generate(model, prompt, icfg, sp);
    s.n += 1;
    const ms::ChainEval ev = ms::eval_chain(prompt, modulus);
    if (ms::extract_answer_digits(r.output_ids) == ms::digit_ids(ev.answer)) s.hits += 1;
    s.peak_sum += r.peak_context_tokens;
    s.offered += r.offered_drafts;
    s.accepted += r.accepted_drafts;
    s.iterations += r.spec_iterations;

    // Pass-count bookkeeping must be exact in every single generation.
    const long spec_passes = icfg.d > 0 ? 2 * r.spec_iterations : r.spec_iterations;
    if (r.forward_passes != 1 + spec_passes + r.compression_events) {
      s.identities_ok = false;
      s.identity_fail = "forward_passes " + std::to_string(r.forward_passes) + " != 1 + " +
                        std::to_string(spec_passes) + " + " +
                        std::to_string(r.compression_events);
    }
    if (r.offered_drafts != static_cast<long>(icfg.d) * r.spec_iterations) {
      s.identities_ok = false;
      s.identity_fail = "offered != d * iterations";
    }
    const long slack = r.spec_iterations + r.accepted_drafts - r.generated_token_count;
    if (slack < 0 || slack > icfg.d || (!r.truncated && slack != 0)) {
      s.identities_ok = false;
      s.identity_fail = "generated != iterations + accepted (slack " + std::to_string(slack) +
                        ")";
    }
  }
  return s;
}

std::vector<std::vector<ms::TokenId>> prompts_of(const std::vector<ms::CoTTrace>& traces,
                                                 std::size_t cap) {
  std::vector<std::vector<ms::TokenId>> out;
  for (const auto& t : traces) {
    if (out.size() >= cap) break;
    out.push_back(t.prompt);
  }
  return out;
}

std::vector<double> read_loss_column(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open " + csv_path);
  std::vector<double> out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    out.push_back(std::stod(cells.at(3)));
  }
  return out;
}

}  // namespace

int main() {
  const std::string work = "/tmp/memosight_acceptance_" + std::to_string(::getpid());
  std::filesystem::create_directories(work + "/memo");
  std::filesystem::create_directories(work + "/plain");
  std::filesystem::create_directories(work + "/reduction");

  const ms::CorpusParams corpus_params;  // defaults: 512 traces, 4..7 steps
  const ms::BuildConfig build_cfg;       // defaults: c=5, d_max=2, l_max=32
  const ms::TrainConfig train_cfg;       // defaults: lambda=0.7, 5 epochs
  const ms::SpecialIds sp = ms::make_special_ids(ms::vocab::kRegularCount, build_cfg.l_max,
                                                 ms::vocab::kDelim, ms::vocab::kEos);
  ms::ModelConfig memo_mcfg;  // defaults: 4 layers, 4 heads, d_model 128
  memo_mcfg.vocab_size = sp.output_id + 1;
  ms::ModelConfig plain_mcfg = memo_mcfg;
  plain_mcfg.vocab_size = ms::vocab::kRegularCount;

  const std::vector<ms::CoTTrace> corpus = ms::gen_corpus(corpus_params);
  ms::CorpusParams held_params = corpus_params;
  held_params.seed = ms::mix_seed(corpus_params.seed, 0x9E3779B97F4A7C15ULL);
  held_params.n_traces = 128;
  const std::vector<ms::CoTTrace> held = ms::gen_corpus(held_params);
  const auto held_prompts = prompts_of(held, held.size());

  std::cout << "workspace: " << work << "\n" << std::flush;

  // ---- criterion 1: mask construction vs pairwise oracle --------------------
  guarded(1, "mask oracle equivalence", [&] {
    Timer t;
    const ms::CheckResult r = ms::check_mask_equivalence(2026, 200);
    const double secs = t.secs();
    report(1, "mask oracle equivalence", r.pass && secs < 30.0,
           r.detail + ", " + fmt(secs, 3) + "s (limit 30s)");
  });

  // ---- criterion 2: golden sequence layout ----------------------------------
  {
    bool pass = true;
    std::string detail;
    try {
      const std::string path = std::string(MEMOSIGHT_TEST_DATA_DIR) + "/golden_layout.jsonl";
      std::ifstream in(path);
      if (!in) throw std::runtime_error("missing " + path);
      std::string line;
      std::getline(in, line);
      const nlohmann::json golden = nlohmann::json::parse(line);

      ms::CoTTrace micro;
      micro.prompt = {13};
      micro.steps = {{0, 1, ms::vocab::kDelim}, {2, 3, ms::vocab::kEos}};
      ms::BuildConfig bc;
      bc.c = 3;
      bc.l_max = 2;
      const ms::SpecialIds msp =
          ms::make_special_ids(ms::vocab::kRegularCount, bc.l_max, ms::vocab::kDelim,
                               ms::vocab::kEos);
      const ms::TrainSequence seq = ms::build_training_sequence_fixed(micro, bc, msp, 1);
      const nlohmann::json got = ms::sequence_to_json(seq);
      for (const char* key : {"ids", "roles", "pids", "labels", "d_prime"}) {
        if (got.at(key) != golden.at(key)) {
          pass = false;
          detail += std::string(key) + " differs; ";
        }
      }
      // Headline positions, asserted independently of the file.
      int mem_at = -1, out_at = -1, f1_at = -1, r21_at = -1, seen_r2 = 0;
      for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
        const ms::Token& tk = seq.tokens[i];
        if (tk.role == ms::Role::Memory && mem_at < 0) mem_at = static_cast<int>(i);
        if (tk.role == ms::Role::Output && out_at < 0) out_at = static_cast<int>(i);
        if (tk.role == ms::Role::Foresight && tk.step == 1 && f1_at < 0) {
          f1_at = static_cast<int>(i);
        }
        if (tk.role == ms::Role::Reasoning && tk.step == 2 && seen_r2++ == 0) {
          r21_at = static_cast<int>(i);
        }
      }
      if (seq.pids.at(mem_at) != 2) pass = false, detail += "memory pid != 2; ";
      if (seq.pids.at(out_at) != 4) pass = false, detail += "output pid != 4; ";
      if (seq.pids.at(r21_at) != 5) pass = false, detail += "next-step first pid != 5; ";
      if (seq.pids.at(f1_at) != 1) pass = false, detail += "foresight pid != 1; ";
      if (seq.labels.at(f1_at) != 1) pass = false, detail += "foresight label != r_2; ";
      if (pass) detail = "golden file and headline positions reproduced exactly";
    } catch (const std::exception& e) {
      pass = false;
      detail = e.what();
    }
    report(2, "golden layout", pass, detail);
  }

  // ---- criterion 5 (cheap, run before training): gradients -------------------
  guarded(5, "float64 gradient check", [&] {
    const ms::CheckResult r = ms::check_gradients(sp, 7, 1e-3);
    report(5, "float64 gradient check", r.pass, r.detail);
  });

  // ---- criterion 8 setup: train the pipeline and the vanilla control --------
  Timer t8;
  std::cout << "training memosight model (512 traces, 5 epochs)..." << std::endl;
  const ms::FitResult memo_fit = ms::fit(corpus, build_cfg, train_cfg, memo_mcfg, sp,
                                         ms::TrainMode::Memosight, work + "/memo");
  std::cout << "training vanilla control..." << std::endl;
  const ms::FitResult plain_fit = ms::fit(corpus, build_cfg, train_cfg, plain_mcfg, sp,
                                          ms::TrainMode::PlainCausal, work + "/plain");
  const ms::Model& memo = memo_fit.model;
  const ms::Model& plain = plain_fit.model;

  ms::InferConfig eval_on;  // the trained operating point
  eval_on.d = 2;
  eval_on.c = 5;
  eval_on.compression_enabled = true;
  eval_on.max_new_tokens = 320;
  ms::InferConfig eval_off = eval_on;
  eval_off.d = 0;
  eval_off.compression_enabled = false;

  guarded(8, "default training run", [&] {
    const EvalStats on = evaluate(memo, held_prompts, eval_on, sp, corpus_params.modulus);
    const EvalStats off = evaluate(memo, held_prompts, eval_off, sp, corpus_params.modulus);
    const EvalStats ctl = evaluate(plain, held_prompts, eval_off, sp, corpus_params.modulus);
    const double t8_secs = t8.secs();
    const double ratio = on.peak_mean() / off.peak_mean();
    const bool pass_a = ratio <= 0.60;
    const bool pass_b = on.accuracy() >= ctl.accuracy() - 0.10;
    const bool pass_c = on.identities_ok && off.identities_ok && on.offered > 0;
    const bool in_time = t8_secs < 1800.0;
    std::string detail = "peak " + fmt(on.peak_mean()) + " vs off " + fmt(off.peak_mean()) +
                         " (ratio " + fmt(ratio) + ", limit 0.60); accuracy memo " +
                         fmt(on.accuracy()) + " vs control " + fmt(ctl.accuracy()) +
                         " (allowed gap 0.10); acceptance " + fmt(on.acceptance()) +
                         " with exact pass counts" +
                         (pass_c ? "" : (" [" + on.identity_fail + off.identity_fail + "]")) +
                         "; " + fmt(t8_secs, 4) + "s (limit 1800s)";
    report(8, "default training run", pass_a && pass_b && pass_c && in_time, detail);
  });

  // ---- criterion 3: eviction equals masking ---------------------------------
  guarded(3, "eviction equals masking", [&] {
    Timer t;
    const std::vector<ms::CoTTrace> audit_traces(held.begin(), held.begin() + 16);
    const ms::Model rnd = [&] {
      ms::ModelConfig mc = memo_mcfg;
      mc.param_seed = 1234;
      return ms::Model::init(mc);
    }();
    const ms::EvictionAudit a_rnd = ms::audit_eviction(rnd, audit_traces, 5, sp);
    const ms::EvictionAudit a_trn = ms::audit_eviction(memo, audit_traces, 5, sp);
    const int events = a_rnd.events + a_trn.events;
    const double max_rel = std::max(a_rnd.max_rel, a_trn.max_rel);
    const double secs = t.secs();
    const bool pass = events >= 50 && max_rel < 1e-5 && a_rnd.length_law_ok &&
                      a_trn.length_law_ok && secs < 120.0;
    report(3, "eviction equals masking", pass,
           std::to_string(events) + " events (need >= 50), max rel err " + fmt(max_rel, 3) +
               " (limit 1e-5), " + fmt(secs, 3) + "s (limit 120s)");
  });

  // ---- criterion 4: speculative losslessness --------------------------------
  guarded(4, "speculative losslessness", [&] {
    Timer t;
    ms::InferConfig base;
    base.c = 5;
    base.compression_enabled = true;
    base.max_new_tokens = 96;
    const std::vector<std::vector<ms::TokenId>> half(held_prompts.begin(),
                                                     held_prompts.begin() + 50);
    const ms::Model rnd = [&] {
      ms::ModelConfig mc = memo_mcfg;
      mc.param_seed = 5678;
      return ms::Model::init(mc);
    }();
    const ms::CheckResult r1 = ms::check_losslessness(rnd, half, base, {1, 2, 3}, sp);
    const ms::CheckResult r2 = ms::check_losslessness(memo, half, base, {1, 2, 3}, sp);
    const double secs = t.secs();
    const bool pass = r1.pass && r2.pass && secs < 300.0;
    report(4, "speculative losslessness", pass,
           "random: " + r1.detail + "; trained: " + r2.detail + "; " + fmt(secs, 3) +
               "s (limit 300s)");
  });

  // ---- criterion 6: cache-length law ----------------------------------------
  guarded(6, "cache-length law", [&] {
    const std::vector<std::vector<ms::TokenId>> fifty(held_prompts.begin(),
                                                      held_prompts.begin() + 50);
    const ms::CheckResult r = ms::check_accounting(memo, fifty, eval_on, sp);
    report(6, "cache-length law", r.pass, r.detail);
  });

  // ---- criterion 7: degenerate-configuration equivalence --------------------
  guarded(7, "degenerate configurations match references", [&] {
    bool pass = true;
    std::string detail;
    Timer t;

    ms::InferConfig plain_decode;
    plain_decode.d = 0;
    plain_decode.compression_enabled = false;
    plain_decode.max_new_tokens = 96;
    int mismatches = 0;
    for (std::size_t i = 0; i < 100; ++i) {
      const auto got = ms::generate(memo, held_prompts[i], plain_decode, sp).output_ids;
      const auto want =
          ms::reference_greedy_decode(memo, held_prompts[i], plain_decode.max_new_tokens, sp);
      if (got != want) ++mismatches;
    }
    if (mismatches > 0) {
      pass = false;
      detail += std::to_string(mismatches) + "/100 decode mismatches; ";
    } else {
      detail += "100/100 greedy decodes byte-identical; ";
    }

    const std::vector<ms::CoTTrace> small(corpus.begin(), corpus.begin() + 48);
    ms::TrainConfig tc = train_cfg;
    tc.lambda = 1.0;
    tc.epochs = 2;
    ms::BuildConfig bc = build_cfg;
    bc.d_max = 0;
    ms::fit(small, bc, tc, plain_mcfg, sp, ms::TrainMode::PlainCausal, work + "/reduction");
    const std::vector<double> got_losses = read_loss_column(work + "/reduction/train_log.csv");
    const std::vector<double> want_losses = ms::reference_causal_train_losses(small, tc, plain_mcfg);
    if (got_losses.size() != want_losses.size()) {
      pass = false;
      detail += "loss trace length mismatch";
    } else {
      double worst = 0.0;
      for (std::size_t i = 0; i < got_losses.size(); ++i) {
        worst = std::max(worst, std::abs(got_losses[i] - want_losses[i]));
      }
      if (worst >= 1e-6) pass = false;
      detail += "training loss trace max dev " + fmt(worst, 3) + " over " +
                std::to_string(got_losses.size()) + " steps (limit 1e-6)";
    }
    detail += "; " + fmt(t.secs(), 3) + "s";
    report(7, "degenerate configurations match references", pass, detail);
  });

  // ---- criterion 9: peak monotone in the compression ratio ------------------
  guarded(9, "peak decreases with compression ratio", [&] {
    const std::vector<std::vector<ms::TokenId>> batch(held_prompts.begin(),
                                                      held_prompts.begin() + 32);
    std::vector<double> peaks;
    bool identities = true;
    std::string id_fail;
    for (int c : {2, 4, 8, 16}) {
      ms::InferConfig icfg = eval_on;
      icfg.c = c;
      const EvalStats s = evaluate(memo, batch, icfg, sp, corpus_params.modulus);
      peaks.push_back(s.peak_mean());
      if (!s.identities_ok) {
        identities = false;
        id_fail = s.identity_fail;
      }
      if (s.offered != static_cast<long>(icfg.d) * s.iterations) {
        identities = false;
        id_fail = "offered != d * iterations";
      }
    }
    bool decreasing = true;
    for (std::size_t i = 0; i + 1 < peaks.size(); ++i) {
      if (!(peaks[i + 1] < peaks[i])) decreasing = false;
    }
    std::string detail = "mean peaks at c=2,4,8,16:";
    for (double p : peaks) detail += " " + fmt(p, 5);
    detail += identities ? "; offered = d x iterations exact" : ("; " + id_fail);
    report(9, "peak decreases with compression ratio", decreasing && identities, detail);
  });

  if (g_failures == 0) {
    std::cout << "all 9 acceptance criteria passed\n";
  } else {
    std::cout << g_failures << " acceptance criteria failed\n";
  }
  return g_failures == 0 ? 0 : 1;
}
