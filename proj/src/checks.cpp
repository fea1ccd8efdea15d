// SPDX-License-Identifier: Apache-2.0
#include "memosight/checks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "memosight/attn_mask.hpp"
#include "memosight/corpus.hpp"
#include "memosight/rng.hpp"
#include "memosight/seqbuild.hpp"
#include "memosight/train.hpp"

namespace memosight {

namespace {

double rel_diff(const LogitRow& a, const LogitRow& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a(i)), y = static_cast<double>(b(i));
    const double r = std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1e-4});
    worst = std::max(worst, r);
  }
  return worst;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

bool all_pass(const std::vector<CheckResult>& results) {
  for (const CheckResult& r : results) {
    if (!r.pass) return false;
  }
  return true;
}

CheckResult check_mask_equivalence(std::uint64_t seed, int n_sequences) {
  CheckResult res;
  res.name = "mask_oracle_equivalence";
  const int cs[3] = {2, 3, 5};

  SplitMix64 rng(seed);
  long cells = 0;
  for (int i = 0; i < n_sequences; ++i) {
    CorpusParams p;
    p.seed = rng.next_u64();
    p.n_traces = 1;
    p.steps_min = 1;
    p.steps_max = 6;
    p.step_len_min = min_step_len(p.modulus);
    p.step_len_max = 12;
    const CoTTrace trace = gen_trace(p, 0);

    BuildConfig b;
    b.c = cs[rng.next_below(3)];
    const int d_prime = static_cast<int>(rng.next_below(4));
    b.d_max = std::max(1, d_prime);
    const SpecialIds specials =
        make_special_ids(p.vocab_size, b.l_max, vocab::kDelim, vocab::kEos);
    const TrainSequence seq = build_training_sequence_fixed(trace, b, specials, d_prime);

    const AttnMask built = build_mask(seq);
    const int n = static_cast<int>(seq.tokens.size());
    for (int q = 0; q < n; ++q) {
      for (int k = 0; k < n; ++k) {
        if (built.at(q, k) != visible(q, k, seq)) {
          res.detail = "sequence " + std::to_string(i) + ": mismatch at q=" + std::to_string(q) +
                       " k=" + std::to_string(k);
          return res;
        }
      }
    }
    cells += static_cast<long>(n) * n;
  }
  res.pass = true;
  res.detail = std::to_string(n_sequences) + " sequences, " + std::to_string(cells) +
               " cells, zero mismatches";
  return res;
}

EvictionAudit audit_eviction(const Model& model, const std::vector<CoTTrace>& traces, int c,
                             const SpecialIds& specials) {
  if (c < 1) throw std::invalid_argument("audit_eviction: c < 1");
  EvictionAudit audit;
  const TokenId bound = specials.foresight_id;

  for (const CoTTrace& trace : traces) {
    KvCache real(model.cfg);
    KvCache shadow(model.cfg);

    std::vector<NewTok> prefill;
    for (std::size_t i = 0; i < trace.prompt.size(); ++i) {
      NewTok t;
      t.id = trace.prompt[i];
      t.pid = static_cast<Pid>(i);
      t.role = Role::Prompt;
      t.step = 0;
      prefill.push_back(t);
    }
    model.forward_incremental(prefill, real, /*append=*/true);
    model.forward_incremental(prefill, shadow, /*append=*/true);

    Pid p_last = static_cast<Pid>(trace.prompt.size()) - 1;
    long mem_rows = 0;  // compressed footprint so far: sum of (l_j + 1)
    ++audit.traces;

    for (std::size_t si = 0; si < trace.steps.size(); ++si) {
      const int s_now = static_cast<int>(si) + 1;
      const std::vector<TokenId>& step = trace.steps[si];

      // Teacher-force the step's tokens through both caches. The shadow keeps
      // every compressed step's reasoning rows and hides them by predicate,
      // so its keys/values must coincide with the evicting cache's.
      std::vector<NewTok> feed;
      std::vector<Pid> seg_pids;
      for (std::size_t j = 0; j < step.size(); ++j) {
        NewTok t;
        t.id = step[j];
        t.pid = p_last + 1 + static_cast<Pid>(j);
        t.role = Role::Reasoning;
        t.step = s_now;
        feed.push_back(t);
        seg_pids.push_back(t.pid);
      }
      const MatT<float> rl = model.forward_incremental(feed, real, /*append=*/true);
      for (NewTok& t : feed) {
        t.vis.cache_pred = [s_now](Role r, int s) {
          return !(r == Role::Reasoning && s < s_now);
        };
      }
      const MatT<float> sl = model.forward_incremental(feed, shadow, /*append=*/true);
      audit.max_rel =
          std::max(audit.max_rel, rel_diff(rl.row(rl.rows() - 1), sl.row(sl.rows() - 1)));
      ++audit.probes;
      p_last = seg_pids.back();

      if (si + 1 == trace.steps.size()) break;  // final step: no compression

      CompressResult cr = compress_segment(model, real, step, seg_pids, c, s_now, specials);
      ++audit.events;
      mem_rows += cr.n_memory + 1;
      if (real.len() !=
          static_cast<int>(trace.prompt.size()) + static_cast<int>(mem_rows)) {
        audit.length_law_ok = false;
      }

      // Same memory/output batch into the shadow cache, without eviction.
      const std::vector<Pid> mpids =
          memory_pids(seg_pids.front(), static_cast<int>(step.size()), c);
      std::vector<NewTok> mo;
      for (int j = 0; j < cr.n_memory; ++j) {
        NewTok t;
        t.id = specials.memory_ids[static_cast<std::size_t>(j)];
        t.pid = mpids[static_cast<std::size_t>(j)];
        t.role = Role::Memory;
        t.step = s_now;
        t.vis.cache_pred = [s_now](Role r, int s) {
          if (r == Role::Prompt) return true;
          if ((r == Role::Memory || r == Role::Output) && s < s_now) return true;
          if (r == Role::Reasoning && s == s_now) return true;
          return false;
        };
        mo.push_back(std::move(t));
      }
      NewTok o;
      o.id = specials.output_id;
      o.pid = seg_pids.back() + 1;
      o.role = Role::Output;
      o.step = s_now;
      o.vis.cache_pred = [s_now](Role r, int s) {
        if (r == Role::Prompt) return true;
        if ((r == Role::Memory || r == Role::Output) && s < s_now) return true;
        return false;
      };
      mo.push_back(std::move(o));
      const MatT<float> slogits = model.forward_incremental(mo, shadow, /*append=*/true);
      audit.max_rel =
          std::max(audit.max_rel, rel_diff(cr.output_logits, slogits.row(cr.n_memory)));
      ++audit.probes;

      // Probe both caches with the greedy next token after the bridge.
      NewTok probe;
      probe.id = regular_argmax(cr.output_logits, bound);
      probe.pid = seg_pids.back() + 2;
      probe.role = Role::Reasoning;
      probe.step = s_now + 1;
      const LogitRow pr = model.forward_incremental({probe}, real, /*append=*/false).row(0);
      NewTok sprobe = probe;
      const int s_next = s_now + 1;
      sprobe.vis.cache_pred = [s_next](Role r, int s) {
        return !(r == Role::Reasoning && s < s_next);
      };
      const LogitRow ps = model.forward_incremental({sprobe}, shadow, /*append=*/false).row(0);
      audit.max_rel = std::max(audit.max_rel, rel_diff(pr, ps));
      ++audit.probes;

      p_last = seg_pids.back() + 1;  // the output token's pid
    }
  }
  return audit;
}

CheckResult check_eviction(const Model& model, const std::vector<CoTTrace>& traces, int c,
                           const SpecialIds& specials, double tol, int min_events) {
  CheckResult res;
  res.name = "eviction_equals_masking";
  const EvictionAudit a = audit_eviction(model, traces, c, specials);
  res.detail = std::to_string(a.events) + " compression events, " + std::to_string(a.probes) +
               " probes, max_rel=" + fmt(a.max_rel);
  res.pass = a.events >= min_events && a.max_rel < tol && a.length_law_ok;
  if (a.events < min_events) {
    res.detail += " (need >= " + std::to_string(min_events) + " events)";
  }
  if (!a.length_law_ok) res.detail += " (cache-length law violated)";
  return res;
}

CheckResult check_losslessness(const Model& model, const std::vector<std::vector<TokenId>>& prompts,
                               const InferConfig& base, const std::vector<int>& ds,
                               const SpecialIds& specials) {
  CheckResult res;
  res.name = "speculative_losslessness";
  long streams = 0;
  for (std::size_t pi = 0; pi < prompts.size(); ++pi) {
    InferConfig ref = base;
    ref.d = 0;
    const GenerationResult want = generate(model, prompts[pi], ref, specials);
    for (int d : ds) {
      InferConfig cfg = base;
      cfg.d = d;
      const GenerationResult got = generate(model, prompts[pi], cfg, specials);
      if (got.output_ids != want.output_ids) {
        std::size_t at = 0;
        while (at < got.output_ids.size() && at < want.output_ids.size() &&
               got.output_ids[at] == want.output_ids[at]) {
          ++at;
        }
        res.detail = "prompt " + std::to_string(pi) + ", d=" + std::to_string(d) +
                     ": diverges at generated token " + std::to_string(at);
        return res;
      }
      ++streams;
    }
  }
  res.pass = true;
  res.detail = std::to_string(prompts.size()) + " prompts x d in {" + [&] {
    std::string s;
    for (std::size_t i = 0; i < ds.size(); ++i) s += (i ? "," : "") + std::to_string(ds[i]);
    return s;
  }() + "}, " + std::to_string(streams) + " streams identical to d=0";
  return res;
}

CheckResult check_gradients(const SpecialIds& specials, std::uint64_t seed, double tol) {
  CheckResult res;
  res.name = "gradient_check";

  CorpusParams p;
  p.seed = seed;
  p.n_traces = 1;
  p.steps_min = 2;
  p.steps_max = 2;
  p.step_len_min = 8;
  p.step_len_max = 8;
  const CoTTrace trace = gen_trace(p, 0);

  BuildConfig b;
  b.c = 3;
  b.d_max = 2;
  b.l_max = static_cast<int>(specials.memory_ids.size());
  const TrainSequence seq = build_training_sequence_fixed(trace, b, specials, 1);

  ModelConfig mc;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.d_model = 32;
  mc.vocab_size = specials.output_id + 1;
  mc.param_seed = mix_seed(seed, 11);

  const ModelD md = ModelD::init(mc);
  const double max_rel = grad_check(md, seq, specials, 0.7, 1e-4, 52, mix_seed(seed, 12));

  // The memory embedding must receive gradient despite carrying no label.
  const Model mf = Model::init(mc);
  std::vector<Supervised> sups = collect_supervised(seq);
  long cls_count[2] = {0, 0};
  for (const Supervised& s : sups) ++cls_count[s.cls];
  for (Supervised& s : sups) {
    s.weight = (s.cls == 0 ? 0.7 / static_cast<double>(cls_count[0])
                           : 0.3 / static_cast<double>(cls_count[1]));
  }
  std::vector<TokenId> ids(seq.tokens.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = seq.tokens[i].id;
  ParamsT<float> grads = ParamsT<float>::shaped(mc);
  mf.forward_backward(ids, seq.pids, build_mask(seq), sups, grads);
  const double mem_norm = grads.embed.row(specials.memory_ids[0]).cast<double>().norm();

  res.pass = max_rel < tol && mem_norm > 0.0;
  res.detail = "max_rel=" + fmt(max_rel) + " (tol " + fmt(tol) +
               "), memory embedding grad norm=" + fmt(mem_norm);
  return res;
}

CheckResult check_accounting(const Model& model, const std::vector<std::vector<TokenId>>& prompts,
                             const InferConfig& icfg, const SpecialIds& specials) {
  CheckResult res;
  res.name = "accounting_identities";
  long events = 0, boundaries = 0;
  for (std::size_t pi = 0; pi < prompts.size(); ++pi) {
    const GenerationResult g = generate(model, prompts[pi], icfg, specials);
    const std::string where = "prompt " + std::to_string(pi) + ": ";

    if (g.offered_drafts != static_cast<long>(icfg.d) * g.spec_iterations) {
      res.detail = where + "offered != d * iterations";
      return res;
    }
    const long spec_passes = (icfg.d > 0 ? 2 : 1) * g.spec_iterations;
    if (g.forward_passes != 1 + spec_passes + g.compression_events) {
      res.detail = where + "forward-pass identity broken (" + std::to_string(g.forward_passes) +
                   " vs " + std::to_string(1 + spec_passes + g.compression_events) + ")";
      return res;
    }
    const long slack = g.spec_iterations + g.accepted_drafts - g.generated_token_count;
    if (g.truncated ? (slack < 0 || slack > icfg.d) : (slack != 0)) {
      res.detail = where + "generated != iterations + accepted (slack " + std::to_string(slack) +
                   ", truncated=" + std::to_string(g.truncated) + ")";
      return res;
    }
    long expect = g.prompt_len;
    for (std::size_t i = 0; i < g.boundary_cache_lens.size(); ++i) {
      expect += alloc_memory(g.segment_lens[i], icfg.c) + 1;
      if (g.boundary_cache_lens[i] != expect) {
        res.detail = where + "cache-length law broken at boundary " + std::to_string(i) + " (" +
                     std::to_string(g.boundary_cache_lens[i]) + " vs " + std::to_string(expect) +
                     ")";
        return res;
      }
      ++boundaries;
    }
    events += g.compression_events;
    if (g.peak_context_tokens < g.prompt_len) {
      res.detail = where + "peak below prompt length";
      return res;
    }
  }
  res.pass = true;
  res.detail = std::to_string(prompts.size()) + " generations, " + std::to_string(events) +
               " compression events, " + std::to_string(boundaries) +
               " boundaries satisfy the cache-length law";
  return res;
}

std::vector<CheckResult> run_all_checks(const Model& model, const std::vector<CoTTrace>& traces,
                                        const InferConfig& icfg, const SpecialIds& specials,
                                        std::uint64_t seed) {
  std::vector<std::vector<TokenId>> prompts;
  for (const CoTTrace& t : traces) prompts.push_back(t.prompt);
  std::vector<CheckResult> out;
  out.push_back(check_mask_equivalence(seed, 200));
  out.push_back(check_eviction(model, traces, icfg.c, specials, 1e-5, 1));
  out.push_back(check_losslessness(model, prompts, icfg, {1, 2, 3}, specials));
  out.push_back(check_gradients(specials, mix_seed(seed, 21), 1e-3));
  out.push_back(check_accounting(model, prompts, icfg, specials));
  return out;
}

}  // namespace memosight
