// SPDX-License-Identifier: Apache-2.0
#include "memosight/infer.hpp"

#include <chrono>
#include <stdexcept>

#include "memosight/corpus.hpp"
#include "memosight/seqbuild.hpp"

namespace memosight {

void InferConfig::validate() const {
  if (d < 0) throw std::invalid_argument("InferConfig: d < 0");
  if (c < 1) throw std::invalid_argument("InferConfig: c < 1");
  if (max_new_tokens < 1) throw std::invalid_argument("InferConfig: max_new_tokens < 1");
}

TokenId regular_argmax(const LogitRow& logits, TokenId bound) {
  TokenId best = 0;
  float best_v = logits(0);
  const TokenId n = std::min<TokenId>(bound, static_cast<TokenId>(logits.size()));
  for (TokenId v = 1; v < n; ++v) {
    if (logits(v) > best_v) {
      best_v = logits(v);
      best = v;
    }
  }
  return best;
}

SpecStepResult speculative_step(const Model& model, KvCache& cache, const LogitRow& last_logits,
                                int d, Pid p_last, int step_index, const SpecialIds& specials) {
  const TokenId bound = specials.foresight_id;
  SpecStepResult res;
  res.drafts.drafts.push_back(regular_argmax(last_logits, bound));

  if (d > 0) {
    // Predict: d foresight probes, each seeing the cache and itself only;
    // their entries never persist.
    std::vector<NewTok> probes;
    for (int k = 1; k <= d; ++k) {
      NewTok t;
      t.id = specials.foresight_id;
      t.pid = p_last + k;  // one before the pid of the token it predicts
      t.role = Role::Foresight;
      t.step = step_index;
      t.vis.attend_prior = false;
      probes.push_back(std::move(t));
    }
    const MatT<float> flogits = model.forward_incremental(probes, cache, /*append=*/false);
    for (int k = 0; k < d; ++k) {
      res.drafts.drafts.push_back(regular_argmax(flogits.row(k), bound));
    }
    res.passes += 1;
    res.peak_in_flight = std::max(res.peak_in_flight, cache.len() + d);
  }

  // Verify: all drafts as reasoning tokens, causal among themselves.
  std::vector<NewTok> verify;
  for (int j = 0; j <= d; ++j) {
    NewTok t;
    t.id = res.drafts.drafts[static_cast<std::size_t>(j)];
    t.pid = p_last + 1 + j;
    t.role = Role::Reasoning;
    t.step = step_index;
    verify.push_back(std::move(t));
  }
  res.peak_in_flight = std::max(res.peak_in_flight, cache.len() + d + 1);
  const int len_before = cache.len();
  const MatT<float> vlogits = model.forward_incremental(verify, cache, /*append=*/true);
  res.passes += 1;

  // The first draft is the true greedy token; each further draft survives iff
  // it matches the greedy continuation of the accepted prefix.
  int n_acc = 1;
  while (n_acc <= d) {
    const TokenId greedy = regular_argmax(vlogits.row(n_acc - 1), bound);
    if (greedy != res.drafts.drafts[static_cast<std::size_t>(n_acc)]) break;
    ++n_acc;
  }
  // Cut at the first segment boundary; the cache must not keep tokens past it.
  int n_keep = n_acc;
  for (int j = 0; j < n_acc; ++j) {
    const TokenId id = res.drafts.drafts[static_cast<std::size_t>(j)];
    if (id == specials.delimiter_id || id == specials.eos_id) {
      n_keep = j + 1;
      (id == specials.delimiter_id ? res.saw_delim : res.saw_eos) = true;
      break;
    }
  }
  cache.truncate(len_before + n_keep);
  res.accepted.assign(res.drafts.drafts.begin(), res.drafts.drafts.begin() + n_keep);
  res.last_logits = vlogits.row(n_keep - 1);
  return res;
}

CompressResult compress_segment(const Model& model, KvCache& cache,
                                const std::vector<TokenId>& segment_ids,
                                const std::vector<Pid>& segment_pids, int c, int step_index,
                                const SpecialIds& specials) {
  if (segment_ids.empty() || segment_ids.back() != specials.delimiter_id) {
    throw std::invalid_argument("compress_segment: segment must end with the delimiter");
  }
  const int len = static_cast<int>(segment_ids.size());
  const int l = alloc_memory(len, c);
  if (l > static_cast<int>(specials.memory_ids.size())) {
    throw std::runtime_error("memory capacity exceeded at step " + std::to_string(step_index) +
                             ": need " + std::to_string(l) + " tokens, pool holds " +
                             std::to_string(specials.memory_ids.size()));
  }
  const std::vector<Pid> mpids = memory_pids(segment_pids.front(), len, c);

  std::vector<NewTok> toks;
  for (int j = 0; j < l; ++j) {
    NewTok t;
    t.id = specials.memory_ids[static_cast<std::size_t>(j)];
    t.pid = mpids[static_cast<std::size_t>(j)];
    t.role = Role::Memory;
    t.step = step_index;
    t.vis.cache_pred = [step_index](Role r, int s) {
      if (r == Role::Prompt) return true;
      if ((r == Role::Memory || r == Role::Output) && s < step_index) return true;
      if (r == Role::Reasoning && s == step_index) return true;
      return false;
    };
    toks.push_back(std::move(t));
  }
  NewTok o;
  o.id = specials.output_id;
  o.pid = segment_pids.back() + 1;
  o.role = Role::Output;
  o.step = step_index;
  o.vis.cache_pred = [step_index](Role r, int s) {
    if (r == Role::Prompt) return true;
    if ((r == Role::Memory || r == Role::Output) && s < step_index) return true;
    return false;  // never the verbose reasoning of its own step
  };
  toks.push_back(std::move(o));

  CompressResult res;
  res.peak_in_flight = cache.len() + l + 1;
  const MatT<float> logits = model.forward_incremental(toks, cache, /*append=*/true);
  res.passes = 1;
  res.n_memory = l;
  res.output_logits = logits.row(l);
  cache.evict([step_index](Role r, int s) { return r == Role::Reasoning && s == step_index; });
  return res;
}

GenerationResult generate(const Model& model, const std::vector<TokenId>& prompt,
                          const InferConfig& icfg, const SpecialIds& specials) {
  icfg.validate();
  if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
  if (icfg.d > 0 && specials.foresight_id >= model.cfg.vocab_size) {
    throw std::invalid_argument("generate: d > 0 needs a foresight embedding in the vocab");
  }
  if (icfg.compression_enabled && specials.output_id >= model.cfg.vocab_size) {
    throw std::invalid_argument("generate: compression needs memory/output embeddings");
  }

  const auto t0 = std::chrono::steady_clock::now();
  GenerationResult res;
  res.prompt_len = static_cast<int>(prompt.size());

  KvCache cache(model.cfg);
  std::vector<NewTok> prefill;
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    NewTok t;
    t.id = prompt[i];
    t.pid = static_cast<Pid>(i);
    t.role = Role::Prompt;
    t.step = 0;
    prefill.push_back(std::move(t));
  }
  res.peak_context_tokens = static_cast<int>(prompt.size());
  LogitRow last_logits =
      model.forward_incremental(prefill, cache, /*append=*/true).row(prompt.size() - 1);
  res.forward_passes = 1;

  Pid p_last = static_cast<Pid>(prompt.size()) - 1;
  int step_index = 1;
  std::vector<TokenId> seg_ids;
  std::vector<Pid> seg_pids;

  while (res.generated_token_count < icfg.max_new_tokens) {
    if (p_last + icfg.d + 2 > model.cfg.max_pid) {
      res.truncated = true;  // pid budget exhausted; treat as truncation
      break;
    }
    SpecStepResult st =
        speculative_step(model, cache, last_logits, icfg.d, p_last, step_index, specials);
    res.forward_passes += st.passes;
    res.peak_context_tokens = std::max(res.peak_context_tokens, st.peak_in_flight);
    res.spec_iterations += 1;
    res.offered_drafts += icfg.d;
    res.accepted_drafts += static_cast<long>(st.accepted.size()) - 1;

    for (TokenId id : st.accepted) {
      res.output_ids.push_back(id);
      seg_ids.push_back(id);
      seg_pids.push_back(++p_last);
    }
    res.generated_token_count += static_cast<long>(st.accepted.size());
    last_logits = st.last_logits;

    if (res.generated_token_count > icfg.max_new_tokens) {
      // Trim the overshoot so the output is exactly max_new_tokens long.
      const long extra = res.generated_token_count - icfg.max_new_tokens;
      res.output_ids.resize(res.output_ids.size() - static_cast<std::size_t>(extra));
      cache.truncate(cache.len() - static_cast<int>(extra));
      res.generated_token_count = icfg.max_new_tokens;
      res.truncated = true;
      break;
    }
    if (st.saw_eos) break;

    if (st.saw_delim) {
      if (icfg.compression_enabled) {
        // A degenerate segment can need more memory tokens than the pool has
        // embeddings for. That is unrecoverable for this generation (the pool
        // is fixed by the vocabulary), so stop here instead of aborting the
        // caller; the raw segment stays in the cache uncompressed.
        if (alloc_memory(static_cast<int>(seg_ids.size()), icfg.c) >
            static_cast<int>(specials.memory_ids.size())) {
          res.truncated = true;
          break;
        }
        CompressResult cr =
            compress_segment(model, cache, seg_ids, seg_pids, icfg.c, step_index, specials);
        res.forward_passes += cr.passes;
        res.peak_context_tokens = std::max(res.peak_context_tokens, cr.peak_in_flight);
        res.compression_events += 1;
        res.segment_lens.push_back(static_cast<int>(seg_ids.size()));
        res.boundary_cache_lens.push_back(cache.len());
        last_logits = cr.output_logits;
        p_last = seg_pids.back() + 1;  // the output token's pid
      }
      ++step_index;
      seg_ids.clear();
      seg_pids.clear();
    }
  }
  if (res.generated_token_count >= icfg.max_new_tokens &&
      (res.output_ids.empty() || res.output_ids.back() != specials.eos_id)) {
    res.truncated = true;
  }

  const auto t1 = std::chrono::steady_clock::now();
  const double secs = std::chrono::duration<double>(t1 - t0).count();
  res.tokens_per_second = secs > 0 ? static_cast<double>(res.generated_token_count) / secs : 0.0;
  res.draft_acceptance_rate =
      res.offered_drafts > 0
          ? static_cast<double>(res.accepted_drafts) / static_cast<double>(res.offered_drafts)
          : 0.0;
  return res;
}

nlohmann::json result_to_json(const GenerationResult& res, const SpecialIds& specials) {
  nlohmann::json j;
  j["output_ids"] = res.output_ids;
  j["text_render"] = render(res.output_ids, specials);
  j["peak_context_tokens"] = res.peak_context_tokens;
  j["tokens_per_second"] = res.tokens_per_second;
  j["forward_passes"] = res.forward_passes;
  j["acceptance_rate"] = res.draft_acceptance_rate;
  j["generated_tokens"] = res.generated_token_count;
  j["truncated"] = res.truncated;
  return j;
}

}  // namespace memosight
