// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <vector>

#include "memosight/model.hpp"
#include "memosight/types.hpp"

namespace memosight {

struct InferConfig {
  int d = 2;                  // foresight tokens per predict pass
  int c = 5;                  // compression ratio at decode time
  int max_new_tokens = 10240;
  bool compression_enabled = true;

  void validate() const;
};

/// One speculative iteration's candidates: drafts[0] comes from the previous
/// position's logits, drafts[1+k] from the k-th foresight token.
struct DraftBatch {
  std::vector<TokenId> drafts;
};

struct GenerationResult {
  std::vector<TokenId> output_ids;  // accepted stream; regular-vocabulary ids
  int peak_context_tokens = 0;      // max cache slots + in-flight tokens
  double tokens_per_second = 0.0;   // wall clock; non-deterministic
  long forward_passes = 0;
  double draft_acceptance_rate = 0.0;  // accepted / offered foresight drafts
  long generated_token_count = 0;
  bool truncated = false;

  // Accounting detail consumed by the oracle suites.
  long spec_iterations = 0;
  long offered_drafts = 0;
  long accepted_drafts = 0;
  long compression_events = 0;
  int prompt_len = 0;
  std::vector<int> boundary_cache_lens;  // cache length after each compression
  std::vector<int> segment_lens;         // reasoning tokens per compressed step
};

using LogitRow = Eigen::Matrix<float, 1, Eigen::Dynamic>;

/// Greedy argmax restricted to regular-vocabulary ids (< bound).
TokenId regular_argmax(const LogitRow& logits, TokenId bound);

struct SpecStepResult {
  DraftBatch drafts;
  std::vector<TokenId> accepted;  // prefix kept after verification + boundary cut
  LogitRow last_logits;           // logits at the last kept token
  bool saw_delim = false;
  bool saw_eos = false;
  int passes = 0;
  int peak_in_flight = 0;
};

/// One Predict+Verify iteration. Predict feeds d foresight tokens at pids
/// p_last+1..p_last+d (never persisted); Verify feeds the d+1 drafts as
/// reasoning tokens of step_index, appends them, accepts the longest argmax-
/// matching prefix, cuts it at the first delimiter/eos, and truncates the
/// rejected tail from the cache. d = 0 degenerates to one plain greedy step.
SpecStepResult speculative_step(const Model& model, KvCache& cache, const LogitRow& last_logits,
                                int d, Pid p_last, int step_index, const SpecialIds& specials);

struct CompressResult {
  LogitRow output_logits;  // seeds the next step's first token
  int n_memory = 0;
  int passes = 0;
  int peak_in_flight = 0;
};

/// One memory+output pass over the finished segment (ids+pids include the
/// delimiter), then eviction of the segment's reasoning entries. Memory
/// tokens attend prompt, earlier memory/output, the segment, and each other
/// causally; the output token never sees the verbose segment.
/// Throws std::runtime_error when the segment needs more memory tokens than
/// the pool holds.
CompressResult compress_segment(const Model& model, KvCache& cache,
                                const std::vector<TokenId>& segment_ids,
                                const std::vector<Pid>& segment_pids, int c, int step_index,
                                const SpecialIds& specials);

/// The full iterative loop: prefill, speculative phase until a boundary,
/// compression phase on a delimiter, stop on eos or max_new_tokens (with the
/// output trimmed to exactly max_new_tokens and the truncated flag set; pid
/// budget exhaustion also truncates, as does a segment too long for the
/// memory pool, which is left uncompressed).
GenerationResult generate(const Model& model, const std::vector<TokenId>& prompt,
                          const InferConfig& icfg, const SpecialIds& specials);

nlohmann::json result_to_json(const GenerationResult& res, const SpecialIds& specials);

}  // namespace memosight
