// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memosight/corpus.hpp"
#include "memosight/infer.hpp"
#include "memosight/model.hpp"
#include "memosight/types.hpp"

namespace memosight {

/// One named self-check outcome. `detail` carries the measured quantity so a
/// failure is diagnosable from the report alone.
struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

bool all_pass(const std::vector<CheckResult>& results);

/// build_mask against the pairwise visible() oracle over randomized
/// sequences (bit-for-bit equality).
CheckResult check_mask_equivalence(std::uint64_t seed, int n_sequences);

/// Shadow-cache audit: a second cache that never evicts, hiding compressed
/// reasoning by mask instead. Trace steps are teacher-forced through both
/// caches; at every step boundary the evicting cache compresses and both are
/// probed with the same next token. Logits must agree to `tol` relative.
struct EvictionAudit {
  int traces = 0;
  int events = 0;
  int probes = 0;
  double max_rel = 0.0;
  bool length_law_ok = true;
};

EvictionAudit audit_eviction(const Model& model, const std::vector<CoTTrace>& traces, int c,
                             const SpecialIds& specials);

CheckResult check_eviction(const Model& model, const std::vector<CoTTrace>& traces, int c,
                           const SpecialIds& specials, double tol, int min_events);

/// Speculative decoding must be lossless: for every d in `ds` the generated
/// id stream equals the d=0 stream, token for token.
CheckResult check_losslessness(const Model& model, const std::vector<std::vector<TokenId>>& prompts,
                               const InferConfig& base, const std::vector<int>& ds,
                               const SpecialIds& specials);

/// Analytic gradients vs central differences in float64 on a two-step
/// sequence, plus a nonzero-gradient probe of a memory embedding row.
CheckResult check_gradients(const SpecialIds& specials, std::uint64_t seed, double tol);

/// Exact bookkeeping: offered = d * iterations, generated = iterations +
/// accepted, forward-pass identity, and the cache-length law at every
/// compression boundary.
CheckResult check_accounting(const Model& model, const std::vector<std::vector<TokenId>>& prompts,
                             const InferConfig& icfg, const SpecialIds& specials);

/// Convenience: the full suite set on a given model, as cmd check runs it.
/// Prompts for the generation-driven checks are the traces' prompts.
std::vector<CheckResult> run_all_checks(const Model& model, const std::vector<CoTTrace>& traces,
                                        const InferConfig& icfg, const SpecialIds& specials,
                                        std::uint64_t seed);

}  // namespace memosight
