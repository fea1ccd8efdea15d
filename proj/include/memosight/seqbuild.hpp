// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "memosight/corpus.hpp"
#include "memosight/types.hpp"

namespace memosight {

constexpr TokenId kNoLabel = -1;

struct BuildConfig {
  int c = 5;               // compression ratio: reasoning tokens per memory token
  int d_max = 2;           // maximum foresight offset d'
  int l_max = 32;          // memory-token pool size
  std::uint64_t seed = 1;  // stream for per-sample d' draws

  void validate() const;
};

/// Reasoning-token pid span of one step, both ends inclusive.
struct StepSpan {
  Pid first = 0;
  Pid last = 0;
  int len() const { return static_cast<int>(last - first) + 1; }
};

/// The augmented training sequence: per-token role/pid/label plus the step
/// geometry needed to rebuild masks.
struct TrainSequence {
  std::vector<Token> tokens;
  std::vector<Pid> pids;
  std::vector<TokenId> labels;  // kNoLabel where no prediction target exists
  int d_prime = 0;
  std::vector<StepSpan> step_spans;
  int prompt_len = 0;
  int n_steps = 0;
};

/// Number of memory tokens for a step: ceil(step_len / c).
int alloc_memory(int step_len, int c);

/// Center pids of the step's c-sized groups (last group may be shorter);
/// even-width centers round down. Strictly increasing, all inside the span.
std::vector<Pid> memory_pids(Pid step_first_pid, int step_len, int c);

/// Pid of the foresight token paired with reasoning token t (1-based) at
/// offset d_prime: the pid of r_{t+d_prime-1}, clamped to the step's last
/// reasoning pid; for t+d_prime-1 = 0 the pid just before the step.
Pid foresight_pid(int t, int d_prime, const StepSpan& span);

/// Uniform draw from {0..d_max}, deterministic in (seed, sample_index).
int sample_dprime(std::uint64_t seed, std::uint64_t sample_index, int d_max);

/// Full augmentation: one foresight token before every reasoning token;
/// memory tokens and one output token after every non-final step; pids and
/// labels as documented on the fields. d' is drawn via sample_dprime.
/// Throws std::runtime_error naming the step when a step needs more than
/// l_max memory tokens.
TrainSequence build_training_sequence(const CoTTrace& trace, const BuildConfig& cfg,
                                      const SpecialIds& specials, std::uint64_t sample_index);

/// Same with an explicit d' (golden-layout tests, degenerate reductions).
TrainSequence build_training_sequence_fixed(const CoTTrace& trace, const BuildConfig& cfg,
                                            const SpecialIds& specials, int d_prime);

/// No special tokens at all: prompt plus flattened steps with consecutive
/// pids and plain next-token labels on every position but the last. The
/// vanilla-control counterpart of build_training_sequence.
TrainSequence build_plain_sequence(const CoTTrace& trace, const SpecialIds& specials);

/// Dump format used by golden-file tests: arrays "ids", "roles", "pids",
/// "labels" (null for none) plus "d_prime".
nlohmann::json sequence_to_json(const TrainSequence& seq);

}  // namespace memosight
