// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memosight/types.hpp"

namespace memosight {

/// Regular vocabulary of the synthetic chained-modular-arithmetic task.
/// Fixed ids so corpora are portable across configs.
namespace vocab {
constexpr TokenId kDigit0 = 0;  // 0..9
constexpr TokenId kPlus = 10;
constexpr TokenId kTimes = 11;
constexpr TokenId kEquals = 12;
constexpr TokenId kStart = 13;
constexpr TokenId kSep = 14;
constexpr TokenId kAnswer = 15;
constexpr TokenId kFiller0 = 16;
constexpr int kFillerCount = 8;
constexpr TokenId kDelim = 24;  // step boundary inside reasoning text
constexpr TokenId kEos = 25;
constexpr int kRegularCount = 26;
}  // namespace vocab

/// A raw multi-step reasoning trace. Steps hold regular ids only; every
/// non-final step ends with kDelim, the final step ends with kEos.
/// answer_first/answer_last is the inclusive index range of the answer digits
/// inside the final step (-1/-1 when unknown, e.g. foreign files).
struct CoTTrace {
  std::vector<TokenId> prompt;
  std::vector<std::vector<TokenId>> steps;
  int answer_first = -1;
  int answer_last = -1;
};

struct CorpusParams {
  std::uint64_t seed = 7;
  int n_traces = 512;
  int steps_min = 4;
  int steps_max = 7;
  int step_len_min = 8;
  int step_len_max = 24;
  int modulus = 10;
  int vocab_size = vocab::kRegularCount;

  /// Throws std::invalid_argument on bad ranges or a step_len_min too small
  /// to hold "op k = result ;" at the configured modulus.
  void validate() const;
};

/// Minimum step length able to hold the densest computation step.
int min_step_len(int modulus);

/// Decimal digit ids of value (no leading zeros; 0 -> [kDigit0]).
std::vector<TokenId> digit_ids(int value);

/// Deterministic in (params.seed, index). The prompt encodes a start value
/// and an operation list; computation step i emits "op k_i = result_i",
/// filler-padded to its sampled length, then the delimiter; the final step
/// restates the answer and ends with eos.
CoTTrace gen_trace(const CorpusParams& params, int index);

std::vector<CoTTrace> gen_corpus(const CorpusParams& params);

/// Empty string when the trace satisfies all CoTTrace invariants, else a
/// message naming the violated rule.
std::string trace_violation(const CoTTrace& trace, const SpecialIds& specials);

/// One JSON object per line: {"prompt":[ints],"steps":[[ints],...]}.
/// Throws std::runtime_error with the 1-based line number on malformed JSON
/// or invariant violations. An empty file yields an empty list.
std::vector<CoTTrace> load_jsonl(const std::string& path, const SpecialIds& specials);

void save_jsonl(const std::string& path, const std::vector<CoTTrace>& traces);

/// Exact task oracle: replays the arithmetic chain encoded in a prompt.
struct ChainEval {
  int start = 0;
  std::vector<TokenId> ops;     // kPlus or kTimes per computation step
  std::vector<int> operands;    // k_i
  std::vector<int> results;     // running value after each operation
  int answer = 0;               // final value
};

/// Throws std::invalid_argument when the prompt does not parse.
ChainEval eval_chain(const std::vector<TokenId>& prompt, int modulus);

/// True when every step's result digits match the oracle replay.
bool trace_self_consistent(const CoTTrace& trace, int modulus);

/// Digits following the first kAnswer marker in a generated stream, cut at
/// the first non-digit. Empty when no marker or no digits follow.
std::vector<TokenId> extract_answer_digits(const std::vector<TokenId>& ids);

/// Printable rendering; regular ids map to single glyphs, special ids to
/// <f>, <m0>.., <o>.
std::string render(const std::vector<TokenId>& ids, const SpecialIds& specials);

}  // namespace memosight
