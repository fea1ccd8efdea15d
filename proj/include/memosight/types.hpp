// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace memosight {

enum class Role : std::uint8_t { Prompt, Reasoning, Foresight, Memory, Output };

const char* role_name(Role r);

/// Position IDs are plain integers; they are not required to be monotone or
/// unique across a sequence (memory and foresight tokens reuse positions
/// inside the span of their step).
using Pid = std::int32_t;

using TokenId = std::int32_t;

/// The atom of every sequence. step 0 is the prompt; reasoning steps are
/// 1-based. intra is the 0-based order of the token within its step block.
struct Token {
  TokenId id = 0;
  Role role = Role::Prompt;
  std::int32_t step = 0;
  std::int32_t intra = 0;
};

/// Reserved special-vocabulary ids, disjoint from the regular corpus ids.
/// delimiter_id and eos_id are regular ids: they appear inside reasoning
/// text as step/answer terminators.
struct SpecialIds {
  TokenId foresight_id = -1;
  std::vector<TokenId> memory_ids;  // ordered pool of size L_max
  TokenId output_id = -1;
  TokenId delimiter_id = -1;
  TokenId eos_id = -1;

  bool is_memory(TokenId id) const;
  /// Index into memory_ids, or -1.
  int memory_index(TokenId id) const;
  /// True for foresight/memory/output ids (not delimiter/eos).
  bool is_special(TokenId id) const;
  /// Throws std::invalid_argument when ids collide or a list is empty.
  void validate() const;
};

/// Packs the special ids directly above the regular vocabulary:
/// [n_regular] = foresight, [n_regular+1 .. n_regular+l_max] = memory pool,
/// [n_regular+l_max+1] = output.
SpecialIds make_special_ids(int n_regular, int l_max, TokenId delimiter_id, TokenId eos_id);

struct ValidationReport {
  bool ok = true;
  char rule = ' ';  // 'a'..'d' per the rule list on validate_sequence
  std::ptrdiff_t index = -1;
  std::string message;
};

/// Structural validation of a role-annotated sequence. Rules, checked left to
/// right so the earliest offending token index is reported:
///   a) prompt tokens form a contiguous prefix (step 0 never reappears),
///   b) within each step, memory tokens follow all reasoning tokens and are
///      followed by exactly one output token,
///   c) every foresight token is immediately followed by a reasoning token of
///      the same step,
///   d) role/step/intra/id fields are internally consistent: step blocks are
///      contiguous and increase by one, intra counts from 0 inside each block,
///      special ids match their roles, pids are non-negative.
/// Throws std::invalid_argument when tokens and pids differ in length.
ValidationReport validate_sequence(const std::vector<Token>& tokens,
                                   const std::vector<Pid>& pids,
                                   const SpecialIds& specials);

}  // namespace memosight
