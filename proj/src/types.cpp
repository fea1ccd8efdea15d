// SPDX-License-Identifier: Apache-2.0
#include "memosight/types.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace memosight {

const char* role_name(Role r) {
  switch (r) {
    case Role::Prompt: return "prompt";
    case Role::Reasoning: return "reasoning";
    case Role::Foresight: return "foresight";
    case Role::Memory: return "memory";
    case Role::Output: return "output";
  }
  return "?";
}

bool SpecialIds::is_memory(TokenId id) const { return memory_index(id) >= 0; }

int SpecialIds::memory_index(TokenId id) const {
  // memory_ids is a packed consecutive range; fall back to a scan if a caller
  // built a custom pool.
  if (!memory_ids.empty() && id >= memory_ids.front() && id <= memory_ids.back() &&
      memory_ids.back() - memory_ids.front() + 1 == static_cast<TokenId>(memory_ids.size())) {
    return static_cast<int>(id - memory_ids.front());
  }
  auto it = std::find(memory_ids.begin(), memory_ids.end(), id);
  return it == memory_ids.end() ? -1 : static_cast<int>(it - memory_ids.begin());
}

bool SpecialIds::is_special(TokenId id) const {
  return id == foresight_id || id == output_id || is_memory(id);
}

void SpecialIds::validate() const {
  if (memory_ids.empty()) throw std::invalid_argument("SpecialIds: empty memory pool");
  std::unordered_set<TokenId> seen{foresight_id, output_id, delimiter_id, eos_id};
  if (seen.size() != 4) throw std::invalid_argument("SpecialIds: duplicate ids");
  for (TokenId m : memory_ids) {
    if (!seen.insert(m).second) throw std::invalid_argument("SpecialIds: duplicate ids");
  }
  for (TokenId id : {foresight_id, output_id, delimiter_id, eos_id}) {
    if (id < 0) throw std::invalid_argument("SpecialIds: negative id");
  }
}

SpecialIds make_special_ids(int n_regular, int l_max, TokenId delimiter_id, TokenId eos_id) {
  if (n_regular < 2 || l_max < 1) throw std::invalid_argument("make_special_ids: bad sizes");
  SpecialIds s;
  s.foresight_id = n_regular;
  s.memory_ids.resize(static_cast<std::size_t>(l_max));
  for (int j = 0; j < l_max; ++j) s.memory_ids[static_cast<std::size_t>(j)] = n_regular + 1 + j;
  s.output_id = n_regular + 1 + l_max;
  s.delimiter_id = delimiter_id;
  s.eos_id = eos_id;
  s.validate();
  return s;
}

namespace {

ValidationReport fail(char rule, std::ptrdiff_t index, std::string msg) {
  ValidationReport r;
  r.ok = false;
  r.rule = rule;
  r.index = index;
  r.message = std::move(msg);
  return r;
}

}  // namespace

ValidationReport validate_sequence(const std::vector<Token>& tokens,
                                   const std::vector<Pid>& pids,
                                   const SpecialIds& specials) {
  if (tokens.size() != pids.size()) {
    throw std::invalid_argument("validate_sequence: tokens/pids length mismatch");
  }
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(tokens.size());

  std::int32_t prev_step = -1;
  std::int32_t prev_intra = -1;
  bool left_prompt = false;
  // Per-step phase: 0 = reasoning/foresight, 1 = memory, 2 = output seen.
  int phase = 0;
  std::ptrdiff_t last_memory_index = -1;
  bool step_has_memory = false;

  auto close_block = [&](std::ptrdiff_t at) -> ValidationReport {
    if (step_has_memory && phase != 2) {
      return fail('b', at, "memory tokens not followed by an output token in step " +
                               std::to_string(prev_step));
    }
    return {};
  };

  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const Token& t = tokens[i];

    // Rule d: field-level consistency.
    if (t.id < 0) return fail('d', i, "negative token id");
    if (t.step < 0 || t.intra < 0) return fail('d', i, "negative step or intra");
    if (pids[static_cast<std::size_t>(i)] < 0) return fail('d', i, "negative pid");
    if ((t.role == Role::Prompt) != (t.step == 0)) {
      return fail('d', i, "prompt role must pair with step 0");
    }
    if ((t.role == Role::Foresight) != (t.id == specials.foresight_id)) {
      return fail('d', i, "foresight role/id mismatch");
    }
    if ((t.role == Role::Memory) != specials.is_memory(t.id)) {
      return fail('d', i, "memory role/id mismatch");
    }
    if ((t.role == Role::Output) != (t.id == specials.output_id)) {
      return fail('d', i, "output role/id mismatch");
    }

    // Rule a: prompt must be a contiguous prefix.
    if (t.role == Role::Prompt && left_prompt) {
      return fail('a', i, "prompt token after non-prompt token");
    }
    if (t.role != Role::Prompt) left_prompt = true;

    // Rule d: step blocks contiguous, increasing by one; intra counts from 0.
    if (i == 0) {
      if (t.step > 1) return fail('d', i, "first step index must be 0 or 1");
      if (t.intra != 0) return fail('d', i, "first token intra must be 0");
    } else if (t.step == prev_step) {
      if (t.intra != prev_intra + 1) return fail('d', i, "intra not consecutive within step");
    } else if (t.step == prev_step + 1) {
      if (t.intra != 0) return fail('d', i, "new step block must restart intra at 0");
      if (ValidationReport r = close_block(i - 1); !r.ok) return r;
      phase = 0;
      step_has_memory = false;
      last_memory_index = -1;
    } else {
      return fail('d', i, "step indices must be contiguous and non-decreasing");
    }

    // Rule b: within a step, order is (foresight|reasoning)* memory* output?.
    if (t.step > 0) {
      switch (t.role) {
        case Role::Reasoning:
        case Role::Foresight:
          if (phase != 0) return fail('b', i, "reasoning after memory/output in its step");
          break;
        case Role::Memory:
          if (phase == 2) return fail('b', i, "memory after output in its step");
          phase = 1;
          step_has_memory = true;
          last_memory_index = i;
          break;
        case Role::Output:
          if (phase == 2) return fail('b', i, "second output token in a step");
          if (!step_has_memory) return fail('b', i, "output token without preceding memory");
          phase = 2;
          break;
        case Role::Prompt:
          break;
      }
    }

    // Rule c: a foresight token is glued to the reasoning token it precedes.
    if (t.role == Role::Foresight) {
      if (i + 1 >= n || tokens[static_cast<std::size_t>(i + 1)].role != Role::Reasoning ||
          tokens[static_cast<std::size_t>(i + 1)].step != t.step) {
        return fail('c', i, "foresight token not immediately before same-step reasoning");
      }
    }

    prev_step = t.step;
    prev_intra = t.intra;
  }
  (void)last_memory_index;
  if (n > 0) {
    if (ValidationReport r = close_block(n - 1); !r.ok) return r;
  }
  return {};
}

}  // namespace memosight
