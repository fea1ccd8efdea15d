// SPDX-License-Identifier: Apache-2.0
#include "memosight/attn_mask.hpp"

#include <algorithm>

namespace memosight {

bool visible(int q, int k, const TrainSequence& seq) {
  if (k > q) return false;
  if (k == q) return true;
  const Token& qt = seq.tokens[static_cast<std::size_t>(q)];
  const Token& kt = seq.tokens[static_cast<std::size_t>(k)];
  if (kt.role == Role::Foresight) return false;

  switch (qt.role) {
    case Role::Prompt:
      return kt.role == Role::Prompt;
    case Role::Reasoning:
    case Role::Foresight:
      // A foresight token sits immediately before its paired reasoning token,
      // so "same-step reasoning preceding the pair" is exactly k < q here.
      if (kt.role == Role::Prompt) return true;
      if ((kt.role == Role::Memory || kt.role == Role::Output) && kt.step < qt.step) return true;
      if (kt.role == Role::Reasoning && kt.step == qt.step) return true;
      return false;
    case Role::Memory:
      if (kt.role == Role::Prompt) return true;
      if ((kt.role == Role::Memory || kt.role == Role::Output) && kt.step < qt.step) return true;
      if (kt.role == Role::Reasoning && kt.step == qt.step) return true;
      if (kt.role == Role::Memory && kt.step == qt.step) return true;
      return false;
    case Role::Output:
      if (kt.role == Role::Prompt) return true;
      if (kt.role == Role::Memory && kt.step <= qt.step) return true;
      if (kt.role == Role::Output && kt.step < qt.step) return true;
      return false;
  }
  return false;
}

AttnMask build_mask(const TrainSequence& seq) {
  const int n = static_cast<int>(seq.tokens.size());
  AttnMask mask(n);

  // hist accumulates the columns every later step may see: the prompt plus
  // memory/output tokens of finished steps.
  std::vector<std::uint8_t> hist(static_cast<std::size_t>(n), 0);
  auto row_ptr = [&mask, n](int q) {
    return mask.bits.data() + static_cast<std::size_t>(q) * static_cast<std::size_t>(n);
  };

  int i = 0;
  while (i < n && seq.tokens[static_cast<std::size_t>(i)].role == Role::Prompt) {
    std::uint8_t* row = row_ptr(i);
    for (int k = 0; k <= i; ++k) row[k] = 1;
    hist[static_cast<std::size_t>(i)] = 1;
    ++i;
  }

  while (i < n) {
    const int step = seq.tokens[static_cast<std::size_t>(i)].step;
    int j = i;
    while (j < n && seq.tokens[static_cast<std::size_t>(j)].step == step) ++j;

    // Reasoning phase: rows copy hist, then accumulate same-step reasoning
    // columns; a foresight row is written before its paired reasoning column
    // joins the running set, which realizes "pattern minus the paired token".
    std::vector<std::uint8_t> running(hist);
    int q = i;
    for (; q < j; ++q) {
      const Role role = seq.tokens[static_cast<std::size_t>(q)].role;
      if (role != Role::Reasoning && role != Role::Foresight) break;
      std::uint8_t* row = row_ptr(q);
      std::copy(running.begin(), running.end(), row);
      row[q] = 1;
      if (role == Role::Reasoning) running[static_cast<std::size_t>(q)] = 1;
    }

    // Memory phase: all same-step reasoning plus causal attention inside the
    // memory block.
    const int mem_first = q;
    for (; q < j && seq.tokens[static_cast<std::size_t>(q)].role == Role::Memory; ++q) {
      std::uint8_t* row = row_ptr(q);
      std::copy(running.begin(), running.end(), row);
      for (int k = mem_first; k <= q; ++k) row[k] = 1;
    }
    const int mem_last = q - 1;

    // Output: hist is exactly prompt + memory/output of earlier steps; add
    // this step's memory block and self. The verbose reasoning stays hidden.
    if (q < j && seq.tokens[static_cast<std::size_t>(q)].role == Role::Output) {
      std::uint8_t* row = row_ptr(q);
      std::copy(hist.begin(), hist.end(), row);
      for (int k = mem_first; k <= mem_last; ++k) row[k] = 1;
      row[q] = 1;
      ++q;
    }

    // Finished step: only its memory/output columns stay visible.
    for (int k = mem_first; k < j; ++k) hist[static_cast<std::size_t>(k)] = 1;
    i = j;
  }
  return mask;
}

AttnMask causal_mask(int n) {
  AttnMask mask(n);
  for (int q = 0; q < n; ++q) {
    std::uint8_t* row = mask.bits.data() + static_cast<std::size_t>(q) * static_cast<std::size_t>(n);
    for (int k = 0; k <= q; ++k) row[k] = 1;
  }
  return mask;
}

std::string mask_to_pbm(const AttnMask& mask) {
  std::string out = "P1\n" + std::to_string(mask.n) + " " + std::to_string(mask.n) + "\n";
  for (int q = 0; q < mask.n; ++q) {
    for (int k = 0; k < mask.n; ++k) {
      out += mask.at(q, k) ? '1' : '0';
      out += k + 1 == mask.n ? '\n' : ' ';
    }
  }
  return out;
}

}  // namespace memosight
