// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memosight/seqbuild.hpp"
#include "memosight/types.hpp"

namespace memosight {

/// Dense query-by-key visibility matrix. bits[q*n+k] = 1 iff query q may
/// attend key k. Never anti-causal; diagonal always set.
struct AttnMask {
  int n = 0;
  std::vector<std::uint8_t> bits;

  explicit AttnMask(int n_ = 0) : n(n_), bits(static_cast<std::size_t>(n_) * n_, 0) {}
  bool at(int q, int k) const {
    return bits[static_cast<std::size_t>(q) * static_cast<std::size_t>(n) +
                static_cast<std::size_t>(k)] != 0;
  }
  void set(int q, int k, bool v) {
    bits[static_cast<std::size_t>(q) * static_cast<std::size_t>(n) +
         static_cast<std::size_t>(k)] = v ? 1 : 0;
  }
  bool operator==(const AttnMask& o) const { return n == o.n && bits == o.bits; }
};

/// Pairwise rule oracle. k must precede-or-equal q, and:
///  - prompt queries attend causally within the prompt;
///  - reasoning in step i attends prompt, memory/output of earlier steps,
///    same-step reasoning before it, itself; never foresight, never earlier
///    reasoning, never same-step memory;
///  - memory in step i additionally attends all same-step reasoning and is
///    causal within its own memory block;
///  - output of step i attends prompt, memory of steps <= i, earlier outputs,
///    itself; not the verbose reasoning of its own step;
///  - a foresight token copies the pattern of the reasoning token it precedes,
///    minus that token, plus itself; foresight keys are visible to no one else.
bool visible(int q, int k, const TrainSequence& seq);

/// Role/step-indexed construction; equals the pairwise oracle bit-for-bit.
AttnMask build_mask(const TrainSequence& seq);

/// Plain lower-triangular mask (vanilla causal attention).
AttnMask causal_mask(int n);

/// ASCII PBM (P1) bitmap for visual diffing.
std::string mask_to_pbm(const AttnMask& mask);

}  // namespace memosight
