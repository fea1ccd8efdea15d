// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "memosight/corpus.hpp"
#include "memosight/model.hpp"
#include "memosight/train.hpp"

namespace memosight {

/// Plain autoregressive greedy decoding with no cache, no speculation and no
/// compression: every step recomputes the whole prefix under a lower
/// triangular mask with consecutive pids. The baseline the accelerated
/// decoder must reproduce token-for-token.
std::vector<TokenId> reference_greedy_decode(const Model& model,
                                             const std::vector<TokenId>& prompt,
                                             int max_new_tokens, const SpecialIds& specials);

/// A self-contained causal-LM trainer over the raw traces: flat sequences,
/// lower-triangular masks, next-token labels on every position, its own Adam
/// and schedule. Returns the per-step mean cross-entropy trace. Written
/// separately from fit() on purpose: the specials-disabled training path has
/// to reduce to exactly this.
std::vector<double> reference_causal_train_losses(const std::vector<CoTTrace>& corpus,
                                                  const TrainConfig& tcfg,
                                                  const ModelConfig& mcfg);

}  // namespace memosight
