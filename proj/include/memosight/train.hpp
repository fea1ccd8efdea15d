// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memosight/corpus.hpp"
#include "memosight/model.hpp"
#include "memosight/seqbuild.hpp"

namespace memosight {

/// Per-class cross-entropy means. Positions without a label contribute to
/// neither term; an absent class contributes 0 without renormalizing lambda.
struct LossReport {
  double l_ntp = 0.0;
  double l_mtp = 0.0;
  double l_total = 0.0;
  long n_ntp = 0;
  long n_mtp = 0;
};

struct TrainConfig {
  double lambda = 0.7;       // weight of the next-token term
  double peak_lr = 3e-4;
  double warmup_frac = 0.05;  // fraction of total steps, cosine decay after
  int epochs = 5;
  int batch_size = 8;
  double grad_clip = 1.0;
  std::uint64_t seed = 3;

  void validate() const;
};

enum class TrainMode {
  Memosight,    // augmented sequences under the compression + foresight mask
  PlainCausal,  // raw traces, lower-triangular mask, next-token labels only
};

/// Labeled positions of a built sequence. cls is 1 for foresight positions,
/// 0 otherwise; weights are left 0 for the caller to fill per batch.
std::vector<Supervised> collect_supervised(const TrainSequence& seq);

/// Joint objective lambda * l_ntp + (1 - lambda) * l_mtp with per-class means
/// over this sequence's labeled positions. Natural-log cross-entropy.
LossReport joint_loss(const MatT<float>& logits, const TrainSequence& seq, double lambda);

struct FitResult {
  Model model;
  std::vector<LossReport> epoch_reports;
  std::vector<std::string> checkpoint_paths;
};

/// Adam training loop. Deterministic in the configured seeds: batch order,
/// parameter init, and the per-epoch redraw of each sample's d' all come from
/// named SplitMix64 streams. Per-class means are taken over each batch, so
/// sample order inside a batch cannot change the loss. When out_dir is
/// non-empty, writes per-epoch checkpoints, final.ckpt and train_log.csv
/// (step, l_ntp, l_mtp, l_total, lr).
/// Throws std::runtime_error with diagnostics when the loss turns non-finite.
FitResult fit(const std::vector<CoTTrace>& corpus, const BuildConfig& bcfg,
              const TrainConfig& tcfg, const ModelConfig& mcfg, const SpecialIds& specials,
              TrainMode mode, const std::string& out_dir);

/// Max relative error between analytic gradients and central finite
/// differences over n_random sampled parameters plus a fixed probe set inside
/// the foresight/memory/output embedding rows. Runs in float64.
double grad_check(const ModelD& model, const TrainSequence& seq, const SpecialIds& specials,
                  double lambda, double eps, int n_random, std::uint64_t seed);

/// Entropy (nats) of the empirical distribution of next-token targets; the
/// baseline a trained conditional model must beat.
double ntp_target_entropy(const std::vector<TrainSequence>& seqs);

}  // namespace memosight
