// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "memosight/attn_mask.hpp"
#include "memosight/types.hpp"

namespace memosight {

template <typename T>
using MatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int vocab_size = 0;  // regular + special ids
  double rope_base = 10000.0;
  int max_pid = 2048;
  std::uint64_t param_seed = 42;

  int d_head() const { return d_model / n_heads; }
  void validate() const;
};

/// Pre-norm decoder parameters with tied input/output embedding. Vectors are
/// stored as (n x 1) matrices so every tensor walks through the same code.
template <typename T>
struct ParamsT {
  using Mat = MatT<T>;
  struct Block {
    Mat ln1_g, ln1_b;
    Mat wq, wk, wv, wo;
    Mat ln2_g, ln2_b;
    Mat w1, b1, w2, b2;
  };
  Mat embed;  // vocab x d_model; also the output head
  std::vector<Block> blocks;
  Mat lnf_g, lnf_b;

  static ParamsT shaped(const ModelConfig& cfg);
  void zero();
  std::size_t count() const;
};

/// Stable tensor enumeration (shared by init, Adam, checkpoints).
template <typename T>
std::vector<std::pair<std::string, MatT<T>*>> tensor_list(ParamsT<T>& p);

/// Interleaved-pair rotary rotation with angle pid * base^(-2j/d_head).
template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, 1> apply_rope(const Eigen::Matrix<T, Eigen::Dynamic, 1>& v,
                                               Pid pid, double base);

/// A supervised position of the joint objective. cls 0 counts toward the
/// next-token term, cls 1 toward the foresight multi-token term.
struct Supervised {
  int pos = 0;
  TokenId target = 0;
  double weight = 0.0;  // premultiplied class weight applied to dlogits
  int cls = 0;
};

/// Ordered KV slots; all layers share one (pid, role, step) ledger. Keys are
/// stored rotated. Eviction keeps survivor order and pids.
template <typename T>
class KvCacheT {
 public:
  explicit KvCacheT(const ModelConfig& cfg);

  int len() const { return len_; }
  Pid pid_at(int slot) const { return pids_[static_cast<std::size_t>(slot)]; }
  Role role_at(int slot) const { return roles_[static_cast<std::size_t>(slot)]; }
  int step_at(int slot) const { return steps_[static_cast<std::size_t>(slot)]; }

  void append(const MatT<T>& k_rows_per_layer, const MatT<T>& v_rows_per_layer, Pid pid,
              Role role, int step);
  /// Removes slots matching pred(role, step); returns the count removed.
  int evict(const std::function<bool(Role, int)>& pred);
  void truncate(int new_len);
  KvCacheT snapshot() const { return *this; }

  const MatT<T>& k_layer(int layer) const { return k_[static_cast<std::size_t>(layer)]; }
  const MatT<T>& v_layer(int layer) const { return v_[static_cast<std::size_t>(layer)]; }

 private:
  int n_layers_;
  int d_model_;
  int len_ = 0;
  std::vector<MatT<T>> k_, v_;  // rows [0, len_) valid, capacity-doubled
  std::vector<Pid> pids_;
  std::vector<Role> roles_;
  std::vector<int> steps_;

  void reserve(int want);
};

/// Visibility of one incrementally fed token: a predicate over existing cache
/// slots (null = all visible) plus whether earlier tokens of the same call
/// are attendable. Self-attention is always on.
struct TokenVis {
  std::function<bool(Role, int)> cache_pred;
  bool attend_prior = true;
};

struct NewTok {
  TokenId id = 0;
  Pid pid = 0;
  Role role = Role::Reasoning;
  int step = 0;
  TokenVis vis;
};

template <typename T>
class ModelT {
 public:
  ModelConfig cfg;
  ParamsT<T> params;

  static ModelT init(const ModelConfig& cfg);

  /// Full-sequence training-mode forward under an explicit mask.
  /// Throws std::out_of_range when any pid falls outside [0, max_pid].
  MatT<T> forward(const std::vector<TokenId>& ids, const std::vector<Pid>& pids,
                  const AttnMask& mask) const;

  struct ClassStats {
    double ce_sum[2] = {0.0, 0.0};
    long count[2] = {0, 0};
  };

  /// Fused forward + backward. Adds parameter gradients (weighted sum of
  /// per-position cross-entropies) into grad; returns unweighted per-class
  /// cross-entropy sums/counts for loss reporting.
  ClassStats forward_backward(const std::vector<TokenId>& ids, const std::vector<Pid>& pids,
                              const AttnMask& mask, const std::vector<Supervised>& sup,
                              ParamsT<T>& grad) const;

  /// Decode-mode forward. Tokens are processed strictly one at a time, in
  /// order, each gathering its visible keys as (cache slots in order, prior
  /// new tokens in order, self); the arithmetic is therefore identical
  /// whether tokens arrive in one call or across calls. append=false leaves
  /// the cache untouched (probe mode).
  MatT<T> forward_incremental(const std::vector<NewTok>& toks, KvCacheT<T>& cache,
                              bool append) const;
};

using Model = ModelT<float>;
using ModelD = ModelT<double>;
using Params = ParamsT<float>;
using KvCache = KvCacheT<float>;

/// Copies parameter values across scalar types (gradient-check plumbing).
ParamsT<double> to_double(const ParamsT<float>& p, const ModelConfig& cfg);

/// Binary container: magic "MSCK", version, tensor table, float32 payloads;
/// JSON sidecar <path>.json holds ModelConfig and SpecialIds.
void save_checkpoint(const std::string& path, const Model& model, const SpecialIds& specials);
Model load_checkpoint(const std::string& path, SpecialIds* specials_out = nullptr);

}  // namespace memosight
