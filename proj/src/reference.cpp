// SPDX-License-Identifier: Apache-2.0
#include "memosight/reference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "memosight/attn_mask.hpp"
#include "memosight/rng.hpp"

namespace memosight {

namespace {

AttnMask lower_triangle(int n) {
  AttnMask m(n);
  for (int q = 0; q < n; ++q) {
    for (int k = 0; k <= q; ++k) m.set(q, k, true);
  }
  return m;
}

std::vector<TokenId> flatten(const CoTTrace& trace) {
  std::vector<TokenId> ids = trace.prompt;
  for (const auto& step : trace.steps) ids.insert(ids.end(), step.begin(), step.end());
  return ids;
}

int regular_bound(const Model& model, const SpecialIds& specials) {
  return std::min<int>(specials.foresight_id, model.cfg.vocab_size);
}

struct RefAdam {
  ParamsT<float> m, v;
  long t = 0;
  static constexpr double kB1 = 0.9, kB2 = 0.999, kEps = 1e-8;

  explicit RefAdam(const ModelConfig& cfg)
      : m(ParamsT<float>::shaped(cfg)), v(ParamsT<float>::shaped(cfg)) {}

  void step(ParamsT<float>& params, ParamsT<float>& grads, double lr) {
    ++t;
    const float b1 = static_cast<float>(kB1), b2 = static_cast<float>(kB2);
    const float bc1 = static_cast<float>(1.0 - std::pow(kB1, static_cast<double>(t)));
    const float bc2 = static_cast<float>(1.0 - std::pow(kB2, static_cast<double>(t)));
    auto ps = tensor_list(params);
    auto gs = tensor_list(grads);
    auto ms = tensor_list(m);
    auto vs = tensor_list(v);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto& p = *ps[i].second;
      auto& g = *gs[i].second;
      auto& mm = *ms[i].second;
      auto& vv = *vs[i].second;
      mm.array() = b1 * mm.array() + (1.0f - b1) * g.array();
      vv.array() = b2 * vv.array() + (1.0f - b2) * g.array().square();
      p.array() -= static_cast<float>(lr) * (mm.array() / bc1) /
                   ((vv.array() / bc2).sqrt() + static_cast<float>(kEps));
    }
  }
};

double ref_grad_norm(ParamsT<float>& grads) {
  double s = 0.0;
  for (auto& [name, g] : tensor_list(grads)) {
    (void)name;
    s += g->cast<double>().squaredNorm();
  }
  return std::sqrt(s);
}

double ref_lr(const TrainConfig& tcfg, long step, long total_steps) {
  const long warmup =
      std::max<long>(1, std::lround(tcfg.warmup_frac * static_cast<double>(total_steps)));
  if (step < warmup) {
    return tcfg.peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  if (total_steps <= warmup) return tcfg.peak_lr;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return tcfg.peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace

std::vector<TokenId> reference_greedy_decode(const Model& model,
                                             const std::vector<TokenId>& prompt,
                                             int max_new_tokens, const SpecialIds& specials) {
  if (prompt.empty()) throw std::invalid_argument("reference_greedy_decode: empty prompt");
  if (max_new_tokens < 1) throw std::invalid_argument("reference_greedy_decode: max_new_tokens < 1");

  const int bound = regular_bound(model, specials);
  std::vector<TokenId> ids = prompt;
  std::vector<TokenId> out;
  while (static_cast<int>(out.size()) < max_new_tokens) {
    const int n = static_cast<int>(ids.size());
    if (n >= model.cfg.max_pid) break;
    std::vector<Pid> pids(ids.size());
    for (std::size_t i = 0; i < pids.size(); ++i) pids[i] = static_cast<Pid>(i);
    const MatT<float> logits = model.forward(ids, pids, lower_triangle(n));
    const auto row = logits.row(n - 1);
    int best = 0;
    for (int v = 1; v < bound; ++v) {
      if (row(v) > row(best)) best = v;
    }
    out.push_back(best);
    ids.push_back(best);
    if (best == specials.eos_id) break;
  }
  return out;
}

std::vector<double> reference_causal_train_losses(const std::vector<CoTTrace>& corpus,
                                                  const TrainConfig& tcfg,
                                                  const ModelConfig& mcfg) {
  tcfg.validate();
  if (corpus.empty()) throw std::invalid_argument("reference_causal_train_losses: empty corpus");

  Model model = Model::init(mcfg);
  RefAdam adam(mcfg);
  ParamsT<float> grads = ParamsT<float>::shaped(mcfg);

  std::vector<std::vector<TokenId>> flats;
  flats.reserve(corpus.size());
  for (const CoTTrace& t : corpus) flats.push_back(flatten(t));

  const long n = static_cast<long>(corpus.size());
  const long steps_per_epoch = (n + tcfg.batch_size - 1) / tcfg.batch_size;
  const long total_steps = steps_per_epoch * tcfg.epochs;

  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(total_steps));

  long step = 0;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::vector<long> order(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    SplitMix64 shuffle_rng(mix_seed(tcfg.seed, static_cast<std::uint64_t>(epoch)));
    for (long i = n - 1; i > 0; --i) {
      const long j = static_cast<long>(shuffle_rng.next_below(static_cast<std::uint64_t>(i) + 1));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }

    for (long b = 0; b < steps_per_epoch; ++b) {
      const long lo = b * tcfg.batch_size;
      const long hi = std::min(n, lo + tcfg.batch_size);

      long n_rows = 0;
      for (long s = lo; s < hi; ++s) {
        n_rows += static_cast<long>(flats[static_cast<std::size_t>(order[static_cast<std::size_t>(s)])].size()) - 1;
      }
      const double w = 1.0 / static_cast<double>(n_rows);

      grads.zero();
      double ce = 0.0;
      for (long s = lo; s < hi; ++s) {
        const auto& ids = flats[static_cast<std::size_t>(order[static_cast<std::size_t>(s)])];
        std::vector<Pid> pids(ids.size());
        std::vector<Supervised> sups(ids.size() - 1);
        for (std::size_t i = 0; i < ids.size(); ++i) pids[i] = static_cast<Pid>(i);
        for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
          sups[i].pos = static_cast<int>(i);
          sups[i].target = ids[i + 1];
          sups[i].weight = w;
          sups[i].cls = 0;
        }
        const auto stats = model.forward_backward(ids, pids, lower_triangle(static_cast<int>(ids.size())),
                                                  sups, grads);
        ce += stats.ce_sum[0];
      }

      const double norm = ref_grad_norm(grads);
      if (norm > tcfg.grad_clip) {
        const double f = tcfg.grad_clip / norm;
        for (auto& [name, g] : tensor_list(grads)) {
          (void)name;
          *g *= static_cast<float>(f);
        }
      }
      adam.step(model.params, grads, ref_lr(tcfg, step, total_steps));
      trace.push_back(ce / static_cast<double>(n_rows));
      ++step;
    }
  }
  return trace;
}

}  // namespace memosight
