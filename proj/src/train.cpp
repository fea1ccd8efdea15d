// SPDX-License-Identifier: Apache-2.0
#include "memosight/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <stdexcept>

#include "memosight/rng.hpp"

namespace memosight {

void TrainConfig::validate() const {
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("TrainConfig: lambda outside [0,1]");
  if (peak_lr <= 0.0) throw std::invalid_argument("TrainConfig: peak_lr <= 0");
  if (warmup_frac < 0.0 || warmup_frac >= 1.0) {
    throw std::invalid_argument("TrainConfig: warmup_frac outside [0,1)");
  }
  if (epochs < 1 || batch_size < 1) throw std::invalid_argument("TrainConfig: epochs/batch_size < 1");
  if (grad_clip <= 0.0) throw std::invalid_argument("TrainConfig: grad_clip <= 0");
}

std::vector<Supervised> collect_supervised(const TrainSequence& seq) {
  std::vector<Supervised> out;
  for (std::size_t i = 0; i < seq.labels.size(); ++i) {
    if (seq.labels[i] == kNoLabel) continue;
    Supervised s;
    s.pos = static_cast<int>(i);
    s.target = seq.labels[i];
    s.cls = seq.tokens[i].role == Role::Foresight ? 1 : 0;
    out.push_back(s);
  }
  return out;
}

LossReport joint_loss(const MatT<float>& logits, const TrainSequence& seq, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("joint_loss: lambda outside [0,1]");
  LossReport rep;
  double ce[2] = {0.0, 0.0};
  for (const Supervised& s : collect_supervised(seq)) {
    const auto row = logits.row(s.pos);
    const double mx = static_cast<double>(row.maxCoeff());
    double z = 0.0;
    for (Eigen::Index v = 0; v < row.size(); ++v) {
      z += std::exp(static_cast<double>(row(v)) - mx);
    }
    ce[s.cls] += std::log(z) - (static_cast<double>(row(s.target)) - mx);
    (s.cls == 0 ? rep.n_ntp : rep.n_mtp) += 1;
  }
  rep.l_ntp = rep.n_ntp > 0 ? ce[0] / static_cast<double>(rep.n_ntp) : 0.0;
  rep.l_mtp = rep.n_mtp > 0 ? ce[1] / static_cast<double>(rep.n_mtp) : 0.0;
  rep.l_total = lambda * rep.l_ntp + (1.0 - lambda) * rep.l_mtp;
  return rep;
}

namespace {

struct Adam {
  ParamsT<float> m, v;
  long t = 0;
  static constexpr double kB1 = 0.9, kB2 = 0.999, kEps = 1e-8;

  explicit Adam(const ModelConfig& cfg)
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

double global_grad_norm(ParamsT<float>& grads) {
  double s = 0.0;
  for (auto& [name, g] : tensor_list(grads)) {
    (void)name;
    s += g->cast<double>().squaredNorm();
  }
  return std::sqrt(s);
}

void scale_grads(ParamsT<float>& grads, double factor) {
  for (auto& [name, g] : tensor_list(grads)) {
    (void)name;
    *g *= static_cast<float>(factor);
  }
}

double schedule_lr(const TrainConfig& tcfg, long step, long total_steps) {
  const long warmup = std::max<long>(1, std::lround(tcfg.warmup_frac * static_cast<double>(total_steps)));
  if (step < warmup) {
    return tcfg.peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  if (total_steps <= warmup) return tcfg.peak_lr;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return tcfg.peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace

FitResult fit(const std::vector<CoTTrace>& corpus, const BuildConfig& bcfg,
              const TrainConfig& tcfg, const ModelConfig& mcfg, const SpecialIds& specials,
              TrainMode mode, const std::string& out_dir) {
  tcfg.validate();
  bcfg.validate();
  if (corpus.empty()) throw std::invalid_argument("fit: empty corpus");

  FitResult res;
  res.model = Model::init(mcfg);
  Adam adam(mcfg);
  ParamsT<float> grads = ParamsT<float>::shaped(mcfg);

  const long n = static_cast<long>(corpus.size());
  const long steps_per_epoch = (n + tcfg.batch_size - 1) / tcfg.batch_size;
  const long total_steps = steps_per_epoch * tcfg.epochs;

  std::ofstream log;
  if (!out_dir.empty()) {
    log.open(out_dir + "/train_log.csv");
    if (!log) throw std::runtime_error("fit: cannot open " + out_dir + "/train_log.csv");
    // Enough digits that golden comparisons are not limited by the log.
    log << std::setprecision(12);
    log << "step,l_ntp,l_mtp,l_total,lr\n";
  }

  long step = 0;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    // Each epoch pass re-draws every sample's foresight offset.
    BuildConfig ebcfg = bcfg;
    ebcfg.seed = mix_seed(bcfg.seed, static_cast<std::uint64_t>(epoch));

    std::vector<long> order(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    SplitMix64 shuffle_rng(mix_seed(tcfg.seed, static_cast<std::uint64_t>(epoch)));
    for (long i = n - 1; i > 0; --i) {
      const long j = static_cast<long>(shuffle_rng.next_below(static_cast<std::uint64_t>(i) + 1));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }

    double epoch_ce[2] = {0.0, 0.0};
    long epoch_cnt[2] = {0, 0};

    for (long b = 0; b < steps_per_epoch; ++b) {
      const long lo = b * tcfg.batch_size;
      const long hi = std::min(n, lo + tcfg.batch_size);

      std::vector<TrainSequence> seqs;
      std::vector<std::vector<Supervised>> sups;
      long cls_count[2] = {0, 0};
      for (long s = lo; s < hi; ++s) {
        const long idx = order[static_cast<std::size_t>(s)];
        TrainSequence seq =
            mode == TrainMode::Memosight
                ? build_training_sequence(corpus[static_cast<std::size_t>(idx)], ebcfg, specials,
                                          static_cast<std::uint64_t>(idx))
                : build_plain_sequence(corpus[static_cast<std::size_t>(idx)], specials);
        sups.push_back(collect_supervised(seq));
        for (const Supervised& sp : sups.back()) ++cls_count[sp.cls];
        seqs.push_back(std::move(seq));
      }

      // Per-class means over the whole batch keep lambda's meaning stable as
      // step counts vary, and make the loss order-invariant inside the batch.
      const double w[2] = {
          cls_count[0] > 0 ? tcfg.lambda / static_cast<double>(cls_count[0]) : 0.0,
          cls_count[1] > 0 ? (1.0 - tcfg.lambda) / static_cast<double>(cls_count[1]) : 0.0};

      grads.zero();
      double ce[2] = {0.0, 0.0};
      for (std::size_t s = 0; s < seqs.size(); ++s) {
        for (Supervised& sp : sups[s]) sp.weight = w[sp.cls];
        const AttnMask mask = mode == TrainMode::Memosight
                                  ? build_mask(seqs[s])
                                  : causal_mask(static_cast<int>(seqs[s].tokens.size()));
        std::vector<TokenId> ids(seqs[s].tokens.size());
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = seqs[s].tokens[i].id;
        const auto stats = res.model.forward_backward(ids, seqs[s].pids, mask, sups[s], grads);
        ce[0] += stats.ce_sum[0];
        ce[1] += stats.ce_sum[1];
      }

      const double l_ntp = cls_count[0] > 0 ? ce[0] / static_cast<double>(cls_count[0]) : 0.0;
      const double l_mtp = cls_count[1] > 0 ? ce[1] / static_cast<double>(cls_count[1]) : 0.0;
      const double l_total = tcfg.lambda * l_ntp + (1.0 - tcfg.lambda) * l_mtp;
      if (!std::isfinite(l_total)) {
        throw std::runtime_error("fit: loss diverged at step " + std::to_string(step) +
                                 " (l_ntp=" + std::to_string(l_ntp) +
                                 ", l_mtp=" + std::to_string(l_mtp) + ")");
      }
      epoch_ce[0] += ce[0];
      epoch_ce[1] += ce[1];
      epoch_cnt[0] += cls_count[0];
      epoch_cnt[1] += cls_count[1];

      const double norm = global_grad_norm(grads);
      if (norm > tcfg.grad_clip) scale_grads(grads, tcfg.grad_clip / norm);
      const double lr = schedule_lr(tcfg, step, total_steps);
      adam.step(res.model.params, grads, lr);

      if (log) {
        log << step << "," << l_ntp << "," << l_mtp << "," << l_total << "," << lr << "\n";
      }
      ++step;
    }

    LossReport er;
    er.n_ntp = epoch_cnt[0];
    er.n_mtp = epoch_cnt[1];
    er.l_ntp = epoch_cnt[0] > 0 ? epoch_ce[0] / static_cast<double>(epoch_cnt[0]) : 0.0;
    er.l_mtp = epoch_cnt[1] > 0 ? epoch_ce[1] / static_cast<double>(epoch_cnt[1]) : 0.0;
    er.l_total = tcfg.lambda * er.l_ntp + (1.0 - tcfg.lambda) * er.l_mtp;
    res.epoch_reports.push_back(er);

    if (!out_dir.empty()) {
      const std::string path = out_dir + "/epoch" + std::to_string(epoch) + ".ckpt";
      save_checkpoint(path, res.model, specials);
      res.checkpoint_paths.push_back(path);
    }
  }
  if (!out_dir.empty()) {
    save_checkpoint(out_dir + "/final.ckpt", res.model, specials);
    res.checkpoint_paths.push_back(out_dir + "/final.ckpt");
  }
  return res;
}

double grad_check(const ModelD& model, const TrainSequence& seq, const SpecialIds& specials,
                  double lambda, double eps, int n_random, std::uint64_t seed) {
  const AttnMask mask = build_mask(seq);
  std::vector<TokenId> ids(seq.tokens.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = seq.tokens[i].id;

  std::vector<Supervised> sups = collect_supervised(seq);
  long cls_count[2] = {0, 0};
  for (const Supervised& s : sups) ++cls_count[s.cls];
  const double w[2] = {cls_count[0] > 0 ? lambda / static_cast<double>(cls_count[0]) : 0.0,
                       cls_count[1] > 0 ? (1.0 - lambda) / static_cast<double>(cls_count[1]) : 0.0};
  for (Supervised& s : sups) s.weight = w[s.cls];

  ModelD m = model;
  ParamsT<double> grads = ParamsT<double>::shaped(m.cfg);
  m.forward_backward(ids, seq.pids, mask, sups, grads);

  auto weighted_loss = [&]() {
    const MatT<double> logits = m.forward(ids, seq.pids, mask);
    double total = 0.0;
    for (const Supervised& s : sups) {
      const auto row = logits.row(s.pos);
      const double mx = row.maxCoeff();
      double z = 0.0;
      for (Eigen::Index v = 0; v < row.size(); ++v) z += std::exp(row(v) - mx);
      total += s.weight * (std::log(z) - (row(s.target) - mx));
    }
    return total;
  };

  // Probe set: random picks plus a few coordinates inside each special
  // embedding row, which the analytic path must reach through attention.
  std::vector<std::pair<std::size_t, Eigen::Index>> picks;  // (tensor index, flat element)
  auto plist = tensor_list(m.params);
  std::size_t embed_idx = 0;
  for (std::size_t i = 0; i < plist.size(); ++i) {
    if (plist[i].first == "embed") embed_idx = i;
  }
  const Eigen::Index d = m.cfg.d_model;
  for (TokenId row : {specials.foresight_id, specials.memory_ids[0],
                      specials.memory_ids[1 % specials.memory_ids.size()], specials.output_id}) {
    for (Eigen::Index j = 0; j < 3; ++j) {
      picks.emplace_back(embed_idx, static_cast<Eigen::Index>(row) * d + j * (d / 3));
    }
  }
  SplitMix64 rng(seed);
  for (int i = 0; i < n_random; ++i) {
    const std::size_t ti = static_cast<std::size_t>(rng.next_below(plist.size()));
    const Eigen::Index ei = static_cast<Eigen::Index>(
        rng.next_below(static_cast<std::uint64_t>(plist[ti].second->size())));
    picks.emplace_back(ti, ei);
  }

  auto glist = tensor_list(grads);
  double max_rel = 0.0;
  for (const auto& [ti, ei] : picks) {
    double* p = plist[ti].second->data() + ei;
    const double keep = *p;
    *p = keep + eps;
    const double lp = weighted_loss();
    *p = keep - eps;
    const double lm = weighted_loss();
    *p = keep;
    const double fd = (lp - lm) / (2.0 * eps);
    const double an = *(glist[ti].second->data() + ei);
    const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-4});
    if (rel > max_rel) max_rel = rel;
  }
  return max_rel;
}

double ntp_target_entropy(const std::vector<TrainSequence>& seqs) {
  std::map<TokenId, long> hist;
  long total = 0;
  for (const TrainSequence& seq : seqs) {
    for (std::size_t i = 0; i < seq.labels.size(); ++i) {
      if (seq.labels[i] == kNoLabel || seq.tokens[i].role == Role::Foresight) continue;
      ++hist[seq.labels[i]];
      ++total;
    }
  }
  if (total == 0) return 0.0;
  double h = 0.0;
  for (const auto& [id, cnt] : hist) {
    (void)id;
    const double p = static_cast<double>(cnt) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace memosight
