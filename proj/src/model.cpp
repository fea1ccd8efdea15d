// SPDX-License-Identifier: Apache-2.0
#include "memosight/model.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "memosight/rng.hpp"

namespace memosight {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <typename T>
T gelu(T x) {
  const T u = static_cast<T>(kGeluK) * (x + static_cast<T>(kGeluA) * x * x * x);
  return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
  const T u = static_cast<T>(kGeluK) * (x + static_cast<T>(kGeluA) * x * x * x);
  const T th = std::tanh(u);
  const T sech2 = static_cast<T>(1) - th * th;
  return static_cast<T>(0.5) * (static_cast<T>(1) + th) +
         static_cast<T>(0.5) * x * sech2 *
             static_cast<T>(kGeluK) * (static_cast<T>(1) + static_cast<T>(3 * kGeluA) * x * x);
}

std::vector<double> rope_inv_freq(int d_head, double base) {
  std::vector<double> f(static_cast<std::size_t>(d_head / 2));
  for (int j = 0; j < d_head / 2; ++j) {
    f[static_cast<std::size_t>(j)] = std::pow(base, -2.0 * j / d_head);
  }
  return f;
}

/// Rotates every head segment of a packed (1 x d_model) row in place.
/// sign = -1 applies the inverse rotation (gradient path).
template <typename T>
void rope_row(T* row, int n_heads, int d_head, Pid pid, const std::vector<double>& inv_freq,
              int sign) {
  for (int j = 0; j < d_head / 2; ++j) {
    const double angle = sign * static_cast<double>(pid) * inv_freq[static_cast<std::size_t>(j)];
    const T c = static_cast<T>(std::cos(angle));
    const T s = static_cast<T>(std::sin(angle));
    for (int h = 0; h < n_heads; ++h) {
      T* p = row + h * d_head + 2 * j;
      const T x0 = p[0];
      const T x1 = p[1];
      p[0] = x0 * c - x1 * s;
      p[1] = x0 * s + x1 * c;
    }
  }
}

inline void check_pid(Pid pid, int max_pid) {
  if (pid < 0 || pid > max_pid) {
    throw std::out_of_range("pid " + std::to_string(pid) + " outside [0, " +
                            std::to_string(max_pid) + "]");
  }
}

/// Row-wise layer norm. Returns the normalized output; fills xhat and invstd
/// for the backward pass when caches are supplied.
template <typename T>
MatT<T> layer_norm(const MatT<T>& x, const MatT<T>& g, const MatT<T>& b, MatT<T>* xhat_out,
                   Eigen::Matrix<T, Eigen::Dynamic, 1>* invstd_out) {
  const Eigen::Index n = x.rows(), d = x.cols();
  MatT<T> out(n, d);
  if (xhat_out) xhat_out->resize(n, d);
  if (invstd_out) invstd_out->resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mu = x.row(i).mean();
    const T var = (x.row(i).array() - mu).square().sum() / static_cast<T>(d);
    const T inv = static_cast<T>(1) / std::sqrt(var + static_cast<T>(kLnEps));
    auto xhat = ((x.row(i).array() - mu) * inv).matrix();
    out.row(i) = (xhat.array() * g.col(0).transpose().array() +
                  b.col(0).transpose().array()).matrix();
    if (xhat_out) xhat_out->row(i) = xhat;
    if (invstd_out) (*invstd_out)(i) = inv;
  }
  return out;
}

/// dx for row-wise layer norm; accumulates dgamma/dbeta.
template <typename T>
MatT<T> layer_norm_backward(const MatT<T>& dy, const MatT<T>& xhat,
                            const Eigen::Matrix<T, Eigen::Dynamic, 1>& invstd, const MatT<T>& g,
                            MatT<T>& dg, MatT<T>& db) {
  const Eigen::Index n = dy.rows(), d = dy.cols();
  MatT<T> dx(n, d);
  dg.col(0).noalias() += (dy.array() * xhat.array()).colwise().sum().matrix().transpose();
  db.col(0).noalias() += dy.colwise().sum().transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    auto dxhat = (dy.row(i).array() * g.col(0).transpose().array()).eval();
    const T m1 = dxhat.mean();
    const T m2 = (dxhat * xhat.row(i).array()).mean();
    dx.row(i) = (invstd(i) * (dxhat - m1 - xhat.row(i).array() * m2)).matrix();
  }
  return dx;
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1) {
    throw std::invalid_argument("ModelConfig: non-positive sizes");
  }
  if (d_model % n_heads != 0) throw std::invalid_argument("ModelConfig: d_model % n_heads != 0");
  if (d_head() % 2 != 0) throw std::invalid_argument("ModelConfig: d_head must be even");
  if (vocab_size < 1) throw std::invalid_argument("ModelConfig: vocab_size < 1");
  if (max_pid < 1) throw std::invalid_argument("ModelConfig: max_pid < 1");
  if (rope_base <= 1.0) throw std::invalid_argument("ModelConfig: rope_base <= 1");
}

template <typename T>
ParamsT<T> ParamsT<T>::shaped(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.d_model, f = 4 * cfg.d_model;
  ParamsT<T> p;
  p.embed = Mat::Zero(cfg.vocab_size, d);
  p.blocks.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& b : p.blocks) {
    b.ln1_g = Mat::Zero(d, 1);
    b.ln1_b = Mat::Zero(d, 1);
    b.wq = Mat::Zero(d, d);
    b.wk = Mat::Zero(d, d);
    b.wv = Mat::Zero(d, d);
    b.wo = Mat::Zero(d, d);
    b.ln2_g = Mat::Zero(d, 1);
    b.ln2_b = Mat::Zero(d, 1);
    b.w1 = Mat::Zero(d, f);
    b.b1 = Mat::Zero(f, 1);
    b.w2 = Mat::Zero(f, d);
    b.b2 = Mat::Zero(d, 1);
  }
  p.lnf_g = Mat::Zero(d, 1);
  p.lnf_b = Mat::Zero(d, 1);
  return p;
}

template <typename T>
void ParamsT<T>::zero() {
  for (auto& [name, m] : tensor_list(*this)) {
    (void)name;
    m->setZero();
  }
}

template <typename T>
std::size_t ParamsT<T>::count() const {
  std::size_t n = 0;
  auto& self = const_cast<ParamsT<T>&>(*this);
  for (auto& [name, m] : tensor_list(self)) {
    (void)name;
    n += static_cast<std::size_t>(m->size());
  }
  return n;
}

template <typename T>
std::vector<std::pair<std::string, MatT<T>*>> tensor_list(ParamsT<T>& p) {
  std::vector<std::pair<std::string, MatT<T>*>> out;
  out.emplace_back("embed", &p.embed);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string pre = "blk" + std::to_string(i) + ".";
    out.emplace_back(pre + "ln1.g", &b.ln1_g);
    out.emplace_back(pre + "ln1.b", &b.ln1_b);
    out.emplace_back(pre + "wq", &b.wq);
    out.emplace_back(pre + "wk", &b.wk);
    out.emplace_back(pre + "wv", &b.wv);
    out.emplace_back(pre + "wo", &b.wo);
    out.emplace_back(pre + "ln2.g", &b.ln2_g);
    out.emplace_back(pre + "ln2.b", &b.ln2_b);
    out.emplace_back(pre + "w1", &b.w1);
    out.emplace_back(pre + "b1", &b.b1);
    out.emplace_back(pre + "w2", &b.w2);
    out.emplace_back(pre + "b2", &b.b2);
  }
  out.emplace_back("lnf.g", &p.lnf_g);
  out.emplace_back("lnf.b", &p.lnf_b);
  return out;
}

template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, 1> apply_rope(const Eigen::Matrix<T, Eigen::Dynamic, 1>& v,
                                               Pid pid, double base) {
  if (v.size() % 2 != 0) throw std::invalid_argument("apply_rope: odd dimension");
  const int dh = static_cast<int>(v.size());
  const auto inv_freq = rope_inv_freq(dh, base);
  Eigen::Matrix<T, Eigen::Dynamic, 1> out = v;
  rope_row(out.data(), 1, dh, pid, inv_freq, +1);
  return out;
}

namespace {

/// Ends-with init rule shared by both scalar types; draws happen in double so
/// float and double models see the same values.
template <typename T>
void init_tensor(const std::string& name, MatT<T>& m, std::uint64_t seed, std::size_t index,
                 int n_layers) {
  auto ends_with = [&name](const char* s) {
    const std::string suf(s);
    return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
  };
  if (ends_with(".g")) {
    m.setOnes();
    return;
  }
  if (ends_with(".b") || ends_with(".b1") || ends_with(".b2")) {
    m.setZero();
    return;
  }
  double scale = 0.02;
  if (ends_with(".wo") || ends_with(".w2")) scale = 0.02 / std::sqrt(2.0 * n_layers);
  SplitMix64 rng(mix_seed(seed, static_cast<std::uint64_t>(index)));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m(r, c) = static_cast<T>(scale * rng.next_normal());
    }
  }
}

}  // namespace

template <typename T>
ModelT<T> ModelT<T>::init(const ModelConfig& cfg) {
  ModelT<T> model;
  model.cfg = cfg;
  model.params = ParamsT<T>::shaped(cfg);
  auto list = tensor_list(model.params);
  for (std::size_t i = 0; i < list.size(); ++i) {
    init_tensor(list[i].first, *list[i].second, cfg.param_seed, i, cfg.n_layers);
  }
  return model;
}

namespace {

/// Per-layer activation cache for the fused backward pass.
template <typename T>
struct LayerCache {
  MatT<T> x_in;                    // block input
  MatT<T> xhat1, a;                // ln1
  Eigen::Matrix<T, Eigen::Dynamic, 1> invstd1;
  MatT<T> q, k, v;                 // post-rope q/k
  std::vector<MatT<T>> probs;      // per-head attention rows
  MatT<T> c;                       // concatenated head outputs
  MatT<T> xhat2, b;                // ln2
  Eigen::Matrix<T, Eigen::Dynamic, 1> invstd2;
  MatT<T> h1, g;                   // mlp pre-activation and gelu output
};

template <typename T>
struct ForwardCache {
  std::vector<LayerCache<T>> layers;
  MatT<T> xhatf, y;
  Eigen::Matrix<T, Eigen::Dynamic, 1> invstdf;
};

}  // namespace

template <typename T>
static MatT<T> run_forward(const ModelT<T>& model, const std::vector<TokenId>& ids,
                           const std::vector<Pid>& pids, const AttnMask& mask,
                           ForwardCache<T>* fc) {
  const ModelConfig& cfg = model.cfg;
  const ParamsT<T>& P = model.params;
  const int n = static_cast<int>(ids.size());
  const int D = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head();
  if (static_cast<int>(pids.size()) != n || mask.n != n) {
    throw std::invalid_argument("forward: ids/pids/mask size mismatch");
  }
  for (Pid p : pids) check_pid(p, cfg.max_pid);
  for (TokenId id : ids) {
    if (id < 0 || id >= cfg.vocab_size) throw std::out_of_range("forward: token id out of vocab");
  }
  const auto inv_freq = rope_inv_freq(dh, cfg.rope_base);
  const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  MatT<T> x(n, D);
  for (int i = 0; i < n; ++i) x.row(i) = P.embed.row(ids[static_cast<std::size_t>(i)]);
  if (fc) fc->layers.resize(static_cast<std::size_t>(cfg.n_layers));

  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& blk = P.blocks[static_cast<std::size_t>(l)];
    LayerCache<T>* lc = fc ? &fc->layers[static_cast<std::size_t>(l)] : nullptr;
    if (lc) lc->x_in = x;

    MatT<T> xhat1;
    Eigen::Matrix<T, Eigen::Dynamic, 1> invstd1;
    MatT<T> a = layer_norm<T>(x, blk.ln1_g, blk.ln1_b, lc ? &xhat1 : nullptr,
                              lc ? &invstd1 : nullptr);
    MatT<T> q(n, D), k(n, D), v(n, D);
    q.noalias() = a * blk.wq;
    k.noalias() = a * blk.wk;
    v.noalias() = a * blk.wv;
    for (int i = 0; i < n; ++i) {
      rope_row(q.row(i).data(), H, dh, pids[static_cast<std::size_t>(i)], inv_freq, +1);
      rope_row(k.row(i).data(), H, dh, pids[static_cast<std::size_t>(i)], inv_freq, +1);
    }

    MatT<T> c(n, D);
    std::vector<MatT<T>> probs;
    if (lc) probs.resize(static_cast<std::size_t>(H));
    for (int h = 0; h < H; ++h) {
      auto qh = q.middleCols(h * dh, dh);
      auto kh = k.middleCols(h * dh, dh);
      auto vh = v.middleCols(h * dh, dh);
      MatT<T> s(n, n);
      s.noalias() = qh * kh.transpose();
      s *= inv_sqrt_dh;
      // Masked softmax: unseen keys get probability zero, no infinities.
      MatT<T> p = MatT<T>::Zero(n, n);
      for (int qi = 0; qi < n; ++qi) {
        T mx = -std::numeric_limits<T>::infinity();
        for (int ki = 0; ki <= qi; ++ki) {
          if (mask.at(qi, ki) && s(qi, ki) > mx) mx = s(qi, ki);
        }
        T z = 0;
        for (int ki = 0; ki <= qi; ++ki) {
          if (!mask.at(qi, ki)) continue;
          const T e = std::exp(s(qi, ki) - mx);
          p(qi, ki) = e;
          z += e;
        }
        p.row(qi) /= z;
      }
      c.middleCols(h * dh, dh).noalias() = p * vh;
      if (lc) probs[static_cast<std::size_t>(h)] = std::move(p);
    }

    MatT<T> x1 = x + (c * blk.wo).eval();
    MatT<T> xhat2;
    Eigen::Matrix<T, Eigen::Dynamic, 1> invstd2;
    MatT<T> b = layer_norm<T>(x1, blk.ln2_g, blk.ln2_b, lc ? &xhat2 : nullptr,
                              lc ? &invstd2 : nullptr);
    MatT<T> h1(n, 4 * D);
    h1.noalias() = b * blk.w1;
    h1.rowwise() += blk.b1.col(0).transpose();
    MatT<T> g = h1.unaryExpr([](T t) { return gelu(t); });
    MatT<T> x2 = x1 + (g * blk.w2).eval();
    x2.rowwise() += blk.b2.col(0).transpose();

    if (lc) {
      lc->xhat1 = std::move(xhat1);
      lc->invstd1 = std::move(invstd1);
      lc->a = std::move(a);
      lc->q = std::move(q);
      lc->k = std::move(k);
      lc->v = std::move(v);
      lc->probs = std::move(probs);
      lc->c = std::move(c);
      lc->xhat2 = std::move(xhat2);
      lc->invstd2 = std::move(invstd2);
      lc->b = std::move(b);
      lc->h1 = std::move(h1);
      lc->g = std::move(g);
    }
    x = std::move(x2);
  }

  MatT<T> xhatf;
  Eigen::Matrix<T, Eigen::Dynamic, 1> invstdf;
  MatT<T> y = layer_norm<T>(x, P.lnf_g, P.lnf_b, fc ? &xhatf : nullptr, fc ? &invstdf : nullptr);
  MatT<T> logits(n, cfg.vocab_size);
  logits.noalias() = y * P.embed.transpose();
  if (fc) {
    fc->xhatf = std::move(xhatf);
    fc->invstdf = std::move(invstdf);
    fc->y = std::move(y);
  }
  return logits;
}

template <typename T>
MatT<T> ModelT<T>::forward(const std::vector<TokenId>& ids, const std::vector<Pid>& pids,
                           const AttnMask& mask) const {
  return run_forward<T>(*this, ids, pids, mask, nullptr);
}

template <typename T>
typename ModelT<T>::ClassStats ModelT<T>::forward_backward(const std::vector<TokenId>& ids,
                                                           const std::vector<Pid>& pids,
                                                           const AttnMask& mask,
                                                           const std::vector<Supervised>& sup,
                                                           ParamsT<T>& grad) const {
  const int n = static_cast<int>(ids.size());
  const int D = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head();
  const auto inv_freq = rope_inv_freq(dh, cfg.rope_base);
  const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  ForwardCache<T> fc;
  MatT<T> logits = run_forward<T>(*this, ids, pids, mask, &fc);

  ClassStats stats;
  MatT<T> dlogits = MatT<T>::Zero(n, cfg.vocab_size);
  for (const Supervised& s : sup) {
    if (s.pos < 0 || s.pos >= n) throw std::out_of_range("forward_backward: supervised pos");
    if (s.target < 0 || s.target >= cfg.vocab_size) {
      throw std::out_of_range("forward_backward: supervised target");
    }
    auto row = logits.row(s.pos);
    const T mx = row.maxCoeff();
    double z = 0.0;
    for (int v = 0; v < cfg.vocab_size; ++v) z += std::exp(static_cast<double>(row(v) - mx));
    const double ce = std::log(z) - static_cast<double>(row(s.target) - mx);
    stats.ce_sum[s.cls] += ce;
    stats.count[s.cls] += 1;
    const T w = static_cast<T>(s.weight);
    for (int v = 0; v < cfg.vocab_size; ++v) {
      dlogits(s.pos, v) += w * static_cast<T>(std::exp(static_cast<double>(row(v) - mx)) / z);
    }
    dlogits(s.pos, s.target) -= w;
  }

  // Head (tied embedding).
  grad.embed.noalias() += dlogits.transpose() * fc.y;
  MatT<T> dy(n, D);
  dy.noalias() = dlogits * params.embed;
  MatT<T> dx = layer_norm_backward<T>(dy, fc.xhatf, fc.invstdf, params.lnf_g, grad.lnf_g,
                                      grad.lnf_b);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& blk = params.blocks[static_cast<std::size_t>(l)];
    auto& gblk = grad.blocks[static_cast<std::size_t>(l)];
    LayerCache<T>& lc = fc.layers[static_cast<std::size_t>(l)];

    // MLP.
    MatT<T> dmo = dx;  // d of (g*w2 + b2), residual keeps dx flowing
    gblk.b2.col(0).noalias() += dmo.colwise().sum().transpose();
    MatT<T> dg(n, 4 * D);
    dg.noalias() = dmo * blk.w2.transpose();
    gblk.w2.noalias() += lc.g.transpose() * dmo;
    MatT<T> dh1 = dg.binaryExpr(lc.h1, [](T dgi, T h1i) { return dgi * gelu_grad(h1i); });
    gblk.b1.col(0).noalias() += dh1.colwise().sum().transpose();
    MatT<T> db(n, D);
    db.noalias() = dh1 * blk.w1.transpose();
    gblk.w1.noalias() += lc.b.transpose() * dh1;
    MatT<T> dx1 = dx + layer_norm_backward<T>(db, lc.xhat2, lc.invstd2, blk.ln2_g, gblk.ln2_g,
                                              gblk.ln2_b);

    // Attention.
    MatT<T> dc(n, D);
    dc.noalias() = dx1 * blk.wo.transpose();
    gblk.wo.noalias() += lc.c.transpose() * dx1;
    MatT<T> dq = MatT<T>::Zero(n, D), dk = MatT<T>::Zero(n, D), dv = MatT<T>::Zero(n, D);
    for (int h = 0; h < H; ++h) {
      auto dch = dc.middleCols(h * dh, dh);
      auto qh = lc.q.middleCols(h * dh, dh);
      auto kh = lc.k.middleCols(h * dh, dh);
      auto vh = lc.v.middleCols(h * dh, dh);
      const MatT<T>& p = lc.probs[static_cast<std::size_t>(h)];
      MatT<T> dp(n, n);
      dp.noalias() = dch * vh.transpose();
      dv.middleCols(h * dh, dh).noalias() += p.transpose() * dch;
      MatT<T> ds(n, n);
      for (int qi = 0; qi < n; ++qi) {
        const T dot = dp.row(qi).cwiseProduct(p.row(qi)).sum();
        ds.row(qi) = (p.row(qi).array() * (dp.row(qi).array() - dot)).matrix();
      }
      ds *= inv_sqrt_dh;
      dq.middleCols(h * dh, dh).noalias() += ds * kh;
      dk.middleCols(h * dh, dh).noalias() += ds.transpose() * qh;
    }
    for (int i = 0; i < n; ++i) {
      rope_row(dq.row(i).data(), H, dh, pids[static_cast<std::size_t>(i)], inv_freq, -1);
      rope_row(dk.row(i).data(), H, dh, pids[static_cast<std::size_t>(i)], inv_freq, -1);
    }
    MatT<T> da(n, D);
    da.noalias() = dq * blk.wq.transpose();
    da.noalias() += dk * blk.wk.transpose();
    da.noalias() += dv * blk.wv.transpose();
    gblk.wq.noalias() += lc.a.transpose() * dq;
    gblk.wk.noalias() += lc.a.transpose() * dk;
    gblk.wv.noalias() += lc.a.transpose() * dv;
    dx = dx1 + layer_norm_backward<T>(da, lc.xhat1, lc.invstd1, blk.ln1_g, gblk.ln1_g,
                                      gblk.ln1_b);
  }

  for (int i = 0; i < n; ++i) {
    grad.embed.row(ids[static_cast<std::size_t>(i)]) += dx.row(i);
  }
  return stats;
}

template <typename T>
KvCacheT<T>::KvCacheT(const ModelConfig& cfg)
    : n_layers_(cfg.n_layers), d_model_(cfg.d_model) {
  k_.resize(static_cast<std::size_t>(n_layers_));
  v_.resize(static_cast<std::size_t>(n_layers_));
}

template <typename T>
void KvCacheT<T>::reserve(int want) {
  const int cap = static_cast<int>(k_[0].rows());
  if (want <= cap) return;
  int newcap = cap < 64 ? 64 : cap;
  while (newcap < want) newcap *= 2;
  for (int l = 0; l < n_layers_; ++l) {
    k_[static_cast<std::size_t>(l)].conservativeResize(newcap, d_model_);
    v_[static_cast<std::size_t>(l)].conservativeResize(newcap, d_model_);
  }
}

template <typename T>
void KvCacheT<T>::append(const MatT<T>& k_rows, const MatT<T>& v_rows, Pid pid, Role role,
                         int step) {
  if (k_rows.rows() != n_layers_ || k_rows.cols() != d_model_ || v_rows.rows() != n_layers_ ||
      v_rows.cols() != d_model_) {
    throw std::invalid_argument("KvCache::append: bad row shapes");
  }
  reserve(len_ + 1);
  for (int l = 0; l < n_layers_; ++l) {
    k_[static_cast<std::size_t>(l)].row(len_) = k_rows.row(l);
    v_[static_cast<std::size_t>(l)].row(len_) = v_rows.row(l);
  }
  pids_.push_back(pid);
  roles_.push_back(role);
  steps_.push_back(step);
  ++len_;
}

template <typename T>
int KvCacheT<T>::evict(const std::function<bool(Role, int)>& pred) {
  int out = 0;
  for (int slot = 0; slot < len_; ++slot) {
    if (pred(roles_[static_cast<std::size_t>(slot)], steps_[static_cast<std::size_t>(slot)])) {
      continue;
    }
    if (out != slot) {
      for (int l = 0; l < n_layers_; ++l) {
        k_[static_cast<std::size_t>(l)].row(out) = k_[static_cast<std::size_t>(l)].row(slot);
        v_[static_cast<std::size_t>(l)].row(out) = v_[static_cast<std::size_t>(l)].row(slot);
      }
      pids_[static_cast<std::size_t>(out)] = pids_[static_cast<std::size_t>(slot)];
      roles_[static_cast<std::size_t>(out)] = roles_[static_cast<std::size_t>(slot)];
      steps_[static_cast<std::size_t>(out)] = steps_[static_cast<std::size_t>(slot)];
    }
    ++out;
  }
  const int removed = len_ - out;
  len_ = out;
  pids_.resize(static_cast<std::size_t>(out));
  roles_.resize(static_cast<std::size_t>(out));
  steps_.resize(static_cast<std::size_t>(out));
  return removed;
}

template <typename T>
void KvCacheT<T>::truncate(int new_len) {
  if (new_len < 0 || new_len > len_) throw std::invalid_argument("KvCache::truncate: bad length");
  len_ = new_len;
  pids_.resize(static_cast<std::size_t>(new_len));
  roles_.resize(static_cast<std::size_t>(new_len));
  steps_.resize(static_cast<std::size_t>(new_len));
}

template <typename T>
MatT<T> ModelT<T>::forward_incremental(const std::vector<NewTok>& toks, KvCacheT<T>& cache,
                                       bool append) const {
  using RowV = Eigen::Matrix<T, 1, Eigen::Dynamic>;
  const int D = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head();
  const int n_new = static_cast<int>(toks.size());
  const auto inv_freq = rope_inv_freq(dh, cfg.rope_base);
  const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  // Per-layer K/V of the tokens processed so far in this call.
  std::vector<MatT<T>> ext_k(static_cast<std::size_t>(cfg.n_layers), MatT<T>(n_new, D));
  std::vector<MatT<T>> ext_v(static_cast<std::size_t>(cfg.n_layers), MatT<T>(n_new, D));
  MatT<T> logits(n_new, cfg.vocab_size);

  for (int t = 0; t < n_new; ++t) {
    const NewTok& tok = toks[static_cast<std::size_t>(t)];
    check_pid(tok.pid, cfg.max_pid);
    if (tok.id < 0 || tok.id >= cfg.vocab_size) {
      throw std::out_of_range("forward_incremental: token id out of vocab");
    }
    // Visible cache slots, in slot order. Gathered once; identical for every
    // layer because the slot ledger is shared.
    std::vector<int> sel;
    sel.reserve(static_cast<std::size_t>(cache.len()));
    for (int slot = 0; slot < cache.len(); ++slot) {
      if (!tok.vis.cache_pred || tok.vis.cache_pred(cache.role_at(slot), cache.step_at(slot))) {
        sel.push_back(slot);
      }
    }
    const int n_prior = tok.vis.attend_prior ? t : 0;
    const int n_keys = static_cast<int>(sel.size()) + n_prior + 1;

    RowV x = params.embed.row(tok.id);
    for (int l = 0; l < cfg.n_layers; ++l) {
      const auto& blk = params.blocks[static_cast<std::size_t>(l)];
      const MatT<T>& ck = cache.k_layer(l);
      const MatT<T>& cv = cache.v_layer(l);
      const MatT<T>& ek = ext_k[static_cast<std::size_t>(l)];
      const MatT<T>& ev = ext_v[static_cast<std::size_t>(l)];

      // ln1
      const T mu = x.mean();
      const T var = (x.array() - mu).square().sum() / static_cast<T>(D);
      const T inv = static_cast<T>(1) / std::sqrt(var + static_cast<T>(kLnEps));
      RowV a = (((x.array() - mu) * inv) * blk.ln1_g.col(0).transpose().array() +
                blk.ln1_b.col(0).transpose().array()).matrix();
      RowV q = a * blk.wq;
      RowV k = a * blk.wk;
      RowV v = a * blk.wv;
      rope_row(q.data(), H, dh, tok.pid, inv_freq, +1);
      rope_row(k.data(), H, dh, tok.pid, inv_freq, +1);

      // Gather keys/values as (cache slots, prior new tokens, self); the
      // reduction order is this gather order, so splitting a call at any
      // point leaves the arithmetic unchanged.
      MatT<T> ks(n_keys, D), vs(n_keys, D);
      int r = 0;
      for (int idx : sel) {
        ks.row(r) = ck.row(idx);
        vs.row(r) = cv.row(idx);
        ++r;
      }
      for (int p = 0; p < n_prior; ++p) {
        ks.row(r) = ek.row(p);
        vs.row(r) = ev.row(p);
        ++r;
      }
      ks.row(r) = k;
      vs.row(r) = v;

      RowV att(D);
      for (int h = 0; h < H; ++h) {
        auto qh = q.segment(h * dh, dh);
        Eigen::Matrix<T, Eigen::Dynamic, 1> scores(n_keys);
        for (int i = 0; i < n_keys; ++i) {
          scores(i) = qh.dot(ks.row(i).segment(h * dh, dh)) * inv_sqrt_dh;
        }
        const T mx = scores.maxCoeff();
        T z = 0;
        for (int i = 0; i < n_keys; ++i) {
          scores(i) = std::exp(scores(i) - mx);
          z += scores(i);
        }
        RowV oh = RowV::Zero(dh);
        for (int i = 0; i < n_keys; ++i) {
          oh += (scores(i) / z) * vs.row(i).segment(h * dh, dh);
        }
        att.segment(h * dh, dh) = oh;
      }
      RowV x1 = x + att * blk.wo;

      const T mu2 = x1.mean();
      const T var2 = (x1.array() - mu2).square().sum() / static_cast<T>(D);
      const T inv2 = static_cast<T>(1) / std::sqrt(var2 + static_cast<T>(kLnEps));
      RowV b = (((x1.array() - mu2) * inv2) * blk.ln2_g.col(0).transpose().array() +
                blk.ln2_b.col(0).transpose().array()).matrix();
      RowV h1 = b * blk.w1 + blk.b1.col(0).transpose();
      RowV g = h1.unaryExpr([](T u) { return gelu(u); });
      x = x1 + g * blk.w2 + blk.b2.col(0).transpose();

      ext_k[static_cast<std::size_t>(l)].row(t) = k;
      ext_v[static_cast<std::size_t>(l)].row(t) = v;
    }

    const T muf = x.mean();
    const T varf = (x.array() - muf).square().sum() / static_cast<T>(D);
    const T invf = static_cast<T>(1) / std::sqrt(varf + static_cast<T>(kLnEps));
    RowV y = (((x.array() - muf) * invf) * params.lnf_g.col(0).transpose().array() +
              params.lnf_b.col(0).transpose().array()).matrix();
    logits.row(t).noalias() = y * params.embed.transpose();
  }

  if (append) {
    MatT<T> krows(cfg.n_layers, D), vrows(cfg.n_layers, D);
    for (int t = 0; t < n_new; ++t) {
      for (int l = 0; l < cfg.n_layers; ++l) {
        krows.row(l) = ext_k[static_cast<std::size_t>(l)].row(t);
        vrows.row(l) = ext_v[static_cast<std::size_t>(l)].row(t);
      }
      const NewTok& tok = toks[static_cast<std::size_t>(t)];
      cache.append(krows, vrows, tok.pid, tok.role, tok.step);
    }
  }
  return logits;
}

ParamsT<double> to_double(const ParamsT<float>& p, const ModelConfig& cfg) {
  ParamsT<double> out = ParamsT<double>::shaped(cfg);
  ParamsT<float> src = p;  // tensor_list needs mutable access
  auto from = tensor_list(src);
  auto to = tensor_list(out);
  for (std::size_t i = 0; i < from.size(); ++i) {
    *to[i].second = from[i].second->cast<double>();
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'M', 'S', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const SpecialIds& specials) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  ParamsT<float> params = model.params;
  auto list = tensor_list(params);
  out.write(kMagic, 4);
  write_u32(out, kCkptVersion);
  write_u32(out, static_cast<std::uint32_t>(list.size()));
  for (auto& [name, m] : list) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(m->rows()));
    write_u32(out, static_cast<std::uint32_t>(m->cols()));
    out.write(reinterpret_cast<const char*>(m->data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m->size())));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);

  nlohmann::json j;
  j["model"] = {{"n_layers", model.cfg.n_layers},   {"n_heads", model.cfg.n_heads},
                {"d_model", model.cfg.d_model},     {"vocab_size", model.cfg.vocab_size},
                {"rope_base", model.cfg.rope_base}, {"max_pid", model.cfg.max_pid},
                {"param_seed", model.cfg.param_seed}};
  j["specials"] = {{"foresight_id", specials.foresight_id},
                   {"memory_ids", specials.memory_ids},
                   {"output_id", specials.output_id},
                   {"delimiter_id", specials.delimiter_id},
                   {"eos_id", specials.eos_id}};
  std::ofstream side(path + ".json");
  if (!side) throw std::runtime_error("save_checkpoint: cannot open " + path + ".json");
  side << j.dump(2) << "\n";
}

Model load_checkpoint(const std::string& path, SpecialIds* specials_out) {
  std::ifstream side_in(path + ".json");
  if (!side_in) throw std::runtime_error("load_checkpoint: missing sidecar " + path + ".json");
  nlohmann::json j;
  side_in >> j;
  ModelConfig cfg;
  const auto& jm = j.at("model");
  cfg.n_layers = jm.at("n_layers").get<int>();
  cfg.n_heads = jm.at("n_heads").get<int>();
  cfg.d_model = jm.at("d_model").get<int>();
  cfg.vocab_size = jm.at("vocab_size").get<int>();
  cfg.rope_base = jm.at("rope_base").get<double>();
  cfg.max_pid = jm.at("max_pid").get<int>();
  cfg.param_seed = jm.at("param_seed").get<std::uint64_t>();
  if (specials_out) {
    const auto& js = j.at("specials");
    specials_out->foresight_id = js.at("foresight_id").get<TokenId>();
    specials_out->memory_ids = js.at("memory_ids").get<std::vector<TokenId>>();
    specials_out->output_id = js.at("output_id").get<TokenId>();
    specials_out->delimiter_id = js.at("delimiter_id").get<TokenId>();
    specials_out->eos_id = js.at("eos_id").get<TokenId>();
  }

  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kMagic, 4)) {
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  }
  if (read_u32(in) != kCkptVersion) throw std::runtime_error("load_checkpoint: bad version");
  Model model;
  model.cfg = cfg;
  model.params = ParamsT<float>::shaped(cfg);
  auto list = tensor_list(model.params);
  const std::uint32_t count = read_u32(in);
  if (count != list.size()) throw std::runtime_error("load_checkpoint: tensor count mismatch");
  for (auto& [name, m] : list) {
    const std::uint32_t name_len = read_u32(in);
    std::string got(name_len, '\0');
    in.read(got.data(), name_len);
    if (got != name) throw std::runtime_error("load_checkpoint: tensor order mismatch at " + got);
    const auto rows = static_cast<Eigen::Index>(read_u32(in));
    const auto cols = static_cast<Eigen::Index>(read_u32(in));
    if (rows != m->rows() || cols != m->cols()) {
      throw std::runtime_error("load_checkpoint: shape mismatch at " + name);
    }
    in.read(reinterpret_cast<char*>(m->data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m->size())));
  }
  if (!in) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return model;
}

template struct ParamsT<float>;
template struct ParamsT<double>;
template class ModelT<float>;
template class ModelT<double>;
template class KvCacheT<float>;
template class KvCacheT<double>;
template std::vector<std::pair<std::string, MatT<float>*>> tensor_list(ParamsT<float>&);
template std::vector<std::pair<std::string, MatT<double>*>> tensor_list(ParamsT<double>&);
template Eigen::Matrix<float, Eigen::Dynamic, 1> apply_rope(
    const Eigen::Matrix<float, Eigen::Dynamic, 1>&, Pid, double);
template Eigen::Matrix<double, Eigen::Dynamic, 1> apply_rope(
    const Eigen::Matrix<double, Eigen::Dynamic, 1>&, Pid, double);

}  // namespace memosight
