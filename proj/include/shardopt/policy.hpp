/* Copyright 2026 The shardopt Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Elite-context policy.
//
//   X (T×A)  elite strategies, best first, zero-padded
//   E = X·We + be                      linear embedding, A → d
//   Y = LN(E + MHA(E))                 post-norm encoder block, no
//   Z = LN(Y + W2·gelu(W1·Y))          positional encoding
//   h = mean_t Z_t
//   logits_m = tanh(h·Wt + bt)·Wm + bm one categorical head per sub-action
//   value    = tanh(h·Wv1 + bv1)·Wv2 + bv2
//
// Gradients are written out by hand; tests check them against central
// finite differences.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "shardopt/errors.hpp"
#include "shardopt/strategy.hpp"

namespace shardopt {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;
using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Elite buffer and observation.
// ---------------------------------------------------------------------------

struct EliteEntry {
  ActionVector action;
  double reward = 0.0;
};

class EliteBuffer {
 public:
  explicit EliteBuffer(size_t capacity) : capacity_(capacity) {}

  // Inserts iff there is room or `reward` beats the worst entry. Duplicate
  // actions are ignored. Only valid strategies should be offered.
  bool Update(const ActionVector& action, double reward) {
    for (const auto& e : entries_) {
      if (e.action == action) return false;
    }
    if (entries_.size() >= capacity_) {
      if (capacity_ == 0 || !(reward > entries_.back().reward)) return false;
      entries_.pop_back();
    }
    auto pos = std::upper_bound(
        entries_.begin(), entries_.end(), reward,
        [](double r, const EliteEntry& e) { return r > e.reward; });
    entries_.insert(pos, EliteEntry{action, reward});
    return true;
  }

  size_t capacity() const { return capacity_; }
  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<EliteEntry>& entries() const { return entries_; }
  double min_reward() const { return entries_.back().reward; }

  friend bool operator==(const EliteBuffer& a, const EliteBuffer& b) {
    if (a.capacity_ != b.capacity_ || a.entries_.size() != b.entries_.size()) {
      return false;
    }
    for (size_t i = 0; i < a.entries_.size(); ++i) {
      if (a.entries_[i].action != b.entries_[i].action ||
          a.entries_[i].reward != b.entries_[i].reward) {
        return false;
      }
    }
    return true;
  }

 private:
  size_t capacity_;
  std::vector<EliteEntry> entries_;  // reward descending
};

// Rows are elite actions normalized to [0, 1] by index / (size − 1).
inline Mat BuildObservation(const EliteBuffer& buf,
                            const std::vector<int64_t>& head_sizes) {
  Mat x = Mat::Zero(static_cast<Eigen::Index>(buf.capacity()),
                    static_cast<Eigen::Index>(head_sizes.size()));
  for (size_t t = 0; t < buf.size(); ++t) {
    const auto& a = buf.entries()[t].action;
    for (size_t m = 0; m < head_sizes.size(); ++m) {
      const double denom = static_cast<double>(std::max<int64_t>(head_sizes[m] - 1, 1));
      x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(m)) =
          static_cast<double>(a[m]) / denom;
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// Parameters.
// ---------------------------------------------------------------------------

struct PolicyConfig {
  std::vector<int64_t> head_sizes;
  // Per head, per choice: 1 if the choice may be sampled.
  std::vector<std::vector<uint8_t>> head_masks;
  int64_t model_dim = 256;
  int64_t attention_heads = 4;
  int64_t ff_dim = 256;

  int64_t obs_dim() const { return static_cast<int64_t>(head_sizes.size()); }

  // Heads of ops that admit only Unsharded are pinned to choice 0.
  static PolicyConfig ForSpace(const ActionSpaceSpec& space,
                               const ModelSpec& model) {
    PolicyConfig cfg;
    cfg.head_sizes = space.HeadSizes();
    cfg.head_masks.resize(cfg.head_sizes.size());
    const auto catalog = CanonicalOps(model);
    for (size_t m = 0; m < cfg.head_sizes.size(); ++m) {
      cfg.head_masks[m].assign(static_cast<size_t>(cfg.head_sizes[m]), 1);
      if (m >= ActionSpaceSpec::kNumCoarse) {
        const auto& op =
            catalog[static_cast<size_t>(space.ops[m - ActionSpaceSpec::kNumCoarse])];
        if (op.UnshardedOnly()) {
          std::fill(cfg.head_masks[m].begin() + 1, cfg.head_masks[m].end(), 0);
        }
      }
    }
    return cfg;
  }
};

template <typename Scalar>
struct PolicyParams {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Mat embed_w, embed_b;
  Mat wq, bq, wk, bk, wv, bv, wo, bo;
  Mat ln1_g, ln1_b;
  Mat ff1_w, ff1_b, ff2_w, ff2_b;
  Mat ln2_g, ln2_b;
  Mat trunk_w, trunk_b;
  std::vector<Mat> head_w, head_b;
  Mat value1_w, value1_b, value2_w, value2_b;

  template <typename F>
  void Visit(F&& f) {
    f("embed_w", embed_w); f("embed_b", embed_b);
    f("wq", wq); f("bq", bq); f("wk", wk); f("bk", bk);
    f("wv", wv); f("bv", bv); f("wo", wo); f("bo", bo);
    f("ln1_g", ln1_g); f("ln1_b", ln1_b);
    f("ff1_w", ff1_w); f("ff1_b", ff1_b); f("ff2_w", ff2_w); f("ff2_b", ff2_b);
    f("ln2_g", ln2_g); f("ln2_b", ln2_b);
    f("trunk_w", trunk_w); f("trunk_b", trunk_b);
    for (size_t m = 0; m < head_w.size(); ++m) {
      f("head" + std::to_string(m) + "_w", head_w[m]);
      f("head" + std::to_string(m) + "_b", head_b[m]);
    }
    f("value1_w", value1_w); f("value1_b", value1_b);
    f("value2_w", value2_w); f("value2_b", value2_b);
  }
  template <typename F>
  void Visit(F&& f) const {
    const_cast<PolicyParams*>(this)->Visit(
        [&](const std::string& name, Mat& t) { f(name, static_cast<const Mat&>(t)); });
  }

  // Tensors in Visit order, for lockstep walks over several parameter sets.
  std::vector<Mat*> Tensors() {
    std::vector<Mat*> out;
    Visit([&](const std::string&, Mat& t) { out.push_back(&t); });
    return out;
  }

  PolicyParams ZerosLike() const {
    PolicyParams z = *this;
    z.SetZero();
    return z;
  }

  void SetZero() {
    Visit([](const std::string&, Mat& t) { t.setZero(); });
  }

  int64_t ParameterCount() const {
    int64_t n = 0;
    Visit([&](const std::string&, const Mat& t) { n += t.size(); });
    return n;
  }

  bool AllFinite() const {
    bool ok = true;
    Visit([&](const std::string&, const Mat& t) { ok = ok && t.allFinite(); });
    return ok;
  }
};

// Uniform(−1/√fan_in, 1/√fan_in) for every linear map; layer norms start at
// identity; the categorical and value output layers start at zero so the
// first samples are uniform. Draws are made in double so both precisions
// see the same stream.
template <typename Scalar>
PolicyParams<Scalar> InitPolicyParams(const PolicyConfig& cfg, Rng& rng) {
  using Mat = typename PolicyParams<Scalar>::Mat;
  const auto a = cfg.obs_dim();
  const auto d = cfg.model_dim;
  auto uniform = [&](int64_t rows, int64_t cols, int64_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(u(rng));
    return m;
  };
  PolicyParams<Scalar> p;
  p.embed_w = uniform(a, d, a);
  p.embed_b = uniform(1, d, a);
  p.wq = uniform(d, d, d); p.bq = uniform(1, d, d);
  p.wk = uniform(d, d, d); p.bk = uniform(1, d, d);
  p.wv = uniform(d, d, d); p.bv = uniform(1, d, d);
  p.wo = uniform(d, d, d); p.bo = uniform(1, d, d);
  p.ln1_g = Mat::Ones(1, d); p.ln1_b = Mat::Zero(1, d);
  p.ff1_w = uniform(d, cfg.ff_dim, d); p.ff1_b = uniform(1, cfg.ff_dim, d);
  p.ff2_w = uniform(cfg.ff_dim, d, cfg.ff_dim); p.ff2_b = uniform(1, d, cfg.ff_dim);
  p.ln2_g = Mat::Ones(1, d); p.ln2_b = Mat::Zero(1, d);
  p.trunk_w = uniform(d, d, d); p.trunk_b = uniform(1, d, d);
  for (auto k : cfg.head_sizes) {
    p.head_w.push_back(Mat::Zero(d, k));
    p.head_b.push_back(Mat::Zero(1, k));
  }
  p.value1_w = uniform(d, d, d); p.value1_b = uniform(1, d, d);
  p.value2_w = Mat::Zero(d, 1); p.value2_b = Mat::Zero(1, 1);
  return p;
}

// ---------------------------------------------------------------------------
// Categorical helpers.
// ---------------------------------------------------------------------------

struct PolicyOutput {
  std::vector<RowVec> logits;                 // raw, always finite
  std::vector<std::vector<uint8_t>> masks;    // 0 = choice excluded
  double value = 0.0;
  RowVec pooled;
};

// Softmax over the allowed choices; excluded choices get probability 0.
inline RowVec MaskedSoftmax(const RowVec& logits, const std::vector<uint8_t>& mask) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    if (mask[j]) mx = std::max(mx, logits[j]);
  }
  RowVec p = RowVec::Zero(logits.size());
  double z = 0.0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    if (mask[j]) {
      p[j] = std::exp(logits[j] - mx);
      z += p[j];
    }
  }
  return p / z;
}

inline RowVec MaskedLogSoftmax(const RowVec& logits, const std::vector<uint8_t>& mask) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    if (mask[j]) mx = std::max(mx, logits[j]);
  }
  double z = 0.0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    if (mask[j]) z += std::exp(logits[j] - mx);
  }
  const double lse = mx + std::log(z);
  RowVec out(logits.size());
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    out[j] = mask[j] ? logits[j] - lse : -std::numeric_limits<double>::infinity();
  }
  return out;
}

inline double HeadEntropy(const RowVec& logits, const std::vector<uint8_t>& mask) {
  const RowVec p = MaskedSoftmax(logits, mask);
  const RowVec lp = MaskedLogSoftmax(logits, mask);
  double h = 0.0;
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    if (mask[j] && p[j] > 0) h -= p[j] * lp[j];
  }
  return h;
}

inline double LogProb(const PolicyOutput& out, const ActionVector& action) {
  double lp = 0.0;
  for (size_t m = 0; m < out.logits.size(); ++m) {
    lp += MaskedLogSoftmax(out.logits[m], out.masks[m])[action[m]];
  }
  return lp;
}

inline double Entropy(const PolicyOutput& out) {
  double h = 0.0;
  for (size_t m = 0; m < out.logits.size(); ++m) {
    h += HeadEntropy(out.logits[m], out.masks[m]);
  }
  return h;
}

// CS_m = max_j p_m[j].
inline std::vector<double> Confidence(const PolicyOutput& out) {
  std::vector<double> cs(out.logits.size());
  for (size_t m = 0; m < cs.size(); ++m) {
    cs[m] = MaskedSoftmax(out.logits[m], out.masks[m]).maxCoeff();
  }
  return cs;
}

struct SampledAction {
  ActionVector action;
  double logprob = 0.0;
  double entropy = 0.0;
};

inline SampledAction Sample(const PolicyOutput& out, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  SampledAction s;
  s.action.resize(out.logits.size());
  for (size_t m = 0; m < out.logits.size(); ++m) {
    const RowVec p = MaskedSoftmax(out.logits[m], out.masks[m]);
    const double u = u01(rng);
    double acc = 0.0;
    int64_t pick = -1;
    for (Eigen::Index j = 0; j < p.size(); ++j) {
      if (p[j] <= 0.0) continue;
      pick = j;  // last positive choice absorbs rounding at the top end
      acc += p[j];
      if (u < acc) break;
    }
    s.action[m] = pick;
  }
  s.logprob = LogProb(out, s.action);
  s.entropy = Entropy(out);
  return s;
}

// ---------------------------------------------------------------------------
// Network.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct ForwardCache {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Row = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  using Col = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Mat x, e, q, k, v, o, attn, r1, y1hat, y1, f1, g, f2, r2, zhat, z;
  std::vector<Mat> probs;  // per attention head, T×T
  Col rstd1, rstd2;
  Row h, trunk, value_hidden;
};

namespace internal {

inline constexpr double kLayerNormEps = 1e-5;

template <typename Mat, typename Col>
void LayerNormForward(const Mat& x, const Mat& g, const Mat& b, Mat* xhat, Col* rstd,
                      Mat* y) {
  using Scalar = typename Mat::Scalar;
  const auto d = static_cast<Scalar>(x.cols());
  *xhat = x;
  rstd->resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mu = x.row(i).mean();
    const Scalar var = (x.row(i).array() - mu).square().sum() / d;
    (*rstd)[i] = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
    xhat->row(i) = (x.row(i).array() - mu) * (*rstd)[i];
  }
  *y = (xhat->array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
}

// Returns dL/dx and accumulates dL/dg, dL/db.
template <typename Mat, typename Col>
Mat LayerNormBackward(const Mat& dy, const Mat& xhat, const Col& rstd, const Mat& g,
                      Mat* dg, Mat* db) {
  using Scalar = typename Mat::Scalar;
  const auto d = static_cast<Scalar>(dy.cols());
  *dg += (dy.array() * xhat.array()).colwise().sum().matrix();
  *db += dy.colwise().sum();
  Mat dxhat = dy.array().rowwise() * g.row(0).array();
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const Scalar s1 = dxhat.row(i).sum();
    const Scalar s2 = (dxhat.row(i).array() * xhat.row(i).array()).sum();
    dx.row(i) = (rstd[i] / d) *
                (d * dxhat.row(i).array() - s1 - xhat.row(i).array() * s2);
  }
  return dx;
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

template <typename Mat>
Mat Gelu(const Mat& x) {
  using S = typename Mat::Scalar;
  return x.unaryExpr([](S v) {
    return S(0.5) * v *
           (S(1) + std::tanh(S(kGeluC) * (v + S(0.044715) * v * v * v)));
  });
}

template <typename Mat>
Mat GeluGrad(const Mat& x) {
  using S = typename Mat::Scalar;
  return x.unaryExpr([](S v) {
    const S t = std::tanh(S(kGeluC) * (v + S(0.044715) * v * v * v));
    return S(0.5) * (S(1) + t) +
           S(0.5) * v * (S(1) - t * t) * S(kGeluC) * (S(1) + S(3 * 0.044715) * v * v);
  });
}

template <typename Mat>
Mat RowSoftmax(const Mat& s) {
  Mat p(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const auto mx = s.row(i).maxCoeff();
    p.row(i) = (s.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

}  // namespace internal

// Logits and value leave the network in double whatever the working
// precision, so sampling and the loss bookkeeping are shared.
template <typename Scalar>
class PolicyNet {
 public:
  using Params = PolicyParams<Scalar>;
  using Cache = ForwardCache<Scalar>;
  using Mat = typename Params::Mat;
  using Row = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

  explicit PolicyNet(PolicyConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.model_dim % cfg_.attention_heads != 0) {
      throw ConfigError("policy model_dim must be divisible by attention_heads");
    }
  }

  void Reinitialize(Rng& rng) { params_ = InitPolicyParams<Scalar>(cfg_, rng); }

  const PolicyConfig& config() const { return cfg_; }
  Params& params() { return params_; }
  const Params& params() const { return params_; }

  PolicyOutput Forward(const ::shardopt::Mat& x, Cache* cache = nullptr) const {
    using internal::LayerNormForward;
    Cache local;
    Cache& c = cache ? *cache : local;
    const Params& p = params_;
    const auto t = x.rows();
    const auto d = cfg_.model_dim;
    const auto nh = cfg_.attention_heads;
    const auto dh = d / nh;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

    c.x = x.cast<Scalar>();
    c.e = (c.x * p.embed_w).rowwise() + p.embed_b.row(0);
    c.q = (c.e * p.wq).rowwise() + p.bq.row(0);
    c.k = (c.e * p.wk).rowwise() + p.bk.row(0);
    c.v = (c.e * p.wv).rowwise() + p.bv.row(0);
    c.o.resize(t, d);
    c.probs.resize(static_cast<size_t>(nh));
    for (int64_t j = 0; j < nh; ++j) {
      const auto qj = c.q.middleCols(j * dh, dh);
      const auto kj = c.k.middleCols(j * dh, dh);
      const auto vj = c.v.middleCols(j * dh, dh);
      c.probs[j] = internal::RowSoftmax<Mat>((qj * kj.transpose()) * scale);
      c.o.middleCols(j * dh, dh) = c.probs[j] * vj;
    }
    c.attn = (c.o * p.wo).rowwise() + p.bo.row(0);
    c.r1 = c.e + c.attn;
    LayerNormForward(c.r1, p.ln1_g, p.ln1_b, &c.y1hat, &c.rstd1, &c.y1);
    c.f1 = (c.y1 * p.ff1_w).rowwise() + p.ff1_b.row(0);
    c.g = internal::Gelu(c.f1);
    c.f2 = (c.g * p.ff2_w).rowwise() + p.ff2_b.row(0);
    c.r2 = c.y1 + c.f2;
    LayerNormForward(c.r2, p.ln2_g, p.ln2_b, &c.zhat, &c.rstd2, &c.z);
    c.h = c.z.colwise().mean();
    c.trunk = ((c.h * p.trunk_w) + p.trunk_b).array().tanh().matrix();
    c.value_hidden = ((c.h * p.value1_w) + p.value1_b).array().tanh().matrix();

    PolicyOutput out;
    out.logits.reserve(p.head_w.size());
    for (size_t m = 0; m < p.head_w.size(); ++m) {
      out.logits.push_back((c.trunk * p.head_w[m] + p.head_b[m]).template cast<double>());
      if (!out.logits.back().allFinite()) {
        throw NumericalError("non-finite logits in policy head " + std::to_string(m));
      }
    }
    out.masks = cfg_.head_masks;
    out.value = static_cast<double>((c.value_hidden * p.value2_w)(0, 0) + p.value2_b(0, 0));
    out.pooled = c.h.template cast<double>();
    if (!std::isfinite(out.value)) throw NumericalError("non-finite value estimate");
    return out;
  }

  // Accumulates into `grads` the gradient of a scalar loss whose partials
  // with respect to the logits and the value are given.
  void Backward(const Cache& c, const std::vector<RowVec>& dlogits, double dvalue_in,
                Params* grads) const {
    using internal::LayerNormBackward;
    const Params& p = params_;
    Params& g = *grads;
    const auto t = c.x.rows();
    const auto d = cfg_.model_dim;
    const auto nh = cfg_.attention_heads;
    const auto dh = d / nh;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    const auto dvalue = static_cast<Scalar>(dvalue_in);

    Row dtrunk = Row::Zero(d);
    for (size_t m = 0; m < p.head_w.size(); ++m) {
      const Row dl = dlogits[m].cast<Scalar>();
      g.head_w[m] += c.trunk.transpose() * dl;
      g.head_b[m] += dl;
      dtrunk += dl * p.head_w[m].transpose();
    }
    Row dtrunk_pre = dtrunk.array() * (Scalar(1) - c.trunk.array().square());
    g.trunk_w += c.h.transpose() * dtrunk_pre;
    g.trunk_b += dtrunk_pre;
    Row dpool = dtrunk_pre * p.trunk_w.transpose();

    Row dvh = dvalue * p.value2_w.transpose();
    g.value2_w += c.value_hidden.transpose() * dvalue;
    g.value2_b(0, 0) += dvalue;
    Row dv_pre = dvh.array() * (Scalar(1) - c.value_hidden.array().square());
    g.value1_w += c.h.transpose() * dv_pre;
    g.value1_b += dv_pre;
    dpool += dv_pre * p.value1_w.transpose();

    Mat dz = Mat::Ones(t, 1) * (dpool / static_cast<Scalar>(t));
    Mat dr2 = LayerNormBackward(dz, c.zhat, c.rstd2, p.ln2_g, &g.ln2_g, &g.ln2_b);
    Mat dy1 = dr2;
    const Mat& df2 = dr2;
    g.ff2_w += c.g.transpose() * df2;
    g.ff2_b += df2.colwise().sum();
    Mat df1 = (df2 * p.ff2_w.transpose()).cwiseProduct(internal::GeluGrad(c.f1));
    g.ff1_w += c.y1.transpose() * df1;
    g.ff1_b += df1.colwise().sum();
    dy1 += df1 * p.ff1_w.transpose();

    Mat dr1 = LayerNormBackward(dy1, c.y1hat, c.rstd1, p.ln1_g, &g.ln1_g, &g.ln1_b);
    Mat de = dr1;
    const Mat& dattn = dr1;
    g.wo += c.o.transpose() * dattn;
    g.bo += dattn.colwise().sum();
    Mat dout = dattn * p.wo.transpose();

    Mat dq(t, d), dk(t, d), dv(t, d);
    for (int64_t j = 0; j < nh; ++j) {
      const auto qj = c.q.middleCols(j * dh, dh);
      const auto kj = c.k.middleCols(j * dh, dh);
      const auto vj = c.v.middleCols(j * dh, dh);
      const Mat& pj = c.probs[j];
      const Mat doj = dout.middleCols(j * dh, dh);
      Mat dp = doj * vj.transpose();
      dv.middleCols(j * dh, dh) = pj.transpose() * doj;
      Mat ds(t, t);
      for (Eigen::Index i = 0; i < t; ++i) {
        const Scalar dot = (dp.row(i).array() * pj.row(i).array()).sum();
        ds.row(i) = pj.row(i).array() * (dp.row(i).array() - dot);
      }
      dq.middleCols(j * dh, dh) = (ds * kj) * scale;
      dk.middleCols(j * dh, dh) = (ds.transpose() * qj) * scale;
    }
    g.wq += c.e.transpose() * dq;
    g.bq += dq.colwise().sum();
    g.wk += c.e.transpose() * dk;
    g.bk += dk.colwise().sum();
    g.wv += c.e.transpose() * dv;
    g.bv += dv.colwise().sum();
    de += dq * p.wq.transpose() + dk * p.wk.transpose() + dv * p.wv.transpose();

    g.embed_w += c.x.transpose() * de;
    g.embed_b += de.colwise().sum();
  }

 private:
  PolicyConfig cfg_;
  Params params_;
};

// ---------------------------------------------------------------------------
// Checkpoint: "SHOPTPOL", u32 version, u32 tensor count, then per tensor
// u32 name length, name bytes, u32 rows, u32 cols, rows·cols little-endian
// f64 values in row-major order.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'S', 'H', 'O', 'P', 'T', 'P', 'O', 'L'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace internal {

template <typename T>
void WriteLe(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(buf, buf + sizeof(T));
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T ReadLe(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw ConfigError("truncated policy checkpoint");
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(buf, buf + sizeof(T));
  }
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace internal

template <typename Scalar>
void SaveCheckpoint(const PolicyParams<Scalar>& params, std::ostream& os) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  internal::WriteLe<uint32_t>(os, kCheckpointVersion);
  uint32_t count = 0;
  using Mat = typename PolicyParams<Scalar>::Mat;
  params.Visit([&](const std::string&, const Mat&) { ++count; });
  internal::WriteLe<uint32_t>(os, count);
  params.Visit([&](const std::string& name, const Mat& t) {
    internal::WriteLe<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    internal::WriteLe<uint32_t>(os, static_cast<uint32_t>(t.rows()));
    internal::WriteLe<uint32_t>(os, static_cast<uint32_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.cols(); ++j) {
        internal::WriteLe<double>(os, static_cast<double>(t(i, j)));
      }
    }
  });
}

// Loads into `params`, whose tensor names and shapes must match the file.
template <typename Scalar>
void LoadCheckpoint(std::istream& is, PolicyParams<Scalar>* params) {
  using Mat = typename PolicyParams<Scalar>::Mat;
  char magic[sizeof(kCheckpointMagic)];
  if (!is.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw ConfigError("not a policy checkpoint");
  }
  const auto version = internal::ReadLe<uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = internal::ReadLe<uint32_t>(is);
  uint32_t expected = 0;
  params->Visit([&](const std::string&, Mat&) { ++expected; });
  if (count != expected) throw ConfigError("checkpoint tensor count mismatch");
  params->Visit([&](const std::string& name, Mat& t) {
    const auto len = internal::ReadLe<uint32_t>(is);
    std::string got(len, '\0');
    if (!is.read(got.data(), len)) throw ConfigError("truncated policy checkpoint");
    const auto rows = internal::ReadLe<uint32_t>(is);
    const auto cols = internal::ReadLe<uint32_t>(is);
    if (got != name || rows != t.rows() || cols != t.cols()) {
      throw ConfigError("checkpoint tensor '" + got + "' does not match '" + name + "'");
    }
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.cols(); ++j) {
        t(i, j) = static_cast<Scalar>(internal::ReadLe<double>(is));
      }
    }
  });
}

}  // namespace shardopt
