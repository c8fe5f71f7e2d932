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

#include "shardopt/policy.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "shardopt/config.hpp"
#include "shardopt/ppo.hpp"

namespace shardopt {
namespace {

PolicyConfig TinyPolicyConfig(int64_t d = 8) {
  const ExperimentConfig cfg = LoadConfig(SHARDOPT_CONFIG_DIR "/experiments/tiny.yaml");
  PolicyConfig p = PolicyConfig::ForSpace(cfg.problem.space, cfg.problem.model);
  p.model_dim = d;
  p.attention_heads = 2;
  p.ff_dim = d;
  return p;
}

// Every tensor drawn from U(-0.5, 0.5), gains around 1.
template <typename Scalar>
void Randomize(PolicyNet<Scalar>& net, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  net.params().Visit([&](const std::string& name, auto& t) {
    const bool gain = name == "ln1_g" || name == "ln2_g";
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = (gain ? 1.0 : 0.0) + u(rng);
  });
}

Mat RandomObs(int64_t rows, int64_t cols, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mat x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return x;
}

// L = Σ_m w_m log p_m(a_m) + c_H H + (V − 0.3)².
struct ToyLoss {
  ActionVector action;
  std::vector<double> w;
  double c_h = 0.37;

  double Value(const PolicyOutput& out) const {
    double l = 0.0;
    for (size_t m = 0; m < out.logits.size(); ++m) {
      l += w[m] * MaskedLogSoftmax(out.logits[m], out.masks[m])[action[m]];
    }
    return l + c_h * Entropy(out) + (out.value - 0.3) * (out.value - 0.3);
  }

  void Grad(const PolicyOutput& out, std::vector<RowVec>* dlogits, double* dvalue) const {
    dlogits->resize(out.logits.size());
    for (size_t m = 0; m < out.logits.size(); ++m) {
      RowVec dlogp, dent;
      double h;
      internal::HeadPartials(out.logits[m], out.masks[m], action[m], &dlogp, &dent, &h);
      (*dlogits)[m] = w[m] * dlogp + c_h * dent;
    }
    *dvalue = 2.0 * (out.value - 0.3);
  }
};

TEST(PolicyGradientTest, MatchesCentralDifferencesPerTensor) {
  PolicyNet<double> net(TinyPolicyConfig(8));
  Rng rng(1);
  net.Reinitialize(rng);
  Randomize(net, 2);
  const Mat x = RandomObs(3, net.config().obs_dim(), 3);

  ToyLoss loss;
  std::mt19937_64 r(4);
  for (size_t m = 0; m < net.config().head_sizes.size(); ++m) {
    const auto& mask = net.config().head_masks[m];
    int64_t a;
    do {
      a = static_cast<int64_t>(r() % net.config().head_sizes[m]);
    } while (!mask[a]);
    loss.action.push_back(a);
    loss.w.push_back(0.5 + 0.1 * static_cast<double>(m));
  }

  ForwardCache<double> cache;
  const PolicyOutput out = net.Forward(x, &cache);
  std::vector<RowVec> dlogits;
  double dvalue;
  loss.Grad(out, &dlogits, &dvalue);
  PolicyParams<double> grads = net.params().ZerosLike();
  net.Backward(cache, dlogits, dvalue, &grads);

  const double h = 1e-3;
  std::map<std::string, Mat*> analytic;
  grads.Visit([&](const std::string& name, Mat& t) { analytic[name] = &t; });
  int tensors = 0;
  net.params().Visit([&](const std::string& name, Mat& t) {
    Mat fd(t.rows(), t.cols());
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double keep = t.data()[i];
      t.data()[i] = keep + h;
      const double lp = loss.Value(net.Forward(x));
      t.data()[i] = keep - h;
      const double lm = loss.Value(net.Forward(x));
      t.data()[i] = keep;
      fd.data()[i] = (lp - lm) / (2 * h);
    }
    const Mat& ga = *analytic.at(name);
    // bk has an identically zero gradient (softmax shift invariance).
    const double scale = std::max({ga.norm(), fd.norm(), 1e-6});
    const double rel = (ga - fd).norm() / scale;
    EXPECT_LE(rel, 1e-4) << name << " |g|=" << ga.norm();
    ++tensors;
  });
  EXPECT_EQ(tensors, 26 + 2 * static_cast<int>(net.config().head_sizes.size()) - 2);
}

TEST(PolicyTest, UniformAtInitWithZeroObservation) {
  PolicyNet<double> net(TinyPolicyConfig(16));
  Rng rng(7);
  net.Reinitialize(rng);
  const PolicyOutput out = net.Forward(Mat::Zero(3, net.config().obs_dim()));
  for (size_t m = 0; m < out.logits.size(); ++m) {
    EXPECT_EQ(out.logits[m].maxCoeff(), 0.0);
    EXPECT_EQ(out.logits[m].minCoeff(), 0.0);
  }
  EXPECT_EQ(out.value, 0.0);
  const auto cs = Confidence(out);
  for (size_t m = 0; m < cs.size(); ++m) {
    const auto& mask = net.config().head_masks[m];
    const double allowed = static_cast<double>(std::count(mask.begin(), mask.end(), 1));
    EXPECT_DOUBLE_EQ(cs[m], 1.0 / allowed);
  }
}

TEST(PolicyTest, SoftmaxSumsToOneOnRandomParams) {
  PolicyNet<double> net(TinyPolicyConfig(16));
  Rng rng(7);
  net.Reinitialize(rng);
  for (uint64_t s = 0; s < 20; ++s) {
    Randomize(net, 100 + s);
    const PolicyOutput out = net.Forward(RandomObs(3, net.config().obs_dim(), s));
    for (size_t m = 0; m < out.logits.size(); ++m) {
      EXPECT_NEAR(MaskedSoftmax(out.logits[m], out.masks[m]).sum(), 1.0, 1e-6);
      EXPECT_TRUE(out.logits[m].allFinite());
    }
  }
}

TEST(PolicyTest, RowPermutationInvariance) {
  PolicyNet<double> net(TinyPolicyConfig(16));
  Rng rng(7);
  net.Reinitialize(rng);
  Randomize(net, 5);
  const Mat x = RandomObs(3, net.config().obs_dim(), 6);
  Mat y(3, x.cols());
  y.row(0) = x.row(2);
  y.row(1) = x.row(0);
  y.row(2) = x.row(1);
  const PolicyOutput a = net.Forward(x);
  const PolicyOutput b = net.Forward(y);
  for (size_t m = 0; m < a.logits.size(); ++m) {
    EXPECT_LE((a.logits[m] - b.logits[m]).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_NEAR(a.value, b.value, 1e-12);
}

TEST(PolicyTest, NonFiniteParamsSurface) {
  PolicyNet<double> net(TinyPolicyConfig(8));
  Rng rng(7);
  net.Reinitialize(rng);
  net.params().embed_w(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(net.Forward(RandomObs(3, net.config().obs_dim(), 1)), NumericalError);
  EXPECT_FALSE(net.params().AllFinite());
}

PolicyOutput FixedOutput(std::vector<RowVec> logits) {
  PolicyOutput out;
  for (const auto& l : logits) out.masks.emplace_back(static_cast<size_t>(l.size()), 1);
  out.logits = std::move(logits);
  return out;
}

TEST(CategoricalTest, ConfidenceExamples) {
  RowVec two(2);
  two << 2.0, 0.0;
  RowVec uni = RowVec::Zero(3);
  RowVec hot(3);
  hot << -20.0, 20.0, -20.0;
  const auto cs = Confidence(FixedOutput({two, uni, hot}));
  EXPECT_NEAR(cs[0], std::exp(2.0) / (std::exp(2.0) + 1.0), 1e-15);
  EXPECT_NEAR(cs[0], 0.8808, 1e-4);
  EXPECT_DOUBLE_EQ(cs[1], 1.0 / 3.0);
  EXPECT_NEAR(cs[2], 1.0, 1e-15);
  for (double c : cs) {
    EXPECT_GT(c, 0.0);
    EXPECT_LE(c, 1.0);
  }
}

TEST(CategoricalTest, SaturatedLogitsSampleDeterministically) {
  RowVec hot(3);
  hot << -20.0, 20.0, -20.0;
  const PolicyOutput out = FixedOutput({hot, hot});
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const SampledAction a = Sample(out, rng);
    EXPECT_EQ(a.action, (ActionVector{1, 1}));
    EXPECT_LT(a.entropy, 1e-14);
  }
}

TEST(CategoricalTest, UniformFrequencies) {
  const PolicyOutput out = FixedOutput({RowVec::Zero(3)});
  Rng rng(11);
  std::array<int, 3> counts{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[Sample(out, rng).action[0]];
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / n, 1.0 / 3.0, 0.02);
}

TEST(CategoricalTest, LogProbMatchesLookup) {
  RowVec l0(3), l1(2);
  l0 << 0.3, -1.2, 2.0;
  l1 << 0.5, 0.1;
  const PolicyOutput out = FixedOutput({l0, l1});
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const SampledAction a = Sample(out, rng);
    const double expect = MaskedLogSoftmax(l0, out.masks[0])[a.action[0]] +
                          MaskedLogSoftmax(l1, out.masks[1])[a.action[1]];
    EXPECT_DOUBLE_EQ(a.logprob, expect);
    EXPECT_DOUBLE_EQ(a.logprob, LogProb(out, a.action));
  }
}

TEST(CategoricalTest, MaskedChoicesNeverSampled) {
  PolicyOutput out = FixedOutput({RowVec::Zero(3)});
  out.logits[0] << 5.0, 9.0, 9.0;
  out.masks[0] = {1, 0, 0};
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(Sample(out, rng).action[0], 0);
  EXPECT_EQ(Confidence(out)[0], 1.0);
  EXPECT_EQ(HeadEntropy(out.logits[0], out.masks[0]), 0.0);
}

TEST(PolicyConfigTest, UnshardedOnlyHeadsAreMasked) {
  ActionSpaceSpec space;
  ModelSpec m;
  const PolicyConfig cfg = PolicyConfig::ForSpace(space, m);
  for (size_t l = 0; l < space.ops.size(); ++l) {
    const auto& mask = cfg.head_masks[ActionSpaceSpec::kNumCoarse + l];
    const bool only = space.ops[l] == OpId::kRouterGate ||
                      space.ops[l] == OpId::kFinalNorm || space.ops[l] == OpId::kKvCacheIo;
    const std::vector<uint8_t> expect =
        only ? std::vector<uint8_t>{1, 0, 0} : std::vector<uint8_t>{1, 1, 1};
    EXPECT_EQ(mask, expect);
  }
}

TEST(EliteBufferTest, InsertionRules) {
  EliteBuffer buf(3);
  EXPECT_TRUE(buf.Update({0}, 5));
  EXPECT_TRUE(buf.Update({1}, 9));
  EXPECT_TRUE(buf.Update({2}, 7));
  ASSERT_EQ(buf.size(), 3u);
  EXPECT_EQ(buf.entries()[0].reward, 9);
  EXPECT_EQ(buf.entries()[1].reward, 7);
  EXPECT_EQ(buf.entries()[2].reward, 5);
  EXPECT_FALSE(buf.Update({3}, 4));
  EXPECT_EQ(buf.min_reward(), 5);
  EXPECT_TRUE(buf.Update({4}, 6));
  EXPECT_EQ(buf.entries()[2].reward, 6);
  EXPECT_EQ(buf.entries()[2].action, ActionVector{4});
  EXPECT_FALSE(buf.Update({1}, 100));  // duplicate
  EXPECT_EQ(buf.size(), 3u);
}

TEST(EliteBufferTest, MinRewardNonDecreasingWhenFull) {
  EliteBuffer buf(4);
  std::mt19937_64 rng(3);
  double last_min = -1e300;
  for (int i = 0; i < 1000; ++i) {
    buf.Update({static_cast<int64_t>(rng() % 50)},
               std::uniform_real_distribution<double>(0, 100)(rng));
    if (buf.size() == buf.capacity()) {
      EXPECT_GE(buf.min_reward(), last_min);
      last_min = buf.min_reward();
    }
    for (size_t k = 1; k < buf.size(); ++k) {
      EXPECT_GE(buf.entries()[k - 1].reward, buf.entries()[k].reward);
    }
  }
}

TEST(ObservationTest, PaddingAndNormalization) {
  const std::vector<int64_t> sizes = {3, 5, 1};
  EliteBuffer buf(3);
  EXPECT_EQ(BuildObservation(buf, sizes), Mat::Zero(3, 3));
  buf.Update({0, 0, 0}, 1.0);
  EXPECT_EQ(BuildObservation(buf, sizes), Mat::Zero(3, 3));
  buf.Update({2, 1, 0}, 5.0);
  buf.Update({1, 4, 0}, 3.0);
  const Mat x = BuildObservation(buf, sizes);
  EXPECT_DOUBLE_EQ(x(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(x(0, 1), 0.25);
  EXPECT_DOUBLE_EQ(x(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(x(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(x(2, 0), 0.0);
}

TEST(CheckpointTest, RoundTripAndMismatch) {
  PolicyNet<double> net(TinyPolicyConfig(8));
  Rng rng(7);
  net.Reinitialize(rng);
  Randomize(net, 8);
  std::stringstream ss;
  SaveCheckpoint(net.params(), ss);
  PolicyNet<double> other(TinyPolicyConfig(8));
  Rng rng2(99);
  other.Reinitialize(rng2);
  LoadCheckpoint(ss, &other.params());
  std::vector<Mat*> a = net.params().Tensors(), b = other.params().Tensors();
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);

  std::stringstream again;
  SaveCheckpoint(net.params(), again);
  PolicyNet<double> wide(TinyPolicyConfig(16));
  wide.Reinitialize(rng2);
  EXPECT_THROW(LoadCheckpoint(again, &wide.params()), ConfigError);
  std::stringstream junk("not a checkpoint at all");
  EXPECT_THROW(LoadCheckpoint(junk, &other.params()), ConfigError);
}

TEST(CheckpointTest, FloatAndDoubleShareTheFormat) {
  PolicyNet<float> f(TinyPolicyConfig(8));
  Rng rng(7);
  f.Reinitialize(rng);
  std::stringstream ss;
  SaveCheckpoint(f.params(), ss);
  PolicyNet<double> d(TinyPolicyConfig(8));
  d.Reinitialize(rng);
  LoadCheckpoint(ss, &d.params());
  EXPECT_EQ(d.params().embed_w(1, 2), static_cast<double>(f.params().embed_w(1, 2)));
}

TEST(PolicyTest, FloatAndDoubleAgreeAtInit) {
  PolicyNet<float> f(TinyPolicyConfig(32));
  PolicyNet<double> d(TinyPolicyConfig(32));
  Rng r1(5), r2(5);
  f.Reinitialize(r1);
  d.Reinitialize(r2);
  const Mat x = RandomObs(3, f.config().obs_dim(), 2);
  EXPECT_NEAR(f.Forward(x).pooled.sum(), d.Forward(x).pooled.sum(), 1e-4);
}

}  // namespace
}  // namespace shardopt
