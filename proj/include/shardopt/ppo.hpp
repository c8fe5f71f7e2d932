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

// PPO search loop over one-step episodes.
//
// Each agent alternates collect / update until its allowance is spent or,
// after an update, every head's confidence on the current elite
// observation reaches tau. The budget is split into equal chunks; a chunk
// that exits early hands its leftover evals to the next one, and the last
// chunk keeps restarting until the whole budget is used. Restarts draw
// fresh parameters and a fresh optimizer but keep b and the elite buffer.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "shardopt/env.hpp"
#include "shardopt/errors.hpp"
#include "shardopt/policy.hpp"
#include "shardopt/report.hpp"

namespace shardopt {

struct PpoConfig {
  int64_t n_steps = 2;  // env steps per rollout
  int64_t epochs_per_update = 2;
  double lr_initial = 1e-3;
  double clip_eps = 0.2;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-5;
  double tau = 0.95;
  int64_t chunks = 5;
  int64_t budget = 4000;
  int64_t elite_capacity = 3;
  // Rewards are divided by this before entering the loss.
  double reward_scale = 100.0;
  bool normalize_advantage = false;
  int64_t model_dim = 256;
  int64_t attention_heads = 4;
  int64_t ff_dim = 256;

  void Validate() const {
    if (n_steps < 1) throw ConfigError("ppo.n_steps must be >= 1");
    if (epochs_per_update < 1) throw ConfigError("ppo.epochs_per_update must be >= 1");
    if (!(lr_initial > 0)) throw ConfigError("ppo.lr_initial must be > 0");
    if (!(clip_eps > 0)) throw ConfigError("ppo.clip_eps must be > 0");
    if (!(entropy_coef >= 0)) throw ConfigError("ppo.entropy_coef must be >= 0");
    if (!(value_coef >= 0)) throw ConfigError("ppo.value_coef must be >= 0");
    if (!(max_grad_norm > 0)) throw ConfigError("ppo.max_grad_norm must be > 0");
    if (!(tau > 0)) throw ConfigError("ppo.tau must be > 0");
    if (chunks < 1) throw ConfigError("ppo.chunks must be >= 1");
    if (budget < 1) throw ConfigError("ppo.budget must be >= 1");
    if (budget % chunks != 0) throw ConfigError("ppo.chunks must divide ppo.budget");
    if (elite_capacity < 1) throw ConfigError("ppo.elite_capacity must be >= 1");
    if (!(reward_scale > 0)) throw ConfigError("ppo.reward_scale must be > 0");
    if (model_dim < 1 || attention_heads < 1 || ff_dim < 1 ||
        model_dim % attention_heads != 0) {
      throw ConfigError("ppo network dims must be positive and model_dim "
                        "divisible by attention_heads");
    }
  }
};

// lr at `progress` ∈ [0, 1] through an agent's allowance.
inline double CosineLr(double lr0, double progress) {
  progress = std::clamp(progress, 0.0, 1.0);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename Scalar>
class Adam {
 public:
  using Params = PolicyParams<Scalar>;
  using Mat = typename Params::Mat;

  Adam(const Params& like, double beta1, double beta2, double eps)
      : m_(like.ZerosLike()), v_(like.ZerosLike()), b1_(beta1), b2_(beta2), eps_(eps) {}

  void Step(Params* params, Params& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const auto inv_sqrt_c2 = static_cast<Scalar>(
        1.0 / std::sqrt(1.0 - std::pow(b2_, static_cast<double>(t_))));
    const auto step = static_cast<Scalar>(lr / c1);
    const auto b1 = static_cast<Scalar>(b1_), b2 = static_cast<Scalar>(b2_);
    const auto eps = static_cast<Scalar>(eps_);
    auto p = params->Tensors();
    auto g = grads.Tensors();
    auto m = m_.Tensors();
    auto v = v_.Tensors();
    for (size_t i = 0; i < p.size(); ++i) {
      auto pa = p[i]->array();
      auto ma = m[i]->array();
      auto va = v[i]->array();
      const auto ga = g[i]->array();
      ma = b1 * ma + (Scalar(1) - b1) * ga;
      va = b2 * va + (Scalar(1) - b2) * ga.square();
      pa -= step * ma / (va.sqrt() * inv_sqrt_c2 + eps);
    }
  }

  int64_t steps() const { return t_; }

 private:
  Params m_, v_;
  double b1_, b2_, eps_;
  int64_t t_ = 0;
};

// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
// norm before clipping.
template <typename Scalar>
double ClipGradNorm(PolicyParams<Scalar>* grads, double max_norm) {
  double sq = 0.0;
  for (auto* t : grads->Tensors()) sq += static_cast<double>(t->squaredNorm());
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const auto s = static_cast<Scalar>(max_norm / (norm + 1e-6));
    for (auto* t : grads->Tensors()) *t *= s;
  }
  return norm;
}

struct RolloutSample {
  Mat obs;
  ActionVector action;
  double logprob_old = 0.0;
  double value_old = 0.0;
  double reward = 0.0;
  bool valid = false;
};

using RolloutBatch = std::vector<RolloutSample>;

template <typename Scalar>
RolloutBatch Collect(SearchEnv& env, const PolicyNet<Scalar>& net, EliteBuffer& elites,
                            int64_t n, Rng& rng) {
  RolloutBatch batch;
  const auto& sizes = net.config().head_sizes;
  for (int64_t i = 0; i < n; ++i) {
    RolloutSample s;
    s.obs = BuildObservation(elites, sizes);
    PolicyOutput out = net.Forward(s.obs);
    SampledAction a = Sample(out, rng);
    StepOutcome o = env.Step(a.action);
    s.action = std::move(a.action);
    s.logprob_old = a.logprob;
    s.value_old = out.value;
    s.reward = o.reward;
    s.valid = o.valid;
    if (o.valid) elites.Update(s.action, o.reward);
    batch.push_back(std::move(s));
  }
  return batch;
}

struct LossReport {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
};

namespace internal {

// d log p(a_m) / d logits_m = onehot(a_m) − p_m over allowed choices.
// d H_m / d logits_m[j] = −p_j (log p_j + H_m).
inline void HeadPartials(const RowVec& logits, const std::vector<uint8_t>& mask,
                         int64_t action, RowVec* dlogp, RowVec* dent, double* ent) {
  const RowVec p = MaskedSoftmax(logits, mask);
  const RowVec lp = MaskedLogSoftmax(logits, mask);
  double h = 0.0;
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    if (mask[j] && p[j] > 0) h -= p[j] * lp[j];
  }
  *ent = h;
  *dlogp = -p;
  (*dlogp)[action] += 1.0;
  dent->setZero(p.size());
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    if (mask[j] && p[j] > 0) (*dent)[j] = -p[j] * (lp[j] + h);
  }
}

}  // namespace internal

// Loss for one sample set, gradient accumulated into `grads` (which must be
// zeroed by the caller). Returns the loss components averaged over `batch`.
template <typename Scalar>
LossReport PpoLossAndGrad(const PolicyNet<Scalar>& net, const RolloutBatch& batch,
                          const std::vector<double>& advantages,
                          const std::vector<double>& returns, const PpoConfig& cfg,
                          PolicyParams<Scalar>* grads) {
  LossReport rep;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    const RolloutSample& s = batch[i];
    ForwardCache<Scalar> cache;
    PolicyOutput out = net.Forward(s.obs, &cache);
    const size_t heads = out.logits.size();
    std::vector<RowVec> dlogp(heads), dent(heads);
    double logp = 0.0, ent = 0.0;
    for (size_t m = 0; m < heads; ++m) {
      double h = 0.0;
      internal::HeadPartials(out.logits[m], out.masks[m], s.action[m], &dlogp[m],
                             &dent[m], &h);
      logp += MaskedLogSoftmax(out.logits[m], out.masks[m])[s.action[m]];
      ent += h;
    }
    const double adv = advantages[i];
    const double ratio = std::exp(logp - s.logprob_old);
    const double clipped = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    const double unclipped_obj = ratio * adv;
    const double clipped_obj = clipped * adv;
    // The gradient flows through ratio only where the unclipped term is
    // the minimum.
    const bool active = unclipped_obj <= clipped_obj;
    if (ratio != clipped) rep.clip_fraction += inv_n;
    rep.policy_loss -= std::min(unclipped_obj, clipped_obj) * inv_n;
    const double dv = out.value - returns[i];
    rep.value_loss += dv * dv * inv_n;
    rep.entropy += ent * inv_n;

    const double g_logp = active ? -ratio * adv * inv_n : 0.0;
    const double g_ent = -cfg.entropy_coef * inv_n;
    std::vector<RowVec> dlogits(heads);
    for (size_t m = 0; m < heads; ++m) {
      dlogits[m] = g_logp * dlogp[m] + g_ent * dent[m];
    }
    const double dvalue = cfg.value_coef * 2.0 * dv * inv_n;
    net.Backward(cache, dlogits, dvalue, grads);
  }
  const double total =
      rep.policy_loss + cfg.value_coef * rep.value_loss - cfg.entropy_coef * rep.entropy;
  if (!std::isfinite(total)) {
    throw NumericalError("non-finite PPO loss (policy " + std::to_string(rep.policy_loss) +
                         ", value " + std::to_string(rep.value_loss) + ")");
  }
  return rep;
}

// Advantages are r − V(X) on the scaled rewards; episodes have one step so
// there is no bootstrapping or discount.
template <typename Scalar>
LossReport PpoUpdate(PolicyNet<Scalar>& net, Adam<Scalar>& adam, const RolloutBatch& batch,
                     const PpoConfig& cfg, double lr) {
  std::vector<double> returns(batch.size()), adv(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    returns[i] = batch[i].reward / cfg.reward_scale;
    adv[i] = returns[i] - batch[i].value_old;
  }
  if (cfg.normalize_advantage && adv.size() > 1) {
    double mean = 0.0;
    for (double a : adv) mean += a;
    mean /= static_cast<double>(adv.size());
    double var = 0.0;
    for (double a : adv) var += (a - mean) * (a - mean);
    // Sample standard deviation, as torch.std computes it.
    const double sd = std::sqrt(var / static_cast<double>(adv.size() - 1));
    for (double& a : adv) a = (a - mean) / (sd + 1e-8);
  }
  LossReport last;
  PolicyParams<Scalar> grads = net.params().ZerosLike();
  for (int64_t e = 0; e < cfg.epochs_per_update; ++e) {
    if (e > 0) grads.SetZero();
    last = PpoLossAndGrad(net, batch, adv, returns, cfg, &grads);
    last.grad_norm = ClipGradNorm(&grads, cfg.max_grad_norm);
    adam.Step(&net.params(), grads, lr);
    if (!net.params().AllFinite()) {
      throw NumericalError("non-finite policy parameters after update");
    }
  }
  return last;
}

// True iff every head is at least tau confident. Heads with a single
// allowed choice have CS = 1.
inline bool AllHeadsConfident(const PolicyOutput& out, double tau) {
  for (double cs : Confidence(out)) {
    if (cs < tau) return false;
  }
  return true;
}

struct ChunkOutcome {
  bool early_exit = false;
  int64_t evals = 0;
  int64_t updates = 0;
};

template <typename Scalar>
ChunkOutcome RunChunk(SearchEnv& env, PolicyNet<Scalar>& net, EliteBuffer& elites,
                      int64_t allowance, const PpoConfig& cfg, Rng& rng) {
  Adam<Scalar> adam(net.params(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  ChunkOutcome out;
  while (out.evals < allowance && env.remaining() > 0) {
    const double progress =
        static_cast<double>(out.evals) / static_cast<double>(allowance);
    const int64_t n =
        std::min({cfg.n_steps, allowance - out.evals, env.remaining()});
    RolloutBatch batch = Collect(env, net, elites, n, rng);
    out.evals += n;
    PpoUpdate(net, adam, batch, cfg, CosineLr(cfg.lr_initial, progress));
    ++out.updates;
    if (out.evals < allowance &&
        AllHeadsConfident(net.Forward(BuildObservation(elites, net.config().head_sizes)),
                          cfg.tau)) {
      out.early_exit = true;
      break;
    }
  }
  return out;
}

// State handed to a fresh agent: the carried-over search state and a
// checksum of its newly initialized parameters.
struct AgentStart {
  int agent = 0;
  int64_t start_index = 0;
  double best_raw = 0.0;
  const EliteBuffer* elites = nullptr;
  double param_checksum = 0.0;
};

template <typename Scalar>
double ParamChecksum(const PolicyParams<Scalar>& p) {
  double sum = 0.0;
  double k = 1.0;
  p.Visit([&](const std::string&, const auto& t) {
    sum += k * static_cast<double>(t.sum());
    k += 1.0;
  });
  return sum;
}

struct PpoRunOptions {
  SearchEnv::Observer observer;
  // Called once per agent, after initialization and before sampling.
  std::function<void(const AgentStart&)> on_agent_start;
  // Called after each agent finishes.
  std::function<void(const RestartMarker&)> on_restart;
};

// The network runs in float: updates are bound by memory traffic over the
// parameters, and float halves it.
template <typename Scalar = float>
SearchReport RunPpoSearch(const Problem& problem, const RewardConfig& reward,
                          const PpoConfig& cfg, uint64_t seed,
                          const PpoRunOptions& opts = {}) {
  cfg.Validate();
  const auto t0 = std::chrono::steady_clock::now();
  SearchEnv env(problem, reward, cfg.budget);
  if (opts.observer) env.set_observer(opts.observer);
  std::seed_seq init_seq{seed, uint64_t{0x1D1A}};
  std::seed_seq sample_seq{seed, uint64_t{0x5A3B}};
  Rng init_rng(init_seq);
  Rng sample_rng(sample_seq);

  PolicyConfig pcfg = PolicyConfig::ForSpace(problem.space, problem.model);
  pcfg.model_dim = cfg.model_dim;
  pcfg.attention_heads = cfg.attention_heads;
  pcfg.ff_dim = cfg.ff_dim;
  PolicyNet<Scalar> net(pcfg);
  EliteBuffer elites(static_cast<size_t>(cfg.elite_capacity));

  const int64_t base = cfg.budget / cfg.chunks;
  std::vector<RestartMarker> restarts;
  int64_t carry = 0;
  int agent = 0;
  for (int64_t c = 0; env.remaining() > 0; ++c) {
    const bool last = c >= cfg.chunks - 1;
    const int64_t allowance = last ? env.remaining() : base + carry;
    net.Reinitialize(init_rng);
    env.set_chunk(agent);
    RestartMarker mark;
    mark.chunk = agent;
    mark.start_index = env.evals_used();
    mark.allowance = allowance;
    if (opts.on_agent_start) {
      opts.on_agent_start({agent, env.evals_used(), env.best_raw(), &elites,
                           ParamChecksum(net.params())});
    }
    ChunkOutcome o = RunChunk(env, net, elites, allowance, cfg, sample_rng);
    mark.evals = o.evals;
    mark.early_exit = o.early_exit;
    restarts.push_back(mark);
    if (opts.on_restart) opts.on_restart(mark);
    carry = allowance - o.evals;
    ++agent;
  }
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  SearchReport rep = MakeReport(env, "ppo", seed, wall);
  rep.restarts = std::move(restarts);
  return rep;
}

}  // namespace shardopt
