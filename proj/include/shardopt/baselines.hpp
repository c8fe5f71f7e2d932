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

// Non-learning searches over the same environment: random walk, simulated
// annealing and the Megatron-pinned exhaustive sweep of coarse degrees.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "shardopt/env.hpp"
#include "shardopt/errors.hpp"
#include "shardopt/policy.hpp"
#include "shardopt/report.hpp"

namespace shardopt {

namespace internal {

inline double SecondsSince(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline ActionVector UniformAction(const ActionSpaceSpec& space, Rng& rng) {
  ActionVector a(space.action_dim());
  for (size_t m = 0; m < a.size(); ++m) {
    std::uniform_int_distribution<int64_t> d(0, space.HeadSize(m) - 1);
    a[m] = d(rng);
  }
  return a;
}

}  // namespace internal

inline SearchReport RunRandomWalk(const Problem& problem, const RewardConfig& reward,
                                  int64_t budget, uint64_t seed,
                                  SearchEnv::Observer observer = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  SearchEnv env(problem, reward, budget);
  if (observer) env.set_observer(std::move(observer));
  Rng rng(seed);
  while (env.remaining() > 0) env.Step(internal::UniformAction(problem.space, rng));
  return MakeReport(env, "rw", seed, internal::SecondsSince(t0));
}

struct SaConfig {
  double t_initial = 100.0;
  int64_t neighbor_moves = 1;

  void Validate() const {
    if (!(t_initial > 0)) throw ConfigError("sa.t_initial must be > 0");
    if (neighbor_moves < 1) throw ConfigError("sa.neighbor_moves must be >= 1");
  }
};

// Temperature after `step` of `budget` proposals.
inline double SaTemperature(double t_initial, int64_t step, int64_t budget) {
  const double progress =
      budget > 1 ? static_cast<double>(step) / static_cast<double>(budget - 1) : 1.0;
  return t_initial * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

inline double SaAcceptProbability(double delta, double temperature) {
  if (delta >= 0) return 1.0;
  if (!(temperature > 0)) return 0.0;
  return std::exp(delta / temperature);
}

// Changes `moves` distinct coordinates, each to a different value.
inline ActionVector SaNeighbor(const ActionVector& a, const ActionSpaceSpec& space,
                               int64_t moves, Rng& rng) {
  ActionVector n = a;
  std::vector<size_t> coords(a.size());
  for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  std::shuffle(coords.begin(), coords.end(), rng);
  int64_t done = 0;
  for (size_t c : coords) {
    if (done == moves) break;
    const int64_t k = space.HeadSize(c);
    if (k < 2) continue;
    std::uniform_int_distribution<int64_t> d(0, k - 2);
    int64_t v = d(rng);
    if (v >= a[c]) ++v;
    n[c] = v;
    ++done;
  }
  return n;
}

inline SearchReport RunSimulatedAnnealing(const Problem& problem,
                                          const RewardConfig& reward,
                                          const SaConfig& cfg, int64_t budget,
                                          uint64_t seed,
                                          SearchEnv::Observer observer = {}) {
  cfg.Validate();
  const auto t0 = std::chrono::steady_clock::now();
  SearchEnv env(problem, reward, budget);
  if (observer) env.set_observer(std::move(observer));
  Rng rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  ActionVector current = internal::UniformAction(problem.space, rng);
  double current_r = env.Step(current).reward;
  for (int64_t step = 1; env.remaining() > 0; ++step) {
    ActionVector cand = SaNeighbor(current, problem.space, cfg.neighbor_moves, rng);
    const double r = env.Step(cand).reward;
    const double p =
        SaAcceptProbability(r - current_r, SaTemperature(cfg.t_initial, step, budget));
    if (p >= 1.0 || u01(rng) < p) {
      current = std::move(cand);
      current_r = r;
    }
  }
  return MakeReport(env, "sa", seed, internal::SecondsSince(t0));
}

inline int64_t CoarseGridSize(const ActionSpaceSpec& space) {
  int64_t n = 1;
  for (size_t m = 0; m < ActionSpaceSpec::kNumCoarse; ++m) n *= space.HeadSize(m);
  return n;
}

// Every coarse tuple with Megatron fine dims; the result is the best valid
// configuration by raw throughput.
inline SearchReport RunMegatronExhaustive(const Problem& problem,
                                          const RewardConfig& reward,
                                          SearchEnv::Observer observer = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& space = problem.space;
  SearchEnv env(problem, reward, CoarseGridSize(space));
  if (observer) env.set_observer(std::move(observer));
  Strategy s;
  s.op_dims = MegatronOpDims(space, problem.model);
  for (int64_t tp : space.tp_domain) {
    for (int64_t ep : space.ep_domain) {
      for (int64_t pp : space.pp_domain) {
        for (int64_t b : space.batch_domain) {
          s.tp = tp;
          s.ep = ep;
          s.pp = pp;
          s.batch = b;
          env.Step(EncodeStrategy(s, space));
        }
      }
    }
  }
  if (!env.BestValidByRaw()) {
    throw NoEvaluations("Megatron sweep found no valid configuration");
  }
  SearchReport rep = MakeReport(env, "exhaustive", 0, internal::SecondsSince(t0));
  // The comparator's answer is the raw argmax, not the reward argmax.
  rep.selected_action = rep.best_action;
  rep.selected_strategy = rep.best_strategy;
  rep.selected_raw = rep.best_raw;
  rep.selected_valid = true;
  for (const auto& e : env.log()) {
    if (e.action == rep.best_action) {
      rep.selected_reward = e.reward;
      break;
    }
  }
  return rep;
}

}  // namespace shardopt
