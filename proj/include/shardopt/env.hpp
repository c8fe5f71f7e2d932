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

// One-step decision environment over the simulator.
//
// reward = alpha·raw + beta·(raw − b) for valid strategies, where b is the
// best valid raw throughput seen before this step; invalid strategies get
// invalid_penalty. Every call consumes one unit of the budget.

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "shardopt/errors.hpp"
#include "shardopt/roofline.hpp"
#include "shardopt/strategy.hpp"

namespace shardopt {

struct RewardConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double invalid_penalty = -100.0;

  void Validate() const {
    if (!(alpha > 0)) throw ConfigError("reward.alpha must be > 0");
    if (!(beta > 0)) throw ConfigError("reward.beta must be > 0");
    if (!(invalid_penalty < 0)) {
      throw ConfigError("reward.invalid_penalty must be < 0");
    }
  }
};

struct EvalRecord {
  int64_t index = 0;  // 0-based position in the run
  ActionVector action;
  double raw = 0.0;
  double reward = 0.0;
  bool valid = false;
  InvalidReason reason = InvalidReason::kNone;
  double best_after = 0.0;  // b after this step
  int chunk = 0;            // agent restart index (PPO), 0 elsewhere
};

struct StepOutcome {
  double reward = 0.0;
  double raw = 0.0;
  bool valid = false;
  InvalidReason reason = InvalidReason::kNone;
};

struct Selection {
  ActionVector action;
  double reward = 0.0;
  double raw = 0.0;
  bool valid = false;
  int64_t index = 0;
};

// Immutable description of what is being optimized.
struct Problem {
  ModelSpec model;
  HardwareSpec hw;
  ActionSpaceSpec space;
  Workload workload;

  SimResult Evaluate(const Strategy& s) const {
    SimRequest req{&model, &hw, &space, s, workload};
    return Simulate(req);
  }
};

class SearchEnv {
 public:
  using Observer = std::function<void(const EvalRecord&)>;

  SearchEnv(const Problem& problem, RewardConfig reward, int64_t budget)
      : problem_(problem), reward_(reward), budget_(budget) {
    reward_.Validate();
    if (budget < 1) throw ConfigError("budget must be >= 1");
  }

  // Called after each step with the appended record (e.g. a log writer).
  void set_observer(Observer obs) { observer_ = std::move(obs); }
  void set_chunk(int chunk) { chunk_ = chunk; }

  StepOutcome Step(const ActionVector& action) {
    if (evals_used_ >= budget_) throw BudgetExhausted();
    Strategy s = DecodeStrategy(action, problem_.space);
    SimResult sim = problem_.Evaluate(s);
    StepOutcome out;
    out.valid = sim.valid;
    out.reason = sim.invalid_reason;
    out.raw = sim.throughput;
    if (sim.valid) {
      out.reward = RewardFor(out.raw, best_raw_);
      if (out.raw > best_raw_) best_raw_ = out.raw;
    } else {
      out.reward = reward_.invalid_penalty;
    }
    EvalRecord rec;
    rec.index = evals_used_;
    rec.action = action;
    rec.raw = out.raw;
    rec.reward = out.reward;
    rec.valid = out.valid;
    rec.reason = out.reason;
    rec.best_after = best_raw_;
    rec.chunk = chunk_;
    ++evals_used_;
    log_.push_back(rec);
    if (observer_) observer_(log_.back());
    return out;
  }

  double RewardFor(double raw, double best) const {
    return reward_.alpha * raw + reward_.beta * (raw - best);
  }

  // Highest-reward entry; earliest wins ties.
  Selection FinalSelection() const {
    if (log_.empty()) throw NoEvaluations();
    const EvalRecord* best = &log_.front();
    for (const auto& r : log_) {
      if (r.reward > best->reward) best = &r;
    }
    return {best->action, best->reward, best->raw, best->valid, best->index};
  }

  // Highest-raw valid entry (earliest on ties); nullptr if none is valid.
  const EvalRecord* BestValidByRaw() const {
    const EvalRecord* best = nullptr;
    for (const auto& r : log_) {
      if (r.valid && (!best || r.raw > best->raw)) best = &r;
    }
    return best;
  }

  const Problem& problem() const { return problem_; }
  const RewardConfig& reward_config() const { return reward_; }
  double best_raw() const { return best_raw_; }
  int64_t evals_used() const { return evals_used_; }
  int64_t budget() const { return budget_; }
  int64_t remaining() const { return budget_ - evals_used_; }
  const std::vector<EvalRecord>& log() const { return log_; }

 private:
  const Problem& problem_;
  RewardConfig reward_;
  int64_t budget_;
  int64_t evals_used_ = 0;
  double best_raw_ = 0.0;
  int chunk_ = 0;
  std::vector<EvalRecord> log_;
  Observer observer_;
};

}  // namespace shardopt
