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

#include "shardopt/env.hpp"

#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "shardopt/config.hpp"
#include "shardopt/errors.hpp"
#include "shardopt/report.hpp"

namespace shardopt {
namespace {

const ExperimentConfig& Tiny() {
  static const ExperimentConfig cfg = LoadConfig(SHARDOPT_CONFIG_DIR "/experiments/tiny.yaml");
  return cfg;
}

ActionVector RandomAction(const ActionSpaceSpec& space, std::mt19937_64& rng) {
  ActionVector v(space.action_dim());
  for (size_t m = 0; m < v.size(); ++m) v[m] = static_cast<int64_t>(rng() % space.HeadSize(m));
  return v;
}

// Finds one valid and one invalid action on the tiny instance.
std::pair<ActionVector, ActionVector> ValidAndInvalid() {
  std::mt19937_64 rng(1);
  ActionVector valid, invalid;
  while (valid.empty() || invalid.empty()) {
    ActionVector a = RandomAction(Tiny().problem.space, rng);
    const bool ok = Tiny().problem.Evaluate(DecodeStrategy(a, Tiny().problem.space)).valid;
    if (ok && valid.empty()) valid = a;
    if (!ok && invalid.empty()) invalid = a;
  }
  return {valid, invalid};
}

TEST(RewardTest, SubstitutionExamples) {
  SearchEnv env(Tiny().problem, RewardConfig{1.0, 1.0, -100.0}, 10);
  EXPECT_DOUBLE_EQ(env.RewardFor(10.0, 8.0), 12.0);
  EXPECT_DOUBLE_EQ(env.RewardFor(5.0, 8.0), 2.0);
  SearchEnv scaled(Tiny().problem, RewardConfig{2.0, 0.5, -1.0}, 10);
  EXPECT_DOUBLE_EQ(scaled.RewardFor(10.0, 8.0), 21.0);
}

TEST(RewardTest, ConfigValidation) {
  EXPECT_THROW((RewardConfig{0.0, 1.0, -1.0}.Validate()), ConfigError);
  EXPECT_THROW((RewardConfig{1.0, -1.0, -1.0}.Validate()), ConfigError);
  EXPECT_THROW((RewardConfig{1.0, 1.0, 0.0}.Validate()), ConfigError);
  EXPECT_THROW(SearchEnv(Tiny().problem, RewardConfig{}, 0), ConfigError);
}

TEST(RewardTest, StepUsesExclusiveBest) {
  auto [valid, invalid] = ValidAndInvalid();
  SearchEnv env(Tiny().problem, RewardConfig{1.0, 1.0, -100.0}, 10);
  const StepOutcome first = env.Step(valid);
  ASSERT_TRUE(first.valid);
  // b = 0 before the first valid sample.
  EXPECT_DOUBLE_EQ(first.reward, 2.0 * first.raw);
  EXPECT_EQ(env.best_raw(), first.raw);
  const StepOutcome again = env.Step(valid);
  EXPECT_DOUBLE_EQ(again.reward, again.raw);  // raw - b = 0
  EXPECT_EQ(env.log()[1].best_after, first.raw);
}

TEST(RewardTest, InvalidPathConsumesBudget) {
  auto [valid, invalid] = ValidAndInvalid();
  SearchEnv env(Tiny().problem, RewardConfig{1.0, 1.0, -123.0}, 3);
  env.Step(valid);
  const double b = env.best_raw();
  const StepOutcome o = env.Step(invalid);
  EXPECT_FALSE(o.valid);
  EXPECT_EQ(o.reward, -123.0);
  EXPECT_EQ(o.raw, 0.0);
  EXPECT_NE(o.reason, InvalidReason::kNone);
  EXPECT_EQ(env.best_raw(), b);
  EXPECT_EQ(env.evals_used(), 2);
  EXPECT_EQ(env.remaining(), 1);
  env.Step(invalid);
  EXPECT_EQ(env.evals_used(), 3);
  EXPECT_THROW(env.Step(valid), BudgetExhausted);
  EXPECT_EQ(env.log().size(), 3u);
}

TEST(RewardTest, BestIsNonDecreasingAndMatchesLog) {
  SearchEnv env(Tiny().problem, RewardConfig{1.0, 1.0, -100.0}, 500);
  std::mt19937_64 rng(9);
  double prev = 0.0;
  double max_valid = 0.0;
  for (int i = 0; i < 500; ++i) {
    const double b_before = env.best_raw();
    const StepOutcome o = env.Step(RandomAction(Tiny().problem.space, rng));
    if (o.valid) {
      EXPECT_DOUBLE_EQ(o.reward, o.raw + (o.raw - b_before));
      max_valid = std::max(max_valid, o.raw);
    }
    EXPECT_GE(env.best_raw(), prev);
    EXPECT_EQ(env.best_raw(), max_valid);
    prev = env.best_raw();
  }
  EXPECT_EQ(env.evals_used(), 500);
}

TEST(RewardTest, RewardStrictlyIncreasingInRawForFixedBest) {
  SearchEnv env(Tiny().problem, RewardConfig{1.5, 0.7, -100.0}, 1);
  double last = -1e300;
  for (double raw = 0.0; raw < 100.0; raw += 0.5) {
    const double r = env.RewardFor(raw, 42.0);
    EXPECT_GT(r, last);
    last = r;
  }
}

TEST(SelectionTest, ArgmaxByRewardEarliestWins) {
  auto [valid, invalid] = ValidAndInvalid();
  SearchEnv empty(Tiny().problem, RewardConfig{}, 5);
  EXPECT_THROW(empty.FinalSelection(), NoEvaluations);

  SearchEnv env(Tiny().problem, RewardConfig{}, 5);
  env.Step(invalid);
  env.Step(valid);  // reward 2·raw
  env.Step(valid);  // reward raw
  const Selection sel = env.FinalSelection();
  EXPECT_EQ(sel.index, 1);
  EXPECT_TRUE(sel.valid);

  SearchEnv bad(Tiny().problem, RewardConfig{}, 5);
  bad.Step(invalid);
  bad.Step(invalid);
  const Selection none = bad.FinalSelection();
  EXPECT_EQ(none.index, 0);
  EXPECT_FALSE(none.valid);
  EXPECT_EQ(bad.BestValidByRaw(), nullptr);
}

TEST(EvalLogTest, RoundTripAndReplay) {
  SearchEnv env(Tiny().problem, RewardConfig{}, 300);
  std::mt19937_64 rng(4);
  std::ostringstream os;
  env.set_observer([&](const EvalRecord& e) { os << EvalRecordToJson(e).dump() << "\n"; });
  for (int i = 0; i < 300; ++i) env.Step(RandomAction(Tiny().problem.space, rng));
  std::istringstream is(os.str());
  const auto log = ReadEvalLog(is);
  ASSERT_EQ(log.size(), 300u);
  for (size_t i = 0; i < log.size(); ++i) {
    EXPECT_EQ(log[i].action, env.log()[i].action);
    EXPECT_EQ(log[i].raw, env.log()[i].raw);
    EXPECT_EQ(log[i].reward, env.log()[i].reward);
    EXPECT_EQ(log[i].best_after, env.log()[i].best_after);
    EXPECT_EQ(log[i].reason, env.log()[i].reason);
  }
  EXPECT_TRUE(ReplayEvalLog(Tiny().problem, log).empty());
  const LogSummary s = SummarizeLog(log);
  EXPECT_EQ(s.best_raw, env.best_raw());
  EXPECT_EQ(s.evals, 300);
}

TEST(EvalLogTest, TruncatedTailIsDropped) {
  SearchEnv env(Tiny().problem, RewardConfig{}, 3);
  std::mt19937_64 rng(4);
  std::string text;
  env.set_observer([&](const EvalRecord& e) { text += EvalRecordToJson(e).dump() + "\n"; });
  for (int i = 0; i < 3; ++i) env.Step(RandomAction(Tiny().problem.space, rng));
  text.resize(text.size() - 10);
  std::istringstream is(text);
  EXPECT_EQ(ReadEvalLog(is).size(), 2u);
}

TEST(EvalLogTest, ReplayDetectsTampering) {
  SearchEnv env(Tiny().problem, RewardConfig{}, 50);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 50; ++i) env.Step(RandomAction(Tiny().problem.space, rng));
  auto log = env.log();
  for (auto& e : log) {
    if (e.valid) {
      e.raw = std::nextafter(e.raw, 1e300);
      break;
    }
  }
  EXPECT_EQ(ReplayEvalLog(Tiny().problem, log).size(), 1u);
}

}  // namespace
}  // namespace shardopt
