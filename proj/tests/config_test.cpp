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

#include "shardopt/config.hpp"

#include <gtest/gtest.h>

namespace shardopt {
namespace {

constexpr const char* kInline = R"(
model:
  name: toy
  num_layers: 4
  hidden_dim: 256
  ffn_dim: 512
  num_heads: 8
  head_dim: 32
  num_kv_heads: 2
  num_experts: 8
  experts_per_token: 2
  vocab_size: 1000
  dtype_bytes: 2
  has_shared_expert: true
hardware:
  name: dev
  peak_flops: 1.0e14
  hbm_bandwidth: 1.0e12
  hbm_capacity: 8.0e9
  intra_node_bw: 1.0e11
  inter_node_bw: 1.0e10
  node_size: 4
  device_budget: 64
  per_collective_latency: 5.0e-6
  kernel_overhead: 4.0e-6
workload:
  label: toy-4k
  context_len: 4096
reward:
  raw_scale: 250
)";

std::string ErrorOf(const std::string& text) {
  try {
    ParseConfigString(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(ConfigTest, InlineDefaults) {
  const ExperimentConfig cfg = ParseConfigString(kInline);
  EXPECT_EQ(cfg.label, "toy-4k");
  EXPECT_EQ(cfg.problem.model.num_layers, 4);
  EXPECT_EQ(cfg.problem.workload.context_len, 4096);
  EXPECT_EQ(cfg.problem.workload.slo_tpot, 0.05);
  EXPECT_EQ(cfg.reward.alpha, 1.0);
  EXPECT_EQ(cfg.reward.invalid_penalty, -250.0);
  EXPECT_EQ(cfg.ppo.reward_scale, 250.0);
  EXPECT_EQ(cfg.budget, 4000);
  EXPECT_EQ(cfg.ppo.budget, 4000);
  EXPECT_EQ(cfg.problem.space.num_ops(), 12u);
}

TEST(ConfigTest, UnknownKeyNamesKeyAndLine) {
  const std::string err = ErrorOf(std::string(kInline) + "search:\n  budgte: 10\n");
  EXPECT_NE(err.find("search.budgte"), std::string::npos) << err;
  EXPECT_NE(err.find("<string>:"), std::string::npos) << err;
  EXPECT_NE(err.find("allowed: budget, seeds, base_seed"), std::string::npos) << err;
  EXPECT_NE(ErrorOf(std::string(kInline) + "bogus: 1\n").find("'bogus'"), std::string::npos);
}

TEST(ConfigTest, WrongTypeAndBadValues) {
  EXPECT_NE(ErrorOf(std::string(kInline) + "search:\n  budget: lots\n").find("search.budget"),
            std::string::npos);
  EXPECT_NE(ErrorOf(std::string(kInline) + "action_space:\n  ops: [qkv_proj, nope]\n")
                .find("unknown op 'nope'"),
            std::string::npos);
  std::string bad_alpha = kInline;
  bad_alpha.replace(bad_alpha.find("  raw_scale: 250"), 16, "  raw_scale: 250\n  alpha: 0");
  EXPECT_NE(ErrorOf(bad_alpha).find("reward.alpha must be > 0"), std::string::npos);
  EXPECT_FALSE(ErrorOf(std::string(kInline) + "search:\n  budget: 4001\n").empty());
  EXPECT_FALSE(ErrorOf("hardware: {}\n").empty());
}

TEST(ConfigTest, FileErrorsCarryPath) {
  try {
    LoadConfig(SHARDOPT_TEST_DATA_DIR "/bad_key.yaml");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("bad_key.yaml:6"), std::string::npos) << msg;
    EXPECT_NE(msg.find("workload.slo_tpt"), std::string::npos) << msg;
  }
  EXPECT_THROW(LoadConfig("/nonexistent/config.yaml"), ConfigError);
}

TEST(ConfigTest, YamlRoundTrip) {
  const ExperimentConfig a = LoadConfig(SHARDOPT_CONFIG_DIR "/experiments/tiny.yaml");
  const std::string text = ConfigToYaml(a);
  const ExperimentConfig b = ParseConfigString(text);
  EXPECT_EQ(ConfigToYaml(b), text);
  EXPECT_EQ(b.problem.hw.hbm_capacity, a.problem.hw.hbm_capacity);
  EXPECT_EQ(b.problem.space.ops, a.problem.space.ops);
  EXPECT_EQ(b.ppo.entropy_coef, a.ppo.entropy_coef);
  EXPECT_EQ(ProblemFingerprint(a), ProblemFingerprint(b));
}

TEST(ConfigTest, FingerprintTracksProblemNotLabel) {
  ExperimentConfig a = ParseConfigString(kInline);
  ExperimentConfig b = a;
  b.label = "renamed";
  b.budget = 100;
  b.ppo.lr_initial = 1.0;
  EXPECT_EQ(ProblemFingerprint(a), ProblemFingerprint(b));
  b.problem.workload.context_len = 8192;
  EXPECT_NE(ProblemFingerprint(a), ProblemFingerprint(b));
}

TEST(ConfigTest, ShippedConfigsLoad) {
  const char* names[] = {"gpt-moe-1.2t-16k", "gpt-moe-1.2t-32k", "gpt-moe-1.2t-64k",
                         "gpt-moe-1.6t-16k", "gpt-moe-1.6t-32k", "gpt-moe-1.6t-64k",
                         "tiny"};
  for (const char* n : names) {
    const ExperimentConfig cfg =
        LoadConfig(std::string(SHARDOPT_CONFIG_DIR) + "/experiments/" + n + ".yaml");
    EXPECT_EQ(cfg.label, n == std::string("tiny") ? "tiny" : n);
  }
  const auto p12 = LoadConfig(SHARDOPT_CONFIG_DIR "/experiments/gpt-moe-1.2t-16k.yaml");
  const auto p16 = LoadConfig(SHARDOPT_CONFIG_DIR "/experiments/gpt-moe-1.6t-16k.yaml");
  EXPECT_NEAR(ParameterCount(p12.problem.model) / 1e12, 1.2, 0.05);
  EXPECT_NEAR(ParameterCount(p16.problem.model) / 1e12, 1.6, 0.05);
  EXPECT_NEAR(p12.problem.space.JointSize(), 2.0e9, 0.1e9);
  EXPECT_EQ(p12.problem.hw.device_budget, 24000);
}

}  // namespace
}  // namespace shardopt
