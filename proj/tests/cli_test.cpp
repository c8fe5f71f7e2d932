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

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "shardopt/config.hpp"
#include "shardopt/runs.hpp"

namespace shardopt {
namespace {

struct CmdResult {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

CmdResult Cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " SHARDOPT_CLI " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  CmdResult r;
  if (p == nullptr) return r;
  std::array<char, 4096> buf;
  size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kBig = SHARDOPT_CONFIG_DIR "/experiments/gpt-moe-1.2t-16k.yaml";
const std::string kTiny = SHARDOPT_CONFIG_DIR "/experiments/tiny.yaml";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    tmp_ = fs::temp_directory_path() /
           (std::string("shardopt_cli_") +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  void TearDown() override { fs::remove_all(tmp_); }
  fs::path tmp_;
};

TEST_F(CliTest, SimulateMegatronMatchesLibrary) {
  const CmdResult r =
      Cli("-c " + kBig + " simulate --megatron --tp 8 --ep 16 --pp 4 --batch 64 --json");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  const ExperimentConfig cfg = LoadConfig(kBig);
  Strategy s{8, 16, 4, 64, MegatronOpDims(cfg.problem.space, cfg.problem.model)};
  const SimResult lib = cfg.problem.Evaluate(s);
  EXPECT_TRUE(j["valid"].get<bool>());
  EXPECT_EQ(j["throughput"].get<double>(), lib.throughput);
  EXPECT_EQ(j["tpot"].get<double>(), lib.tpot);
  EXPECT_EQ(j["mem_per_device"].get<double>(), lib.mem_per_device);
  EXPECT_EQ(j["action"].get<ActionVector>(), EncodeStrategy(s, cfg.problem.space));
}

TEST_F(CliTest, SimulateTextAndExplain) {
  CmdResult r = Cli("-c " + kBig + " simulate --megatron --tp 8 --ep 16 --pp 4 --batch 64");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("tok/s/chip"), std::string::npos);
  r = Cli("-c " + kBig + " explain --megatron --tp 8 --ep 16 --pp 4 --batch 64");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("AllReduce"), std::string::npos) << r.out;
}

TEST_F(CliTest, DomainErrorListsAllowedValues) {
  const CmdResult r = Cli("-c " + kBig + " simulate --megatron --tp 3 --ep 16 --pp 4 --batch 64");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("tp=3"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("[1, 2, 4, 8, 16, 32, 64]"), std::string::npos) << r.out;
}

TEST_F(CliTest, MalformedConfigNamesKey) {
  const CmdResult r = Cli("-c " SHARDOPT_TEST_DATA_DIR
                          "/bad_key.yaml simulate --megatron --tp 8 --ep 16 --pp 4 --batch 64");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("workload.slo_tpt"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("bad_key.yaml:6"), std::string::npos) << r.out;
}

TEST_F(CliTest, InvalidStrategyExitsTwo) {
  // One device cannot hold a trillion-parameter model.
  const CmdResult r = Cli("-c " + kBig + " simulate --megatron --tp 1 --ep 1 --pp 1 --batch 1");
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("oom"), std::string::npos) << r.out;
}

TEST_F(CliTest, DimOverrides) {
  const CmdResult a = Cli("-c " + kBig +
                          " simulate --megatron --tp 8 --ep 16 --pp 4 --batch 64 --json "
                          "--dim expert_ffn2=dim1 --dim shared_ffn2=dim1");
  ASSERT_EQ(a.code, 0) << a.out;
  const auto j = nlohmann::json::parse(a.out);
  const ExperimentConfig cfg = LoadConfig(kBig);
  const Strategy s = DecodeStrategy(j["action"].get<ActionVector>(), cfg.problem.space);
  const auto& ops = cfg.problem.space.ops;
  for (size_t l = 0; l < ops.size(); ++l) {
    if (ops[l] == OpId::kExpertFfn2 || ops[l] == OpId::kSharedFfn2) {
      EXPECT_EQ(s.op_dims[l], ShardDim::kDim1);
    }
  }
  const CmdResult bad = Cli("-c " + kBig +
                            " simulate --megatron --tp 8 --ep 16 --pp 4 --batch 64 "
                            "--dim nosuch=dim1");
  EXPECT_EQ(bad.code, 1) << bad.out;
}

TEST_F(CliTest, ConfigFromEnvironment) {
  const CmdResult r = Cli("simulate --megatron --tp 8 --ep 16 --pp 4 --batch 64",
                          "SHARDOPT_CONFIG=" + kBig);
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(Cli("simulate --megatron --tp 8 --ep 16 --pp 4 --batch 64").code, 0);
}

TEST_F(CliTest, SearchWritesLogsAndReports) {
  const fs::path out = tmp_ / "rw";
  const CmdResult r =
      Cli("-c " + kTiny + " search --algo rw --budget 100 --seeds 2 -o " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  int lines = 0;
  for (int seed : {0, 1}) {
    const fs::path dir = SeedDir(out, "rw", seed);
    EXPECT_TRUE(fs::exists(dir / "report.json"));
    EXPECT_TRUE(fs::exists(dir / "curve.csv"));
    std::ifstream in(dir / "evals.ndjson");
    std::string line;
    while (std::getline(in, line)) ++lines;
  }
  EXPECT_EQ(lines, 200);
  EXPECT_TRUE(fs::exists(out / "summary.csv"));
  EXPECT_TRUE(fs::exists(out / "run.json"));

  // Existing logs are kept unless --force.
  EXPECT_EQ(Cli("-c " + kTiny + " search --algo rw --budget 100 --seeds 2 -o " + out.string())
                .code,
            1);
  EXPECT_EQ(Cli("-c " + kTiny + " search --algo rw --budget 100 --seeds 2 --force -o " +
                out.string())
                .code,
            0);
}

TEST_F(CliTest, SameSeedSameLog) {
  const fs::path a = tmp_ / "a";
  const fs::path b = tmp_ / "b";
  for (const auto& algo : {"ppo", "sa"}) {
    ASSERT_EQ(Cli("-c " + kTiny + " search --algo " + algo + " --budget 60 --seed 5 -o " +
                  a.string())
                  .code,
              0);
    ASSERT_EQ(Cli("-c " + kTiny + " search --algo " + algo + " --budget 60 --seed 5 -o " +
                  b.string())
                  .code,
              0);
    const std::string la = Slurp(SeedDir(a, algo, 5) / "evals.ndjson");
    EXPECT_FALSE(la.empty());
    EXPECT_EQ(la, Slurp(SeedDir(b, algo, 5) / "evals.ndjson")) << algo;
  }
}

TEST_F(CliTest, ExhaustiveWarnsAboutIgnoredFlags) {
  const CmdResult r = Cli("-c " + kTiny + " search --algo exhaustive --budget 5 --seeds 3 -o " +
                          (tmp_ / "ex").string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("warning"), std::string::npos);
  EXPECT_TRUE(fs::exists(SeedDir(tmp_ / "ex", "exhaustive", 0) / "evals.ndjson"));
  EXPECT_FALSE(fs::exists(SeedDir(tmp_ / "ex", "exhaustive", 1)));
}

TEST_F(CliTest, ReportAcrossRuns) {
  const fs::path p = tmp_ / "ppo";
  const fs::path e = tmp_ / "ex";
  ASSERT_EQ(Cli("-c " + kTiny + " search --algo ppo --budget 60 --seeds 2 -o " + p.string()).code,
            0);
  CmdResult r = Cli("report " + p.string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("ppo"), std::string::npos);
  EXPECT_NE(r.out.find("n/a"), std::string::npos);

  ASSERT_EQ(Cli("-c " + kTiny + " search --algo exhaustive -o " + e.string()).code, 0);
  const fs::path csv = tmp_ / "summary.csv";
  const fs::path curves = tmp_ / "curves.csv";
  r = Cli("report " + p.string() + " " + e.string() + " --csv " + csv.string() + " --curves " +
          curves.string());
  EXPECT_EQ(r.code, 0) << r.out;
  std::istringstream rows(Slurp(csv));
  std::string line;
  bool saw_ratio = false;
  while (std::getline(rows, line)) {
    if (line.rfind("tiny,ppo,", 0) == 0) {
      saw_ratio = line.substr(line.rfind(',') + 1) != "n/a";
    }
  }
  EXPECT_TRUE(saw_ratio) << Slurp(csv);
  EXPECT_NE(Slurp(curves).find("tiny,ppo,1,59,"), std::string::npos);
}

TEST_F(CliTest, ReportRefusesMixedProblems) {
  const fs::path a = tmp_ / "a";
  const fs::path b = tmp_ / "b";
  ASSERT_EQ(Cli("-c " + kTiny + " search --algo rw --budget 200 --seeds 1 -o " + a.string()).code,
            0);
  // Same label, different problem.
  std::string text = Slurp(kTiny);
  text.replace(text.find("context_len: 4096"), 17, "context_len: 2048");
  const fs::path cfg = tmp_ / "tiny2.yaml";
  WriteTextFile(cfg, text);
  ASSERT_EQ(Cli("-c " + cfg.string() + " search --algo rw --budget 200 --seeds 1 -o " + b.string())
                .code,
            0);
  const CmdResult r = Cli("report " + a.string() + " " + b.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("different problems"), std::string::npos) << r.out;
  // Reusing a run directory for a different problem is refused.
  EXPECT_EQ(Cli("-c " + cfg.string() + " search --algo sa --budget 200 --seeds 1 -o " +
                a.string())
                .code,
            1);
}

}  // namespace
}  // namespace shardopt
