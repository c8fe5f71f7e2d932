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

// shardopt: simulate, explain, search and report.
//
// Exit codes: 0 success, 2 invalid strategy (or a search that found no valid
// strategy), 1 tool error.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "shardopt/baselines.hpp"
#include "shardopt/config.hpp"
#include "shardopt/env.hpp"
#include "shardopt/errors.hpp"
#include "shardopt/ppo.hpp"
#include "shardopt/report.hpp"
#include "shardopt/roofline.hpp"
#include "shardopt/runs.hpp"
#include "shardopt/strategy.hpp"

namespace {

using namespace shardopt;

constexpr int kExitOk = 0;
constexpr int kExitToolError = 1;
constexpr int kExitInvalid = 2;

struct StrategyArgs {
  std::optional<int64_t> tp, ep, pp, batch;
  bool megatron = false;
  std::vector<std::string> dims;  // op=dim
  bool explain = false;
  bool json = false;
};

ShardDim ParseDim(const std::string& s) {
  for (ShardDim d : {ShardDim::kUnsharded, ShardDim::kDim0, ShardDim::kDim1}) {
    if (ShardDimName(d) == s) return d;
  }
  if (s == "0") return ShardDim::kDim0;
  if (s == "1") return ShardDim::kDim1;
  if (s == "none") return ShardDim::kUnsharded;
  throw EncodingError("unknown shard dim '" + s +
                      "'; allowed values: unsharded, dim0, dim1");
}

Strategy BuildStrategy(const ExperimentConfig& cfg, const StrategyArgs& a) {
  const auto& space = cfg.problem.space;
  Strategy s;
  const std::pair<const char*, const std::optional<int64_t>*> coarse[] = {
      {"tp", &a.tp}, {"ep", &a.ep}, {"pp", &a.pp}, {"batch", &a.batch}};
  for (const auto& [name, v] : coarse) {
    if (!v->has_value()) throw ConfigError(std::string("--") + name + " is required");
  }
  s.tp = *a.tp;
  s.ep = *a.ep;
  s.pp = *a.pp;
  s.batch = *a.batch;
  std::vector<std::optional<ShardDim>> dims(space.num_ops());
  if (a.megatron) {
    auto m = MegatronOpDims(space, cfg.problem.model);
    for (size_t l = 0; l < m.size(); ++l) dims[l] = m[l];
  }
  for (const auto& kv : a.dims) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--dim expects op=dim, got '" + kv + "'");
    }
    const std::string op = kv.substr(0, eq);
    auto id = OpIdFromName(op);
    size_t l = space.ops.size();
    if (id) l = std::find(space.ops.begin(), space.ops.end(), *id) - space.ops.begin();
    if (l == space.ops.size()) {
      std::string allowed;
      for (OpId o : space.ops) allowed += (allowed.empty() ? "" : ", ") + std::string(OpName(o));
      throw EncodingError("op '" + op + "' is not searchable; allowed ops: " + allowed);
    }
    dims[l] = ParseDim(kv.substr(eq + 1));
  }
  std::string missing;
  for (size_t l = 0; l < dims.size(); ++l) {
    if (!dims[l]) missing += (missing.empty() ? "" : ", ") + std::string(OpName(space.ops[l]));
  }
  if (!missing.empty()) {
    throw ConfigError("no shard dim for: " + missing + " (use --megatron or --dim op=dim)");
  }
  for (const auto& d : dims) s.op_dims.push_back(*d);
  // Domain check with the allowed values in the message.
  EncodeStrategy(s, space);
  return s;
}

void PrintResult(const ExperimentConfig& cfg, const Strategy& s, const SimResult& r,
                 bool explain) {
  std::cout << std::setprecision(10);
  std::cout << "workload:      " << cfg.label << "\n"
            << "strategy:      " << StrategyToString(s, cfg.problem.space) << "\n"
            << "world size:    " << WorldSize(s) << "\n"
            << "valid:         " << (r.valid ? "yes" : "no") << "\n";
  if (!r.valid) {
    std::cout << "reason:        " << InvalidReasonName(r.invalid_reason) << ": "
              << r.detail << "\n";
  }
  std::cout << "throughput:    " << r.throughput << " tok/s/chip\n"
            << "tpot:          " << r.tpot << " s (slo " << cfg.problem.workload.slo_tpot
            << ")\n"
            << "memory/device: " << r.mem_per_device << " B (hbm "
            << cfg.problem.hw.hbm_capacity << ")\n"
            << "breakdown:     compute " << r.breakdown.compute_s << " s, comm "
            << r.breakdown.comm_s << " s, pipeline " << r.breakdown.pipeline_s << " s\n"
            << "max stage:     " << r.max_stage_s << " s\n";
  if (explain && r.invalid_reason != InvalidReason::kOverDeviceBudget &&
      r.invalid_reason != InvalidReason::kLayoutError) {
    std::cout << "\n# prologue (first stage)\n" << r.prologue_plan.ToTrace()
              << "\n# layer (x" << cfg.problem.model.num_layers << ")\n"
              << r.layer_plan.ToTrace() << "\n# epilogue (last stage)\n"
              << r.epilogue_plan.ToTrace();
  }
}

nlohmann::json ResultJson(const ExperimentConfig& cfg, const Strategy& s,
                          const SimResult& r) {
  return {{"label", cfg.label},
          {"strategy", StrategyToString(s, cfg.problem.space)},
          {"action", EncodeStrategy(s, cfg.problem.space)},
          {"valid", r.valid},
          {"reason", std::string(InvalidReasonName(r.invalid_reason))},
          {"detail", r.detail},
          {"throughput", r.throughput},
          {"tpot", r.tpot},
          {"mem_per_device", r.mem_per_device},
          {"compute_s", r.breakdown.compute_s},
          {"comm_s", r.breakdown.comm_s},
          {"pipeline_s", r.breakdown.pipeline_s},
          {"max_stage_s", r.max_stage_s}};
}

int CmdSimulate(const std::string& config_path, const StrategyArgs& a) {
  const ExperimentConfig cfg = LoadConfig(config_path);
  const Strategy s = BuildStrategy(cfg, a);
  const SimResult r = cfg.problem.Evaluate(s);
  if (a.json) {
    std::cout << ResultJson(cfg, s, r).dump(2) << "\n";
  } else {
    PrintResult(cfg, s, r, a.explain);
  }
  return r.valid ? kExitOk : kExitInvalid;
}

struct SearchArgs {
  std::string algo = "ppo";
  std::optional<int64_t> budget;
  std::optional<int64_t> seeds;
  std::optional<uint64_t> base_seed;
  std::optional<uint64_t> only_seed;
  std::string out;
  bool force = false;
};

SearchReport RunOne(const ExperimentConfig& cfg, const std::string& algo, int64_t budget,
                    uint64_t seed, SearchEnv::Observer obs) {
  if (algo == "ppo") {
    PpoRunOptions opts;
    opts.observer = std::move(obs);
    return RunPpoSearch(cfg.problem, cfg.reward, cfg.PpoForBudget(budget), seed, opts);
  }
  if (algo == "sa") {
    return RunSimulatedAnnealing(cfg.problem, cfg.reward, cfg.sa, budget, seed,
                                 std::move(obs));
  }
  if (algo == "rw") {
    return RunRandomWalk(cfg.problem, cfg.reward, budget, seed, std::move(obs));
  }
  return RunMegatronExhaustive(cfg.problem, cfg.reward, std::move(obs));
}

int CmdSearch(const std::string& config_path, const SearchArgs& a) {
  ExperimentConfig cfg = LoadConfig(config_path);
  int64_t budget = a.budget.value_or(cfg.budget);
  int64_t seeds = a.seeds.value_or(cfg.seeds);
  const uint64_t base = a.base_seed.value_or(cfg.base_seed);
  std::vector<uint64_t> seed_ids;
  if (a.algo == "exhaustive") {
    if (a.budget || a.seeds || a.only_seed) {
      std::cerr << "warning: --algo exhaustive is deterministic and sweeps the full "
                   "coarse grid; ignoring --budget/--seeds/--seed\n";
    }
    budget = CoarseGridSize(cfg.problem.space);
    seed_ids = {0};
  } else if (a.only_seed) {
    seed_ids = {*a.only_seed};
  } else {
    if (seeds < 1) throw ConfigError("--seeds must be >= 1");
    for (int64_t k = 0; k < seeds; ++k) seed_ids.push_back(base + static_cast<uint64_t>(k));
  }
  if (a.algo == "ppo") cfg.PpoForBudget(budget).Validate();
  if (budget < 1) throw ConfigError("--budget must be >= 1");

  const fs::path run = a.out.empty()
                           ? fs::path("runs") / (cfg.label + "-" + a.algo)
                           : fs::path(a.out);
  PrepareRunDir(run, cfg);
  for (uint64_t seed : seed_ids) {
    const fs::path dir = SeedDir(run, a.algo, seed);
    if (fs::exists(dir / "evals.ndjson")) {
      if (!a.force) {
        throw ConfigError(dir.string() + " already holds a log (use --force to rerun)");
      }
      fs::remove_all(dir);
    }
    fs::create_directories(dir);
  }

  bool any_valid = false;
  for (uint64_t seed : seed_ids) {
    const fs::path dir = SeedDir(run, a.algo, seed);
    EvalLogWriter writer((dir / "evals.ndjson").string());
    SearchReport rep;
    try {
      rep = RunOne(cfg, a.algo, budget, seed,
                   [&writer](const EvalRecord& e) { writer.Append(e); });
    } catch (const NoEvaluations& e) {
      std::cerr << a.algo << " seed " << seed << ": " << e.what() << "\n";
      continue;
    }
    WriteTextFile(dir / "report.json", ToJson(rep).dump(2) + "\n");
    WriteCurveCsv(dir / "curve.csv", rep.best_curve);
    any_valid = any_valid || rep.has_valid;
    std::cout << a.algo << " seed " << seed << ": best_raw " << std::setprecision(8)
              << rep.best_raw << " (" << rep.valid_evals << "/" << rep.evals
              << " valid, " << std::setprecision(3) << rep.wall_clock_s << " s)"
              << (rep.has_valid ? "" : "  NO VALID STRATEGY") << "\n"
              << "  " << rep.best_strategy << "\n";
  }

  const auto rows = Summarize({ReadRunInfo(run)});
  std::ofstream csv(run / "summary.csv");
  WriteSummaryCsv(rows, csv);
  WriteTextFile(run / "summary.json", SummaryToJson(rows).dump(2) + "\n");
  std::cout << "\n";
  WriteSummaryTable(rows, std::cout);
  std::cout << "\nrun directory: " << run.string() << "\n";
  if (!any_valid) {
    std::cerr << "no valid strategy found\n";
    return kExitInvalid;
  }
  return kExitOk;
}

int CmdReport(const std::vector<std::string>& dirs, const std::string& csv_path,
              const std::string& curves_path) {
  std::vector<RunInfo> runs;
  for (const auto& d : dirs) runs.push_back(ReadRunInfo(d));
  const auto rows = Summarize(runs);
  WriteSummaryTable(rows, std::cout);
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw ConfigError("cannot write " + csv_path);
    WriteSummaryCsv(rows, out);
  }
  if (!curves_path.empty()) {
    std::ofstream out(curves_path);
    if (!out) throw ConfigError("cannot write " + curves_path);
    WriteCurvesCsv(rows, out);
  }
  return kExitOk;
}

void AddStrategyOptions(CLI::App* cmd, StrategyArgs* a) {
  cmd->add_option("--tp", a->tp, "tensor-parallel degree");
  cmd->add_option("--ep", a->ep, "expert-parallel degree");
  cmd->add_option("--pp", a->pp, "pipeline-parallel degree");
  cmd->add_option("--batch", a->batch, "decode batch size");
  cmd->add_flag("--megatron", a->megatron, "Megatron shard dims for all searchable ops");
  cmd->add_option("--dim", a->dims, "per-op shard dim, e.g. expert_ffn1=dim0 (repeatable)");
  cmd->add_flag("--json", a->json, "print the result record as JSON");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint coarse/fine parallelism search for MoE inference"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("-c,--config", config_path, "experiment config (YAML)")
      ->envname("SHARDOPT_CONFIG");

  StrategyArgs sim_args;
  auto* sim = app.add_subcommand("simulate", "evaluate one strategy");
  AddStrategyOptions(sim, &sim_args);
  sim->add_flag("--explain", sim_args.explain, "print the per-op layout trace");

  StrategyArgs explain_args;
  auto* explain = app.add_subcommand("explain", "simulate with the per-op layout trace");
  AddStrategyOptions(explain, &explain_args);

  SearchArgs search_args;
  auto* search = app.add_subcommand("search", "run seeded searches into a run directory");
  search->add_option("--algo", search_args.algo, "search algorithm")
      ->check(CLI::IsMember({"ppo", "sa", "rw", "exhaustive"}));
  search->add_option("--budget", search_args.budget, "simulator calls per seed");
  search->add_option("--seeds", search_args.seeds, "number of seeds");
  search->add_option("--base-seed", search_args.base_seed, "first seed");
  search->add_option("--seed", search_args.only_seed,
                     "run only this seed (for parallel processes)");
  search->add_option("-o,--out", search_args.out, "run directory");
  search->add_flag("--force", search_args.force, "replace existing seed logs");

  std::vector<std::string> report_dirs;
  std::string report_csv, report_curves;
  auto* report = app.add_subcommand("report", "compare run directories");
  report->add_option("runs", report_dirs, "run directories")->required();
  report->add_option("--csv", report_csv, "write the table as CSV");
  report->add_option("--curves", report_curves, "write best-so-far series as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    auto need_config = [&] {
      if (config_path.empty()) {
        throw ConfigError("no config: pass --config or set SHARDOPT_CONFIG");
      }
    };
    if (sim->parsed()) {
      need_config();
      return CmdSimulate(config_path, sim_args);
    }
    if (explain->parsed()) {
      need_config();
      explain_args.explain = true;
      return CmdSimulate(config_path, explain_args);
    }
    if (search->parsed()) {
      need_config();
      return CmdSearch(config_path, search_args);
    }
    if (report->parsed()) return CmdReport(report_dirs, report_csv, report_curves);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitToolError;
  }
  return kExitToolError;
}
