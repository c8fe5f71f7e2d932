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

// Search results and the newline-delimited eval log.

#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <string>
#include <vector>

#include "json.hpp"
#include "shardopt/env.hpp"
#include "shardopt/errors.hpp"

namespace shardopt {

struct RestartMarker {
  int chunk = 0;
  int64_t start_index = 0;  // first eval of this agent
  int64_t allowance = 0;
  int64_t evals = 0;
  bool early_exit = false;

  friend bool operator==(const RestartMarker&, const RestartMarker&) = default;
};

struct SearchReport {
  std::string algorithm;
  uint64_t seed = 0;
  int64_t budget = 0;
  int64_t evals = 0;
  int64_t valid_evals = 0;

  // Highest-reward entry of the log.
  ActionVector selected_action;
  std::string selected_strategy;
  double selected_reward = 0.0;
  double selected_raw = 0.0;
  bool selected_valid = false;

  // Highest-raw valid entry; best_raw is b at the end of the run.
  bool has_valid = false;
  ActionVector best_action;
  std::string best_strategy;
  double best_raw = 0.0;

  std::vector<double> best_curve;  // b after each eval
  std::vector<RestartMarker> restarts;
  double wall_clock_s = 0.0;

  // Everything except wall-clock time.
  bool SameOutcome(const SearchReport& o) const {
    return algorithm == o.algorithm && seed == o.seed && budget == o.budget &&
           evals == o.evals && valid_evals == o.valid_evals &&
           selected_action == o.selected_action &&
           selected_reward == o.selected_reward &&
           selected_raw == o.selected_raw &&
           selected_valid == o.selected_valid && has_valid == o.has_valid &&
           best_action == o.best_action && best_raw == o.best_raw &&
           best_curve == o.best_curve && restarts == o.restarts;
  }
};

inline SearchReport MakeReport(const SearchEnv& env, std::string algorithm,
                               uint64_t seed, double wall_clock_s) {
  const auto& space = env.problem().space;
  SearchReport r;
  r.algorithm = std::move(algorithm);
  r.seed = seed;
  r.budget = env.budget();
  r.evals = env.evals_used();
  r.wall_clock_s = wall_clock_s;
  r.best_curve.reserve(env.log().size());
  for (const auto& e : env.log()) {
    r.best_curve.push_back(e.best_after);
    if (e.valid) ++r.valid_evals;
  }
  Selection sel = env.FinalSelection();
  r.selected_action = sel.action;
  r.selected_strategy = StrategyToString(DecodeStrategy(sel.action, space), space);
  r.selected_reward = sel.reward;
  r.selected_raw = sel.raw;
  r.selected_valid = sel.valid;
  if (const EvalRecord* best = env.BestValidByRaw()) {
    r.has_valid = true;
    r.best_action = best->action;
    r.best_strategy = StrategyToString(DecodeStrategy(best->action, space), space);
    r.best_raw = best->raw;
  }
  return r;
}

inline nlohmann::json ToJson(const SearchReport& r) {
  nlohmann::json restarts = nlohmann::json::array();
  for (const auto& m : r.restarts) {
    restarts.push_back({{"chunk", m.chunk},
                        {"start_index", m.start_index},
                        {"allowance", m.allowance},
                        {"evals", m.evals},
                        {"early_exit", m.early_exit}});
  }
  return {{"algorithm", r.algorithm},
          {"seed", r.seed},
          {"budget", r.budget},
          {"evals", r.evals},
          {"valid_evals", r.valid_evals},
          {"selected",
           {{"action", r.selected_action},
            {"strategy", r.selected_strategy},
            {"reward", r.selected_reward},
            {"raw", r.selected_raw},
            {"valid", r.selected_valid}}},
          {"has_valid", r.has_valid},
          {"best",
           {{"action", r.best_action},
            {"strategy", r.best_strategy},
            {"raw", r.best_raw}}},
          {"restarts", restarts},
          {"wall_clock_s", r.wall_clock_s}};
}

// ---------------------------------------------------------------------------
// Eval log: one JSON object per line, flushed after every record so an
// interrupted run leaves a readable prefix.
// ---------------------------------------------------------------------------

inline nlohmann::json EvalRecordToJson(const EvalRecord& e) {
  return {{"i", e.index},
          {"action", e.action},
          {"raw", e.raw},
          {"reward", e.reward},
          {"valid", e.valid},
          {"reason", std::string(InvalidReasonName(e.reason))},
          {"b", e.best_after},
          {"chunk", e.chunk}};
}

inline EvalRecord EvalRecordFromJson(const nlohmann::json& j) {
  EvalRecord e;
  e.index = j.at("i").get<int64_t>();
  e.action = j.at("action").get<ActionVector>();
  e.raw = j.at("raw").get<double>();
  e.reward = j.at("reward").get<double>();
  e.valid = j.at("valid").get<bool>();
  e.reason = InvalidReasonFromName(j.at("reason").get<std::string>());
  e.best_after = j.at("b").get<double>();
  e.chunk = j.at("chunk").get<int>();
  return e;
}

class EvalLogWriter {
 public:
  explicit EvalLogWriter(const std::string& path) : out_(path, std::ios::app) {
    if (!out_) throw ConfigError("cannot open eval log " + path);
  }

  void Append(const EvalRecord& e) {
    out_ << EvalRecordToJson(e).dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

// Reads complete lines; a truncated trailing line is dropped.
inline std::vector<EvalRecord> ReadEvalLog(std::istream& in) {
  std::vector<EvalRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw ConfigError("corrupt eval log line " + std::to_string(out.size() + 1));
    }
    out.push_back(EvalRecordFromJson(j));
  }
  return out;
}

inline std::vector<EvalRecord> ReadEvalLog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open eval log " + path);
  return ReadEvalLog(in);
}

struct ReplayMismatch {
  int64_t index = 0;
  double logged = 0.0;
  double replayed = 0.0;
};

// Re-simulates every logged action and returns the entries whose raw
// throughput or validity differ from the log.
inline std::vector<ReplayMismatch> ReplayEvalLog(const Problem& problem,
                                                 const std::vector<EvalRecord>& log) {
  std::vector<ReplayMismatch> bad;
  for (const auto& e : log) {
    SimResult r = problem.Evaluate(DecodeStrategy(e.action, problem.space));
    if (r.throughput != e.raw || r.valid != e.valid) {
      bad.push_back({e.index, e.raw, r.throughput});
    }
  }
  return bad;
}

// Summary numbers recomputed from a log alone.
struct LogSummary {
  int64_t evals = 0;
  int64_t valid_evals = 0;
  double best_raw = 0.0;
  std::vector<double> best_curve;
};

inline LogSummary SummarizeLog(const std::vector<EvalRecord>& log) {
  LogSummary s;
  for (const auto& e : log) {
    ++s.evals;
    if (e.valid) {
      ++s.valid_evals;
      if (e.raw > s.best_raw) s.best_raw = e.raw;
    }
    s.best_curve.push_back(s.best_raw);
  }
  return s;
}

}  // namespace shardopt
