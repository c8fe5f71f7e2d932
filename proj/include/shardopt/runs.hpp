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

// Run directories and the summary tables derived from them.
//
//   <run>/config.yaml                      resolved config snapshot
//   <run>/run.json                         label + problem fingerprint
//   <run>/<algo>/seed-<k>/evals.ndjson     append-only eval log
//   <run>/<algo>/seed-<k>/report.json      SearchReport
//   <run>/<algo>/seed-<k>/curve.csv        best-so-far per eval
//
// Summaries are recomputed from the eval logs only.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "shardopt/config.hpp"
#include "shardopt/errors.hpp"
#include "shardopt/report.hpp"

namespace shardopt {

namespace fs = std::filesystem;

inline fs::path SeedDir(const fs::path& run, const std::string& algo, uint64_t seed) {
  return run / algo / ("seed-" + std::to_string(seed));
}

struct RunInfo {
  fs::path dir;
  std::string label;
  std::string fingerprint;
};

inline void WriteTextFile(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << text;
}

inline RunInfo ReadRunInfo(const fs::path& dir) {
  std::ifstream in(dir / "run.json");
  if (!in) throw ConfigError(dir.string() + " is not a run directory (no run.json)");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("label") || !j.contains("fingerprint")) {
    throw ConfigError((dir / "run.json").string() + " is malformed");
  }
  return {dir, j["label"].get<std::string>(), j["fingerprint"].get<std::string>()};
}

// Creates the run directory, or checks that an existing one holds the same
// problem.
inline RunInfo PrepareRunDir(const fs::path& dir, const ExperimentConfig& cfg) {
  const std::string fp = ProblemFingerprint(cfg);
  if (fs::exists(dir / "run.json")) {
    RunInfo info = ReadRunInfo(dir);
    if (info.fingerprint != fp || info.label != cfg.label) {
      throw ConfigError(dir.string() + " holds runs of '" + info.label +
                        "' (fingerprint " + info.fingerprint +
                        "); this config is '" + cfg.label + "' (" + fp + ")");
    }
    return info;
  }
  fs::create_directories(dir);
  WriteTextFile(dir / "config.yaml", ConfigToYaml(cfg));
  nlohmann::json j = {{"label", cfg.label}, {"fingerprint", fp}};
  WriteTextFile(dir / "run.json", j.dump(2) + "\n");
  return {dir, cfg.label, fp};
}

inline void WriteCurveCsv(const fs::path& p, const std::vector<double>& curve) {
  std::ostringstream os;
  os << std::setprecision(17) << "eval,best_raw\n";
  for (size_t i = 0; i < curve.size(); ++i) os << i << "," << curve[i] << "\n";
  WriteTextFile(p, os.str());
}

struct SeedLog {
  uint64_t seed = 0;
  LogSummary summary;
};

// All seed logs of `algo` under `run`, ordered by seed.
inline std::vector<SeedLog> LoadSeedLogs(const fs::path& run, const std::string& algo) {
  std::vector<SeedLog> out;
  const fs::path base = run / algo;
  if (!fs::is_directory(base)) return out;
  for (const auto& entry : fs::directory_iterator(base)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || name.rfind("seed-", 0) != 0) continue;
    const fs::path log = entry.path() / "evals.ndjson";
    if (!fs::exists(log)) continue;
    SeedLog s;
    s.seed = std::stoull(name.substr(5));
    s.summary = SummarizeLog(ReadEvalLog(log.string()));
    out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end(),
            [](const SeedLog& a, const SeedLog& b) { return a.seed < b.seed; });
  return out;
}

inline std::vector<std::string> RunAlgorithms(const fs::path& run) {
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(run)) {
    if (entry.is_directory()) out.push_back(entry.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct SummaryRow {
  std::string label;
  std::string algorithm;
  int64_t seeds = 0;
  int64_t evals = 0;
  int64_t valid_evals = 0;
  double mean_best_raw = 0.0;
  double std_best_raw = 0.0;
  double best_of_k = 0.0;
  // Mean best raw over RW's mean best raw on the same label; NaN without RW.
  double vs_rw = std::numeric_limits<double>::quiet_NaN();
  // Best-of-k over the exhaustive Megatron sweep's best; NaN without one.
  double vs_megatron = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> curves;
  std::vector<uint64_t> seed_ids;
};

// Aggregates per (label, algorithm). Directories sharing a label must share
// the problem fingerprint.
inline std::vector<SummaryRow> Summarize(const std::vector<RunInfo>& runs) {
  std::map<std::string, std::string> fingerprint;
  std::map<std::pair<std::string, std::string>, SummaryRow> rows;
  for (const auto& run : runs) {
    auto [it, inserted] = fingerprint.emplace(run.label, run.fingerprint);
    if (!inserted && it->second != run.fingerprint) {
      throw ConfigError("label '" + run.label + "' appears with different problems: " +
                        it->second + " vs " + run.fingerprint + " (" +
                        run.dir.string() + ")");
    }
    for (const auto& algo : RunAlgorithms(run.dir)) {
      SummaryRow& row = rows[{run.label, algo}];
      row.label = run.label;
      row.algorithm = algo;
      for (auto& s : LoadSeedLogs(run.dir, algo)) {
        if (std::find(row.seed_ids.begin(), row.seed_ids.end(), s.seed) !=
            row.seed_ids.end()) {
          throw ConfigError("seed " + std::to_string(s.seed) + " of " + algo +
                            " on '" + run.label + "' appears twice");
        }
        row.seed_ids.push_back(s.seed);
        row.evals += s.summary.evals;
        row.valid_evals += s.summary.valid_evals;
        row.curves.push_back(std::move(s.summary.best_curve));
      }
    }
  }
  std::vector<SummaryRow> out;
  for (auto& [key, row] : rows) {
    row.seeds = static_cast<int64_t>(row.curves.size());
    if (row.seeds == 0) continue;
    double sum = 0.0;
    for (const auto& c : row.curves) {
      const double b = c.empty() ? 0.0 : c.back();
      sum += b;
      row.best_of_k = std::max(row.best_of_k, b);
    }
    row.mean_best_raw = sum / static_cast<double>(row.seeds);
    double var = 0.0;
    for (const auto& c : row.curves) {
      const double d = (c.empty() ? 0.0 : c.back()) - row.mean_best_raw;
      var += d * d;
    }
    row.std_best_raw = row.seeds > 1 ? std::sqrt(var / static_cast<double>(row.seeds - 1)) : 0.0;
    out.push_back(std::move(row));
  }
  for (auto& row : out) {
    for (const auto& ref : out) {
      if (ref.label != row.label) continue;
      if (ref.algorithm == "rw" && ref.mean_best_raw > 0) {
        row.vs_rw = row.mean_best_raw / ref.mean_best_raw;
      }
      if (ref.algorithm == "exhaustive" && ref.best_of_k > 0) {
        row.vs_megatron = row.best_of_k / ref.best_of_k;
      }
    }
  }
  return out;
}

namespace internal {

inline std::string Num(double v, int precision = 6) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace internal

inline void WriteSummaryCsv(const std::vector<SummaryRow>& rows, std::ostream& os) {
  os << "label,algorithm,seeds,evals,valid_evals,mean_best_raw,std_best_raw,"
        "best_of_k,vs_rw,vs_megatron\n";
  for (const auto& r : rows) {
    os << r.label << "," << r.algorithm << "," << r.seeds << "," << r.evals << ","
       << r.valid_evals << "," << internal::Num(r.mean_best_raw, 17) << ","
       << internal::Num(r.std_best_raw, 17) << "," << internal::Num(r.best_of_k, 17)
       << "," << internal::Num(r.vs_rw, 17) << "," << internal::Num(r.vs_megatron, 17)
       << "\n";
  }
}

inline nlohmann::json SummaryToJson(const std::vector<SummaryRow>& rows) {
  auto opt = [](double v) -> nlohmann::json {
    return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
  };
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"label", r.label},
                   {"algorithm", r.algorithm},
                   {"seeds", r.seeds},
                   {"evals", r.evals},
                   {"valid_evals", r.valid_evals},
                   {"mean_best_raw", r.mean_best_raw},
                   {"std_best_raw", r.std_best_raw},
                   {"best_of_k", r.best_of_k},
                   {"vs_rw", opt(r.vs_rw)},
                   {"vs_megatron", opt(r.vs_megatron)}});
  }
  return arr;
}

inline void WriteSummaryTable(const std::vector<SummaryRow>& rows, std::ostream& os) {
  os << std::left << std::setw(22) << "label" << std::setw(12) << "algorithm"
     << std::right << std::setw(6) << "seeds" << std::setw(9) << "evals"
     << std::setw(14) << "mean_best" << std::setw(12) << "std"
     << std::setw(14) << "best_of_k" << std::setw(9) << "vs_rw"
     << std::setw(13) << "vs_megatron" << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(22) << r.label << std::setw(12) << r.algorithm
       << std::right << std::setw(6) << r.seeds << std::setw(9) << r.evals
       << std::setw(14) << internal::Num(r.mean_best_raw) << std::setw(12)
       << internal::Num(r.std_best_raw, 4) << std::setw(14)
       << internal::Num(r.best_of_k) << std::setw(9) << internal::Num(r.vs_rw, 4)
       << std::setw(13) << internal::Num(r.vs_megatron, 4) << "\n";
  }
}

// Long-format best-so-far series: label,algorithm,seed,eval,best_raw.
inline void WriteCurvesCsv(const std::vector<SummaryRow>& rows, std::ostream& os) {
  os << std::setprecision(17) << "label,algorithm,seed,eval,best_raw\n";
  for (const auto& r : rows) {
    for (size_t k = 0; k < r.curves.size(); ++k) {
      for (size_t i = 0; i < r.curves[k].size(); ++i) {
        os << r.label << "," << r.algorithm << "," << r.seed_ids[k] << "," << i << ","
           << r.curves[k][i] << "\n";
      }
    }
  }
}

}  // namespace shardopt
