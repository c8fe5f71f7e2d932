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

// YAML experiment configs.
//
//   model:        mapping, or a path to a YAML file holding the mapping
//   hardware:     mapping or path
//   workload:     label, context_len, slo_tpot, workspace_bytes
//   action_space: tp, ep, pp, batch (lists), ops (list of op names)
//   reward:       alpha, beta, raw_scale, invalid_penalty (= −raw_scale
//                 when absent)
//   search:       budget, seeds, base_seed
//   ppo:          PpoConfig fields
//   sa:           t_initial, neighbor_moves
//
// Relative paths resolve against the directory of the including file.
// Every section except model and hardware may be omitted. Unknown keys are
// errors and carry the file, line and column of the offending key.

#pragma once

#include <yaml-cpp/yaml.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "shardopt/baselines.hpp"
#include "shardopt/env.hpp"
#include "shardopt/errors.hpp"
#include "shardopt/ppo.hpp"
#include "shardopt/strategy.hpp"

namespace shardopt {

struct ExperimentConfig {
  std::string label = "workload";
  Problem problem;
  RewardConfig reward;
  double raw_scale = 100.0;
  PpoConfig ppo;
  SaConfig sa;
  int64_t budget = 4000;
  int64_t seeds = 10;
  uint64_t base_seed = 0;

  void Validate() const {
    problem.model.Validate();
    problem.hw.Validate();
    problem.space.Validate();
    problem.workload.Validate();
    reward.Validate();
    if (!(raw_scale > 0)) throw ConfigError("reward.raw_scale must be > 0");
    if (budget < 1) throw ConfigError("search.budget must be >= 1");
    if (seeds < 1) throw ConfigError("search.seeds must be >= 1");
    sa.Validate();
    PpoConfig p = ppo;
    p.budget = budget;
    p.Validate();
  }

  // PPO settings with the search budget applied.
  PpoConfig PpoForBudget(int64_t b) const {
    PpoConfig p = ppo;
    p.budget = b;
    return p;
  }
};

namespace internal {

inline std::string Where(const std::string& file, const YAML::Node& n) {
  const YAML::Mark m = n.Mark();
  if (m.is_null()) return file;
  return file + ":" + std::to_string(m.line + 1) + ":" + std::to_string(m.column + 1);
}

class YamlReader {
 public:
  explicit YamlReader(std::string file) : file_(std::move(file)) {}

  const std::string& file() const { return file_; }

  void RequireMap(const YAML::Node& n, const std::string& path) const {
    if (!n.IsMap()) throw ConfigError(Where(file_, n) + ": '" + path + "' must be a mapping");
  }

  void CheckKeys(const YAML::Node& n, const std::string& path,
                 std::initializer_list<const char*> allowed) const {
    RequireMap(n, path);
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& kv : n) {
      const auto key = kv.first.as<std::string>();
      if (!ok.count(key)) {
        std::string list;
        for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
        throw ConfigError(Where(file_, kv.first) + ": unknown key '" +
                          (path.empty() ? key : path + "." + key) + "' (allowed: " +
                          list + ")");
      }
    }
  }

  template <typename T>
  void Read(const YAML::Node& n, const char* key, const std::string& path, T* out) const {
    const YAML::Node v = n[key];
    if (!v) return;
    try {
      *out = v.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(Where(file_, v) + ": '" + path + "." + key + "' has the wrong type");
    }
  }

  template <typename T>
  void Require(const YAML::Node& n, const char* key, const std::string& path, T* out) const {
    if (!n[key]) throw ConfigError(Where(file_, n) + ": missing '" + path + "." + key + "'");
    Read(n, key, path, out);
  }

 private:
  std::string file_;
};

inline YAML::Node LoadYamlFile(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open config file " + p.string());
  try {
    return YAML::Load(in);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(p.string() + ":" + std::to_string(e.mark.line + 1) + ":" +
                      std::to_string(e.mark.column + 1) + ": " + e.msg);
  }
}

// A section given inline or as a path; returns the mapping and the file it
// came from.
inline std::pair<YAML::Node, std::string> ResolveSection(const YAML::Node& n,
                                                         const std::string& file,
                                                         const std::filesystem::path& base) {
  if (n.IsScalar()) {
    std::filesystem::path p = n.as<std::string>();
    if (p.is_relative()) p = base / p;
    return {LoadYamlFile(p), p.string()};
  }
  return {n, file};
}

inline ModelSpec ParseModel(const YAML::Node& n, const YamlReader& r) {
  r.CheckKeys(n, "model",
              {"name", "num_layers", "hidden_dim", "ffn_dim", "num_heads", "head_dim",
               "num_kv_heads", "num_experts", "experts_per_token", "vocab_size",
               "dtype_bytes", "has_shared_expert"});
  ModelSpec m;
  r.Read(n, "name", "model", &m.name);
  r.Require(n, "num_layers", "model", &m.num_layers);
  r.Require(n, "hidden_dim", "model", &m.hidden_dim);
  r.Require(n, "ffn_dim", "model", &m.ffn_dim);
  r.Require(n, "num_heads", "model", &m.num_heads);
  r.Require(n, "head_dim", "model", &m.head_dim);
  r.Require(n, "num_kv_heads", "model", &m.num_kv_heads);
  r.Require(n, "num_experts", "model", &m.num_experts);
  r.Require(n, "experts_per_token", "model", &m.experts_per_token);
  r.Require(n, "vocab_size", "model", &m.vocab_size);
  r.Read(n, "dtype_bytes", "model", &m.dtype_bytes);
  r.Read(n, "has_shared_expert", "model", &m.has_shared_expert);
  return m;
}

inline HardwareSpec ParseHardware(const YAML::Node& n, const YamlReader& r) {
  r.CheckKeys(n, "hardware",
              {"name", "peak_flops", "hbm_bandwidth", "hbm_capacity", "intra_node_bw",
               "inter_node_bw", "node_size", "device_budget", "per_collective_latency",
               "kernel_overhead"});
  HardwareSpec h;
  r.Read(n, "name", "hardware", &h.name);
  r.Require(n, "peak_flops", "hardware", &h.peak_flops);
  r.Require(n, "hbm_bandwidth", "hardware", &h.hbm_bandwidth);
  r.Require(n, "hbm_capacity", "hardware", &h.hbm_capacity);
  r.Require(n, "intra_node_bw", "hardware", &h.intra_node_bw);
  r.Require(n, "inter_node_bw", "hardware", &h.inter_node_bw);
  r.Require(n, "node_size", "hardware", &h.node_size);
  r.Require(n, "device_budget", "hardware", &h.device_budget);
  r.Read(n, "per_collective_latency", "hardware", &h.per_collective_latency);
  r.Read(n, "kernel_overhead", "hardware", &h.kernel_overhead);
  return h;
}

}  // namespace internal

inline ExperimentConfig ParseConfig(const YAML::Node& root, const std::string& file,
                                    const std::filesystem::path& base_dir) {
  using internal::ResolveSection;
  internal::YamlReader r(file);
  r.CheckKeys(root, "",
              {"model", "hardware", "workload", "action_space", "reward", "search", "ppo",
               "sa"});
  ExperimentConfig cfg;
  for (const char* key : {"model", "hardware"}) {
    if (!root[key]) throw ConfigError(file + ": missing '" + key + "' section");
  }
  {
    auto [n, f] = ResolveSection(root["model"], file, base_dir);
    cfg.problem.model = internal::ParseModel(n, internal::YamlReader(f));
  }
  {
    auto [n, f] = ResolveSection(root["hardware"], file, base_dir);
    cfg.problem.hw = internal::ParseHardware(n, internal::YamlReader(f));
  }
  if (const YAML::Node w = root["workload"]) {
    r.CheckKeys(w, "workload", {"label", "context_len", "slo_tpot", "workspace_bytes"});
    r.Read(w, "label", "workload", &cfg.label);
    r.Read(w, "context_len", "workload", &cfg.problem.workload.context_len);
    r.Read(w, "slo_tpot", "workload", &cfg.problem.workload.slo_tpot);
    r.Read(w, "workspace_bytes", "workload", &cfg.problem.workload.workspace_bytes);
  }
  if (const YAML::Node a = root["action_space"]) {
    r.CheckKeys(a, "action_space", {"tp", "ep", "pp", "batch", "ops"});
    auto& sp = cfg.problem.space;
    r.Read(a, "tp", "action_space", &sp.tp_domain);
    r.Read(a, "ep", "action_space", &sp.ep_domain);
    r.Read(a, "pp", "action_space", &sp.pp_domain);
    r.Read(a, "batch", "action_space", &sp.batch_domain);
    if (const YAML::Node ops = a["ops"]) {
      std::vector<std::string> names;
      r.Read(a, "ops", "action_space", &names);
      sp.ops.clear();
      for (const auto& name : names) {
        auto id = OpIdFromName(name);
        if (!id) {
          throw ConfigError(internal::Where(file, ops) + ": unknown op '" + name + "'");
        }
        sp.ops.push_back(*id);
      }
    }
  }
  if (const YAML::Node rw = root["reward"]) {
    r.CheckKeys(rw, "reward", {"alpha", "beta", "raw_scale", "invalid_penalty"});
    r.Read(rw, "alpha", "reward", &cfg.reward.alpha);
    r.Read(rw, "beta", "reward", &cfg.reward.beta);
    r.Read(rw, "raw_scale", "reward", &cfg.raw_scale);
    cfg.reward.invalid_penalty = -cfg.raw_scale;
    r.Read(rw, "invalid_penalty", "reward", &cfg.reward.invalid_penalty);
  } else {
    cfg.reward.invalid_penalty = -cfg.raw_scale;
  }
  if (const YAML::Node s = root["search"]) {
    r.CheckKeys(s, "search", {"budget", "seeds", "base_seed"});
    r.Read(s, "budget", "search", &cfg.budget);
    r.Read(s, "seeds", "search", &cfg.seeds);
    r.Read(s, "base_seed", "search", &cfg.base_seed);
  }
  cfg.ppo.reward_scale = cfg.raw_scale;
  if (const YAML::Node p = root["ppo"]) {
    r.CheckKeys(p, "ppo",
                {"n_steps", "epochs_per_update", "lr_initial", "clip_eps", "entropy_coef",
                 "value_coef", "max_grad_norm", "adam_eps", "tau", "chunks",
                 "elite_capacity", "reward_scale", "normalize_advantage", "model_dim",
                 "attention_heads", "ff_dim"});
    auto& c = cfg.ppo;
    r.Read(p, "n_steps", "ppo", &c.n_steps);
    r.Read(p, "epochs_per_update", "ppo", &c.epochs_per_update);
    r.Read(p, "lr_initial", "ppo", &c.lr_initial);
    r.Read(p, "clip_eps", "ppo", &c.clip_eps);
    r.Read(p, "entropy_coef", "ppo", &c.entropy_coef);
    r.Read(p, "value_coef", "ppo", &c.value_coef);
    r.Read(p, "max_grad_norm", "ppo", &c.max_grad_norm);
    r.Read(p, "adam_eps", "ppo", &c.adam_eps);
    r.Read(p, "tau", "ppo", &c.tau);
    r.Read(p, "chunks", "ppo", &c.chunks);
    r.Read(p, "elite_capacity", "ppo", &c.elite_capacity);
    r.Read(p, "reward_scale", "ppo", &c.reward_scale);
    r.Read(p, "normalize_advantage", "ppo", &c.normalize_advantage);
    r.Read(p, "model_dim", "ppo", &c.model_dim);
    r.Read(p, "attention_heads", "ppo", &c.attention_heads);
    r.Read(p, "ff_dim", "ppo", &c.ff_dim);
  }
  if (const YAML::Node s = root["sa"]) {
    r.CheckKeys(s, "sa", {"t_initial", "neighbor_moves"});
    r.Read(s, "t_initial", "sa", &cfg.sa.t_initial);
    r.Read(s, "neighbor_moves", "sa", &cfg.sa.neighbor_moves);
  }
  cfg.ppo.budget = cfg.budget;
  cfg.Validate();
  return cfg;
}

inline ExperimentConfig LoadConfig(const std::string& path) {
  const std::filesystem::path p(path);
  return ParseConfig(internal::LoadYamlFile(p), p.string(), p.parent_path());
}

inline ExperimentConfig ParseConfigString(const std::string& text,
                                          const std::filesystem::path& base_dir = ".") {
  try {
    return ParseConfig(YAML::Load(text), "<string>", base_dir);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("<string>:" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
}

// Fully resolved config (model and hardware inlined) that ParseConfig
// reads back to the same values.
inline std::string ConfigToYaml(const ExperimentConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  const auto& m = c.problem.model;
  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap
      << YAML::Key << "name" << YAML::Value << m.name
      << YAML::Key << "num_layers" << YAML::Value << m.num_layers
      << YAML::Key << "hidden_dim" << YAML::Value << m.hidden_dim
      << YAML::Key << "ffn_dim" << YAML::Value << m.ffn_dim
      << YAML::Key << "num_heads" << YAML::Value << m.num_heads
      << YAML::Key << "head_dim" << YAML::Value << m.head_dim
      << YAML::Key << "num_kv_heads" << YAML::Value << m.num_kv_heads
      << YAML::Key << "num_experts" << YAML::Value << m.num_experts
      << YAML::Key << "experts_per_token" << YAML::Value << m.experts_per_token
      << YAML::Key << "vocab_size" << YAML::Value << m.vocab_size
      << YAML::Key << "dtype_bytes" << YAML::Value << m.dtype_bytes
      << YAML::Key << "has_shared_expert" << YAML::Value << m.has_shared_expert
      << YAML::EndMap;
  const auto& h = c.problem.hw;
  out << YAML::Key << "hardware" << YAML::Value << YAML::BeginMap
      << YAML::Key << "name" << YAML::Value << h.name
      << YAML::Key << "peak_flops" << YAML::Value << h.peak_flops
      << YAML::Key << "hbm_bandwidth" << YAML::Value << h.hbm_bandwidth
      << YAML::Key << "hbm_capacity" << YAML::Value << h.hbm_capacity
      << YAML::Key << "intra_node_bw" << YAML::Value << h.intra_node_bw
      << YAML::Key << "inter_node_bw" << YAML::Value << h.inter_node_bw
      << YAML::Key << "node_size" << YAML::Value << h.node_size
      << YAML::Key << "device_budget" << YAML::Value << h.device_budget
      << YAML::Key << "per_collective_latency" << YAML::Value << h.per_collective_latency
      << YAML::Key << "kernel_overhead" << YAML::Value << h.kernel_overhead
      << YAML::EndMap;
  const auto& w = c.problem.workload;
  out << YAML::Key << "workload" << YAML::Value << YAML::BeginMap
      << YAML::Key << "label" << YAML::Value << c.label
      << YAML::Key << "context_len" << YAML::Value << w.context_len
      << YAML::Key << "slo_tpot" << YAML::Value << w.slo_tpot
      << YAML::Key << "workspace_bytes" << YAML::Value << w.workspace_bytes
      << YAML::EndMap;
  const auto& sp = c.problem.space;
  std::vector<std::string> ops;
  for (OpId id : sp.ops) ops.emplace_back(OpName(id));
  out << YAML::Key << "action_space" << YAML::Value << YAML::BeginMap
      << YAML::Key << "tp" << YAML::Value << YAML::Flow << sp.tp_domain
      << YAML::Key << "ep" << YAML::Value << YAML::Flow << sp.ep_domain
      << YAML::Key << "pp" << YAML::Value << YAML::Flow << sp.pp_domain
      << YAML::Key << "batch" << YAML::Value << YAML::Flow << sp.batch_domain
      << YAML::Key << "ops" << YAML::Value << YAML::Flow << ops
      << YAML::EndMap;
  out << YAML::Key << "reward" << YAML::Value << YAML::BeginMap
      << YAML::Key << "alpha" << YAML::Value << c.reward.alpha
      << YAML::Key << "beta" << YAML::Value << c.reward.beta
      << YAML::Key << "raw_scale" << YAML::Value << c.raw_scale
      << YAML::Key << "invalid_penalty" << YAML::Value << c.reward.invalid_penalty
      << YAML::EndMap;
  out << YAML::Key << "search" << YAML::Value << YAML::BeginMap
      << YAML::Key << "budget" << YAML::Value << c.budget
      << YAML::Key << "seeds" << YAML::Value << c.seeds
      << YAML::Key << "base_seed" << YAML::Value << c.base_seed
      << YAML::EndMap;
  const auto& p = c.ppo;
  out << YAML::Key << "ppo" << YAML::Value << YAML::BeginMap
      << YAML::Key << "n_steps" << YAML::Value << p.n_steps
      << YAML::Key << "epochs_per_update" << YAML::Value << p.epochs_per_update
      << YAML::Key << "lr_initial" << YAML::Value << p.lr_initial
      << YAML::Key << "clip_eps" << YAML::Value << p.clip_eps
      << YAML::Key << "entropy_coef" << YAML::Value << p.entropy_coef
      << YAML::Key << "value_coef" << YAML::Value << p.value_coef
      << YAML::Key << "max_grad_norm" << YAML::Value << p.max_grad_norm
      << YAML::Key << "adam_eps" << YAML::Value << p.adam_eps
      << YAML::Key << "tau" << YAML::Value << p.tau
      << YAML::Key << "chunks" << YAML::Value << p.chunks
      << YAML::Key << "elite_capacity" << YAML::Value << p.elite_capacity
      << YAML::Key << "reward_scale" << YAML::Value << p.reward_scale
      << YAML::Key << "normalize_advantage" << YAML::Value << p.normalize_advantage
      << YAML::Key << "model_dim" << YAML::Value << p.model_dim
      << YAML::Key << "attention_heads" << YAML::Value << p.attention_heads
      << YAML::Key << "ff_dim" << YAML::Value << p.ff_dim
      << YAML::EndMap;
  out << YAML::Key << "sa" << YAML::Value << YAML::BeginMap
      << YAML::Key << "t_initial" << YAML::Value << c.sa.t_initial
      << YAML::Key << "neighbor_moves" << YAML::Value << c.sa.neighbor_moves
      << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

// FNV-1a over the resolved model, hardware, workload and action space.
// Runs with equal fingerprints evaluate the same simulator problem.
inline std::string ProblemFingerprint(const ExperimentConfig& c) {
  ExperimentConfig only;
  only.problem = c.problem;
  std::string text = ConfigToYaml(only);
  // Keep only the problem sections.
  text = text.substr(0, text.find("\nreward:"));
  const auto label_pos = text.find("  label: ");
  if (label_pos != std::string::npos) {
    text.erase(label_pos, text.find('\n', label_pos) - label_pos + 1);
  }
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace shardopt
