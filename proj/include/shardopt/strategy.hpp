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

// Models, hardware and the joint parallelization strategy.
//
// A strategy is the coarse tuple (TP, EP, PP, batch) plus one shard axis per
// searchable fused op. Every strategy maps to an integer vector of length
// A = 4 + L whose m-th entry is the index of the m-th sub-choice inside its
// domain; that vector is what the search algorithms and the policy see.

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "shardopt/errors.hpp"

namespace shardopt {

struct ModelSpec {
  std::string name = "model";
  int64_t num_layers = 1;
  int64_t hidden_dim = 1;
  int64_t ffn_dim = 1;  // per expert; the shared expert uses the same width
  int64_t num_heads = 1;
  int64_t head_dim = 1;
  int64_t num_kv_heads = 1;
  int64_t num_experts = 1;
  int64_t experts_per_token = 1;
  int64_t vocab_size = 1;
  int64_t dtype_bytes = 2;
  bool has_shared_expert = false;

  void Validate() const {
    auto require = [&](bool ok, const char* what) {
      if (!ok) throw ConfigError("model '" + name + "': " + what);
    };
    require(num_layers >= 1 && hidden_dim >= 1 && ffn_dim >= 1 &&
                num_heads >= 1 && head_dim >= 1 && num_kv_heads >= 1 &&
                num_experts >= 1 && experts_per_token >= 1 &&
                vocab_size >= 1 && dtype_bytes >= 1,
            "all counts must be >= 1");
    require(hidden_dim == num_heads * head_dim,
            "hidden_dim must equal num_heads * head_dim");
    require(num_heads % num_kv_heads == 0,
            "num_kv_heads must divide num_heads");
    require(experts_per_token <= num_experts,
            "experts_per_token must not exceed num_experts");
  }
};

struct HardwareSpec {
  std::string name = "device";
  double peak_flops = 1.0;             // FLOP/s
  double hbm_bandwidth = 1.0;          // bytes/s
  double hbm_capacity = 1.0;           // bytes
  double intra_node_bw = 1.0;          // bytes/s per device
  double inter_node_bw = 1.0;          // bytes/s per device
  int64_t node_size = 1;               // devices
  int64_t device_budget = 1;           // devices
  double per_collective_latency = 0.0; // seconds per log2 step
  double kernel_overhead = 0.0;        // seconds per kernel

  void Validate() const {
    auto require = [&](bool ok, const char* what) {
      if (!ok) throw ConfigError("hardware '" + name + "': " + what);
    };
    require(peak_flops > 0 && hbm_bandwidth > 0 && hbm_capacity > 0 &&
                intra_node_bw > 0 && inter_node_bw > 0,
            "all rates must be > 0");
    require(per_collective_latency >= 0 && kernel_overhead >= 0,
            "latencies must be >= 0");
    require(node_size >= 1, "node_size must be >= 1");
    require(device_budget >= 1, "device_budget must be >= 1");
  }
};

// Per-operator shard axis. Unsharded is index 0 of every fine-grained domain.
enum class ShardDim : uint8_t { kUnsharded = 0, kDim0 = 1, kDim1 = 2 };

inline constexpr int kNumDimChoices = 3;

inline std::string_view ShardDimName(ShardDim d) {
  switch (d) {
    case ShardDim::kUnsharded: return "unsharded";
    case ShardDim::kDim0: return "dim0";
    case ShardDim::kDim1: return "dim1";
  }
  return "?";
}

enum class OpClass : uint8_t {
  kDenseMatmul,
  kAttentionCore,
  kRouter,
  kMoeMatmul,
  kElementwise,
};

// The twelve fused ops, in action-vector order: eight per-layer ops followed
// by four global ones.
enum class OpId : uint8_t {
  kQkvProj,
  kAttnCore,
  kAttnOutProj,
  kRouterGate,
  kExpertFfn1,
  kExpertFfn2,
  kSharedFfn1,
  kSharedFfn2,
  kEmbedding,
  kFinalNorm,
  kLmHead,
  kKvCacheIo,
};

inline constexpr int kNumCanonicalOps = 12;

inline constexpr std::array<std::string_view, kNumCanonicalOps> kOpNames = {
    "qkv_proj",    "attn_core",   "attn_out_proj", "router_gate",
    "expert_ffn1", "expert_ffn2", "shared_ffn1",   "shared_ffn2",
    "embedding",   "final_norm",  "lm_head",       "kv_cache_io"};

inline std::string_view OpName(OpId id) {
  return kOpNames[static_cast<size_t>(id)];
}

inline std::optional<OpId> OpIdFromName(std::string_view name) {
  for (size_t i = 0; i < kOpNames.size(); ++i) {
    if (kOpNames[i] == name) return static_cast<OpId>(i);
  }
  return std::nullopt;
}

struct FusedOpDescriptor {
  OpId id;
  std::string name;
  OpClass op_class;
  // Weight (rows, cols) in elements; rows is the contraction axis for the
  // matmul classes. Zero for ops without weights.
  int64_t rows = 0;
  int64_t cols = 0;
  bool shard_dim0 = false;
  bool shard_dim1 = false;
  bool per_layer = true;

  bool Admits(ShardDim d) const {
    switch (d) {
      case ShardDim::kUnsharded: return true;
      case ShardDim::kDim0: return shard_dim0;
      case ShardDim::kDim1: return shard_dim1;
    }
    return false;
  }
  // True when Unsharded is the only admissible choice.
  bool UnshardedOnly() const { return !shard_dim0 && !shard_dim1; }
};

// The canonical op catalog for `model`, indexed by OpId.
inline std::vector<FusedOpDescriptor> CanonicalOps(const ModelSpec& m) {
  const int64_t qkv_cols = (m.num_heads + 2 * m.num_kv_heads) * m.head_dim;
  const int64_t attn_width = m.num_heads * m.head_dim;
  using C = OpClass;
  using O = OpId;
  std::vector<FusedOpDescriptor> ops = {
      {O::kQkvProj, "", C::kDenseMatmul, m.hidden_dim, qkv_cols, true, true, true},
      {O::kAttnCore, "", C::kAttentionCore, 0, 0, false, true, true},
      {O::kAttnOutProj, "", C::kDenseMatmul, attn_width, m.hidden_dim, true, true, true},
      {O::kRouterGate, "", C::kRouter, m.hidden_dim, m.num_experts, false, false, true},
      {O::kExpertFfn1, "", C::kMoeMatmul, m.hidden_dim, m.ffn_dim, true, true, true},
      {O::kExpertFfn2, "", C::kMoeMatmul, m.ffn_dim, m.hidden_dim, true, true, true},
      {O::kSharedFfn1, "", C::kDenseMatmul, m.hidden_dim, m.ffn_dim, true, true, true},
      {O::kSharedFfn2, "", C::kDenseMatmul, m.ffn_dim, m.hidden_dim, true, true, true},
      {O::kEmbedding, "", C::kDenseMatmul, m.vocab_size, m.hidden_dim, true, true, false},
      {O::kFinalNorm, "", C::kElementwise, 0, 0, false, false, false},
      {O::kLmHead, "", C::kDenseMatmul, m.hidden_dim, m.vocab_size, true, true, false},
      {O::kKvCacheIo, "", C::kElementwise, 0, 0, false, false, false},
  };
  for (auto& op : ops) op.name = std::string(OpName(op.id));
  return ops;
}

// Standard Megatron tensor-parallel assignment: column-parallel projections
// and first FFN matmuls (Dim1), row-parallel output projection and second
// FFN matmuls (Dim0), vocab-parallel LM head, everything else replicated.
inline ShardDim MegatronDim(OpId id) {
  switch (id) {
    case OpId::kQkvProj:
    case OpId::kAttnCore:
    case OpId::kExpertFfn1:
    case OpId::kSharedFfn1:
    case OpId::kLmHead:
      return ShardDim::kDim1;
    case OpId::kAttnOutProj:
    case OpId::kExpertFfn2:
    case OpId::kSharedFfn2:
      return ShardDim::kDim0;
    default:
      return ShardDim::kUnsharded;
  }
}

inline std::vector<ShardDim> MegatronFineDims(
    std::span<const FusedOpDescriptor> ops) {
  std::vector<ShardDim> dims;
  dims.reserve(ops.size());
  for (const auto& op : ops) {
    ShardDim d = MegatronDim(op.id);
    dims.push_back(op.Admits(d) ? d : ShardDim::kUnsharded);
  }
  return dims;
}

struct ActionSpaceSpec {
  std::vector<int64_t> tp_domain = {1, 2, 4, 8, 16, 32, 64};
  std::vector<int64_t> ep_domain = {1, 2, 4, 8, 16, 32, 64};
  std::vector<int64_t> pp_domain = {1, 2, 4, 8, 16, 32, 64};
  std::vector<int64_t> batch_domain = {1,  2,   4,   8,   16,  32,
                                       64, 128, 256, 512, 1024};
  // Searchable ops, one fine-grained head each. Ops left out keep their
  // Megatron assignment.
  std::vector<OpId> ops = {
      OpId::kQkvProj,    OpId::kAttnCore,   OpId::kAttnOutProj,
      OpId::kRouterGate, OpId::kExpertFfn1, OpId::kExpertFfn2,
      OpId::kSharedFfn1, OpId::kSharedFfn2, OpId::kEmbedding,
      OpId::kFinalNorm,  OpId::kLmHead,     OpId::kKvCacheIo};

  static constexpr int kNumCoarse = 4;

  size_t num_ops() const { return ops.size(); }
  size_t action_dim() const { return kNumCoarse + ops.size(); }

  const std::vector<int64_t>& CoarseDomain(size_t m) const {
    switch (m) {
      case 0: return tp_domain;
      case 1: return ep_domain;
      case 2: return pp_domain;
      default: return batch_domain;
    }
  }

  // Number of choices of sub-action m.
  int64_t HeadSize(size_t m) const {
    return m < kNumCoarse ? static_cast<int64_t>(CoarseDomain(m).size())
                          : kNumDimChoices;
  }

  std::vector<int64_t> HeadSizes() const {
    std::vector<int64_t> sizes(action_dim());
    for (size_t m = 0; m < sizes.size(); ++m) sizes[m] = HeadSize(m);
    return sizes;
  }

  // |tp|·|ep|·|pp|·|batch|·3^L as a double (it overflows int64 quickly).
  double JointSize() const {
    double n = 1.0;
    for (size_t m = 0; m < action_dim(); ++m) n *= static_cast<double>(HeadSize(m));
    return n;
  }

  void Validate() const {
    const char* names[] = {"tp", "ep", "pp", "batch"};
    for (size_t m = 0; m < kNumCoarse; ++m) {
      const auto& d = CoarseDomain(m);
      if (d.empty()) {
        throw ConfigError(std::string("action_space.") + names[m] +
                          " must be non-empty");
      }
      if (d.front() < 1 || !std::is_sorted(d.begin(), d.end()) ||
          std::adjacent_find(d.begin(), d.end()) != d.end()) {
        throw ConfigError(std::string("action_space.") + names[m] +
                          " must be strictly increasing and >= 1");
      }
    }
    if (ops.empty()) throw ConfigError("action_space.ops must be non-empty");
    for (size_t i = 0; i < ops.size(); ++i) {
      for (size_t j = i + 1; j < ops.size(); ++j) {
        if (ops[i] == ops[j]) {
          throw ConfigError("action_space.ops lists '" +
                            std::string(OpName(ops[i])) + "' twice");
        }
      }
    }
  }
};

using ActionVector = std::vector<int64_t>;

struct Strategy {
  int64_t tp = 1;
  int64_t ep = 1;
  int64_t pp = 1;
  int64_t batch = 1;
  std::vector<ShardDim> op_dims;  // aligned with ActionSpaceSpec::ops

  friend bool operator==(const Strategy&, const Strategy&) = default;
};

inline int64_t WorldSize(const Strategy& s) { return s.tp * s.ep * s.pp; }

inline std::string DomainString(const std::vector<int64_t>& d) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < d.size(); ++i) os << (i ? ", " : "") << d[i];
  os << "]";
  return os.str();
}

inline ActionVector EncodeStrategy(const Strategy& s,
                                   const ActionSpaceSpec& space) {
  const int64_t coarse[] = {s.tp, s.ep, s.pp, s.batch};
  const char* names[] = {"tp", "ep", "pp", "batch"};
  if (s.op_dims.size() != space.num_ops()) {
    throw EncodingError("strategy has " + std::to_string(s.op_dims.size()) +
                        " op dims, action space expects " +
                        std::to_string(space.num_ops()));
  }
  ActionVector v(space.action_dim());
  for (size_t m = 0; m < ActionSpaceSpec::kNumCoarse; ++m) {
    const auto& d = space.CoarseDomain(m);
    auto it = std::find(d.begin(), d.end(), coarse[m]);
    if (it == d.end()) {
      throw EncodingError(std::string(names[m]) + "=" +
                          std::to_string(coarse[m]) +
                          " not in domain; allowed values: " + DomainString(d));
    }
    v[m] = it - d.begin();
  }
  for (size_t l = 0; l < s.op_dims.size(); ++l) {
    auto idx = static_cast<int64_t>(s.op_dims[l]);
    if (idx < 0 || idx >= kNumDimChoices) {
      throw EncodingError("op dim out of range at op " + std::to_string(l));
    }
    v[ActionSpaceSpec::kNumCoarse + l] = idx;
  }
  return v;
}

inline Strategy DecodeStrategy(std::span<const int64_t> v,
                               const ActionSpaceSpec& space) {
  if (v.size() != space.action_dim()) {
    throw EncodingError("action vector has length " + std::to_string(v.size()) +
                        ", expected " + std::to_string(space.action_dim()));
  }
  for (size_t m = 0; m < v.size(); ++m) {
    if (v[m] < 0 || v[m] >= space.HeadSize(m)) {
      throw EncodingError("action component " + std::to_string(m) + " = " +
                          std::to_string(v[m]) + " outside [0, " +
                          std::to_string(space.HeadSize(m)) + ")");
    }
  }
  Strategy s;
  s.tp = space.tp_domain[v[0]];
  s.ep = space.ep_domain[v[1]];
  s.pp = space.pp_domain[v[2]];
  s.batch = space.batch_domain[v[3]];
  s.op_dims.resize(space.num_ops());
  for (size_t l = 0; l < space.num_ops(); ++l) {
    s.op_dims[l] = static_cast<ShardDim>(v[ActionSpaceSpec::kNumCoarse + l]);
  }
  return s;
}

// Dims for the searchable ops of `space` under the Megatron heuristic.
inline std::vector<ShardDim> MegatronOpDims(const ActionSpaceSpec& space,
                                            const ModelSpec& model) {
  auto catalog = CanonicalOps(model);
  std::vector<FusedOpDescriptor> selected;
  for (OpId id : space.ops) selected.push_back(catalog[static_cast<size_t>(id)]);
  return MegatronFineDims(selected);
}

// Shard axis for every canonical op: searchable ops take the strategy's
// choice, the rest their Megatron assignment.
inline std::array<ShardDim, kNumCanonicalOps> FullOpDims(
    const Strategy& s, const ActionSpaceSpec& space) {
  std::array<ShardDim, kNumCanonicalOps> dims{};
  for (int i = 0; i < kNumCanonicalOps; ++i) {
    dims[i] = MegatronDim(static_cast<OpId>(i));
  }
  for (size_t l = 0; l < space.ops.size() && l < s.op_dims.size(); ++l) {
    dims[static_cast<size_t>(space.ops[l])] = s.op_dims[l];
  }
  return dims;
}

// Total parameters, counting each FFN as two matrices and untied
// embedding / LM head.
inline double ParameterCount(const ModelSpec& m) {
  const double h = static_cast<double>(m.hidden_dim);
  const double f = static_cast<double>(m.ffn_dim);
  const double attn =
      h * static_cast<double>((m.num_heads + 2 * m.num_kv_heads) * m.head_dim) +
      static_cast<double>(m.num_heads * m.head_dim) * h;
  const double router = h * static_cast<double>(m.num_experts);
  const double experts = static_cast<double>(m.num_experts) * 2.0 * h * f;
  const double shared = m.has_shared_expert ? 2.0 * h * f : 0.0;
  const double per_layer = attn + router + experts + shared;
  const double global = 2.0 * static_cast<double>(m.vocab_size) * h + h;
  return static_cast<double>(m.num_layers) * per_layer + global;
}

inline std::string StrategyToString(const Strategy& s,
                                    const ActionSpaceSpec& space) {
  std::ostringstream os;
  os << "tp=" << s.tp << " ep=" << s.ep << " pp=" << s.pp
     << " batch=" << s.batch << " dims={";
  for (size_t l = 0; l < s.op_dims.size(); ++l) {
    os << (l ? ", " : "")
       << (l < space.ops.size() ? OpName(space.ops[l]) : "?") << ":"
       << ShardDimName(s.op_dims[l]);
  }
  os << "}";
  return os.str();
}

}  // namespace shardopt
