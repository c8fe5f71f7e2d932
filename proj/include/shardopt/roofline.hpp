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

// Roofline performance model for decode-phase MoE inference.
//
// All cost formulas live in this file:
//
//   op time          max(flops / peak_flops, bytes / hbm_bandwidth)
//                    + kernel_overhead
//   collective time  ModeledBytes(c) / link_bw
//                    + per_collective_latency * ceil(log2 n)
//                    (ring: AllReduce 2(n-1)/n S, AllGather / ReduceScatter /
//                    AllToAll (n-1)/n S, PointToPoint S)
//   link_bw          intra_node_bw if the group fits in a node, else
//                    inter_node_bw
//
// Decode FLOPs per token: 2·rows·cols per matmul, 4·heads·head_dim·context
// for the attention core. Routed expert work is spread evenly over the EP
// group; the number of experts touched per step is min(E, batch·top_k).
// Dense weights are replicated across EP ranks and the batch is split over
// them (data-parallel attention): each EP rank runs batch/ep sequences
// through attention and keeps only their KV cache.
//
// A sharded op does 1/tp of the work and moves 1/tp of its weight and
// activation bytes; an Unsharded op at tp > 1 is executed redundantly.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "shardopt/errors.hpp"
#include "shardopt/layout.hpp"
#include "shardopt/strategy.hpp"

namespace shardopt {

enum class InvalidReason : uint8_t {
  kNone,
  kOverDeviceBudget,
  kLayoutError,
  kOom,
  kSloViolation,
};

inline std::string_view InvalidReasonName(InvalidReason r) {
  switch (r) {
    case InvalidReason::kNone: return "none";
    case InvalidReason::kOverDeviceBudget: return "over_device_budget";
    case InvalidReason::kLayoutError: return "layout_error";
    case InvalidReason::kOom: return "oom";
    case InvalidReason::kSloViolation: return "slo_violation";
  }
  return "?";
}

inline InvalidReason InvalidReasonFromName(std::string_view name) {
  for (auto r : {InvalidReason::kNone, InvalidReason::kOverDeviceBudget,
                 InvalidReason::kLayoutError, InvalidReason::kOom,
                 InvalidReason::kSloViolation}) {
    if (InvalidReasonName(r) == name) return r;
  }
  throw ConfigError("unknown invalid reason '" + std::string(name) + "'");
}

struct Workload {
  int64_t context_len = 16384;
  double slo_tpot = 0.05;          // seconds per output token
  double workspace_bytes = 2.0e9;  // fixed activation workspace per device

  void Validate() const {
    if (context_len < 1) throw ConfigError("workload.context_len must be >= 1");
    if (!(slo_tpot > 0)) throw ConfigError("workload.slo_tpot must be > 0");
    if (workspace_bytes < 0) {
      throw ConfigError("workload.workspace_bytes must be >= 0");
    }
  }
};

struct SimRequest {
  const ModelSpec* model = nullptr;
  const HardwareSpec* hw = nullptr;
  const ActionSpaceSpec* space = nullptr;
  Strategy strategy;
  Workload workload;
};

struct TimeBreakdown {
  double compute_s = 0.0;
  double comm_s = 0.0;
  double pipeline_s = 0.0;
};

struct SimResult {
  bool valid = false;
  InvalidReason invalid_reason = InvalidReason::kNone;
  std::string detail;        // human-readable cause when invalid
  double throughput = 0.0;   // tokens/s/chip
  double tpot = 0.0;         // seconds
  double mem_per_device = 0.0;
  double max_stage_s = 0.0;
  TimeBreakdown breakdown;
  LayerPlan layer_plan;
  LayerPlan prologue_plan;
  LayerPlan epilogue_plan;
};

inline double OpTime(double flops, double bytes_moved, const HardwareSpec& hw) {
  return std::max(flops / hw.peak_flops, bytes_moved / hw.hbm_bandwidth) +
         hw.kernel_overhead;
}

inline double CollectiveTime(const CollectiveOp& c, const HardwareSpec& hw) {
  if (c.is_noop()) return 0.0;
  const double bw = c.interconnect == Interconnect::kIntraNode
                        ? hw.intra_node_bw
                        : hw.inter_node_bw;
  const double steps =
      std::ceil(std::log2(static_cast<double>(std::max<int64_t>(c.group_size, 1))));
  return ModeledBytes(c) / bw + hw.per_collective_latency * steps;
}

// KV heads are split over at most num_kv_heads TP ranks; beyond that they are
// replicated.
inline int64_t KvShare(const ModelSpec& m, int64_t tp, ShardDim attn_axis) {
  return attn_axis == ShardDim::kDim1 ? std::min(tp, m.num_kv_heads) : 1;
}

inline double KvCacheBytes(const ModelSpec& m, const Strategy& s,
                           ShardDim attn_axis, int64_t context_len,
                           int64_t batch) {
  const double layers = static_cast<double>(m.num_layers) /
                        static_cast<double>(s.pp);
  return 2.0 * layers *
         static_cast<double>(m.num_kv_heads * m.head_dim) /
         static_cast<double>(KvShare(m, s.tp, attn_axis)) *
         static_cast<double>(context_len) * static_cast<double>(batch) /
         static_cast<double>(s.ep) * static_cast<double>(m.dtype_bytes);
}

inline double WeightBytesPerDevice(const ModelSpec& m, const Strategy& s,
                                   const std::array<ShardDim, kNumCanonicalOps>& dims) {
  const auto ops = CanonicalOps(m);
  const double bpe = static_cast<double>(m.dtype_bytes);
  auto shard = [&](OpId id) {
    return dims[static_cast<size_t>(id)] == ShardDim::kUnsharded
               ? 1.0
               : static_cast<double>(s.tp);
  };
  auto bytes = [&](OpId id) {
    const auto& op = ops[static_cast<size_t>(id)];
    return static_cast<double>(op.rows) * static_cast<double>(op.cols) * bpe /
           shard(id);
  };
  double per_layer = bytes(OpId::kQkvProj) + bytes(OpId::kAttnOutProj) +
                     bytes(OpId::kRouterGate);
  if (m.has_shared_expert) {
    per_layer += bytes(OpId::kSharedFfn1) + bytes(OpId::kSharedFfn2);
  }
  per_layer += static_cast<double>(m.num_experts) *
               (bytes(OpId::kExpertFfn1) + bytes(OpId::kExpertFfn2)) /
               static_cast<double>(s.ep);
  const double global = bytes(OpId::kEmbedding) + bytes(OpId::kLmHead) +
                        static_cast<double>(m.hidden_dim) * bpe;
  return (static_cast<double>(m.num_layers) * per_layer + global) /
         static_cast<double>(s.pp);
}

inline double MemoryPerDevice(const ModelSpec& m, const ActionSpaceSpec& space,
                              const Strategy& s, int64_t context_len,
                              int64_t batch, double workspace_bytes) {
  const auto dims = FullOpDims(s, space);
  return WeightBytesPerDevice(m, s, dims) +
         KvCacheBytes(m, s, dims[static_cast<size_t>(OpId::kAttnCore)],
                      context_len, batch) +
         workspace_bytes;
}

struct OpWork {
  double flops = 0.0;
  double bytes = 0.0;
};

// Per-device work of one plan step.
inline OpWork StepWork(const PlanStep& step, const ModelSpec& m,
                       const std::vector<FusedOpDescriptor>& ops,
                       const Strategy& s, int64_t context_len) {
  OpWork w;
  if (!step.op) return w;
  const auto& op = ops[static_cast<size_t>(*step.op)];
  // Tokens handled by this EP rank outside the expert block.
  const double tok = static_cast<double>(s.batch) / static_cast<double>(s.ep);
  const double bpe = static_cast<double>(m.dtype_bytes);
  const double h = static_cast<double>(m.hidden_dim);
  const double shard =
      step.axis == ShardDim::kUnsharded ? 1.0 : static_cast<double>(s.tp);
  const double rows = static_cast<double>(op.rows);
  const double cols = static_cast<double>(op.cols);
  auto matmul = [&](double tokens, double weight_bytes) {
    w.flops = 2.0 * tokens * rows * cols / shard;
    w.bytes = (weight_bytes + tokens * (rows + cols) * bpe) / shard;
  };
  switch (*step.op) {
    case OpId::kQkvProj:
    case OpId::kAttnOutProj:
    case OpId::kSharedFfn1:
    case OpId::kSharedFfn2:
    case OpId::kLmHead:
    case OpId::kRouterGate:
      matmul(tok, rows * cols * bpe);
      break;
    case OpId::kExpertFfn1:
    case OpId::kExpertFfn2: {
      const double k = static_cast<double>(m.experts_per_token);
      const double ep = static_cast<double>(s.ep);
      const double routed = tok * k;
      const double active =
          std::min(static_cast<double>(m.num_experts),
                   static_cast<double>(s.batch) * k) / ep;
      matmul(routed, active * rows * cols * bpe);
      break;
    }
    case OpId::kAttnCore: {
      const double heads = static_cast<double>(m.num_heads);
      const double hd = static_cast<double>(m.head_dim);
      const double ctx = static_cast<double>(context_len);
      const double kv = 2.0 * static_cast<double>(m.num_kv_heads) * hd * ctx *
                        bpe / static_cast<double>(KvShare(m, s.tp, step.axis));
      w.flops = tok * 4.0 * heads * hd * ctx / shard;
      w.bytes = tok * kv + tok * 2.0 * heads * hd * bpe / shard;
      break;
    }
    case OpId::kEmbedding:
      w.bytes = 2.0 * tok * h * bpe / shard;
      break;
    case OpId::kFinalNorm:
      w.flops = 5.0 * tok * h;
      w.bytes = 2.0 * tok * h * bpe;
      break;
    case OpId::kKvCacheIo:
      break;  // costed per stage, see KvAppendWork
  }
  return w;
}

// Appending this step's K/V for `layers` layers.
inline OpWork KvAppendWork(const ModelSpec& m, const Strategy& s,
                           ShardDim attn_axis, double layers) {
  OpWork w;
  w.bytes = layers * 2.0 * static_cast<double>(m.num_kv_heads * m.head_dim) *
            static_cast<double>(s.batch) / static_cast<double>(s.ep) *
            static_cast<double>(m.dtype_bytes) /
            static_cast<double>(KvShare(m, s.tp, attn_axis));
  return w;
}

struct PlanCost {
  double compute_s = 0.0;
  double comm_s = 0.0;
};

inline PlanCost CostPlan(const LayerPlan& plan, const ModelSpec& m,
                         const HardwareSpec& hw, const Strategy& s,
                         int64_t context_len) {
  PlanCost cost;
  const auto ops = CanonicalOps(m);
  for (const auto& step : plan.steps) {
    for (const auto& c : step.collectives) cost.comm_s += CollectiveTime(c, hw);
    if (!step.op) continue;
    if (!m.has_shared_expert && (*step.op == OpId::kSharedFfn1 ||
                                 *step.op == OpId::kSharedFfn2)) {
      continue;
    }
    const OpWork w = StepWork(step, m, ops, s, context_len);
    cost.compute_s += OpTime(w.flops, w.bytes, hw);
  }
  return cost;
}

// Checks ops that no plan visits (e.g. kv_cache_io) and the coarse shape
// constraints.
inline void CheckStructure(const ModelSpec& m, const ActionSpaceSpec& space,
                           const Strategy& s) {
  const auto ops = CanonicalOps(m);
  for (size_t l = 0; l < space.ops.size(); ++l) {
    const auto& op = ops[static_cast<size_t>(space.ops[l])];
    if (!op.Admits(s.op_dims[l])) {
      throw LayoutError("op '" + op.name + "' does not admit " +
                        std::string(ShardDimName(s.op_dims[l])));
    }
  }
  if (s.pp > m.num_layers) {
    throw LayoutError("pp=" + std::to_string(s.pp) + " exceeds " +
                      std::to_string(m.num_layers) + " layers");
  }
  if (s.batch < s.ep) {
    throw LayoutError("batch=" + std::to_string(s.batch) +
                      " leaves EP ranks without sequences (ep=" +
                      std::to_string(s.ep) + ")");
  }
  if (m.num_experts % s.ep != 0) {
    throw LayoutError("ep=" + std::to_string(s.ep) + " does not divide " +
                      std::to_string(m.num_experts) + " experts");
  }
}

// Validity gates, in order: device budget, layout, memory, SLO.
inline SimResult Simulate(const SimRequest& req) {
  const ModelSpec& m = *req.model;
  const HardwareSpec& hw = *req.hw;
  const ActionSpaceSpec& space = *req.space;
  const Strategy& s = req.strategy;
  const int64_t ctx = req.workload.context_len;
  SimResult r;
  auto fail = [&](InvalidReason why, std::string detail) {
    r.valid = false;
    r.invalid_reason = why;
    r.detail = std::move(detail);
    r.throughput = 0.0;
    return r;
  };

  const int64_t world = WorldSize(s);
  if (world > hw.device_budget) {
    return fail(InvalidReason::kOverDeviceBudget,
                "world size " + std::to_string(world) + " > budget " +
                    std::to_string(hw.device_budget));
  }
  try {
    CheckStructure(m, space, s);
    r.layer_plan = PlanLayer(m, space, s, s.batch, hw.node_size);
    r.prologue_plan = PlanPrologue(m, space, s, s.batch, hw.node_size);
    r.epilogue_plan = PlanEpilogue(m, space, s, s.batch, hw.node_size);
  } catch (const LayoutError& e) {
    return fail(InvalidReason::kLayoutError, e.what());
  }

  const auto dims = FullOpDims(s, space);
  const ShardDim attn_axis = dims[static_cast<size_t>(OpId::kAttnCore)];
  r.mem_per_device = MemoryPerDevice(m, space, s, ctx, s.batch,
                                     req.workload.workspace_bytes);

  const PlanCost layer = CostPlan(r.layer_plan, m, hw, s, ctx);
  const PlanCost pro = CostPlan(r.prologue_plan, m, hw, s, ctx);
  const PlanCost epi = CostPlan(r.epilogue_plan, m, hw, s, ctx);

  CollectiveOp p2p;
  p2p.kind = CollectiveKind::kPointToPoint;
  p2p.group = ParallelGroup::kPipeline;
  p2p.group_size = 2;
  p2p.payload_bytes = static_cast<double>(s.batch) / static_cast<double>(s.ep) *
                      static_cast<double>(m.hidden_dim * m.dtype_bytes);
  p2p.interconnect = world <= hw.node_size ? Interconnect::kIntraNode
                                           : Interconnect::kInterNode;
  const double p2p_s = s.pp > 1 ? CollectiveTime(p2p, hw) : 0.0;

  double compute = 0.0;
  double comm = 0.0;
  double max_stage = 0.0;
  const int64_t base = m.num_layers / s.pp;
  const int64_t extra = m.num_layers % s.pp;
  for (int64_t st = 0; st < s.pp; ++st) {
    const double layers = static_cast<double>(base + (st < extra ? 1 : 0));
    const OpWork kv = KvAppendWork(m, s, attn_axis, layers);
    double c = layers * layer.compute_s + OpTime(kv.flops, kv.bytes, hw);
    double x = layers * layer.comm_s;
    if (st == 0) {
      c += pro.compute_s;
      x += pro.comm_s;
    }
    if (st == s.pp - 1) {
      c += epi.compute_s;
      x += epi.comm_s;
    }
    compute += c;
    comm += x;
    max_stage = std::max(max_stage, c + x);
  }
  r.breakdown.compute_s = compute;
  r.breakdown.comm_s = comm;
  r.breakdown.pipeline_s = static_cast<double>(s.pp - 1) * p2p_s;
  r.tpot = r.breakdown.compute_s + r.breakdown.comm_s + r.breakdown.pipeline_s;
  r.max_stage_s = max_stage;

  if (r.mem_per_device > hw.hbm_capacity) {
    return fail(InvalidReason::kOom, "memory per device exceeds HBM capacity");
  }
  if (r.tpot > req.workload.slo_tpot) {
    return fail(InvalidReason::kSloViolation, "tpot exceeds SLO");
  }
  r.valid = true;
  r.throughput = static_cast<double>(s.batch) / max_stage /
                 static_cast<double>(world);
  return r;
}

}  // namespace shardopt
