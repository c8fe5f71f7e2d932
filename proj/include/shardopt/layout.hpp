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

// Sharded-tensor layout algebra over a 1-D tensor-parallel group.
//
// Activations are 2-D [tokens, features]. A tensor on the TP group is either
// Replicated, Sharded along one axis, or a PartialSum (each device holds an
// unreduced additive contribution). Each op with a chosen weight axis demands
// one input layout and produces one output layout; the planner inserts the
// collective that moves the producer's layout to the consumer's.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "shardopt/errors.hpp"
#include "shardopt/strategy.hpp"

namespace shardopt {

enum class LayoutState : uint8_t { kReplicated, kSharded, kPartialSum };

struct TensorLayout {
  LayoutState state = LayoutState::kReplicated;
  ShardDim axis = ShardDim::kUnsharded;  // kDim0 / kDim1 iff Sharded
  int64_t group_size = 1;

  static TensorLayout Replicated(int64_t n) {
    return {LayoutState::kReplicated, ShardDim::kUnsharded, n};
  }
  // A group of one device holds the whole tensor, so it is Replicated.
  static TensorLayout Sharded(ShardDim axis, int64_t n) {
    if (n == 1) return Replicated(1);
    return {LayoutState::kSharded, axis, n};
  }
  static TensorLayout PartialSum(int64_t n) {
    if (n == 1) return Replicated(1);
    return {LayoutState::kPartialSum, ShardDim::kUnsharded, n};
  }

  bool is_sharded() const { return state == LayoutState::kSharded; }

  friend bool operator==(const TensorLayout&, const TensorLayout&) = default;
};

inline std::string LayoutName(const TensorLayout& l) {
  switch (l.state) {
    case LayoutState::kReplicated: return "Replicated";
    case LayoutState::kPartialSum: return "PartialSum";
    case LayoutState::kSharded:
      return l.axis == ShardDim::kDim0 ? "Sharded(dim0)" : "Sharded(dim1)";
  }
  return "?";
}

enum class CollectiveKind : uint8_t {
  kNoOp,
  kAllReduce,
  kAllGather,
  kReduceScatter,
  kAllToAll,
  kPointToPoint,
};

inline std::string_view CollectiveName(CollectiveKind k) {
  switch (k) {
    case CollectiveKind::kNoOp: return "NoOp";
    case CollectiveKind::kAllReduce: return "AllReduce";
    case CollectiveKind::kAllGather: return "AllGather";
    case CollectiveKind::kReduceScatter: return "ReduceScatter";
    case CollectiveKind::kAllToAll: return "AllToAll";
    case CollectiveKind::kPointToPoint: return "PointToPoint";
  }
  return "?";
}

enum class Interconnect : uint8_t { kIntraNode, kInterNode };

// Which parallel dimension a collective runs over.
enum class ParallelGroup : uint8_t { kTensor, kExpert, kPipeline };

struct CollectiveOp {
  CollectiveKind kind = CollectiveKind::kNoOp;
  double payload_bytes = 0.0;
  int64_t group_size = 1;
  Interconnect interconnect = Interconnect::kIntraNode;
  ParallelGroup group = ParallelGroup::kTensor;

  bool is_noop() const { return kind == CollectiveKind::kNoOp; }

  friend bool operator==(const CollectiveOp&, const CollectiveOp&) = default;
};

// Per-device bytes on the wire under the ring formulas. This is the one cost
// convention shared by the planner (to pick cheapest merges) and the
// simulator (which divides it by link bandwidth).
inline double ModeledBytes(const CollectiveOp& c) {
  const double n = static_cast<double>(c.group_size);
  const double s = c.payload_bytes;
  switch (c.kind) {
    case CollectiveKind::kNoOp: return 0.0;
    case CollectiveKind::kAllReduce: return 2.0 * (n - 1.0) / n * s;
    case CollectiveKind::kAllGather:
    case CollectiveKind::kReduceScatter:
    case CollectiveKind::kAllToAll: return (n - 1.0) / n * s;
    case CollectiveKind::kPointToPoint: return s;
  }
  return 0.0;
}

// Fixed transition table. Moving into a PartialSum is always local: a device
// keeps its replica or shard and the others contribute zeros.
inline CollectiveOp Transition(const TensorLayout& from, const TensorLayout& to,
                               double payload_bytes) {
  if (from.group_size != to.group_size) {
    throw LayoutError("transition between groups of size " +
                      std::to_string(from.group_size) + " and " +
                      std::to_string(to.group_size));
  }
  CollectiveOp c;
  c.group_size = from.group_size;
  if (from == to || from.group_size == 1) return c;
  using S = LayoutState;
  CollectiveKind kind = CollectiveKind::kNoOp;
  switch (from.state) {
    case S::kReplicated:
      kind = CollectiveKind::kNoOp;
      break;
    case S::kPartialSum:
      kind = to.state == S::kReplicated ? CollectiveKind::kAllReduce
                                        : CollectiveKind::kReduceScatter;
      break;
    case S::kSharded:
      if (to.state == S::kReplicated) {
        kind = CollectiveKind::kAllGather;
      } else if (to.state == S::kSharded) {
        kind = CollectiveKind::kAllToAll;
      } else {
        kind = CollectiveKind::kNoOp;
      }
      break;
  }
  c.kind = kind;
  c.payload_bytes = kind == CollectiveKind::kNoOp ? 0.0 : payload_bytes;
  return c;
}

// Input layout an op needs for a given weight axis. std::nullopt means the
// op accepts any layout (elementwise ops).
inline std::optional<TensorLayout> RequiredInputLayout(
    const FusedOpDescriptor& op, ShardDim axis, int64_t tp) {
  if (!op.Admits(axis)) {
    throw LayoutError("op '" + op.name + "' does not admit " +
                      std::string(ShardDimName(axis)));
  }
  switch (op.op_class) {
    case OpClass::kElementwise:
      return std::nullopt;
    case OpClass::kRouter:
      return TensorLayout::Replicated(tp);
    case OpClass::kAttentionCore:
      return axis == ShardDim::kDim1
                 ? TensorLayout::Sharded(ShardDim::kDim1, tp)
                 : TensorLayout::Replicated(tp);
    case OpClass::kDenseMatmul:
    case OpClass::kMoeMatmul:
      // Row-parallel (Dim0) contracts over a feature-sharded input.
      return axis == ShardDim::kDim0
                 ? TensorLayout::Sharded(ShardDim::kDim1, tp)
                 : TensorLayout::Replicated(tp);
  }
  return TensorLayout::Replicated(tp);
}

inline TensorLayout InferOutputLayout(const FusedOpDescriptor& op,
                                      const TensorLayout& input, ShardDim axis,
                                      int64_t tp) {
  auto required = RequiredInputLayout(op, axis, tp);
  if (!required) return input;
  if (input != *required) {
    throw LayoutError("op '" + op.name + "' with weight axis " +
                      std::string(ShardDimName(axis)) + " cannot consume " +
                      LayoutName(input));
  }
  switch (op.op_class) {
    case OpClass::kRouter:
      return TensorLayout::Replicated(tp);
    case OpClass::kAttentionCore:
      return input;  // heads are independent
    default:
      break;
  }
  switch (axis) {
    case ShardDim::kUnsharded: return TensorLayout::Replicated(tp);
    case ShardDim::kDim1: return TensorLayout::Sharded(ShardDim::kDim1, tp);
    case ShardDim::kDim0: return TensorLayout::PartialSum(tp);
  }
  return TensorLayout::Replicated(tp);
}

struct PlanStep {
  std::string name;
  std::optional<OpId> op;  // empty for boundary steps (residual, dispatch...)
  ShardDim axis = ShardDim::kUnsharded;
  TensorLayout input;
  TensorLayout output;
  // Collectives inserted in front of the op, in execution order.
  std::vector<CollectiveOp> collectives;
};

struct LayerPlan {
  std::vector<PlanStep> steps;
  double total_collective_bytes = 0.0;  // sum of non-NoOp payloads

  const PlanStep* Find(std::string_view name) const {
    for (const auto& s : steps) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }

  int Count(CollectiveKind kind) const {
    int n = 0;
    for (const auto& s : steps) {
      for (const auto& c : s.collectives) n += c.kind == kind;
    }
    return n;
  }

  double GroupBytes(ParallelGroup g) const {
    double b = 0.0;
    for (const auto& s : steps) {
      for (const auto& c : s.collectives) {
        if (!c.is_noop() && c.group == g) b += c.payload_bytes;
      }
    }
    return b;
  }

  std::string ToTrace() const;
};

inline std::string LayerPlan::ToTrace() const {
  std::ostringstream os;
  for (const auto& s : steps) {
    os << std::left << std::setw(14) << s.name << " ";
    if (s.op) {
      os << std::setw(9) << ShardDimName(s.axis) << " ";
    } else {
      os << std::setw(9) << "-" << " ";
    }
    os << std::setw(13) << LayoutName(s.input) << " -> " << std::setw(13)
       << LayoutName(s.output);
    bool any = false;
    for (const auto& c : s.collectives) {
      if (c.is_noop()) continue;
      os << (any ? ", " : "  ") << CollectiveName(c.kind) << "["
         << (c.group == ParallelGroup::kTensor
                 ? "tp"
                 : c.group == ParallelGroup::kExpert ? "ep" : "pp")
         << "=" << c.group_size << ", "
         << (c.interconnect == Interconnect::kIntraNode ? "intra" : "inter")
         << ", " << std::setprecision(6) << c.payload_bytes << " B]";
      any = true;
    }
    os << "\n";
  }
  os << "total collective bytes: " << std::setprecision(10)
     << total_collective_bytes << "\n";
  return os.str();
}

// Axis length that a shard choice splits across the TP group; the TP degree
// must divide it. Attention-facing axes split whole heads.
inline int64_t ShardedExtent(const FusedOpDescriptor& op, ShardDim axis,
                             const ModelSpec& m) {
  if (axis == ShardDim::kUnsharded) return 1;
  switch (op.id) {
    case OpId::kQkvProj:
      return axis == ShardDim::kDim1 ? m.num_heads : m.hidden_dim;
    case OpId::kAttnCore:
      return m.num_heads;
    case OpId::kAttnOutProj:
      return axis == ShardDim::kDim0 ? m.num_heads : m.hidden_dim;
    default:
      return axis == ShardDim::kDim0 ? op.rows : op.cols;
  }
}

// Builds the plan for one stretch of ops. Tracks the current activation
// layout and the logical size of the tensor it describes.
class PlanBuilder {
 public:
  PlanBuilder(const ModelSpec& model,
              const std::array<ShardDim, kNumCanonicalOps>& dims, int64_t tp,
              int64_t ep, int64_t node_size)
      : model_(model),
        catalog_(CanonicalOps(model)),
        dims_(dims),
        tp_(tp),
        ep_(ep),
        tp_link_(tp <= node_size ? Interconnect::kIntraNode
                                 : Interconnect::kInterNode),
        ep_link_(tp * ep <= node_size ? Interconnect::kIntraNode
                                      : Interconnect::kInterNode),
        current_(TensorLayout::Replicated(tp)) {}

  const TensorLayout& current() const { return current_; }
  void set_current(const TensorLayout& l, double bytes) {
    current_ = l;
    current_bytes_ = bytes;
  }
  double current_bytes() const { return current_bytes_; }

  // Runs `id` on the current activation; `output_bytes` is the logical size
  // of the op's output tensor.
  void Op(OpId id, double output_bytes) {
    const auto& op = catalog_[static_cast<size_t>(id)];
    const ShardDim axis = dims_[static_cast<size_t>(id)];
    if (!op.Admits(axis)) {
      throw LayoutError("op '" + op.name + "' does not admit " +
                        std::string(ShardDimName(axis)));
    }
    if (axis != ShardDim::kUnsharded && tp_ > 1) {
      const int64_t extent = ShardedExtent(op, axis, model_);
      if (extent % tp_ != 0) {
        throw LayoutError("op '" + op.name + "': tp=" + std::to_string(tp_) +
                          " does not divide " + std::string(ShardDimName(axis)) +
                          " extent " + std::to_string(extent));
      }
    }
    PlanStep step;
    step.name = op.name;
    step.op = id;
    step.axis = axis;
    auto required = RequiredInputLayout(op, axis, tp_);
    if (required) Reach(*required, step.collectives);
    step.input = current_;
    step.output = InferOutputLayout(op, current_, axis, tp_);
    current_ = step.output;
    current_bytes_ = output_bytes;
    Push(std::move(step));
  }

  // Boundary step that moves the current tensor to `target`.
  void Boundary(const std::string& name, const TensorLayout& target) {
    PlanStep step;
    step.name = name;
    step.input = current_;
    Reach(target, step.collectives);
    step.output = current_;
    Push(std::move(step));
  }

  // Expert-parallel all-to-all of the current tensor; the per-device payload
  // shrinks by the TP degree when the tensor is feature-sharded.
  void ExpertAllToAll(const std::string& name, double logical_bytes) {
    PlanStep step;
    step.name = name;
    step.input = current_;
    step.output = current_;
    CollectiveOp c;
    c.group = ParallelGroup::kExpert;
    c.group_size = ep_;
    c.interconnect = ep_link_;
    if (ep_ > 1) {
      c.kind = CollectiveKind::kAllToAll;
      c.payload_bytes =
          current_.is_sharded() ? logical_bytes / static_cast<double>(tp_)
                                : logical_bytes;
    }
    step.collectives.push_back(c);
    current_bytes_ = logical_bytes;
    Push(std::move(step));
  }

  // Sum of two branches living in different layouts: pick the common layout
  // minimizing merge + exit traffic. Candidate order breaks ties.
  void Merge(const std::string& name, const TensorLayout& other,
             double bytes) {
    const TensorLayout repl = TensorLayout::Replicated(tp_);
    std::vector<TensorLayout> candidates = {
        current_, repl, TensorLayout::Sharded(ShardDim::kDim1, tp_),
        TensorLayout::PartialSum(tp_)};
    double best = 0.0;
    TensorLayout pick = current_;
    bool first = true;
    for (const auto& cand : candidates) {
      double cost = ModeledBytes(Transition(current_, cand, bytes)) +
                    ModeledBytes(Transition(other, cand, bytes)) +
                    ModeledBytes(Transition(cand, repl, bytes));
      if (first || cost < best) {
        best = cost;
        pick = cand;
        first = false;
      }
    }
    PlanStep step;
    step.name = name;
    step.input = current_;
    step.collectives.push_back(TpCollective(Transition(other, pick, bytes)));
    step.collectives.push_back(TpCollective(Transition(current_, pick, bytes)));
    current_ = pick;
    current_bytes_ = bytes;
    step.output = current_;
    Push(std::move(step));
  }

  LayerPlan Finish() && { return std::move(plan_); }

 private:
  CollectiveOp TpCollective(CollectiveOp c) const {
    c.group = ParallelGroup::kTensor;
    c.interconnect = tp_link_;
    return c;
  }

  void Reach(const TensorLayout& target, std::vector<CollectiveOp>& out) {
    out.push_back(TpCollective(Transition(current_, target, current_bytes_)));
    current_ = target;
  }

  void Push(PlanStep step) {
    for (const auto& c : step.collectives) {
      if (!c.is_noop()) plan_.total_collective_bytes += c.payload_bytes;
    }
    plan_.steps.push_back(std::move(step));
  }

  const ModelSpec& model_;
  std::vector<FusedOpDescriptor> catalog_;
  std::array<ShardDim, kNumCanonicalOps> dims_;
  int64_t tp_;
  int64_t ep_;
  Interconnect tp_link_;
  Interconnect ep_link_;
  TensorLayout current_;
  double current_bytes_ = 0.0;
  LayerPlan plan_;
};

// Tokens one EP rank carries outside the expert block; the batch is split
// evenly over the EP group.
inline double RankTokens(int64_t batch_tokens, int64_t ep) {
  return static_cast<double>(batch_tokens) / static_cast<double>(ep);
}

// One transformer layer: attention block, residual, MoE block (routed experts
// plus optional shared expert), layer exit back to Replicated.
inline LayerPlan PlanLayer(const ModelSpec& m, const ActionSpaceSpec& space,
                           const Strategy& s, int64_t batch_tokens,
                           int64_t node_size) {
  const auto dims = FullOpDims(s, space);
  const double tok = RankTokens(batch_tokens, s.ep);
  const double bpe = static_cast<double>(m.dtype_bytes);
  const double h = static_cast<double>(m.hidden_dim);
  const double k = static_cast<double>(m.experts_per_token);
  const double f = static_cast<double>(m.ffn_dim);
  const double hidden_bytes = tok * h * bpe;

  PlanBuilder b(m, dims, s.tp, s.ep, node_size);
  b.set_current(TensorLayout::Replicated(s.tp), hidden_bytes);
  b.Op(OpId::kQkvProj,
       tok * static_cast<double>((m.num_heads + 2 * m.num_kv_heads) *
                                 m.head_dim) * bpe);
  b.Op(OpId::kAttnCore,
       tok * static_cast<double>(m.num_heads * m.head_dim) * bpe);
  b.Op(OpId::kAttnOutProj, hidden_bytes);
  b.Boundary("attn_residual", TensorLayout::Replicated(s.tp));

  b.Op(OpId::kRouterGate, tok * static_cast<double>(m.num_experts) * bpe);
  b.set_current(TensorLayout::Replicated(s.tp), hidden_bytes);
  const TensorLayout moe_in = b.current();

  // Routed experts. The TP reshuffle for the first expert matmul happens
  // before dispatch so a feature-sharded tensor ships a 1/tp slice.
  {
    const auto& e1 = CanonicalOps(m)[static_cast<size_t>(OpId::kExpertFfn1)];
    auto req = RequiredInputLayout(e1, dims[static_cast<size_t>(OpId::kExpertFfn1)], s.tp);
    b.Boundary("moe_prepare", *req);
  }
  b.ExpertAllToAll("moe_dispatch", tok * k * h * bpe);
  b.Op(OpId::kExpertFfn1, tok * k * f * bpe);
  b.Op(OpId::kExpertFfn2, tok * k * h * bpe);
  b.ExpertAllToAll("moe_combine", tok * k * h * bpe);
  // Weighted top-k sum is linear, so it keeps the layout.
  b.set_current(b.current(), hidden_bytes);

  if (m.has_shared_expert) {
    const TensorLayout routed = b.current();
    b.set_current(moe_in, hidden_bytes);
    b.Op(OpId::kSharedFfn1, tok * f * bpe);
    b.Op(OpId::kSharedFfn2, hidden_bytes);
    const TensorLayout shared = b.current();
    b.set_current(routed, hidden_bytes);
    b.Merge("moe_merge", shared, hidden_bytes);
  }
  b.Boundary("layer_exit", TensorLayout::Replicated(s.tp));
  return std::move(b).Finish();
}

// Runs once on the first pipeline stage.
inline LayerPlan PlanPrologue(const ModelSpec& m, const ActionSpaceSpec& space,
                              const Strategy& s, int64_t batch_tokens,
                              int64_t node_size) {
  const auto dims = FullOpDims(s, space);
  const double hidden_bytes = RankTokens(batch_tokens, s.ep) *
                              static_cast<double>(m.hidden_dim * m.dtype_bytes);
  PlanBuilder b(m, dims, s.tp, s.ep, node_size);
  // Token ids are replicated; any vocab slice of the one-hot is local.
  b.set_current(TensorLayout::Replicated(s.tp), 0.0);
  b.Op(OpId::kEmbedding, hidden_bytes);
  b.Boundary("embed_exit", TensorLayout::Replicated(s.tp));
  return std::move(b).Finish();
}

// Runs once on the last pipeline stage: final norm, LM head, logits gathered
// for sampling.
inline LayerPlan PlanEpilogue(const ModelSpec& m, const ActionSpaceSpec& space,
                              const Strategy& s, int64_t batch_tokens,
                              int64_t node_size) {
  const auto dims = FullOpDims(s, space);
  const double tok = RankTokens(batch_tokens, s.ep);
  const double bpe = static_cast<double>(m.dtype_bytes);
  const double hidden_bytes = tok * static_cast<double>(m.hidden_dim) * bpe;
  PlanBuilder b(m, dims, s.tp, s.ep, node_size);
  b.set_current(TensorLayout::Replicated(s.tp), hidden_bytes);
  b.Op(OpId::kFinalNorm, hidden_bytes);
  b.Op(OpId::kLmHead, tok * static_cast<double>(m.vocab_size) * bpe);
  b.Boundary("logits_exit", TensorLayout::Replicated(s.tp));
  return std::move(b).Finish();
}

}  // namespace shardopt
