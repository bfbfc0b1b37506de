// Copyright 2026 The HFGCN Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Two-stage fusion graph over the four nodes (A, T, V, F) of every
// utterance, its attention weights, and the relational / plain graph
// convolutions that transform it.
//
// Messages flow src -> dst. Node ids in dumps are canonical (4·i + kind)
// whether or not modality nodes are materialized; `row` fields index the
// feature matrix actually fed to the layers.

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hfgcn/errors.hpp"
#include "hfgcn/numerics.hpp"

namespace hfgcn {

enum class NodeKind : std::uint8_t { kAudio = 0, kText = 1, kVisual = 2, kFusion = 3 };

inline constexpr int kNumRelations = 10;

inline char kind_letter(NodeKind k) { return "ATVF"[static_cast<int>(k)]; }

struct NodeRef {
  std::size_t utterance = 0;
  NodeKind kind = NodeKind::kFusion;

  std::size_t id() const { return 4 * utterance + static_cast<std::size_t>(kind); }
  bool operator==(const NodeRef&) const = default;
};

struct Edge {
  NodeRef src;
  NodeRef dst;
  int relation = 0;
  double weight = 0.0;
  std::size_t src_row = 0;
  std::size_t dst_row = 0;

  bool intra() const { return src.utterance == dst.utterance; }
};

// Past/future reach of second-stage edges; nullopt means unbounded.
struct Window {
  std::optional<std::size_t> past;
  std::optional<std::size_t> future;

  bool contains(std::size_t i, std::size_t j) const {
    if (j < i) return !past || i - j <= *past;
    return !future || j - i <= *future;
  }
};

struct FusionGraph {
  std::size_t num_utterances = 0;
  std::vector<int> speakers;
  std::vector<NodeRef> nodes;  // feature-matrix row order
  std::vector<Edge> edges;     // intra-utterance edges first, then F-F edges
  Window window;
  bool modality_nodes = true;

  std::size_t num_nodes() const { return nodes.size(); }

  std::size_t row_of(NodeRef n) const {
    if (modality_nodes) return n.id();
    if (n.kind != NodeKind::kFusion) {
      throw ContractError("graph without modality nodes has no node " + std::string(1, kind_letter(n.kind)) +
                          std::to_string(n.utterance));
    }
    return n.utterance;
  }

  std::size_t num_intra() const {
    std::size_t k = 0;
    for (const auto& e : edges) k += e.intra() ? 1 : 0;
    return k;
  }
  std::size_t num_inter() const { return edges.size() - num_intra(); }
};

// Relation ids:
//   same utterance, unordered kind pair: {A,T}=1 {A,V}=2 {A,F}=3 {T,V}=4 {T,F}=5 {V,F}=6
//   F_i -> F_j, i != j: same speaker 7 (i<j) / 8 (i>j), different speakers 9 (i<j) / 10 (i>j)
inline int assign_relation(NodeRef src, NodeRef dst, std::span<const int> speakers) {
  if (src.utterance == dst.utterance) {
    if (src.kind == dst.kind) {
      throw ContractError(std::string("assign_relation: self pair ") + kind_letter(src.kind) +
                          std::to_string(src.utterance));
    }
    const int a = std::min(static_cast<int>(src.kind), static_cast<int>(dst.kind));
    const int b = std::max(static_cast<int>(src.kind), static_cast<int>(dst.kind));
    // Pairs (a,b) with a<b in lexicographic order A<T<V<F.
    static constexpr int kTable[4][4] = {{0, 1, 2, 3}, {0, 0, 4, 5}, {0, 0, 0, 6}, {0, 0, 0, 0}};
    return kTable[a][b];
  }
  if (src.kind != NodeKind::kFusion || dst.kind != NodeKind::kFusion) {
    throw ContractError(std::string("assign_relation: illegal pair (") + kind_letter(src.kind) +
                        std::to_string(src.utterance) + ", " + kind_letter(dst.kind) +
                        std::to_string(dst.utterance) + "); only F nodes connect across utterances");
  }
  if (src.utterance >= speakers.size() || dst.utterance >= speakers.size()) {
    throw IndexError("assign_relation: utterance index outside speaker list");
  }
  const bool same = speakers[src.utterance] == speakers[dst.utterance];
  const bool forward = src.utterance < dst.utterance;
  if (same) return forward ? 7 : 8;
  return forward ? 9 : 10;
}

inline Edge make_edge(const FusionGraph& g, NodeRef src, NodeRef dst) {
  Edge e;
  e.src = src;
  e.dst = dst;
  e.relation = assign_relation(src, dst, g.speakers);
  e.src_row = g.row_of(src);
  e.dst_row = g.row_of(dst);
  return e;
}

// Nodes for every utterance; with `modality_nodes` off only F nodes exist.
inline FusionGraph make_nodes(std::span<const int> speakers, bool modality_nodes = true) {
  FusionGraph g;
  g.num_utterances = speakers.size();
  g.speakers.assign(speakers.begin(), speakers.end());
  g.modality_nodes = modality_nodes;
  for (std::size_t i = 0; i < g.num_utterances; ++i) {
    if (modality_nodes) {
      for (int k = 0; k < 4; ++k) g.nodes.push_back({i, static_cast<NodeKind>(k)});
    } else {
      g.nodes.push_back({i, NodeKind::kFusion});
    }
  }
  return g;
}

// Complete directed graph on {A_i, T_i, V_i, F_i} for each utterance:
// 12 edges per utterance, ordered by utterance, then source kind, then
// destination kind.
inline FusionGraph build_first_stage(std::span<const int> speakers) {
  FusionGraph g = make_nodes(speakers, true);
  for (std::size_t i = 0; i < g.num_utterances; ++i)
    for (int s = 0; s < 4; ++s)
      for (int d = 0; d < 4; ++d)
        if (s != d) g.edges.push_back(make_edge(g, {i, NodeKind(s)}, {i, NodeKind(d)}));
  return g;
}

// Adds F_i -> F_j for every i != j inside the window, ordered by i then j.
inline FusionGraph build_second_stage(FusionGraph g, Window window = {}) {
  g.window = window;
  for (std::size_t i = 0; i < g.num_utterances; ++i)
    for (std::size_t j = 0; j < g.num_utterances; ++j)
      if (i != j && window.contains(i, j))
        g.edges.push_back(make_edge(g, {i, NodeKind::kFusion}, {j, NodeKind::kFusion}));
  return g;
}

struct GraphOptions {
  bool first_stage = true;
  bool second_stage = true;
  Window window;
};

inline FusionGraph build_graph(std::span<const int> speakers, const GraphOptions& opts) {
  FusionGraph g = opts.first_stage ? build_first_stage(speakers) : make_nodes(speakers, false);
  if (opts.second_stage) g = build_second_stage(std::move(g), opts.window);
  return g;
}

// ---------------------------------------------------------------------------
// Attention weights

namespace detail {

inline std::vector<std::size_t> edge_field(const FusionGraph& g, bool intra,
                                           std::size_t Edge::*field) {
  std::vector<std::size_t> out;
  for (const auto& e : g.edges)
    if (e.intra() == intra) out.push_back(e.*field);
  return out;
}

}  // namespace detail

// Similarity attention on intra-utterance edges: the score of m -> n is
// x_nᵀ·W_a·x_m and each node's incoming scores are softmax-normalized.
// Returns one weight per intra edge, in edge order.
inline Value first_stage_weights(Tape& tape, const FusionGraph& g, const Value& features,
                                 const Value& w_a) {
  if (w_a.rows() != features.cols() || w_a.cols() != features.cols()) {
    throw DimensionError("first_stage_weights: W_a " + shape_str(w_a.shape()) +
                         " incompatible with node features " + shape_str(features.shape()));
  }
  auto src = detail::edge_field(g, true, &Edge::src_row);
  auto dst = detail::edge_field(g, true, &Edge::dst_row);
  if (src.empty()) return Value::zeros({0, 1});
  const Value projected = matmul(tape, features, w_a);
  const Value scores =
      row_dot(tape, gather_rows(tape, projected, dst), gather_rows(tape, features, src));
  return segment_softmax(tape, scores, std::move(dst), g.num_nodes());
}

struct AttentionParams {
  Value query_w;  // D'×D
  Value query_b;  // 1×D'
  Value key_w;    // D'×D
  Value key_b;    // 1×D'
  Value w_b;      // 2D'×1
};

// MLP attention on F-F edges: score(i -> j) = tanh([q_i, k_j]·W_b) with
// q = Linear_q(F_i), k = Linear_k(F_j); each source's outgoing scores are
// softmax-normalized. Returns one weight per F-F edge, in edge order.
inline Value second_stage_weights(Tape& tape, const FusionGraph& g, const Value& features,
                                  const AttentionParams& p) {
  const std::size_t dp = p.query_w.rows();
  if (p.w_b.rows() != 2 * dp || p.w_b.cols() != 1) {
    throw DimensionError("second_stage_weights: W_b " + shape_str(p.w_b.shape()) +
                         " must be " + std::to_string(2 * dp) + "x1");
  }
  auto src = detail::edge_field(g, false, &Edge::src_row);
  auto dst = detail::edge_field(g, false, &Edge::dst_row);
  if (src.empty()) return Value::zeros({0, 1});

  // Project only the F rows; fusion_index maps a feature row to its F slot.
  std::vector<std::size_t> f_rows;
  std::vector<std::size_t> fusion_index(g.num_nodes(), 0);
  for (std::size_t r = 0; r < g.num_nodes(); ++r) {
    if (g.nodes[r].kind == NodeKind::kFusion) {
      fusion_index[r] = f_rows.size();
      f_rows.push_back(r);
    }
  }
  const Value f = gather_rows(tape, features, f_rows);
  const Value q = add_row(tape, matmul_nt(tape, f, p.query_w), p.query_b);
  const Value k = add_row(tape, matmul_nt(tape, f, p.key_w), p.key_b);
  const Value q_score = matmul(tape, q, slice(tape, p.w_b, 0, 0, dp));
  const Value k_score = matmul(tape, k, slice(tape, p.w_b, 0, dp, 2 * dp));
  std::vector<std::size_t> src_f(src.size()), dst_f(dst.size());
  for (std::size_t e = 0; e < src.size(); ++e) {
    src_f[e] = fusion_index[src[e]];
    dst_f[e] = fusion_index[dst[e]];
  }
  const Value scores = tanh(tape, add(tape, gather_rows(tape, q_score, src_f),
                                      gather_rows(tape, k_score, dst_f)));
  return segment_softmax(tape, scores, std::move(src_f), f_rows.size());
}

// Full per-edge weight column (intra block then F-F block), matching the
// graph's edge order.
inline Value edge_weights(Tape& tape, const FusionGraph& g, const Value& features,
                          const Value& w_a, const AttentionParams& attn) {
  const Value first = first_stage_weights(tape, g, features, w_a);
  const Value second = second_stage_weights(tape, g, features, attn);
  if (second.size() == 0) return first;
  if (first.size() == 0) return second;
  return concat(tape, {first, second}, 0);
}

// Copies numeric weights onto the edges; an undefined Value means 1.
inline void attach_weights(FusionGraph& g, const Value& weights) {
  if (weights.defined() && weights.size() != g.edges.size()) {
    throw DimensionError("attach_weights: " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(g.edges.size()) + " edges");
  }
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    g.edges[e].weight = weights.defined() ? weights.data()[e] : 1.0;
}

// ---------------------------------------------------------------------------
// Graph transformation

struct RgcnParams {
  std::array<Value, kNumRelations> relation;  // G1×D each, relation r at index r-1
  Value self;                                 // G1×D
};

// O1_i = ReLU( sum_r sum_{j in N^r(i)} (w_ji / |N^r(i)|)·W_r·x_j + W_self·x_i ).
// `weights` holds one entry per edge; undefined means every weight is 1.
// Without relations every edge shares W_1 and a single neighbourhood.
inline Value rgcn_layer(Tape& tape, const FusionGraph& g, const Value& features,
                        const Value& weights, const RgcnParams& p, bool use_relations = true) {
  if (features.rows() != g.num_nodes()) {
    throw DimensionError("rgcn_layer: " + std::to_string(features.rows()) + " feature rows for " +
                         std::to_string(g.num_nodes()) + " nodes");
  }
  if (weights.defined() && weights.size() != g.edges.size()) {
    throw DimensionError("rgcn_layer: weight count does not match edge count");
  }
  auto slot = [&](const Edge& e) { return use_relations ? e.relation - 1 : 0; };

  // |N^r(i)| per (relation slot, destination row)
  std::vector<std::array<std::size_t, kNumRelations>> degree(g.num_nodes());
  for (auto& d : degree) d.fill(0);
  for (const auto& e : g.edges) ++degree[e.dst_row][slot(e)];

  Value total = matmul_nt(tape, features, p.self);
  for (int r = 0; r < kNumRelations; ++r) {
    std::vector<std::size_t> ids, src, dst;
    std::vector<double> norm;
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
      const auto& e = g.edges[k];
      if (slot(e) != r) continue;
      ids.push_back(k);
      src.push_back(e.src_row);
      dst.push_back(e.dst_row);
      norm.push_back(1.0 / static_cast<double>(degree[e.dst_row][r]));
    }
    if (ids.empty()) continue;
    const Value messages = matmul_nt(tape, features, p.relation[r]);
    const Value coeff = weights.defined() ? gather_rows(tape, weights, std::move(ids)) : Value();
    total = add(tape, total,
                edge_aggregate(tape, messages, coeff, std::move(norm), std::move(src),
                               std::move(dst), g.num_nodes()));
  }
  return relu(tape, total);
}

// O2_i = ReLU( (1/|N(i)|)·sum_{j in N(i)} W_neigh·O1_j + W_self·O1_i ),
// over all in-neighbours regardless of relation or attention weight.
inline Value gcn_layer(Tape& tape, const FusionGraph& g, const Value& inputs,
                       const Value& w_neigh, const Value& w_self) {
  if (inputs.rows() != g.num_nodes()) {
    throw DimensionError("gcn_layer: " + std::to_string(inputs.rows()) + " rows for " +
                         std::to_string(g.num_nodes()) + " nodes");
  }
  Value total = matmul_nt(tape, inputs, w_self);
  if (!g.edges.empty()) {
    std::vector<std::size_t> degree(g.num_nodes(), 0);
    for (const auto& e : g.edges) ++degree[e.dst_row];
    std::vector<std::size_t> src, dst;
    std::vector<double> norm;
    for (const auto& e : g.edges) {
      src.push_back(e.src_row);
      dst.push_back(e.dst_row);
      norm.push_back(1.0 / static_cast<double>(degree[e.dst_row]));
    }
    const Value messages = matmul_nt(tape, inputs, w_neigh);
    total = add(tape, total,
                edge_aggregate(tape, messages, Value(), std::move(norm), std::move(src),
                               std::move(dst), g.num_nodes()));
  }
  return relu(tape, total);
}

// Averages the four node outputs of each utterance (rows 4i..4i+3).
inline Value nodal_pooling(Tape& tape, const Value& node_outputs) {
  return group_mean_rows(tape, node_outputs, 4);
}

// ---------------------------------------------------------------------------
// Debug dump: "src_id dst_id relation weight", one edge per line.

inline void write_graph_dump(std::ostream& os, const FusionGraph& g) {
  char buf[64];
  for (const auto& e : g.edges) {
    std::snprintf(buf, sizeof(buf), "%.17g", e.weight);
    os << e.src.id() << ' ' << e.dst.id() << ' ' << e.relation << ' ' << buf << '\n';
  }
}

}  // namespace hfgcn
