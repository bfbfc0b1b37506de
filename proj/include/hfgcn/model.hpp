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

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hfgcn/dataio.hpp"
#include "hfgcn/encoder.hpp"
#include "hfgcn/errors.hpp"
#include "hfgcn/graph.hpp"
#include "hfgcn/numerics.hpp"

namespace hfgcn {

struct HfgcnConfig {
  std::size_t d_a = 16;
  std::size_t d_t = 16;
  std::size_t d_v = 16;
  std::size_t hidden = 32;
  // 0 selects the encoder width D = 2·hidden.
  std::size_t graph_dim1 = 0;
  std::size_t graph_dim2 = 0;
  std::size_t attention_dim = 0;
  std::size_t num_emotions = 4;
  std::size_t num_va_bins = 9;
  double w1 = 0.15;
  double w2 = 0.15;
  double dropout = 0.35;
  std::optional<std::size_t> window_past;
  std::optional<std::size_t> window_future;
  bool use_first_stage = true;
  bool use_second_stage = true;
  bool use_edge_attention = true;
  bool use_relations = true;
  bool use_va_heads = true;

  std::size_t encoder_dim() const { return 2 * hidden; }
  std::size_t g1() const { return graph_dim1 ? graph_dim1 : encoder_dim(); }
  std::size_t g2() const { return graph_dim2 ? graph_dim2 : encoder_dim(); }
  std::size_t attn() const { return attention_dim ? attention_dim : encoder_dim(); }
  std::size_t utterance_dim() const { return encoder_dim() + g2(); }
  bool va_loss_active() const { return use_va_heads && (w1 > 0.0 || w2 > 0.0); }

  void validate() const {
    auto fail = [](const std::string& w) { throw ParameterError("model config: " + w); };
    if (!d_a || !d_t || !d_v) fail("input dimensions must be >= 1");
    if (!hidden) fail("hidden must be >= 1");
    if (num_emotions < 2) fail("num_emotions must be >= 2");
    if (num_va_bins < 2) fail("num_va_bins must be >= 2");
    if (!(w1 >= 0.0) || !(w2 >= 0.0)) fail("loss weights must be non-negative");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0,1)");
  }

  Window window() const { return Window{window_past, window_future}; }

  bool operator==(const HfgcnConfig&) const = default;
};

inline nlohmann::json config_to_json(const HfgcnConfig& c) {
  auto opt = [](const std::optional<std::size_t>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json();
  };
  return nlohmann::json{{"d_a", c.d_a},
                        {"d_t", c.d_t},
                        {"d_v", c.d_v},
                        {"hidden", c.hidden},
                        {"graph_dim1", c.graph_dim1},
                        {"graph_dim2", c.graph_dim2},
                        {"attention_dim", c.attention_dim},
                        {"num_emotions", c.num_emotions},
                        {"num_va_bins", c.num_va_bins},
                        {"w1", c.w1},
                        {"w2", c.w2},
                        {"dropout", c.dropout},
                        {"window_past", opt(c.window_past)},
                        {"window_future", opt(c.window_future)},
                        {"use_first_stage", c.use_first_stage},
                        {"use_second_stage", c.use_second_stage},
                        {"use_edge_attention", c.use_edge_attention},
                        {"use_relations", c.use_relations},
                        {"use_va_heads", c.use_va_heads}};
}

inline HfgcnConfig config_from_json(const nlohmann::json& j) {
  HfgcnConfig c;
  auto opt = [&](const char* key) -> std::optional<std::size_t> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<std::size_t>();
  };
  c.d_a = j.at("d_a").get<std::size_t>();
  c.d_t = j.at("d_t").get<std::size_t>();
  c.d_v = j.at("d_v").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.graph_dim1 = j.at("graph_dim1").get<std::size_t>();
  c.graph_dim2 = j.at("graph_dim2").get<std::size_t>();
  c.attention_dim = j.at("attention_dim").get<std::size_t>();
  c.num_emotions = j.at("num_emotions").get<std::size_t>();
  c.num_va_bins = j.at("num_va_bins").get<std::size_t>();
  c.w1 = j.at("w1").get<double>();
  c.w2 = j.at("w2").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.window_past = opt("window_past");
  c.window_future = opt("window_future");
  c.use_first_stage = j.at("use_first_stage").get<bool>();
  c.use_second_stage = j.at("use_second_stage").get<bool>();
  c.use_edge_attention = j.at("use_edge_attention").get<bool>();
  c.use_relations = j.at("use_relations").get<bool>();
  c.use_va_heads = j.at("use_va_heads").get<bool>();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

struct Linear {
  Value weight;  // out×in
  Value bias;    // 1×out
};

struct HfgcnParams {
  EncoderParams encoder;
  Value w_a;
  AttentionParams attention;
  RgcnParams rgcn;
  Value gcn_neighbor;
  Value gcn_self;
  Linear emotion_head;
  Linear valence_head;
  Linear arousal_head;

  // Visits every learnable tensor in checkpoint order with its unique name.
  template <class Fn>
  void for_each(Fn&& fn) {
    encoder.for_each(fn);
    fn("graph.w_a", w_a);
    fn("graph.query.weight", attention.query_w);
    fn("graph.query.bias", attention.query_b);
    fn("graph.key.weight", attention.key_w);
    fn("graph.key.bias", attention.key_b);
    fn("graph.w_b", attention.w_b);
    for (int r = 0; r < kNumRelations; ++r)
      fn("rgcn.relation." + std::to_string(r + 1), rgcn.relation[r]);
    fn("rgcn.self", rgcn.self);
    fn("gcn.neighbor", gcn_neighbor);
    fn("gcn.self", gcn_self);
    fn("head.emotion.weight", emotion_head.weight);
    fn("head.emotion.bias", emotion_head.bias);
    fn("head.valence.weight", valence_head.weight);
    fn("head.valence.bias", valence_head.bias);
    fn("head.arousal.weight", arousal_head.weight);
    fn("head.arousal.bias", arousal_head.bias);
  }

  template <class Fn>
  void for_each(Fn&& fn) const {
    const_cast<HfgcnParams*>(this)->for_each(
        [&](const std::string& name, Value& v) { fn(name, static_cast<const Value&>(v)); });
  }

  std::vector<std::pair<std::string, Value>> named() const {
    std::vector<std::pair<std::string, Value>> out;
    for_each([&](const std::string& n, const Value& v) { out.emplace_back(n, v); });
    return out;
  }

  // Handles aliasing the live parameters, in registry order.
  std::vector<Value> values() const {
    std::vector<Value> out;
    for_each([&](const std::string&, const Value& v) { out.push_back(v); });
    return out;
  }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Value& v) { n += v.size(); });
    return n;
  }

  void zero_grad() {
    for_each([](const std::string&, Value& v) { v.zero_grad(); });
  }

  HfgcnParams clone() const {
    HfgcnParams copy = *this;
    copy.for_each([](const std::string&, Value& v) { v = v.clone(true); });
    return copy;
  }

  // Overwrites parameter data in place from an identically shaped set.
  void assign(const HfgcnParams& other) {
    auto src = other.values();
    std::size_t k = 0;
    for_each([&](const std::string& name, Value& v) {
      if (src[k].shape() != v.shape()) throw DimensionError("assign: shape mismatch at " + name);
      std::copy(src[k].data().begin(), src[k].data().end(), v.data().begin());
      ++k;
    });
  }

  // Every tensor zero-filled at the shapes implied by `cfg`.
  static HfgcnParams zeros(const HfgcnConfig& cfg) {
    const std::size_t h = cfg.hidden, d = cfg.encoder_dim(), dp = cfg.attn();
    const std::size_t g1 = cfg.g1(), g2 = cfg.g2(), u = cfg.utterance_dim();
    auto z = [](std::size_t r, std::size_t c) { return Value::zeros({r, c}, true); };
    HfgcnParams p;
    const std::array<std::size_t, 4> inputs{cfg.d_a, cfg.d_t, cfg.d_v, cfg.d_a + cfg.d_t + cfg.d_v};
    for (std::size_t s = 0; s < 4; ++s) {
      p.encoder.streams[s].forward = GruDirection::zeros(inputs[s], h);
      p.encoder.streams[s].backward = GruDirection::zeros(inputs[s], h);
    }
    p.w_a = z(d, d);
    p.attention = {z(dp, d), z(1, dp), z(dp, d), z(1, dp), z(2 * dp, 1)};
    for (auto& w : p.rgcn.relation) w = z(g1, d);
    p.rgcn.self = z(g1, d);
    p.gcn_neighbor = z(g2, g1);
    p.gcn_self = z(g2, g1);
    p.emotion_head = {z(cfg.num_emotions, u), z(1, cfg.num_emotions)};
    p.valence_head = {z(cfg.num_va_bins, u), z(1, cfg.num_va_bins)};
    p.arousal_head = {z(cfg.num_va_bins, u), z(1, cfg.num_va_bins)};
    return p;
  }

  // GRUs: uniform ±1/sqrt(h). Other matrices: uniform ±1/sqrt(fan_in).
  // Non-GRU biases start at zero.
  static HfgcnParams init(const HfgcnConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    HfgcnParams p = zeros(cfg);
    Rng rng(seed);
    p.encoder = EncoderParams::init(cfg.d_a, cfg.d_t, cfg.d_v, cfg.hidden, rng);
    p.for_each([&](const std::string& name, Value& v) {
      if (name.starts_with("encoder.") || name.ends_with(".bias")) return;
      const std::size_t fan_in = name == "graph.w_b" ? v.rows() : v.cols();
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> uni(-bound, bound);
      for (double& x : v.data()) x = uni(rng);
    });
    return p;
  }
};

// ---------------------------------------------------------------------------
// Forward pass

enum class Mode { kTrain, kEval };

struct ModelOutput {
  Value utterances;  // U, N×(D+G2)
  Value emotion;     // N×E logits
  Value valence;     // N×K logits
  Value arousal;     // N×K logits
  FusionGraph graph;
  Value edge_weights;  // undefined when attention is off or the graph is empty

  std::size_t size() const { return emotion.rows(); }
};

namespace detail {

inline Value linear(Tape& tape, const Value& x, const Linear& l) {
  return add_row(tape, matmul_nt(tape, x, l.weight), l.bias);
}

// Rows arranged as 4i + kind.
inline Value interleave_nodes(Tape& tape, const EncodedConversation& enc) {
  const std::size_t n = enc.size();
  const Value stacked = concat(tape, {enc.audio, enc.text, enc.visual, enc.fusion}, 0);
  std::vector<std::size_t> index(4 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < 4; ++k) index[4 * i + k] = k * n + i;
  return gather_rows(tape, stacked, std::move(index));
}

inline void check_conversation(const Conversation& conv, const HfgcnConfig& cfg) {
  if (conv.utterances.empty()) throw ContractError("forward: conversation '" + conv.id + "' is empty");
  const auto& u = conv.utterances.front();
  if (u.audio.size() != cfg.d_a || u.text.size() != cfg.d_t || u.visual.size() != cfg.d_v) {
    throw DimensionError("forward[input]: conversation '" + conv.id + "' has dims (" +
                         std::to_string(u.audio.size()) + "," + std::to_string(u.text.size()) +
                         "," + std::to_string(u.visual.size()) + "), model expects (" +
                         std::to_string(cfg.d_a) + "," + std::to_string(cfg.d_t) + "," +
                         std::to_string(cfg.d_v) + ")");
  }
}

}  // namespace detail

// Encoder -> fusion graph -> RGCN -> GCN -> nodal pooling -> U = [F, O] ->
// three affine heads. With both graph stages off the graph transformation is
// removed and O is zero.
inline ModelOutput forward(Tape& tape, const Conversation& conv, const HfgcnParams& params,
                           const HfgcnConfig& cfg, Mode mode, Rng& rng) {
  detail::check_conversation(conv, cfg);
  const bool training = mode == Mode::kTrain;
  const std::size_t n = conv.size();

  EncodedConversation enc = encode_conversation(tape, conv, params.encoder);
  if (enc.dim() != cfg.encoder_dim()) {
    throw DimensionError("forward[encoder]: output width " + std::to_string(enc.dim()) +
                         " != 2·hidden " + std::to_string(cfg.encoder_dim()));
  }
  enc.audio = dropout(tape, enc.audio, cfg.dropout, training, rng);
  enc.text = dropout(tape, enc.text, cfg.dropout, training, rng);
  enc.visual = dropout(tape, enc.visual, cfg.dropout, training, rng);
  enc.fusion = dropout(tape, enc.fusion, cfg.dropout, training, rng);

  ModelOutput out;
  Value pooled;
  if (!cfg.use_first_stage && !cfg.use_second_stage) {
    pooled = Value::zeros({n, cfg.g2()});
  } else {
    std::vector<int> speakers;
    for (const auto& u : conv.utterances) speakers.push_back(u.speaker);
    out.graph = build_graph(speakers, {cfg.use_first_stage, cfg.use_second_stage, cfg.window()});
    const Value nodes = cfg.use_first_stage ? detail::interleave_nodes(tape, enc) : enc.fusion;
    if (cfg.use_edge_attention && !out.graph.edges.empty()) {
      out.edge_weights = edge_weights(tape, out.graph, nodes, params.w_a, params.attention);
    }
    const Value o1 =
        rgcn_layer(tape, out.graph, nodes, out.edge_weights, params.rgcn, cfg.use_relations);
    const Value o2 = gcn_layer(tape, out.graph, o1, params.gcn_neighbor, params.gcn_self);
    pooled = cfg.use_first_stage ? nodal_pooling(tape, o2) : o2;
  }
  if (pooled.rows() != n || pooled.cols() != cfg.g2()) {
    throw DimensionError("forward[graph]: pooled output " + shape_str(pooled.shape()) +
                         " expected " + std::to_string(n) + "x" + std::to_string(cfg.g2()));
  }

  Value u = concat(tape, {enc.fusion, pooled}, 1);
  out.utterances = u;
  u = dropout(tape, u, cfg.dropout, training, rng);
  out.emotion = detail::linear(tape, u, params.emotion_head);
  out.valence = detail::linear(tape, u, params.valence_head);
  out.arousal = detail::linear(tape, u, params.arousal_head);
  return out;
}

inline ModelOutput forward_eval(Tape& tape, const Conversation& conv, const HfgcnParams& params,
                                const HfgcnConfig& cfg) {
  Rng unused(0);
  return forward(tape, conv, params, cfg, Mode::kEval, unused);
}

// ---------------------------------------------------------------------------
// Loss and prediction

struct BatchLabels {
  std::vector<std::size_t> emotion;
  std::vector<std::size_t> valence;
  std::vector<std::size_t> arousal;
  bool has_va = true;
};

inline BatchLabels collect_labels(std::span<const Conversation> batch, std::size_t va_bins) {
  BatchLabels labels;
  for (const auto& conv : batch) {
    for (const auto& u : conv.utterances) {
      labels.emotion.push_back(u.emotion);
      if (u.valence && u.arousal) {
        labels.valence.push_back(discretize_va(*u.valence, va_bins));
        labels.arousal.push_back(discretize_va(*u.arousal, va_bins));
      } else {
        labels.has_va = false;
      }
    }
  }
  return labels;
}

// CE(emotion) + W_1·CE(valence) + W_2·CE(arousal), each averaged over every
// utterance in the batch. With the VA terms inactive the emotion term is
// returned unchanged.
inline Value multitask_loss(Tape& tape, std::span<const ModelOutput> outputs,
                            std::span<const Conversation> batch, const HfgcnConfig& cfg) {
  if (outputs.size() != batch.size() || outputs.empty()) {
    throw ContractError("multitask_loss: outputs and conversations must pair up and be non-empty");
  }
  BatchLabels labels = collect_labels(batch, cfg.num_va_bins);
  auto stack = [&](Value ModelOutput::*head) {
    if (outputs.size() == 1) return outputs[0].*head;
    std::vector<Value> parts;
    for (const auto& o : outputs) parts.push_back(o.*head);
    return concat(tape, std::span<const Value>(parts), 0);
  };
  Value loss = cross_entropy(tape, stack(&ModelOutput::emotion), std::move(labels.emotion));
  if (!cfg.va_loss_active()) return loss;
  if (!labels.has_va) {
    throw ValidationError("multitask_loss: valence/arousal labels missing but VA loss weights are non-zero");
  }
  Value va = add(tape, scale(tape, cross_entropy(tape, stack(&ModelOutput::valence), std::move(labels.valence)), cfg.w1),
                 scale(tape, cross_entropy(tape, stack(&ModelOutput::arousal), std::move(labels.arousal)), cfg.w2));
  return add(tape, loss, va);
}

inline Value multitask_loss(Tape& tape, const ModelOutput& output, const Conversation& conv,
                            const HfgcnConfig& cfg) {
  return multitask_loss(tape, std::span<const ModelOutput>(&output, 1),
                        std::span<const Conversation>(&conv, 1), cfg);
}

struct Prediction {
  std::size_t emotion = 0;
  std::size_t valence = 0;
  std::size_t arousal = 0;
  bool operator==(const Prediction&) const = default;
};

// First maximum wins, so exact ties resolve to the lowest class index.
inline std::vector<std::size_t> argmax_rows(const Value& logits) {
  std::vector<std::size_t> out(logits.rows());
  const std::size_t c = logits.cols();
  auto d = logits.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = d.begin() + static_cast<std::ptrdiff_t>(i * c);
    out[i] = static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(c)) - row);
  }
  return out;
}

inline std::vector<Prediction> predict(const ModelOutput& out) {
  const auto e = argmax_rows(out.emotion);
  const auto v = argmax_rows(out.valence);
  const auto a = argmax_rows(out.arousal);
  std::vector<Prediction> preds(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) preds[i] = {e[i], v[i], a[i]};
  return preds;
}

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/manifest.json + <dir>/weights.bin (little-endian f64)

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kIo, kVersion, kTruncated, kInconsistent };
  CheckpointError(Kind kind, const std::string& what)
      : std::runtime_error("checkpoint: " + what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

inline void append_le(std::string& out, double x) {
  auto bits = std::bit_cast<std::uint64_t>(x);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

inline double read_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline void save_checkpoint(const HfgcnParams& params, const HfgcnConfig& cfg,
                            const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  nlohmann::json tensors = nlohmann::json::array();
  std::string blob;
  params.for_each([&](const std::string& name, const Value& v) {
    const std::size_t offset = blob.size();
    for (double x : v.data()) detail::append_le(blob, x);
    tensors.push_back({{"name", name},
                       {"shape", v.shape()},
                       {"dtype", "f64"},
                       {"byte_offset", offset},
                       {"byte_length", blob.size() - offset}});
  });
  const nlohmann::json manifest{{"format_version", kCheckpointVersion},
                                {"config", config_to_json(cfg)},
                                {"tensors", std::move(tensors)}};

  const fs::path tmp = dir.string() + ".tmp";
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp, ec);
  if (ec) throw CheckpointError(CheckpointError::Kind::kIo, "cannot create " + tmp.string());
  {
    std::ofstream m(tmp / "manifest.json", std::ios::binary);
    m << manifest.dump(2) << '\n';
    std::ofstream w(tmp / "weights.bin", std::ios::binary);
    w.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!m || !w) throw CheckpointError(CheckpointError::Kind::kIo, "write failed in " + tmp.string());
  }
  fs::remove_all(dir, ec);
  fs::rename(tmp, dir);
}

namespace detail {

inline std::pair<HfgcnParams, HfgcnConfig> load_checkpoint_unchecked(const std::filesystem::path& dir) {
  using Kind = CheckpointError::Kind;
  nlohmann::json manifest;
  {
    std::ifstream is(dir / "manifest.json", std::ios::binary);
    if (!is) throw CheckpointError(Kind::kIo, "cannot open " + (dir / "manifest.json").string());
    try {
      manifest = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(Kind::kInconsistent, std::string("manifest.json: ") + e.what());
    }
  }
  const int version = manifest.value("format_version", -1);
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::kVersion, "format_version " + std::to_string(version) +
                                              ", this build reads " +
                                              std::to_string(kCheckpointVersion));
  }
  HfgcnConfig cfg;
  try {
    cfg = config_from_json(manifest.at("config"));
    cfg.validate();
  } catch (const std::exception& e) {
    throw CheckpointError(Kind::kInconsistent, std::string("config: ") + e.what());
  }

  std::string blob;
  {
    std::ifstream is(dir / "weights.bin", std::ios::binary);
    if (!is) throw CheckpointError(Kind::kIo, "cannot open " + (dir / "weights.bin").string());
    blob.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  }

  HfgcnParams params = HfgcnParams::zeros(cfg);
  const auto& tensors = manifest.at("tensors");
  std::size_t expected_bytes = 0;
  for (const auto& t : tensors) expected_bytes += t.at("byte_length").get<std::size_t>();
  if (blob.size() < expected_bytes) {
    throw CheckpointError(Kind::kTruncated, "weights.bin holds " + std::to_string(blob.size()) +
                                                " bytes, manifest expects " +
                                                std::to_string(expected_bytes));
  }
  if (blob.size() != expected_bytes) {
    throw CheckpointError(Kind::kInconsistent, "weights.bin holds " + std::to_string(blob.size()) +
                                                   " bytes, manifest expects " +
                                                   std::to_string(expected_bytes));
  }

  std::size_t k = 0, cursor = 0;
  params.for_each([&](const std::string& name, Value& v) {
    if (k >= tensors.size()) throw CheckpointError(Kind::kInconsistent, "manifest lacks tensor " + name);
    const auto& t = tensors[k++];
    const auto tname = t.at("name").get<std::string>();
    const auto shape = t.at("shape").get<Shape>();
    const auto offset = t.at("byte_offset").get<std::size_t>();
    const auto length = t.at("byte_length").get<std::size_t>();
    if (tname != name) {
      throw CheckpointError(Kind::kInconsistent, "expected tensor " + name + ", manifest has " + tname);
    }
    if (t.at("dtype").get<std::string>() != "f64") {
      throw CheckpointError(Kind::kInconsistent, name + ": unsupported dtype");
    }
    if (shape != v.shape() || length != 8 * v.size() || offset != cursor) {
      throw CheckpointError(Kind::kInconsistent, name + ": manifest entry " + shape_str(shape) +
                                                     " @" + std::to_string(offset) +
                                                     " does not match expected " +
                                                     shape_str(v.shape()) + " @" +
                                                     std::to_string(cursor));
    }
    auto data = v.data();
    const auto* p = reinterpret_cast<const unsigned char*>(blob.data()) + offset;
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = detail::read_le(p + 8 * i);
    cursor += length;
  });
  if (k != tensors.size()) {
    throw CheckpointError(Kind::kInconsistent, "manifest lists " + std::to_string(tensors.size()) +
                                                   " tensors, model has " + std::to_string(k));
  }
  return {std::move(params), cfg};
}

}  // namespace detail

inline std::pair<HfgcnParams, HfgcnConfig> load_checkpoint(const std::filesystem::path& dir) {
  try {
    return detail::load_checkpoint_unchecked(dir);
  } catch (const nlohmann::json::exception& e) {
    // Missing keys or wrongly typed manifest fields.
    throw CheckpointError(CheckpointError::Kind::kInconsistent, std::string("manifest.json: ") + e.what());
  }
}

}  // namespace hfgcn
