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

// Bidirectional GRU context encoders over the audio, text, visual and
// early-fusion streams of a conversation.

#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "hfgcn/dataio.hpp"
#include "hfgcn/numerics.hpp"

namespace hfgcn {

// One direction of a GRU. Input weights are hidden×input, recurrent weights
// hidden×hidden, biases 1×hidden.
struct GruDirection {
  Value w_z, w_r, w_h;
  Value u_z, u_r, u_h;
  Value b_z, b_r, b_h;

  template <class Fn>
  void for_each(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".w_z", w_z);
    fn(prefix + ".w_r", w_r);
    fn(prefix + ".w_h", w_h);
    fn(prefix + ".u_z", u_z);
    fn(prefix + ".u_r", u_r);
    fn(prefix + ".u_h", u_h);
    fn(prefix + ".b_z", b_z);
    fn(prefix + ".b_r", b_r);
    fn(prefix + ".b_h", b_h);
  }

  std::size_t hidden() const { return u_z.rows(); }
  std::size_t input_dim() const { return w_z.cols(); }

  static GruDirection zeros(std::size_t input_dim, std::size_t hidden) {
    GruDirection d;
    d.for_each("", [&](const std::string& name, Value& v) {
      const char kind = name[1];
      if (kind == 'w') v = Value::zeros({hidden, input_dim}, true);
      else if (kind == 'u') v = Value::zeros({hidden, hidden}, true);
      else v = Value::zeros({1, hidden}, true);
    });
    return d;
  }

  // Uniform in [-1/sqrt(h), 1/sqrt(h)] for every weight and bias.
  static GruDirection init(std::size_t input_dim, std::size_t hidden, Rng& rng) {
    GruDirection d = zeros(input_dim, hidden);
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    std::uniform_real_distribution<double> uni(-bound, bound);
    d.for_each("", [&](const std::string&, Value& v) {
      for (double& x : v.data()) x = uni(rng);
    });
    return d;
  }
};

struct GruParams {
  GruDirection forward;
  GruDirection backward;

  std::size_t hidden() const { return forward.hidden(); }
  std::size_t input_dim() const { return forward.input_dim(); }
  std::size_t output_dim() const { return 2 * hidden(); }

  template <class Fn>
  void for_each(const std::string& prefix, Fn&& fn) {
    forward.for_each(prefix + ".fwd", fn);
    backward.for_each(prefix + ".bwd", fn);
  }

  static GruParams init(std::size_t input_dim, std::size_t hidden, Rng& rng) {
    GruParams p;
    p.forward = GruDirection::init(input_dim, hidden, rng);
    p.backward = GruDirection::init(input_dim, hidden, rng);
    return p;
  }
};

namespace detail {

// One recurrence step given the already projected input rows
// (W·x + b for each gate) of shape 1×h.
inline Value gru_step(Tape& tape, const Value& xz, const Value& xr, const Value& xh,
                      const Value& h_prev, const GruDirection& p) {
  Value z = sigmoid(tape, add(tape, xz, matmul_nt(tape, h_prev, p.u_z)));
  Value r = sigmoid(tape, add(tape, xr, matmul_nt(tape, h_prev, p.u_r)));
  Value cand = tanh(tape, add(tape, xh, matmul_nt(tape, mul(tape, r, h_prev), p.u_h)));
  // (1 - z)·h_prev + z·cand, written as h_prev + z·(cand - h_prev)
  return add(tape, h_prev, mul(tape, z, sub(tape, cand, h_prev)));
}

inline Value project(Tape& tape, const Value& x, const Value& w, const Value& b) {
  return add_row(tape, matmul_nt(tape, x, w), b);
}

inline Value run_direction(Tape& tape, const Value& inputs, const GruDirection& p, bool reverse) {
  const std::size_t n = inputs.rows();
  const Value xz = project(tape, inputs, p.w_z, p.b_z);
  const Value xr = project(tape, inputs, p.w_r, p.b_r);
  const Value xh = project(tape, inputs, p.w_h, p.b_h);
  std::vector<Value> states(n);
  Value h = Value::zeros({1, p.hidden()});
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t t = reverse ? n - 1 - k : k;
    h = gru_step(tape, slice(tape, xz, 0, t, t + 1), slice(tape, xr, 0, t, t + 1),
                 slice(tape, xh, 0, t, t + 1), h, p);
    states[t] = h;
  }
  return concat(tape, std::span<const Value>(states), 0);
}

}  // namespace detail

// Standard GRU cell on a single 1×input row.
inline Value gru_cell(Tape& tape, const Value& x, const Value& h_prev, const GruDirection& p) {
  if (x.cols() != p.input_dim() || h_prev.cols() != p.hidden()) {
    throw DimensionError("gru_cell: input " + shape_str(x.shape()) + " / state " +
                         shape_str(h_prev.shape()) + " do not match parameters (input " +
                         std::to_string(p.input_dim()) + ", hidden " +
                         std::to_string(p.hidden()) + ")");
  }
  return detail::gru_step(tape, detail::project(tape, x, p.w_z, p.b_z),
                          detail::project(tape, x, p.w_r, p.b_r),
                          detail::project(tape, x, p.w_h, p.b_h), h_prev, p);
}

// Rows of `sequence` are time steps. Returns N×2h with the forward state in
// the first h columns and the backward state in the last h.
inline Value bigru_encode(Tape& tape, const Value& sequence, const GruParams& p) {
  detail::require_matrix(sequence, "bigru_encode");
  if (sequence.rows() == 0) throw ContractError("bigru_encode: empty sequence");
  if (sequence.cols() != p.input_dim()) {
    throw DimensionError("bigru_encode: sequence " + shape_str(sequence.shape()) +
                         " does not match GRU input dimension " + std::to_string(p.input_dim()));
  }
  const Value fwd = detail::run_direction(tape, sequence, p.forward, false);
  const Value bwd = detail::run_direction(tape, sequence, p.backward, true);
  return concat(tape, {fwd, bwd}, 1);
}

// f_i = (a_i, t_i, v_i)
inline std::vector<double> early_fuse(const Utterance& u) {
  std::vector<double> f;
  f.reserve(u.audio.size() + u.text.size() + u.visual.size());
  f.insert(f.end(), u.audio.begin(), u.audio.end());
  f.insert(f.end(), u.text.begin(), u.text.end());
  f.insert(f.end(), u.visual.begin(), u.visual.end());
  return f;
}

enum class Stream { kAudio = 0, kText = 1, kVisual = 2, kFusion = 3 };

// N×d constant matrix holding one stream of a conversation.
inline Value stream_matrix(const Conversation& conv, Stream stream) {
  std::vector<double> data;
  std::size_t cols = 0;
  for (const auto& u : conv.utterances) {
    const std::vector<double> row =
        stream == Stream::kFusion ? early_fuse(u) : u.features(static_cast<Modality>(stream));
    cols = row.size();
    data.insert(data.end(), row.begin(), row.end());
  }
  return Value::matrix(conv.size(), cols, std::move(data));
}

struct EncoderParams {
  std::array<GruParams, 4> streams;  // audio, text, visual, fusion

  template <class Fn>
  void for_each(Fn&& fn) {
    static constexpr std::array<const char*, 4> kNames{"audio", "text", "visual", "fusion"};
    for (std::size_t s = 0; s < 4; ++s) streams[s].for_each(std::string("encoder.") + kNames[s], fn);
  }

  static EncoderParams init(std::size_t d_a, std::size_t d_t, std::size_t d_v, std::size_t hidden,
                            Rng& rng) {
    EncoderParams p;
    p.streams[0] = GruParams::init(d_a, hidden, rng);
    p.streams[1] = GruParams::init(d_t, hidden, rng);
    p.streams[2] = GruParams::init(d_v, hidden, rng);
    p.streams[3] = GruParams::init(d_a + d_t + d_v, hidden, rng);
    return p;
  }
};

// A_i, T_i, V_i, F_i as N×D matrices (D = 2h).
struct EncodedConversation {
  Value audio;
  Value text;
  Value visual;
  Value fusion;

  std::size_t size() const { return fusion.rows(); }
  std::size_t dim() const { return fusion.cols(); }
};

inline EncodedConversation encode_conversation(Tape& tape, const Conversation& conv,
                                               const EncoderParams& p) {
  if (conv.utterances.empty()) throw ContractError("encode_conversation: empty conversation");
  const std::size_t h = p.streams[0].hidden();
  for (const auto& s : p.streams) {
    if (s.hidden() != h) throw DimensionError("encode_conversation: streams differ in hidden size");
  }
  EncodedConversation enc;
  enc.audio = bigru_encode(tape, stream_matrix(conv, Stream::kAudio), p.streams[0]);
  enc.text = bigru_encode(tape, stream_matrix(conv, Stream::kText), p.streams[1]);
  enc.visual = bigru_encode(tape, stream_matrix(conv, Stream::kVisual), p.streams[2]);
  enc.fusion = bigru_encode(tape, stream_matrix(conv, Stream::kFusion), p.streams[3]);
  return enc;
}

}  // namespace hfgcn
