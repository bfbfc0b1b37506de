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

#include <gtest/gtest.h>

#include <random>

#include "hfgcn/encoder.hpp"
#include "oracle.hpp"

namespace hfgcn {
namespace {

std::vector<double> row(const Value& v, std::size_t r) {
  std::vector<double> out(v.cols());
  for (std::size_t c = 0; c < v.cols(); ++c) out[c] = v.at(r, c);
  return out;
}

Value as_row(const std::vector<double>& x) { return Value::matrix(1, x.size(), x); }

Conversation random_conversation(std::size_t n, std::size_t da, std::size_t dt, std::size_t dv,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  Conversation c{"r", {}};
  for (std::size_t i = 0; i < n; ++i) {
    Utterance u;
    u.speaker = static_cast<int>(i % 2);
    for (auto [vec, d] : {std::pair{&u.audio, da}, {&u.text, dt}, {&u.visual, dv}})
      for (std::size_t k = 0; k < d; ++k) vec->push_back(g(rng));
    c.utterances.push_back(u);
  }
  return c;
}

TEST(EarlyFuse, Examples) {
  Utterance u;
  u.audio = {1};
  u.text = {2};
  u.visual = {3};
  EXPECT_EQ(early_fuse(u), (std::vector<double>{1, 2, 3}));
  Utterance z;
  z.audio.assign(2, 0.0);
  z.text.assign(3, 0.0);
  z.visual.assign(1, 0.0);
  EXPECT_EQ(early_fuse(z), std::vector<double>(6, 0.0));
}

TEST(EarlyFuse, SlicesRecoverInputs) {
  Conversation c = random_conversation(1, 2, 3, 4, 1);
  const auto f = early_fuse(c.utterances[0]);
  EXPECT_EQ(std::vector<double>(f.begin(), f.begin() + 2), c.utterances[0].audio);
  EXPECT_EQ(std::vector<double>(f.begin() + 2, f.begin() + 5), c.utterances[0].text);
  EXPECT_EQ(std::vector<double>(f.begin() + 5, f.end()), c.utterances[0].visual);
}

TEST(GruCell, ZeroIsFixedPoint) {
  GruDirection p = GruDirection::zeros(3, 4);
  Tape tape;
  Value h = gru_cell(tape, Value::zeros({1, 3}), Value::zeros({1, 4}), p);
  for (double x : h.data()) EXPECT_EQ(x, 0.0);
}

TEST(GruCell, ClosedUpdateGateKeepsState) {
  Rng rng(3);
  GruDirection p = GruDirection::init(3, 4, rng);
  for (double& b : p.b_z.data()) b = -60.0;
  const std::vector<double> h0{0.3, -0.7, 0.1, 0.9};
  Tape tape;
  Value h = gru_cell(tape, Value::matrix(1, 3, {1, -2, 0.5}), as_row(h0), p);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(h.data()[i], h0[i], 1e-20 + 1e-12);
}

TEST(GruCell, MatchesScalarOracle) {
  Rng rng(5);
  GruDirection p = GruDirection::init(5, 6, rng);
  std::mt19937_64 r2(6);
  auto x = oracle::random_mat(1, 5, r2)[0];
  auto h0 = oracle::random_mat(1, 6, r2, 0.5)[0];
  Tape tape;
  const auto got = row(gru_cell(tape, as_row(x), as_row(h0), p), 0);
  const auto want = oracle::gru_step(x, h0, p);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(GruCell, ShapeMismatchIsDimensionError) {
  Rng rng(1);
  GruDirection p = GruDirection::init(3, 4, rng);
  Tape tape;
  EXPECT_THROW(gru_cell(tape, Value::zeros({1, 2}), Value::zeros({1, 4}), p), DimensionError);
  EXPECT_THROW(gru_cell(tape, Value::zeros({1, 3}), Value::zeros({1, 5}), p), DimensionError);
}

TEST(BiGru, SingleStepIsOneCellEachWay) {
  Rng rng(7);
  GruParams p = GruParams::init(3, 4, rng);
  const std::vector<double> x{0.2, -1.0, 0.4};
  Tape tape;
  const auto out = row(bigru_encode(tape, as_row(x), p), 0);
  const std::vector<double> zero(4, 0.0);
  const auto f = oracle::gru_step(x, zero, p.forward);
  const auto b = oracle::gru_step(x, zero, p.backward);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(out[i], f[i], 1e-12);
    EXPECT_NEAR(out[4 + i], b[i], 1e-12);
  }
}

TEST(BiGru, MatchesUnrolledOracle) {
  Rng rng(8);
  GruParams p = GruParams::init(4, 3, rng);
  std::mt19937_64 r2(9);
  const auto seq = oracle::random_mat(3, 4, r2);
  Tape tape;
  const Value out = bigru_encode(tape, oracle::to_value(seq), p);
  std::vector<std::vector<double>> fwd(3), bwd(3);
  std::vector<double> h(3, 0.0);
  for (std::size_t t = 0; t < 3; ++t) fwd[t] = h = oracle::gru_step(seq[t], h, p.forward);
  h.assign(3, 0.0);
  for (std::size_t t = 3; t-- > 0;) bwd[t] = h = oracle::gru_step(seq[t], h, p.backward);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_NEAR(out.at(t, i), fwd[t][i], 1e-12);
      EXPECT_NEAR(out.at(t, 3 + i), bwd[t][i], 1e-12);
    }
}

TEST(BiGru, ReversalSwapsHalves) {
  Rng rng(10);
  GruParams p = GruParams::init(2, 3, rng);
  // Same parameters in both directions makes the swap exact.
  p.backward = p.forward;
  std::mt19937_64 r2(11);
  auto seq = oracle::random_mat(5, 2, r2);
  auto rev = seq;
  std::reverse(rev.begin(), rev.end());
  Tape tape;
  const Value a = bigru_encode(tape, oracle::to_value(seq), p);
  const Value b = bigru_encode(tape, oracle::to_value(rev), p);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_EQ(b.at(t, i), a.at(4 - t, 3 + i));
      EXPECT_EQ(b.at(t, 3 + i), a.at(4 - t, i));
    }
}

TEST(BiGru, EmptySequenceIsContractError) {
  Rng rng(1);
  GruParams p = GruParams::init(2, 3, rng);
  Tape tape;
  EXPECT_THROW(bigru_encode(tape, Value::zeros({0, 2}), p), ContractError);
}

TEST(Encode, ShapesAndZeroParams) {
  const Conversation c = random_conversation(5, 2, 3, 4, 2);
  EncoderParams p;
  p.streams = {GruParams{GruDirection::zeros(2, 3), GruDirection::zeros(2, 3)},
               GruParams{GruDirection::zeros(3, 3), GruDirection::zeros(3, 3)},
               GruParams{GruDirection::zeros(4, 3), GruDirection::zeros(4, 3)},
               GruParams{GruDirection::zeros(9, 3), GruDirection::zeros(9, 3)}};
  Tape tape;
  const EncodedConversation e = encode_conversation(tape, c, p);
  for (const Value* v : {&e.audio, &e.text, &e.visual, &e.fusion}) {
    EXPECT_EQ(v->rows(), 5u);
    EXPECT_EQ(v->cols(), 6u);
    for (double x : v->data()) EXPECT_EQ(x, 0.0);
  }
}

TEST(Encode, DeterministicAndPerConversation) {
  Rng rng(12);
  const EncoderParams p = EncoderParams::init(2, 3, 4, 5, rng);
  const Conversation a = random_conversation(4, 2, 3, 4, 3);
  const Conversation b = random_conversation(6, 2, 3, 4, 4);
  Tape t1, t2;
  const auto first = encode_conversation(t1, a, p);
  encode_conversation(t2, b, p);
  const auto again = encode_conversation(t2, a, p);
  EXPECT_TRUE(std::equal(first.fusion.data().begin(), first.fusion.data().end(),
                         again.fusion.data().begin()));
  EXPECT_TRUE(std::equal(first.audio.data().begin(), first.audio.data().end(),
                         again.audio.data().begin()));
}

TEST(Encode, GradientCheck) {
  Rng rng(13);
  EncoderParams p = EncoderParams::init(2, 3, 2, 3, rng);
  const Conversation c = random_conversation(3, 2, 3, 2, 5);
  std::vector<Value> params;
  p.for_each([&](const std::string&, Value& v) { params.push_back(v); });
  const Value weights = [] {
    std::mt19937_64 r(14);
    return oracle::to_value(oracle::random_mat(3, 6, r));
  }();
  auto fn = [&](Tape& t) {
    const auto e = encode_conversation(t, c, p);
    Value s = add(t, add(t, e.audio, e.text), add(t, e.visual, e.fusion));
    return sum(t, mul(t, s, weights));
  };
  EXPECT_LT(grad_check(fn, params), 1e-3);
}

}  // namespace
}  // namespace hfgcn
