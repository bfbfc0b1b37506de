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

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "hfgcn/model.hpp"

namespace hfgcn {
namespace {

namespace fs = std::filesystem;

HfgcnConfig tiny_config() {
  HfgcnConfig c;
  c.d_a = 3;
  c.d_t = 4;
  c.d_v = 5;
  c.hidden = 4;
  c.num_emotions = 4;
  c.num_va_bins = 9;
  c.dropout = 0.0;
  return c;
}

Dataset tiny_data(std::size_t conversations = 3, std::uint64_t seed = 1) {
  GeneratorConfig g;
  g.num_conversations = conversations;
  g.min_utterances = 1;
  g.max_utterances = 5;
  g.d_a = 4;
  g.d_t = 4;
  g.d_v = 5;
  g.seed = seed;
  Dataset ds = generate_synthetic(g);
  // Audio trimmed to 3 dims to catch swapped modality widths.
  for (auto& c : ds.conversations)
    for (auto& u : c.utterances) u.audio.pop_back();
  ds.meta.d_a = 3;
  return ds;
}

std::vector<HfgcnConfig> all_flag_configs() {
  std::vector<HfgcnConfig> out;
  for (int mask = 0; mask < 32; ++mask) {
    HfgcnConfig c = tiny_config();
    c.use_first_stage = mask & 1;
    c.use_second_stage = mask & 2;
    c.use_edge_attention = mask & 4;
    c.use_relations = mask & 8;
    c.use_va_heads = mask & 16;
    out.push_back(c);
  }
  return out;
}

bool bitwise_equal(const Value& a, const Value& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("hfgcn_model_" + name);
  fs::remove_all(dir);
  return dir;
}

TEST(Config, ValidationRejectsBadValues) {
  HfgcnConfig c = tiny_config();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = tiny_config();
  c.num_emotions = 1;
  EXPECT_THROW(c.validate(), ParameterError);
  c = tiny_config();
  c.w1 = -0.1;
  EXPECT_THROW(c.validate(), ParameterError);
  c = tiny_config();
  c.hidden = 0;
  EXPECT_THROW(c.validate(), ParameterError);
}

TEST(Config, JsonRoundTrip) {
  HfgcnConfig c = tiny_config();
  c.window_past = 2;
  c.use_relations = false;
  c.graph_dim1 = 7;
  EXPECT_EQ(config_from_json(config_to_json(c)), c);
}

TEST(Params, NamesUniqueAndShapesFollowConfig) {
  HfgcnConfig c = tiny_config();
  c.graph_dim1 = 5;
  c.graph_dim2 = 6;
  c.attention_dim = 3;
  const HfgcnParams p = HfgcnParams::init(c, 0);
  std::set<std::string> names;
  for (const auto& [name, v] : p.named()) EXPECT_TRUE(names.insert(name).second) << name;
  EXPECT_EQ(names.size(), 4u * 2 * 9 + 6 + 10 + 1 + 2 + 6);
  EXPECT_EQ(p.rgcn.relation[0].shape(), (Shape{5, 8}));
  EXPECT_EQ(p.gcn_neighbor.shape(), (Shape{6, 5}));
  EXPECT_EQ(p.attention.w_b.shape(), (Shape{6, 1}));
  EXPECT_EQ(p.emotion_head.weight.shape(), (Shape{4, 8 + 6}));
  EXPECT_EQ(p.encoder.streams[3].input_dim(), 12u);
}

TEST(Params, InitIsSeeded) {
  const auto a = HfgcnParams::init(tiny_config(), 5).values();
  const auto b = HfgcnParams::init(tiny_config(), 5).values();
  const auto c = HfgcnParams::init(tiny_config(), 6).values();
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_TRUE(bitwise_equal(a[k], b[k]));
  EXPECT_FALSE(bitwise_equal(a[0], c[0]));
}

TEST(Params, CloneIsIndependentAndAssignCopies) {
  HfgcnParams p = HfgcnParams::init(tiny_config(), 1);
  HfgcnParams q = p.clone();
  q.w_a.data()[0] += 1.0;
  EXPECT_NE(p.w_a.data()[0], q.w_a.data()[0]);
  p.assign(q);
  EXPECT_EQ(p.w_a.data()[0], q.w_a.data()[0]);
  EXPECT_FALSE(p.w_a.same_as(q.w_a));
}

TEST(Forward, ShapesForEveryFlagCombination) {
  const Dataset ds = tiny_data();
  for (const auto& cfg : all_flag_configs()) {
    const HfgcnParams p = HfgcnParams::init(cfg, 2);
    for (const auto& conv : ds.conversations) {
      Tape tape;
      const ModelOutput out = forward_eval(tape, conv, p, cfg);
      EXPECT_EQ(out.emotion.shape(), (Shape{conv.size(), 4}));
      EXPECT_EQ(out.valence.shape(), (Shape{conv.size(), 9}));
      EXPECT_EQ(out.arousal.shape(), (Shape{conv.size(), 9}));
      EXPECT_EQ(out.utterances.shape(), (Shape{conv.size(), 16}));
      for (double v : out.emotion.data()) EXPECT_TRUE(std::isfinite(v));
    }
  }
}

TEST(Forward, BothStagesOffLeavesGraphHalfZero) {
  HfgcnConfig cfg = tiny_config();
  cfg.use_first_stage = cfg.use_second_stage = false;
  const HfgcnParams p = HfgcnParams::init(cfg, 3);
  const Dataset ds = tiny_data();
  Tape tape;
  const ModelOutput out = forward_eval(tape, ds.conversations[0], p, cfg);
  EXPECT_TRUE(out.graph.edges.empty());
  for (std::size_t i = 0; i < out.utterances.rows(); ++i)
    for (std::size_t j = 8; j < 16; ++j) EXPECT_EQ(out.utterances.at(i, j), 0.0);
}

TEST(Forward, GraphFollowsFlags) {
  const Dataset ds = tiny_data(6);
  const Conversation* conv = nullptr;
  for (const auto& c : ds.conversations)
    if (c.size() >= 3) conv = &c;
  ASSERT_NE(conv, nullptr);
  const std::size_t n = conv->size();
  for (const auto& cfg : all_flag_configs()) {
    const HfgcnParams p = HfgcnParams::init(cfg, 4);
    Tape tape;
    const ModelOutput out = forward_eval(tape, *conv, p, cfg);
    const std::size_t intra = cfg.use_first_stage ? 12 * n : 0;
    const std::size_t inter = cfg.use_second_stage ? n * (n - 1) : 0;
    if (!cfg.use_first_stage && !cfg.use_second_stage) continue;
    EXPECT_EQ(out.graph.num_intra(), intra);
    EXPECT_EQ(out.graph.num_inter(), inter);
    EXPECT_EQ(out.edge_weights.defined(), cfg.use_edge_attention && intra + inter > 0);
  }
}

TEST(Forward, EvalIsDeterministicTrainDropoutIsNot) {
  HfgcnConfig cfg = tiny_config();
  cfg.dropout = 0.35;
  const HfgcnParams p = HfgcnParams::init(cfg, 5);
  const Dataset ds = tiny_data();
  const Conversation& conv = ds.conversations[1];
  Tape t1, t2;
  EXPECT_TRUE(bitwise_equal(forward_eval(t1, conv, p, cfg).emotion, forward_eval(t2, conv, p, cfg).emotion));
  Rng rng(0);
  Tape t3, t4;
  const Value a = forward(t3, conv, p, cfg, Mode::kTrain, rng).emotion;
  const Value b = forward(t4, conv, p, cfg, Mode::kTrain, rng).emotion;
  EXPECT_FALSE(bitwise_equal(a, b));
}

TEST(Forward, InputDimensionMismatch) {
  HfgcnConfig cfg = tiny_config();
  cfg.d_v = 6;
  const HfgcnParams p = HfgcnParams::init(cfg, 5);
  Tape tape;
  try {
    forward_eval(tape, tiny_data().conversations[0], p, cfg);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("forward[input]"), std::string::npos);
  }
}

TEST(Loss, UniformLogitsLaw) {
  for (const auto& [w1, w2] : {std::pair{0.15, 0.15}, {1.0, 0.0}, {0.3, 2.0}}) {
    HfgcnConfig cfg = tiny_config();
    cfg.w1 = w1;
    cfg.w2 = w2;
    HfgcnParams p = HfgcnParams::init(cfg, 6);
    for (Linear* head : {&p.emotion_head, &p.valence_head, &p.arousal_head}) {
      for (double& x : head->weight.data()) x = 0.0;
      for (double& x : head->bias.data()) x = 0.0;
    }
    const Dataset ds = tiny_data();
    const Conversation& conv = ds.conversations[0];
    Tape tape;
    const ModelOutput out = forward_eval(tape, conv, p, cfg);
    EXPECT_NEAR(multitask_loss(tape, out, conv, cfg).item(),
                std::log(4.0) + w1 * std::log(9.0) + w2 * std::log(9.0), 1e-10);
  }
}

TEST(Loss, InactiveVaIsExactlyEmotionCrossEntropy) {
  const Dataset ds = tiny_data();
  const Conversation& conv = ds.conversations[2];
  for (bool heads : {true, false}) {
    HfgcnConfig cfg = tiny_config();
    cfg.use_va_heads = heads;
    if (heads) cfg.w1 = cfg.w2 = 0.0;
    const HfgcnParams p = HfgcnParams::init(cfg, 7);
    Tape tape;
    const ModelOutput out = forward_eval(tape, conv, p, cfg);
    std::vector<std::size_t> labels;
    for (const auto& u : conv.utterances) labels.push_back(u.emotion);
    const double ce = cross_entropy(tape, out.emotion, labels).item();
    const double loss = multitask_loss(tape, out, conv, cfg).item();
    EXPECT_EQ(std::memcmp(&ce, &loss, sizeof(double)), 0);
  }
}

TEST(Loss, BatchAveragesOverUtterances) {
  const Dataset ds = tiny_data(3);
  const HfgcnConfig cfg = tiny_config();
  const HfgcnParams p = HfgcnParams::init(cfg, 8);
  Tape tape;
  std::vector<ModelOutput> outs;
  double weighted = 0;
  std::size_t total = 0;
  for (const auto& c : ds.conversations) {
    outs.push_back(forward_eval(tape, c, p, cfg));
    weighted += multitask_loss(tape, outs.back(), c, cfg).item() * static_cast<double>(c.size());
    total += c.size();
  }
  EXPECT_NEAR(multitask_loss(tape, outs, ds.conversations, cfg).item(), weighted / static_cast<double>(total), 1e-12);
}

TEST(Loss, MissingVaLabels) {
  Dataset ds = tiny_data(1);
  for (auto& u : ds.conversations[0].utterances) u.valence = u.arousal = std::nullopt;
  HfgcnConfig cfg = tiny_config();
  const HfgcnParams p = HfgcnParams::init(cfg, 9);
  Tape tape;
  const ModelOutput out = forward_eval(tape, ds.conversations[0], p, cfg);
  EXPECT_THROW(multitask_loss(tape, out, ds.conversations[0], cfg), ValidationError);
  cfg.use_va_heads = false;
  EXPECT_NO_THROW(multitask_loss(tape, out, ds.conversations[0], cfg));
}

TEST(Predict, ArgmaxTiesGoToLowestClass) {
  EXPECT_EQ(argmax_rows(Value::matrix(2, 3, {1, 5, 5, 0, 0, 0})), (std::vector<std::size_t>{1, 0}));
}

TEST(Checkpoint, RoundTripIsBitwise) {
  HfgcnConfig cfg = tiny_config();
  cfg.window_future = 1;
  const HfgcnParams p = HfgcnParams::init(cfg, 10);
  const auto dir = fresh_dir("roundtrip");
  save_checkpoint(p, cfg, dir);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "weights.bin"));
  auto [q, cfg2] = load_checkpoint(dir);
  EXPECT_EQ(cfg2, cfg);
  const auto a = p.values(), b = q.values();
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_TRUE(bitwise_equal(a[k], b[k])) << k;
  const Dataset ds = tiny_data();
  const Conversation& conv = ds.conversations[0];
  Tape t1, t2;
  EXPECT_TRUE(bitwise_equal(forward_eval(t1, conv, p, cfg).emotion, forward_eval(t2, conv, q, cfg2).emotion));
}

TEST(Checkpoint, ManifestDescribesTensors) {
  const HfgcnConfig cfg = tiny_config();
  const HfgcnParams p = HfgcnParams::init(cfg, 11);
  const auto dir = fresh_dir("manifest");
  save_checkpoint(p, cfg, dir);
  const auto j = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
  EXPECT_EQ(j.at("format_version"), 1);
  std::size_t offset = 0;
  for (const auto& t : j.at("tensors")) {
    EXPECT_EQ(t.at("dtype"), "f64");
    EXPECT_EQ(t.at("byte_offset").get<std::size_t>(), offset);
    offset += t.at("byte_length").get<std::size_t>();
  }
  EXPECT_EQ(fs::file_size(dir / "weights.bin"), offset);
  EXPECT_EQ(offset, 8 * p.num_scalars());
}

class CorruptCheckpoint : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fresh_dir("corrupt");
    save_checkpoint(HfgcnParams::init(tiny_config(), 12), tiny_config(), dir_);
    manifest_ = nlohmann::json::parse(std::ifstream(dir_ / "manifest.json"));
  }
  void write_manifest() { std::ofstream(dir_ / "manifest.json") << manifest_.dump(); }
  CheckpointError::Kind load_kind() {
    try {
      load_checkpoint(dir_);
    } catch (const CheckpointError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "load succeeded";
    return CheckpointError::Kind::kIo;
  }
  fs::path dir_;
  nlohmann::json manifest_;
};

TEST_F(CorruptCheckpoint, MissingDirectory) {
  fs::remove_all(dir_);
  EXPECT_EQ(load_kind(), CheckpointError::Kind::kIo);
}

TEST_F(CorruptCheckpoint, WrongVersion) {
  manifest_["format_version"] = 2;
  write_manifest();
  EXPECT_EQ(load_kind(), CheckpointError::Kind::kVersion);
}

TEST_F(CorruptCheckpoint, TruncatedWeights) {
  fs::resize_file(dir_ / "weights.bin", fs::file_size(dir_ / "weights.bin") - 8);
  EXPECT_EQ(load_kind(), CheckpointError::Kind::kTruncated);
  try {
    load_checkpoint(dir_);
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("bytes"), std::string::npos);
  }
}

TEST_F(CorruptCheckpoint, ShapeDisagreesWithConfig) {
  manifest_["tensors"][0]["shape"] = {1, 1};
  write_manifest();
  EXPECT_EQ(load_kind(), CheckpointError::Kind::kInconsistent);
}

TEST_F(CorruptCheckpoint, MissingField) {
  manifest_["tensors"][3].erase("byte_offset");
  write_manifest();
  EXPECT_EQ(load_kind(), CheckpointError::Kind::kInconsistent);
}

TEST_F(CorruptCheckpoint, UnparsableManifest) {
  std::ofstream(dir_ / "manifest.json") << "{ not json";
  EXPECT_EQ(load_kind(), CheckpointError::Kind::kInconsistent);
}

TEST(Gradients, ForwardPassesGradCheck) {
  const Dataset ds = tiny_data(2, 3);
  for (int mask : {0, 3, 15, 31}) {
    HfgcnConfig cfg = all_flag_configs()[static_cast<std::size_t>(mask)];
    HfgcnParams p = HfgcnParams::init(cfg, 13);
    std::vector<Value> params = p.values();
    auto fn = [&](Tape& t) {
      std::vector<ModelOutput> outs;
      for (const auto& c : ds.conversations) outs.push_back(forward_eval(t, c, p, cfg));
      return multitask_loss(t, outs, ds.conversations, cfg);
    };
    GradCheckOptions opts;
    opts.coords_per_param = 6;
    opts.magnitude_floor = 1e-6;
    const GradCheckResult r = grad_check_detailed(fn, params, opts);
    EXPECT_LT(r.max_rel_error, 1e-3) << "mask " << mask << " param " << p.named()[r.worst_param].first;
    EXPECT_LT(r.max_abs_error_below_floor, 1e-8) << "mask " << mask;
  }
}

}  // namespace
}  // namespace hfgcn
