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
#include <random>
#include <sstream>

#include "hfgcn/training.hpp"
#include "oracle.hpp"

namespace hfgcn {
namespace {

HfgcnConfig small_config() {
  HfgcnConfig c;
  c.d_a = c.d_t = c.d_v = 4;
  c.hidden = 4;
  c.dropout = 0.1;
  return c;
}

Dataset small_data(std::size_t n = 12, std::uint64_t seed = 2) {
  GeneratorConfig g;
  g.num_conversations = n;
  g.min_utterances = 2;
  g.max_utterances = 5;
  g.d_a = g.d_t = g.d_v = 4;
  g.seed = seed;
  return generate_synthetic(g);
}

TrainConfig quick(std::size_t epochs, std::size_t patience) {
  TrainConfig t;
  t.learning_rate = 1e-2;
  t.max_epochs = epochs;
  t.patience = patience;
  return t;
}

std::string history_text(const TrainResult& r) {
  std::ostringstream os;
  write_history_csv(os, r.history);
  return os.str();
}

TEST(Metrics, WeightedF1MatchesOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng() % 5, n = 1 + rng() % 60;
    std::vector<std::size_t> truth(n), pred(n);
    std::vector<std::vector<std::size_t>> confusion(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = rng() % k;
      pred[i] = rng() % 3 == 0 ? truth[i] : rng() % k;
      ++confusion[truth[i]][pred[i]];
    }
    const MetricsReport m = metrics_from_confusion(confusion);
    EXPECT_NEAR(m.weighted_f1, oracle::weighted_f1(truth, pred, k), 1e-12);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += truth[i] == pred[i];
    EXPECT_DOUBLE_EQ(m.accuracy, static_cast<double>(correct) / static_cast<double>(n));
  }
}

TEST(Metrics, ClassNeverPredictedHasZeroF1) {
  const MetricsReport m = metrics_from_confusion({{3, 0}, {2, 0}});
  EXPECT_EQ(m.per_class_f1[1], 0.0);
  EXPECT_NEAR(m.per_class_f1[0], 2 * 0.6 * 1.0 / 1.6, 1e-15);
  EXPECT_EQ(metrics_from_confusion({{0, 0}, {0, 0}}).weighted_f1, 0.0);
}

TEST(Metrics, JsonOmitsVaWhenAbsent) {
  MetricsReport m = metrics_from_confusion({{1, 0}, {0, 1}});
  EXPECT_FALSE(metrics_to_json(m).contains("valence_accuracy"));
  m.valence_accuracy = 0.5;
  m.arousal_accuracy = 0.25;
  EXPECT_EQ(metrics_to_json(m).at("arousal_accuracy"), 0.25);
}

TEST(Evaluate, IndependentOfOrderAndThreads) {
  const Dataset ds = small_data(9);
  const HfgcnConfig cfg = small_config();
  const HfgcnParams p = HfgcnParams::init(cfg, 3);
  const MetricsReport a = evaluate(p, cfg, ds.conversations, 1);
  auto shuffled = ds.conversations;
  std::reverse(shuffled.begin(), shuffled.end());
  const MetricsReport b = evaluate(p, cfg, shuffled, 4);
  EXPECT_EQ(a.confusion, b.confusion);
  EXPECT_EQ(std::memcmp(&a.loss, &b.loss, sizeof(double)), 0);
  EXPECT_EQ(a.weighted_f1, b.weighted_f1);
  ASSERT_TRUE(a.valence_accuracy.has_value());
  EXPECT_EQ(*a.valence_accuracy, *b.valence_accuracy);
  EXPECT_EQ(a.num_utterances, ds.num_utterances());
}

TEST(Train, PatienceZeroRunsOneEpoch) {
  const Dataset ds = small_data();
  const TrainResult r = train(ds.conversations, {}, small_config(), quick(5, 0));
  EXPECT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.best_epoch, 1u);
  EXPECT_EQ(r.updates, ds.conversations.size());
}

TEST(Train, StopsAfterPatienceWithoutImprovement) {
  const auto split = split_dataset(small_data(20).conversations, {0.6, 0.4, 0.0}, 1);
  const TrainResult r = train(split.train, split.val, small_config(), quick(30, 2));
  ASSERT_FALSE(r.history.empty());
  EXPECT_LE(r.history.size(), 30u);
  if (r.history.size() < 30) EXPECT_EQ(r.history.size(), r.best_epoch + 2);
  double best = -1;
  for (const auto& e : r.history) best = std::max(best, e.val_weighted_f1);
  EXPECT_EQ(r.history[r.best_epoch - 1].val_weighted_f1, best);
  EXPECT_EQ(r.updates, r.history.size() * split.train.size());
}

TEST(Train, BestParamsReproduceBestValidationScore) {
  const auto split = split_dataset(small_data(20).conversations, {0.6, 0.4, 0.0}, 1);
  const HfgcnConfig cfg = small_config();
  const TrainResult r = train(split.train, split.val, cfg, quick(8, 8));
  const MetricsReport m = evaluate(r.best, cfg, split.val);
  EXPECT_EQ(m.weighted_f1, r.history[r.best_epoch - 1].val_weighted_f1);
}

TEST(Train, LossDecreasesOnTrainingData) {
  const Dataset ds = small_data(6);
  HfgcnConfig cfg = small_config();
  cfg.dropout = 0.0;
  const TrainResult r = train(ds.conversations, {}, cfg, quick(15, 15));
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
  EXPECT_TRUE(std::isnan(r.history.front().val_weighted_f1));
}

TEST(Train, SameSeedIsBitIdentical) {
  const auto split = split_dataset(small_data(10).conversations, {0.7, 0.3, 0.0}, 1);
  const HfgcnConfig cfg = small_config();
  const TrainResult a = train(split.train, split.val, cfg, quick(3, 3));
  const TrainResult b = train(split.train, split.val, cfg, quick(3, 3));
  EXPECT_EQ(history_text(a), history_text(b));
  const auto va = a.best.values(), vb = b.best.values();
  for (std::size_t k = 0; k < va.size(); ++k)
    EXPECT_EQ(std::memcmp(va[k].data().data(), vb[k].data().data(), va[k].size() * 8), 0);
  TrainConfig other = quick(3, 3);
  other.seed = 1;
  EXPECT_NE(history_text(a), history_text(train(split.train, split.val, cfg, other)));
}

TEST(Train, NonFiniteLossIsTrainingError) {
  Dataset ds = small_data(2);
  ds.conversations[1].utterances[0].audio[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train(ds.conversations, {}, small_config(), quick(1, 1));
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find(ds.conversations[1].id), std::string::npos);
  }
}

TEST(Train, ConfigErrors) {
  const Dataset ds = small_data(2);
  EXPECT_THROW(train({}, {}, small_config(), quick(1, 1)), ValidationError);
  EXPECT_THROW(train(ds.conversations, {}, small_config(), quick(1, 2)), ParameterError);
  TrainConfig bad = quick(1, 1);
  bad.learning_rate = 0;
  EXPECT_THROW(train(ds.conversations, {}, small_config(), bad), ParameterError);
}

TEST(Train, CallbackSeesEveryEpoch) {
  const Dataset ds = small_data(3);
  std::size_t calls = 0;
  train(ds.conversations, {}, small_config(), quick(4, 4), [&](const EpochRecord& r) {
    EXPECT_EQ(r.epoch, ++calls);
  });
  EXPECT_EQ(calls, 4u);
}

TEST(History, CsvFormat) {
  std::vector<EpochRecord> h(2);
  h[0].epoch = 1;
  h[0].train_loss = 0.5;
  h[1].epoch = 2;
  h[1].train_loss = 0.25;
  h[1].val_weighted_f1 = 0.75;
  std::ostringstream os;
  write_history_csv(os, h);
  EXPECT_EQ(os.str(),
            "epoch,train_loss,val_loss,val_weighted_f1,val_accuracy\n"
            "1,0.5,nan,nan,nan\n2,0.25,nan,0.75,nan\n");
}

TEST(Ablation, StandardVariants) {
  const auto v = standard_ablation_variants();
  ASSERT_EQ(v.size(), 8u);
  std::size_t full = 0, stages = 0;
  for (const auto& x : v) {
    full += x.is_full();
    stages += x.table == "stages";
  }
  EXPECT_EQ(full, 2u);
  EXPECT_EQ(stages, 4u);
}

TEST(Ablation, SharesFullRunAndWritesCsv) {
  const auto split = split_dataset(small_data(10).conversations, {0.6, 0.2, 0.2}, 1);
  const auto variants = standard_ablation_variants();
  const std::vector<std::uint64_t> seeds{0, 1};
  std::size_t callbacks = 0;
  const AblationResult r = run_ablation(split, small_config(), quick(1, 1), variants, seeds,
                                        [&](const AblationRow&) { ++callbacks; });
  EXPECT_EQ(r.rows.size(), 16u);
  EXPECT_EQ(callbacks, 16u);
  ASSERT_EQ(r.summary.size(), 8u);
  for (std::uint64_t s : seeds) {
    std::vector<double> full;
    for (const auto& row : r.rows)
      if (row.seed == s && row.variant.is_full()) full.push_back(row.weighted_f1);
    ASSERT_EQ(full.size(), 2u);
    EXPECT_EQ(full[0], full[1]);
  }
  for (const auto& s : r.summary) {
    EXPECT_EQ(s.runs, 2u);
    std::vector<double> f;
    for (const auto& row : r.rows)
      if (row.variant.same_flags(s.variant) && row.variant.table == s.variant.table) f.push_back(row.weighted_f1);
    const double mean = (f[0] + f[1]) / 2;
    EXPECT_NEAR(s.mean_f1, mean, 1e-15);
    EXPECT_NEAR(s.std_f1, std::abs(f[0] - f[1]) / std::sqrt(2.0), 1e-12);
  }
  std::ostringstream os;
  write_ablation_csv(os, r);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "table,use_first_stage,use_second_stage,use_edge_attention,use_relations,seed,weighted_f1,accuracy");
  std::size_t n = 0;
  while (std::getline(is, line)) ++n;
  EXPECT_EQ(n, 16u);
}

TEST(Ablation, NeedsEvaluationSplit) {
  const auto split = split_dataset(small_data(4).conversations, {1, 0, 0}, 1);
  const std::vector<std::uint64_t> seeds{0};
  EXPECT_THROW(run_ablation(split, small_config(), quick(1, 1), standard_ablation_variants(), seeds),
               ValidationError);
}

TEST(ExportVa, RowsColumnsAndFooter) {
  const Dataset ds = small_data(4);
  const HfgcnConfig cfg = small_config();
  const HfgcnParams p = HfgcnParams::init(cfg, 4);
  std::ostringstream csv, warn;
  const auto r = export_va_projection(p, cfg, ds.conversations, 5, 0.0, 1, csv, &warn, ds.meta.label_names);
  EXPECT_EQ(r.rows, 5u);
  EXPECT_TRUE(warn.str().empty());
  std::istringstream is(csv.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "utterance,true_emotion,pred_emotion,true_valence,pred_valence,true_arousal,pred_arousal,plot_valence,plot_arousal");
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.starts_with("#")) {
      EXPECT_NE(line.find("valence_accuracy="), std::string::npos);
      continue;
    }
    ++rows;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
    ASSERT_EQ(f.size(), 9u);
    // Zero jitter puts points exactly on the predicted class degree.
    EXPECT_EQ(std::stod(f[7]), va_class_value(std::stoul(f[4]), 9));
    EXPECT_EQ(std::stod(f[8]), va_class_value(std::stoul(f[6]), 9));
  }
  EXPECT_EQ(rows, 5u);
}

TEST(ExportVa, SampleSizeClampedWithWarning) {
  const Dataset ds = small_data(2);
  const HfgcnConfig cfg = small_config();
  const HfgcnParams p = HfgcnParams::init(cfg, 4);
  std::ostringstream csv, warn;
  const auto r = export_va_projection(p, cfg, ds.conversations, 1000, 0.1, 1, csv, &warn);
  EXPECT_EQ(r.rows, ds.num_utterances());
  EXPECT_NE(warn.str().find("exceeds"), std::string::npos);
}

TEST(ExportVa, ZeroRowsHasNoFooter) {
  const Dataset ds = small_data(2);
  const HfgcnConfig cfg = small_config();
  std::ostringstream csv;
  export_va_projection(HfgcnParams::init(cfg, 4), cfg, ds.conversations, 0, 0.1, 1, csv);
  EXPECT_EQ(csv.str().find('#'), std::string::npos);
}

TEST(ExportVa, RequiresVaHeads) {
  const Dataset ds = small_data(2);
  HfgcnConfig cfg = small_config();
  cfg.use_va_heads = false;
  std::ostringstream csv;
  EXPECT_THROW(export_va_projection(HfgcnParams::init(cfg, 4), cfg, ds.conversations, 1, 0, 1, csv),
               ValidationError);
}

}  // namespace
}  // namespace hfgcn
