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
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "hfgcn/dataio.hpp"
#include "hfgcn/model.hpp"
#include "hfgcn/numerics.hpp"

namespace hfgcn {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  bool shuffle = true;
  std::size_t threads = 1;  // evaluation only

  void validate() const {
    if (!(learning_rate > 0.0)) throw ParameterError("train config: learning_rate must be > 0");
    if (max_epochs == 0) throw ParameterError("train config: max_epochs must be >= 1");
    if (patience > max_epochs) throw ParameterError("train config: patience must be <= max_epochs");
    if (threads == 0) throw ParameterError("train config: threads must be >= 1");
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& t) {
  return nlohmann::json{{"learning_rate", t.learning_rate}, {"max_epochs", t.max_epochs},
                        {"patience", t.patience},           {"seed", t.seed},
                        {"shuffle", t.shuffle}};
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsReport {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  std::vector<double> per_class_f1;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::optional<double> valence_accuracy;
  std::optional<double> arousal_accuracy;
  double loss = 0.0;
  std::size_t num_utterances = 0;
};

// Weighted F1 = sum_c (support_c / total)·F1_c, with F1_c = 0 when
// precision + recall = 0.
inline MetricsReport metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion) {
  MetricsReport m;
  const std::size_t k = confusion.size();
  std::size_t total = 0, correct = 0;
  std::vector<std::size_t> support(k, 0), predicted(k, 0);
  for (std::size_t t = 0; t < k; ++t)
    for (std::size_t p = 0; p < k; ++p) {
      total += confusion[t][p];
      support[t] += confusion[t][p];
      predicted[p] += confusion[t][p];
      if (t == p) correct += confusion[t][p];
    }
  m.num_utterances = total;
  m.per_class_f1.assign(k, 0.0);
  if (total == 0) {
    m.confusion = std::move(confusion);
    return m;
  }
  for (std::size_t c = 0; c < k; ++c) {
    const double tp = static_cast<double>(confusion[c][c]);
    const double precision = predicted[c] ? tp / static_cast<double>(predicted[c]) : 0.0;
    const double recall = support[c] ? tp / static_cast<double>(support[c]) : 0.0;
    m.per_class_f1[c] =
        precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    m.weighted_f1 += static_cast<double>(support[c]) / static_cast<double>(total) * m.per_class_f1[c];
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  m.confusion = std::move(confusion);
  return m;
}

namespace detail {

struct ConversationScore {
  double loss_sum = 0.0;  // per-utterance loss times utterance count
  std::vector<Prediction> predictions;
};

inline ConversationScore score_conversation(const Conversation& conv, const HfgcnParams& params,
                                            const HfgcnConfig& cfg) {
  Tape tape = Tape::inference();
  const ModelOutput out = forward_eval(tape, conv, params, cfg);
  ConversationScore s;
  s.loss_sum = multitask_loss(tape, out, conv, cfg).item() * static_cast<double>(conv.size());
  s.predictions = predict(out);
  return s;
}

}  // namespace detail

// Eval-mode scoring of every conversation. Results are reduced in a fixed,
// order-independent way, so thread count and dataset order do not affect
// the report.
inline MetricsReport evaluate(const HfgcnParams& params, const HfgcnConfig& cfg,
                              std::span<const Conversation> dataset, std::size_t threads = 1) {
  std::vector<detail::ConversationScore> scores(dataset.size());
  threads = std::max<std::size_t>(1, std::min(threads, dataset.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < dataset.size(); ++i)
      scores[i] = detail::score_conversation(dataset[i], params, cfg);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t]() {
        for (std::size_t i = t; i < dataset.size(); i += threads)
          scores[i] = detail::score_conversation(dataset[i], params, cfg);
      });
    }
    for (auto& th : pool) th.join();
  }

  std::vector<std::vector<std::size_t>> confusion(cfg.num_emotions,
                                                  std::vector<std::size_t>(cfg.num_emotions, 0));
  std::size_t va_total = 0, va_val = 0, va_aro = 0;
  bool va_complete = true;
  std::vector<double> losses;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    losses.push_back(scores[i].loss_sum);
    for (std::size_t j = 0; j < dataset[i].size(); ++j) {
      const auto& u = dataset[i].utterances[j];
      const auto& p = scores[i].predictions[j];
      ++confusion[u.emotion][p.emotion];
      if (u.valence && u.arousal) {
        ++va_total;
        va_val += discretize_va(*u.valence, cfg.num_va_bins) == p.valence ? 1 : 0;
        va_aro += discretize_va(*u.arousal, cfg.num_va_bins) == p.arousal ? 1 : 0;
      } else {
        va_complete = false;
      }
    }
  }
  MetricsReport m = metrics_from_confusion(std::move(confusion));
  std::sort(losses.begin(), losses.end());
  double loss_sum = 0.0;
  for (double l : losses) loss_sum += l;
  m.loss = m.num_utterances ? loss_sum / static_cast<double>(m.num_utterances) : 0.0;
  if (cfg.use_va_heads && va_complete && va_total > 0) {
    m.valence_accuracy = static_cast<double>(va_val) / static_cast<double>(va_total);
    m.arousal_accuracy = static_cast<double>(va_aro) / static_cast<double>(va_total);
  }
  return m;
}

inline nlohmann::json metrics_to_json(const MetricsReport& m) {
  nlohmann::json j{{"accuracy", m.accuracy},
                   {"weighted_f1", m.weighted_f1},
                   {"per_class_f1", m.per_class_f1},
                   {"confusion", m.confusion},
                   {"loss", m.loss},
                   {"num_utterances", m.num_utterances}};
  if (m.valence_accuracy) j["valence_accuracy"] = *m.valence_accuracy;
  if (m.arousal_accuracy) j["arousal_accuracy"] = *m.arousal_accuracy;
  return j;
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_weighted_f1 = std::numeric_limits<double>::quiet_NaN();
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  HfgcnParams best;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::size_t updates = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// One Adam update per conversation. Early stopping tracks validation
// weighted F1, or training loss when no validation set is given.
inline TrainResult train(std::span<const Conversation> train_set,
                         std::span<const Conversation> val_set, const HfgcnConfig& cfg,
                         const TrainConfig& tcfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  tcfg.validate();
  if (train_set.empty()) throw ValidationError("train: empty training set");

  HfgcnParams params = HfgcnParams::init(cfg, tcfg.seed);
  std::vector<Value> handles = params.values();
  AdamOptions opts;
  opts.learning_rate = tcfg.learning_rate;
  AdamState adam(handles, opts);
  Rng order_rng(tcfg.seed ^ 0x9E3779B97F4A7C15ULL);
  Rng dropout_rng(tcfg.seed + 1);

  TrainResult result;
  result.best = params.clone();
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::size_t total_utterances = 0;
  for (const auto& c : train_set) total_utterances += c.size();

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
    if (tcfg.shuffle) std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      const Conversation& conv = train_set[idx];
      params.zero_grad();
      Tape tape;
      const ModelOutput out = forward(tape, conv, params, cfg, Mode::kTrain, dropout_rng);
      const Value loss = multitask_loss(tape, out, conv, cfg);
      if (!std::isfinite(loss.item())) {
        throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch) +
                            ", conversation '" + conv.id + "'");
      }
      tape.backward(loss);
      adam.update(handles);
      ++result.updates;
      loss_sum += loss.item() * static_cast<double>(conv.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(total_utterances);
    double score = -rec.train_loss;
    if (!val_set.empty()) {
      const MetricsReport m = evaluate(params, cfg, val_set, tcfg.threads);
      rec.val_loss = m.loss;
      rec.val_weighted_f1 = m.weighted_f1;
      rec.val_accuracy = m.accuracy;
      score = m.weighted_f1;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (score > best_score) {
      best_score = score;
      result.best.assign(params);
      result.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (since_best >= tcfg.patience) break;
  }
  return result;
}

inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline void write_history_csv(std::ostream& os, std::span<const EpochRecord> history) {
  os << "epoch,train_loss,val_loss,val_weighted_f1,val_accuracy\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss) << ','
       << format_double(r.val_weighted_f1) << ',' << format_double(r.val_accuracy) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationVariant {
  std::string table;  // "stages" or "edges"
  bool first_stage = true;
  bool second_stage = true;
  bool edge_attention = true;
  bool relations = true;

  bool is_full() const { return first_stage && second_stage && edge_attention && relations; }
  bool same_flags(const AblationVariant& o) const {
    return first_stage == o.first_stage && second_stage == o.second_stage &&
           edge_attention == o.edge_attention && relations == o.relations;
  }
  HfgcnConfig apply(HfgcnConfig cfg) const {
    cfg.use_first_stage = first_stage;
    cfg.use_second_stage = second_stage;
    cfg.use_edge_attention = edge_attention;
    cfg.use_relations = relations;
    return cfg;
  }
};

// Graph-stage rows (both off, first only, second only, full) followed by
// edge rows (neither, attention only, relations only, full).
inline std::vector<AblationVariant> standard_ablation_variants() {
  return {
      {"stages", false, false, true, true}, {"stages", true, false, true, true},
      {"stages", false, true, true, true},  {"stages", true, true, true, true},
      {"edges", true, true, false, false},  {"edges", true, true, true, false},
      {"edges", true, true, false, true},   {"edges", true, true, true, true},
  };
}

struct AblationRow {
  AblationVariant variant;
  std::uint64_t seed = 0;
  double weighted_f1 = 0.0;
  double accuracy = 0.0;
};

struct AblationSummary {
  AblationVariant variant;
  double mean_f1 = 0.0;
  double std_f1 = 0.0;
  double mean_accuracy = 0.0;
  std::size_t runs = 0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<AblationSummary> summary;

  const AblationSummary& find(const AblationVariant& v) const {
    for (const auto& s : summary)
      if (s.variant.same_flags(v)) return s;
    throw ContractError("ablation: variant not present");
  }
};

using RunCallback = std::function<void(const AblationRow&)>;

// Trains and evaluates every variant for every seed on the same split.
// Variants with identical flags (the full model appears in both tables)
// share one run per seed.
inline AblationResult run_ablation(const DatasetSplit& data, const HfgcnConfig& base,
                                   const TrainConfig& tcfg,
                                   std::span<const AblationVariant> variants,
                                   std::span<const std::uint64_t> seeds,
                                   const RunCallback& on_run = {}) {
  if (seeds.empty()) throw ValidationError("ablation: at least one seed required");
  const auto& eval_set = data.test.empty() ? data.val : data.test;
  if (eval_set.empty()) throw ValidationError("ablation: need a test or validation split");
  AblationResult result;
  for (std::uint64_t seed : seeds) {
    std::vector<AblationRow> done;
    for (const auto& v : variants) {
      auto cached = std::find_if(done.begin(), done.end(),
                                 [&](const AblationRow& r) { return r.variant.same_flags(v); });
      AblationRow row;
      if (cached != done.end()) {
        row = *cached;
        row.variant = v;
      } else {
        const HfgcnConfig cfg = v.apply(base);
        TrainConfig t = tcfg;
        t.seed = seed;
        const TrainResult tr = train(data.train, data.val, cfg, t);
        const MetricsReport m = evaluate(tr.best, cfg, eval_set, t.threads);
        row = {v, seed, m.weighted_f1, m.accuracy};
        done.push_back(row);
      }
      result.rows.push_back(row);
      if (on_run) on_run(row);
    }
  }
  for (const auto& v : variants) {
    if (std::any_of(result.summary.begin(), result.summary.end(),
                    [&](const AblationSummary& s) {
                      return s.variant.same_flags(v) && s.variant.table == v.table;
                    }))
      continue;
    AblationSummary s;
    s.variant = v;
    std::vector<double> f1;
    for (const auto& r : result.rows) {
      if (!r.variant.same_flags(v) || r.variant.table != v.table) continue;
      f1.push_back(r.weighted_f1);
      s.mean_accuracy += r.accuracy;
    }
    s.runs = f1.size();
    s.mean_f1 = std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(s.runs);
    s.mean_accuracy /= static_cast<double>(s.runs);
    if (s.runs > 1) {
      double ss = 0.0;
      for (double x : f1) ss += (x - s.mean_f1) * (x - s.mean_f1);
      s.std_f1 = std::sqrt(ss / static_cast<double>(s.runs - 1));
    }
    result.summary.push_back(s);
  }
  return result;
}

inline void write_ablation_csv(std::ostream& os, const AblationResult& r) {
  auto b = [](bool x) { return x ? "true" : "false"; };
  os << "table,use_first_stage,use_second_stage,use_edge_attention,use_relations,seed,"
        "weighted_f1,accuracy\n";
  for (const auto& row : r.rows) {
    const auto& v = row.variant;
    os << v.table << ',' << b(v.first_stage) << ',' << b(v.second_stage) << ','
       << b(v.edge_attention) << ',' << b(v.relations) << ',' << row.seed << ','
       << format_double(row.weighted_f1) << ',' << format_double(row.accuracy) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Valence/arousal projection export

struct VaProjectionResult {
  std::size_t rows = 0;
  double valence_accuracy = 0.0;
  double arousal_accuracy = 0.0;
};

// Samples utterances and writes their true and predicted classes with
// jittered plot coordinates (predicted degree + N(0, jitter_std)).
inline VaProjectionResult export_va_projection(const HfgcnParams& params, const HfgcnConfig& cfg,
                                               std::span<const Conversation> dataset,
                                               std::size_t sample_size, double jitter_std,
                                               std::uint64_t seed, std::ostream& csv,
                                               std::ostream* warnings = nullptr,
                                               std::span<const std::string> label_names = {}) {
  if (!cfg.use_va_heads) throw ValidationError("export-va: model was configured without VA heads");
  if (!(jitter_std >= 0.0)) throw ValidationError("export-va: jitter_std must be >= 0");
  std::vector<std::pair<std::size_t, std::size_t>> keys;
  for (std::size_t c = 0; c < dataset.size(); ++c)
    for (std::size_t j = 0; j < dataset[c].size(); ++j) {
      const auto& u = dataset[c].utterances[j];
      if (!u.valence || !u.arousal) {
        throw ValidationError("export-va: conversation '" + dataset[c].id + "' lacks VA labels");
      }
      keys.emplace_back(c, j);
    }
  if (sample_size > keys.size()) {
    if (warnings) {
      *warnings << "warning: sample size " << sample_size << " exceeds " << keys.size()
                << " utterances; exporting all\n";
    }
    sample_size = keys.size();
  }
  Rng rng(seed);
  std::shuffle(keys.begin(), keys.end(), rng);
  keys.resize(sample_size);

  std::vector<std::optional<std::vector<Prediction>>> cache(dataset.size());
  auto predictions = [&](std::size_t c) -> const std::vector<Prediction>& {
    if (!cache[c]) {
      Tape tape = Tape::inference();
      cache[c] = predict(forward_eval(tape, dataset[c], params, cfg));
    }
    return *cache[c];
  };
  auto label = [&](std::size_t e) {
    return e < label_names.size() ? label_names[e] : std::to_string(e);
  };

  std::normal_distribution<double> jitter(0.0, 1.0);
  csv << "utterance,true_emotion,pred_emotion,true_valence,pred_valence,true_arousal,"
         "pred_arousal,plot_valence,plot_arousal\n";
  VaProjectionResult res;
  std::size_t v_ok = 0, a_ok = 0;
  for (const auto& [c, j] : keys) {
    const auto& u = dataset[c].utterances[j];
    const Prediction& p = predictions(c)[j];
    const std::size_t tv = discretize_va(*u.valence, cfg.num_va_bins);
    const std::size_t ta = discretize_va(*u.arousal, cfg.num_va_bins);
    v_ok += tv == p.valence ? 1 : 0;
    a_ok += ta == p.arousal ? 1 : 0;
    const double x = va_class_value(p.valence, cfg.num_va_bins) + jitter_std * jitter(rng);
    const double y = va_class_value(p.arousal, cfg.num_va_bins) + jitter_std * jitter(rng);
    csv << dataset[c].id << ':' << j << ',' << label(u.emotion) << ',' << label(p.emotion) << ','
        << tv << ',' << p.valence << ',' << ta << ',' << p.arousal << ',' << format_double(x)
        << ',' << format_double(y) << '\n';
  }
  res.rows = keys.size();
  if (res.rows > 0) {
    res.valence_accuracy = static_cast<double>(v_ok) / static_cast<double>(res.rows);
    res.arousal_accuracy = static_cast<double>(a_ok) / static_cast<double>(res.rows);
    csv << "# valence_accuracy=" << format_double(res.valence_accuracy)
        << " arousal_accuracy=" << format_double(res.arousal_accuracy) << '\n';
  }
  return res;
}

}  // namespace hfgcn
