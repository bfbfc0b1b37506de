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

// Subcommands of the hfgcn tool. Kept in a header so tests can drive the
// exact code path the binary runs.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hfgcn/dataio.hpp"
#include "hfgcn/model.hpp"
#include "hfgcn/training.hpp"

namespace hfgcn::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Options bound by the model/training flag groups.
struct ModelFlags {
  HfgcnConfig cfg;
  long long window_past = -1;
  long long window_future = -1;
  bool no_first_stage = false;
  bool no_second_stage = false;
  bool no_edge_attention = false;
  bool no_relations = false;
  bool no_va_heads = false;

  HfgcnConfig resolve() const {
    HfgcnConfig c = cfg;
    if (window_past >= 0) c.window_past = static_cast<std::size_t>(window_past);
    if (window_future >= 0) c.window_future = static_cast<std::size_t>(window_future);
    c.use_first_stage = !no_first_stage;
    c.use_second_stage = !no_second_stage;
    c.use_edge_attention = !no_edge_attention;
    c.use_relations = !no_relations;
    c.use_va_heads = !no_va_heads;
    return c;
  }
};

struct SplitFlags {
  std::vector<double> fractions{0.8, 0.1, 0.1};
  std::uint64_t seed = 1;
};

inline void add_model_flags(CLI::App* app, ModelFlags& f) {
  app->add_option("--hidden", f.cfg.hidden, "GRU hidden size per direction")->check(CLI::PositiveNumber);
  app->add_option("--graph-dim1", f.cfg.graph_dim1, "RGCN output width (0 = 2*hidden)");
  app->add_option("--graph-dim2", f.cfg.graph_dim2, "GCN output width (0 = 2*hidden)");
  app->add_option("--attention-dim", f.cfg.attention_dim, "query/key width (0 = 2*hidden)");
  app->add_option("--w1", f.cfg.w1, "valence loss weight")->check(CLI::NonNegativeNumber);
  app->add_option("--w2", f.cfg.w2, "arousal loss weight")->check(CLI::NonNegativeNumber);
  app->add_option("--dropout", f.cfg.dropout, "dropout rate")->check(CLI::Range(0.0, 0.999999));
  app->add_option("--window-past", f.window_past, "past utterance window (-1 = unbounded)");
  app->add_option("--window-future", f.window_future, "future utterance window (-1 = unbounded)");
  app->add_flag("--no-first-stage", f.no_first_stage, "drop A/T/V nodes (F nodes only)");
  app->add_flag("--no-second-stage", f.no_second_stage, "drop F-F edges across utterances");
  app->add_flag("--no-edge-attention", f.no_edge_attention, "use unit edge weights");
  app->add_flag("--no-relations", f.no_relations, "share one transform across relations");
  app->add_flag("--no-va-heads", f.no_va_heads, "train the emotion head only");
}

inline void add_train_flags(CLI::App* app, TrainConfig& t) {
  app->add_option("--lr", t.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
  app->add_option("--epochs", t.max_epochs, "maximum epochs")->check(CLI::PositiveNumber);
  app->add_option("--patience", t.patience, "early-stopping patience in epochs");
  app->add_option("--seed", t.seed, "seed for initialization, shuffling and dropout");
  app->add_flag("!--no-shuffle", t.shuffle, "keep conversation order fixed");
  app->add_option("--threads", t.threads, "evaluation threads")->check(CLI::PositiveNumber);
}

inline void add_split_flags(CLI::App* app, SplitFlags& s) {
  app->add_option("--split", s.fractions, "train,val,test fractions")->delimiter(',')->expected(3);
  app->add_option("--split-seed", s.seed, "seed of the conversation-level split");
}

inline Dataset load_dir(const fs::path& dir) {
  const auto meta = dir / "meta.json", data = dir / "data.ndjson";
  if (!fs::exists(meta) || !fs::exists(data)) {
    throw ValidationError("dataset directory " + dir.string() +
                          " must contain meta.json and data.ndjson");
  }
  return load_dataset(meta, data);
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ValidationError("cannot create output directory " + dir.string());
}

inline void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) ensure_dir(file.parent_path());
}

inline DatasetSplit make_split(const Dataset& ds, const SplitFlags& s) {
  return split_dataset(ds.conversations, {s.fractions[0], s.fractions[1], s.fractions[2]}, s.seed);
}

inline std::vector<Conversation> select_part(const Dataset& ds, const SplitFlags& s,
                                             const std::string& part) {
  if (part == "all") return ds.conversations;
  DatasetSplit split = make_split(ds, s);
  if (part == "train") return split.train;
  if (part == "val") return split.val;
  return split.test;
}

// Fills dataset-derived dimensions into the model config.
inline HfgcnConfig bind_dataset(HfgcnConfig cfg, const DatasetMeta& meta, std::ostream& out) {
  cfg.d_a = meta.d_a;
  cfg.d_t = meta.d_t;
  cfg.d_v = meta.d_v;
  cfg.num_emotions = meta.num_emotions;
  cfg.num_va_bins = meta.num_va_bins;
  if (!meta.has_va && cfg.use_va_heads) {
    out << "note: dataset has no valence/arousal labels; VA heads disabled\n";
    cfg.use_va_heads = false;
  }
  return cfg;
}

inline void check_compatible(const HfgcnConfig& cfg, const DatasetMeta& meta) {
  auto cmp = [](const char* name, std::size_t ckpt, std::size_t data) {
    if (ckpt != data) {
      throw ValidationError(std::string("dimension mismatch: checkpoint ") + name + "=" +
                            std::to_string(ckpt) + ", dataset " + name + "=" + std::to_string(data));
    }
  };
  cmp("d_a", cfg.d_a, meta.d_a);
  cmp("d_t", cfg.d_t, meta.d_t);
  cmp("d_v", cfg.d_v, meta.d_v);
  cmp("num_emotions", cfg.num_emotions, meta.num_emotions);
  if (meta.has_va) cmp("num_va_bins", cfg.num_va_bins, meta.num_va_bins);
}

// Expands `--config FILE` (key=value lines, '#' comments) into flags placed
// before the explicit ones, so flags given on the command line win.
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
  for (std::size_t i = 1; i < args.size(); ++i) {
    std::string path;
    std::size_t consumed = 0;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      consumed = 2;
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      consumed = 1;
    } else {
      continue;
    }
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot read config file " + path);
    std::vector<std::string> expanded;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError(line_no, path + ": expected key=value");
      std::string key = trim(line.substr(0, eq));
      std::replace(key.begin(), key.end(), '_', '-');
      expanded.push_back("--" + key + "=" + trim(line.substr(eq + 1)));
    }
    args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
               args.begin() + static_cast<std::ptrdiff_t>(i + consumed));
    // Right after the subcommand name.
    const std::size_t at = std::min<std::size_t>(2, args.size());
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), expanded.begin(), expanded.end());
    break;
  }
  return args;
}

// ---------------------------------------------------------------------------

inline int cmd_gen_data(const GeneratorConfig& g, const fs::path& out_dir, std::ostream& out) {
  const Dataset ds = generate_synthetic(g);
  ensure_dir(out_dir);
  save_dataset(ds, out_dir / "meta.json", out_dir / "data.ndjson");
  std::vector<std::size_t> hist(ds.meta.num_emotions, 0);
  for (const auto& c : ds.conversations)
    for (const auto& u : c.utterances) ++hist[u.emotion];
  out << "conversations: " << ds.conversations.size() << "\n";
  out << "utterances: " << ds.num_utterances() << "\n";
  out << "classes:";
  for (std::size_t c = 0; c < hist.size(); ++c) out << ' ' << ds.meta.label_names[c] << '=' << hist[c];
  out << "\n";
  return kExitOk;
}

inline nlohmann::json run_echo(const HfgcnConfig& cfg, const TrainConfig& t) {
  return {{"config", config_to_json(cfg)}, {"train_config", train_config_to_json(t)}, {"seed", t.seed}};
}

inline int cmd_train(const fs::path& data_dir, const fs::path& out_dir, const ModelFlags& mf,
                     TrainConfig t, const SplitFlags& sf, bool quiet, std::ostream& out) {
  const Dataset ds = load_dir(data_dir);
  ensure_dir(out_dir);
  const HfgcnConfig cfg = bind_dataset(mf.resolve(), ds.meta, out);
  cfg.validate();
  t.patience = std::min(t.patience, t.max_epochs);
  t.validate();
  const DatasetSplit split = make_split(ds, sf);
  if (split.train.empty()) throw ValidationError("train: split leaves no training conversations");

  const TrainResult result = train(split.train, split.val, cfg, t, [&](const EpochRecord& r) {
    if (quiet) return;
    out << "epoch " << r.epoch << " train_loss " << r.train_loss << " val_f1 " << r.val_weighted_f1
        << " val_acc " << r.val_accuracy << "\n";
  });
  const char* part = !split.test.empty() ? "test" : (!split.val.empty() ? "val" : "train");
  const auto& eval_set = !split.test.empty() ? split.test : (!split.val.empty() ? split.val : split.train);
  const MetricsReport m = evaluate(result.best, cfg, eval_set, t.threads);

  nlohmann::json metrics = metrics_to_json(m);
  metrics["eval_split"] = part;
  metrics["best_epoch"] = result.best_epoch;
  metrics["epochs_run"] = result.history.size();
  metrics.update(run_echo(cfg, t));

  std::ostringstream history;
  write_history_csv(history, result.history);
  save_checkpoint(result.best, cfg, out_dir / "checkpoint");
  write_file_atomic(out_dir / "history.csv", history.str());
  write_file_atomic(out_dir / "metrics.json", metrics.dump(2) + "\n");
  out << part << " weighted_f1 " << m.weighted_f1 << " accuracy " << m.accuracy << "\n";
  return kExitOk;
}

inline int cmd_eval(const fs::path& ckpt_dir, const fs::path& data_dir, const SplitFlags& sf,
                    const std::string& part, std::size_t threads, const fs::path& out_file,
                    std::ostream& out) {
  const Dataset ds = load_dir(data_dir);
  auto [params, cfg] = load_checkpoint(ckpt_dir);
  check_compatible(cfg, ds.meta);
  if (!out_file.empty()) ensure_parent(out_file);
  const auto subset = select_part(ds, sf, part);
  if (subset.empty()) throw ValidationError("eval: selected part '" + part + "' is empty");
  const MetricsReport m = evaluate(params, cfg, subset, threads);
  nlohmann::json j = metrics_to_json(m);
  j["eval_split"] = part;
  j["config"] = config_to_json(cfg);
  const std::string text = j.dump(2) + "\n";
  if (!out_file.empty()) write_file_atomic(out_file, text);
  out << text;
  return kExitOk;
}

inline int cmd_ablate(const fs::path& data_dir, const fs::path& out_file, const ModelFlags& mf,
                      TrainConfig t, const SplitFlags& sf, std::size_t num_seeds,
                      std::ostream& out) {
  if (num_seeds == 0) throw ValidationError("ablate: --seeds must be >= 1");
  const Dataset ds = load_dir(data_dir);
  ensure_parent(out_file);
  const HfgcnConfig cfg = bind_dataset(mf.resolve(), ds.meta, out);
  cfg.validate();
  t.patience = std::min(t.patience, t.max_epochs);
  t.validate();
  const DatasetSplit split = make_split(ds, sf);
  std::vector<std::uint64_t> seeds;
  for (std::size_t k = 0; k < num_seeds; ++k) seeds.push_back(t.seed + k);
  const auto variants = standard_ablation_variants();
  const AblationResult r = run_ablation(split, cfg, t, variants, seeds, [&](const AblationRow& row) {
    out << row.variant.table << " first=" << row.variant.first_stage
        << " second=" << row.variant.second_stage << " attn=" << row.variant.edge_attention
        << " rel=" << row.variant.relations << " seed=" << row.seed << " f1=" << row.weighted_f1
        << "\n";
  });
  std::ostringstream csv;
  write_ablation_csv(csv, r);
  write_file_atomic(out_file, csv.str());
  for (const auto& s : r.summary) {
    out << "summary " << s.variant.table << " first=" << s.variant.first_stage
        << " second=" << s.variant.second_stage << " attn=" << s.variant.edge_attention
        << " rel=" << s.variant.relations << " f1=" << s.mean_f1 << "+-" << s.std_f1 << "\n";
  }
  return kExitOk;
}

inline int cmd_export_va(const fs::path& ckpt_dir, const fs::path& data_dir, const SplitFlags& sf,
                         const std::string& part, const fs::path& out_file, std::size_t sample_size,
                         double jitter_std, std::uint64_t seed, std::ostream& out,
                         std::ostream& err) {
  const Dataset ds = load_dir(data_dir);
  auto [params, cfg] = load_checkpoint(ckpt_dir);
  check_compatible(cfg, ds.meta);
  if (!cfg.use_va_heads) throw ValidationError("export-va: checkpoint was trained without VA heads");
  if (!ds.meta.has_va) throw ValidationError("export-va: dataset has no valence/arousal labels");
  ensure_parent(out_file);
  const auto subset = select_part(ds, sf, part);
  std::ostringstream csv;
  const VaProjectionResult r = export_va_projection(params, cfg, subset, sample_size, jitter_std,
                                                    seed, csv, &err, ds.meta.label_names);
  write_file_atomic(out_file, csv.str());
  out << "rows " << r.rows << " valence_accuracy " << r.valence_accuracy << " arousal_accuracy "
      << r.arousal_accuracy << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical fusion graph convolutional network for multimodal emotion recognition"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  GeneratorConfig gen;
  std::vector<double> informativeness{1.0, 1.0, 1.0};
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic dataset (meta.json + data.ndjson)");
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  gen_cmd->add_option("--num-conversations", gen.num_conversations)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--min-utterances", gen.min_utterances)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--max-utterances", gen.max_utterances)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--min-speakers", gen.min_speakers)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--max-speakers", gen.max_speakers)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--num-emotions", gen.num_emotions)->check(CLI::Range(2, 64));
  gen_cmd->add_option("--d-a", gen.d_a)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--d-t", gen.d_t)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--d-v", gen.d_v)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--cluster-separation", gen.cluster_separation)->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--informativeness", informativeness, "audio,text,visual in [0,1]")
      ->delimiter(',')
      ->expected(3)
      ->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_flag("--cross-modal", gen.cross_modal, "class recoverable only by combining modalities");
  gen_cmd->add_option("--emotion-persistence", gen.emotion_persistence)->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_flag("!--no-va", gen.with_va, "omit valence/arousal labels");
  gen_cmd->add_option("--num-va-bins", gen.num_va_bins)->check(CLI::Range(2, 1000));
  gen_cmd->add_option("--seed", gen.seed);

  ModelFlags train_model;
  TrainConfig train_cfg;
  SplitFlags train_split;
  std::string train_data, train_out;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "train, evaluate on the test split, save a checkpoint");
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_cmd->add_flag("--quiet", quiet, "suppress per-epoch lines");
  add_model_flags(train_cmd, train_model);
  add_train_flags(train_cmd, train_cfg);
  add_split_flags(train_cmd, train_split);

  std::string eval_ckpt, eval_data, eval_out, eval_part = "all";
  SplitFlags eval_split;
  std::size_t eval_threads = 1;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--part", eval_part, "all|train|val|test")
      ->check(CLI::IsMember({"all", "train", "val", "test"}));
  eval_cmd->add_option("--out", eval_out, "also write the report to this file");
  eval_cmd->add_option("--threads", eval_threads)->check(CLI::PositiveNumber);
  add_split_flags(eval_cmd, eval_split);

  ModelFlags abl_model;
  TrainConfig abl_cfg;
  SplitFlags abl_split;
  std::string abl_data, abl_out;
  std::size_t abl_seeds = 5;
  auto* abl_cmd = app.add_subcommand("ablate", "train every graph-stage and edge ablation");
  abl_cmd->add_option("--data", abl_data, "dataset directory")->required();
  abl_cmd->add_option("--out", abl_out, "ablation.csv path")->required();
  abl_cmd->add_option("--seeds", abl_seeds, "number of seeds, starting at --seed")->check(CLI::PositiveNumber);
  add_model_flags(abl_cmd, abl_model);
  add_train_flags(abl_cmd, abl_cfg);
  add_split_flags(abl_cmd, abl_split);

  std::string va_ckpt, va_data, va_out, va_part = "all";
  SplitFlags va_split;
  std::size_t va_samples = 1000;
  double va_jitter = 0.1;
  std::uint64_t va_seed = 0;
  auto* va_cmd = app.add_subcommand("export-va", "write predicted states on the valence-arousal plane");
  va_cmd->add_option("--checkpoint", va_ckpt, "checkpoint directory")->required();
  va_cmd->add_option("--data", va_data, "dataset directory")->required();
  va_cmd->add_option("--out", va_out, "va_projection.csv path")->required();
  va_cmd->add_option("--part", va_part, "all|train|val|test")
      ->check(CLI::IsMember({"all", "train", "val", "test"}));
  va_cmd->add_option("--sample-size", va_samples, "utterances to sample");
  va_cmd->add_option("--jitter-std", va_jitter, "std of the plot-coordinate noise")->check(CLI::NonNegativeNumber);
  va_cmd->add_option("--seed", va_seed);
  add_split_flags(va_cmd, va_split);

  try {
    args = expand_config(std::move(args));
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*gen_cmd) {
      gen.informativeness = {informativeness[0], informativeness[1], informativeness[2]};
      return cmd_gen_data(gen, gen_out, out);
    }
    if (*train_cmd) return cmd_train(train_data, train_out, train_model, train_cfg, train_split, quiet, out);
    if (*eval_cmd) return cmd_eval(eval_ckpt, eval_data, eval_split, eval_part, eval_threads, eval_out, out);
    if (*abl_cmd) return cmd_ablate(abl_data, abl_out, abl_model, abl_cfg, abl_split, abl_seeds, out);
    if (*va_cmd) {
      return cmd_export_va(va_ckpt, va_data, va_split, va_part, va_out, va_samples, va_jitter,
                           va_seed, out, err);
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace hfgcn::cli
