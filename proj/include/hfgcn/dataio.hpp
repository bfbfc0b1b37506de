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
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hfgcn/errors.hpp"
#include "hfgcn/numerics.hpp"

namespace hfgcn {

enum class Modality { kAudio = 0, kText = 1, kVisual = 2 };

struct Utterance {
  int speaker = 0;
  std::vector<double> audio;
  std::vector<double> text;
  std::vector<double> visual;
  std::size_t emotion = 0;
  std::optional<double> valence;
  std::optional<double> arousal;

  const std::vector<double>& features(Modality m) const {
    switch (m) {
      case Modality::kAudio: return audio;
      case Modality::kText: return text;
      case Modality::kVisual: return visual;
    }
    return audio;
  }

  bool operator==(const Utterance&) const = default;
};

struct Conversation {
  std::string id;
  std::vector<Utterance> utterances;

  std::size_t size() const noexcept { return utterances.size(); }
  bool operator==(const Conversation&) const = default;
};

struct DatasetMeta {
  std::size_t d_a = 0;
  std::size_t d_t = 0;
  std::size_t d_v = 0;
  std::size_t num_emotions = 0;
  bool has_va = false;
  std::size_t num_va_bins = 9;
  std::vector<std::string> label_names;

  std::size_t dim(Modality m) const {
    switch (m) {
      case Modality::kAudio: return d_a;
      case Modality::kText: return d_t;
      case Modality::kVisual: return d_v;
    }
    return 0;
  }

  bool operator==(const DatasetMeta&) const = default;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<Conversation> conversations;

  std::size_t num_utterances() const {
    std::size_t n = 0;
    for (const auto& c : conversations) n += c.size();
    return n;
  }
};

// ---------------------------------------------------------------------------
// Validation

inline void validate_meta(const DatasetMeta& meta) {
  if (meta.d_a == 0 || meta.d_t == 0 || meta.d_v == 0) {
    throw ValidationError("meta: modality dimensions must be positive");
  }
  if (meta.num_emotions < 2) throw ValidationError("meta: num_emotions must be >= 2");
  if (meta.has_va && meta.num_va_bins < 2) throw ValidationError("meta: num_va_bins must be >= 2");
  if (!meta.label_names.empty() && meta.label_names.size() != meta.num_emotions) {
    throw ValidationError("meta: label_names has " + std::to_string(meta.label_names.size()) +
                          " entries for " + std::to_string(meta.num_emotions) + " emotions");
  }
}

inline void validate_conversation(const Conversation& conv, const DatasetMeta& meta) {
  if (conv.utterances.empty()) {
    throw ValidationError("conversation '" + conv.id + "': no utterances");
  }
  for (std::size_t i = 0; i < conv.utterances.size(); ++i) {
    const auto& u = conv.utterances[i];
    const std::string where = "conversation '" + conv.id + "' utterance " + std::to_string(i);
    auto check_dim = [&](const std::vector<double>& v, std::size_t expected, const char* field,
                         const char* dim_name) {
      if (v.size() != expected) {
        throw ValidationError(where + ": field '" + field + "' has length " +
                              std::to_string(v.size()) + ", expected " + dim_name + "=" +
                              std::to_string(expected));
      }
      for (double x : v) {
        if (!std::isfinite(x)) throw ValidationError(where + ": non-finite value in " + field);
      }
    };
    check_dim(u.audio, meta.d_a, "audio", "d_a");
    check_dim(u.text, meta.d_t, "text", "d_t");
    check_dim(u.visual, meta.d_v, "visual", "d_v");
    if (u.emotion >= meta.num_emotions) {
      throw ValidationError(where + ": emotion " + std::to_string(u.emotion) + " outside [0," +
                            std::to_string(meta.num_emotions) + ")");
    }
    if (u.valence.has_value() != u.arousal.has_value()) {
      throw ValidationError(where + ": valence and arousal must be both present or both absent");
    }
    if (meta.has_va && !u.valence) {
      throw ValidationError(where + ": dataset declares has_va but labels are missing");
    }
    for (const auto& va : {u.valence, u.arousal}) {
      if (va && !(*va >= 1.0 && *va <= 5.0)) {
        throw ValidationError(where + ": valence/arousal " + std::to_string(*va) +
                              " outside [1,5]");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json meta_to_json(const DatasetMeta& meta) {
  return nlohmann::json{{"d_a", meta.d_a},
                        {"d_t", meta.d_t},
                        {"d_v", meta.d_v},
                        {"num_emotions", meta.num_emotions},
                        {"has_va", meta.has_va},
                        {"num_va_bins", meta.num_va_bins},
                        {"label_names", meta.label_names}};
}

inline DatasetMeta meta_from_json(const nlohmann::json& j) {
  DatasetMeta meta;
  try {
    meta.d_a = j.at("d_a").get<std::size_t>();
    meta.d_t = j.at("d_t").get<std::size_t>();
    meta.d_v = j.at("d_v").get<std::size_t>();
    meta.num_emotions = j.at("num_emotions").get<std::size_t>();
    meta.has_va = j.at("has_va").get<bool>();
    meta.num_va_bins = j.value("num_va_bins", std::size_t{9});
    meta.label_names = j.value("label_names", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("meta.json: ") + e.what());
  }
  validate_meta(meta);
  return meta;
}

inline nlohmann::json conversation_to_json(const Conversation& conv) {
  nlohmann::json utts = nlohmann::json::array();
  for (const auto& u : conv.utterances) {
    utts.push_back({{"speaker", u.speaker},
                    {"audio", u.audio},
                    {"text", u.text},
                    {"visual", u.visual},
                    {"emotion", u.emotion},
                    {"valence", u.valence ? nlohmann::json(*u.valence) : nlohmann::json()},
                    {"arousal", u.arousal ? nlohmann::json(*u.arousal) : nlohmann::json()}});
  }
  return nlohmann::json{{"id", conv.id}, {"utterances", std::move(utts)}};
}

inline Conversation conversation_from_json(const nlohmann::json& j) {
  Conversation conv;
  conv.id = j.at("id").get<std::string>();
  for (const auto& uj : j.at("utterances")) {
    Utterance u;
    u.speaker = uj.at("speaker").get<int>();
    u.audio = uj.at("audio").get<std::vector<double>>();
    u.text = uj.at("text").get<std::vector<double>>();
    u.visual = uj.at("visual").get<std::vector<double>>();
    u.emotion = uj.at("emotion").get<std::size_t>();
    if (uj.contains("valence") && !uj.at("valence").is_null()) u.valence = uj.at("valence").get<double>();
    if (uj.contains("arousal") && !uj.at("arousal").is_null()) u.arousal = uj.at("arousal").get<double>();
    conv.utterances.push_back(std::move(u));
  }
  return conv;
}

// One conversation per line. Doubles are written in shortest round-trip form.
inline void write_ndjson(std::ostream& os, std::span<const Conversation> conversations) {
  for (const auto& c : conversations) os << conversation_to_json(c).dump() << '\n';
}

inline std::vector<Conversation> read_ndjson(std::istream& is, const DatasetMeta& meta) {
  std::vector<Conversation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Conversation conv;
    try {
      conv = conversation_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, std::string("malformed record: ") + e.what());
    }
    validate_conversation(conv, meta);
    out.push_back(std::move(conv));
  }
  return out;
}

// Writes `content` through a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os << content;
    if (!os.flush()) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline Dataset load_dataset(const std::filesystem::path& meta_path,
                            const std::filesystem::path& data_path) {
  Dataset ds;
  try {
    ds.meta = meta_from_json(nlohmann::json::parse(read_file(meta_path)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, meta_path.string() + ": " + e.what());
  }
  std::ifstream is(data_path, std::ios::binary);
  if (!is) throw ValidationError("cannot open " + data_path.string());
  ds.conversations = read_ndjson(is, ds.meta);
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& meta_path,
                         const std::filesystem::path& data_path) {
  std::ostringstream data;
  write_ndjson(data, ds.conversations);
  write_file_atomic(meta_path, meta_to_json(ds.meta).dump(2) + "\n");
  write_file_atomic(data_path, data.str());
}

// ---------------------------------------------------------------------------
// Valence/arousal binning

// Maps a degree in [1,5] onto K evenly spaced ordinal classes.
inline std::size_t discretize_va(double value, std::size_t bins) {
  if (!(value >= 1.0 && value <= 5.0)) {
    throw ValidationError("discretize_va: value " + std::to_string(value) + " outside [1,5]");
  }
  if (bins < 2) throw ValidationError("discretize_va: need at least 2 bins");
  const double k = static_cast<double>(bins - 1);
  const double idx = std::round((value - 1.0) * k / 4.0);
  return static_cast<std::size_t>(std::clamp(idx, 0.0, k));
}

// Degree at the centre of a class; inverse of discretize_va on bin centres.
inline double va_class_value(std::size_t cls, std::size_t bins) {
  return 1.0 + 4.0 * static_cast<double>(cls) / static_cast<double>(bins - 1);
}

// ---------------------------------------------------------------------------
// Synthetic conversations

struct GeneratorConfig {
  std::size_t num_conversations = 100;
  std::size_t min_utterances = 6;
  std::size_t max_utterances = 12;
  std::size_t min_speakers = 2;
  std::size_t max_speakers = 2;
  std::size_t num_emotions = 4;
  std::size_t d_a = 16;
  std::size_t d_t = 16;
  std::size_t d_v = 16;
  double cluster_separation = 3.0;
  std::array<double, 3> informativeness{1.0, 1.0, 1.0};
  bool cross_modal = false;
  double emotion_persistence = 0.7;
  bool with_va = true;
  std::size_t num_va_bins = 9;
  std::uint64_t seed = 0;
};

namespace detail {

struct EmotionPrototype {
  const char* name;
  double valence;
  double arousal;
};

// Circumplex placement of the usual conversational emotion classes.
inline constexpr std::array<EmotionPrototype, 8> kPrototypes{{
    {"happy", 4.5, 2.0},
    {"sad", 1.5, 1.5},
    {"neutral", 3.0, 3.0},
    {"angry", 1.5, 4.5},
    {"excited", 4.5, 4.5},
    {"frustrated", 2.0, 2.0},
    {"disgusted", 1.5, 3.0},
    {"fear", 2.0, 4.0},
}};

inline std::size_t code_bits(std::size_t classes) {
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < classes) ++bits;
  return bits;
}

}  // namespace detail

inline void validate_generator(const GeneratorConfig& cfg) {
  auto fail = [](const std::string& what) { throw ParameterError("generator: " + what); };
  if (cfg.num_conversations == 0) fail("num_conversations must be positive");
  if (cfg.min_utterances == 0 || cfg.min_utterances > cfg.max_utterances)
    fail("utterance range must satisfy 1 <= min <= max");
  if (cfg.min_speakers == 0 || cfg.min_speakers > cfg.max_speakers)
    fail("speaker range must satisfy 1 <= min <= max");
  if (cfg.num_emotions < 2) fail("num_emotions must be >= 2");
  if (cfg.num_emotions > detail::kPrototypes.size() && cfg.with_va)
    fail("VA prototypes exist for at most 8 emotions");
  if (!(cfg.cluster_separation >= 0.0)) fail("cluster_separation must be non-negative");
  for (double inf : cfg.informativeness)
    if (!(inf >= 0.0 && inf <= 1.0)) fail("informativeness must lie in [0,1]");
  if (!(cfg.emotion_persistence >= 0.0 && cfg.emotion_persistence <= 1.0))
    fail("emotion_persistence must lie in [0,1]");
  const std::size_t min_dim = std::min({cfg.d_a, cfg.d_t, cfg.d_v});
  if (min_dim == 0) fail("modality dimensions must be positive");
  const std::size_t needed =
      cfg.cross_modal ? (detail::code_bits(cfg.num_emotions) + 1) / 2 : cfg.num_emotions;
  if (min_dim < needed) {
    fail("each modality needs at least " + std::to_string(needed) + " dimensions for " +
         std::to_string(cfg.num_emotions) + " classes");
  }
  if (cfg.with_va && cfg.num_va_bins < 2) fail("num_va_bins must be >= 2");
}

// Class-conditional mean of one modality.
//
// Default mode: class c sits at (separation/sqrt 2)·e_c, so every pair of
// classes is `separation` apart in every modality.
//
// Cross-modal mode: class bits are consumed in pairs (b0, b1), one pair per
// dimension. Audio carries the sign of b0, text the sign of b1 and visual the
// sign of b0 XOR b1, each at ±separation/2. A single modality therefore only
// splits the classes into two halves; any two modalities identify the class.
inline std::vector<double> class_mean(const GeneratorConfig& cfg, Modality m, std::size_t cls) {
  const std::size_t dim = m == Modality::kAudio ? cfg.d_a : (m == Modality::kText ? cfg.d_t : cfg.d_v);
  std::vector<double> mean(dim, 0.0);
  if (!cfg.cross_modal) {
    mean[cls] = cfg.cluster_separation / std::sqrt(2.0);
    return mean;
  }
  const std::size_t bits = detail::code_bits(cfg.num_emotions);
  for (std::size_t pair = 0; 2 * pair < bits; ++pair) {
    const bool b0 = (cls >> (2 * pair)) & 1U;
    const bool b1 = 2 * pair + 1 < bits ? ((cls >> (2 * pair + 1)) & 1U) : false;
    bool bit = false;
    switch (m) {
      case Modality::kAudio: bit = b0; break;
      case Modality::kText: bit = b1; break;
      case Modality::kVisual: bit = b0 != b1; break;
    }
    mean[pair] = (bit ? -0.5 : 0.5) * cfg.cluster_separation;
  }
  return mean;
}

inline Dataset generate_synthetic(const GeneratorConfig& cfg) {
  validate_generator(cfg);
  Dataset ds;
  ds.meta.d_a = cfg.d_a;
  ds.meta.d_t = cfg.d_t;
  ds.meta.d_v = cfg.d_v;
  ds.meta.num_emotions = cfg.num_emotions;
  ds.meta.has_va = cfg.with_va;
  ds.meta.num_va_bins = cfg.num_va_bins;
  for (std::size_t c = 0; c < cfg.num_emotions; ++c) {
    ds.meta.label_names.push_back(c < detail::kPrototypes.size()
                                      ? detail::kPrototypes[c].name
                                      : "class" + std::to_string(c));
  }

  std::array<std::vector<std::vector<double>>, 3> means;
  for (int m = 0; m < 3; ++m)
    for (std::size_t c = 0; c < cfg.num_emotions; ++c)
      means[m].push_back(class_mean(cfg, static_cast<Modality>(m), c));

  Rng rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::normal_distribution<double> va_jitter(0.0, 0.3);
  std::uniform_int_distribution<std::size_t> length(cfg.min_utterances, cfg.max_utterances);
  std::uniform_int_distribution<std::size_t> speakers(cfg.min_speakers, cfg.max_speakers);
  std::uniform_int_distribution<std::size_t> any_class(0, cfg.num_emotions - 1);
  std::uniform_int_distribution<std::size_t> other_class(0, cfg.num_emotions - 2);
  std::bernoulli_distribution stay(cfg.emotion_persistence);

  const std::size_t width = std::to_string(cfg.num_conversations).size();
  for (std::size_t k = 0; k < cfg.num_conversations; ++k) {
    Conversation conv;
    std::string num = std::to_string(k);
    conv.id = "conv" + std::string(width - num.size(), '0') + num;
    const std::size_t n = length(rng);
    const std::size_t s = speakers(rng);
    std::size_t emotion = any_class(rng);
    for (std::size_t t = 0; t < n; ++t) {
      if (t > 0 && !stay(rng)) {
        const std::size_t next = other_class(rng);
        emotion = next >= emotion ? next + 1 : next;
      }
      Utterance u;
      u.speaker = static_cast<int>(t % s);
      u.emotion = emotion;
      for (int m = 0; m < 3; ++m) {
        const auto modality = static_cast<Modality>(m);
        std::vector<double> v(means[m][emotion].size());
        for (std::size_t d = 0; d < v.size(); ++d)
          v[d] = cfg.informativeness[m] * means[m][emotion][d] + noise(rng);
        switch (modality) {
          case Modality::kAudio: u.audio = std::move(v); break;
          case Modality::kText: u.text = std::move(v); break;
          case Modality::kVisual: u.visual = std::move(v); break;
        }
      }
      if (cfg.with_va) {
        const auto& proto = detail::kPrototypes[emotion];
        u.valence = std::clamp(proto.valence + va_jitter(rng), 1.0, 5.0);
        u.arousal = std::clamp(proto.arousal + va_jitter(rng), 1.0, 5.0);
      }
      conv.utterances.push_back(std::move(u));
    }
    ds.conversations.push_back(std::move(conv));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Splits

struct DatasetSplit {
  std::vector<Conversation> train;
  std::vector<Conversation> val;
  std::vector<Conversation> test;
};

// Conversation-level split. Validation and test sizes are round(f·n); the
// remainder goes to training. With `require_nonempty`, any split given a
// positive fraction must receive at least one conversation.
inline DatasetSplit split_dataset(std::span<const Conversation> conversations,
                                  std::array<double, 3> fractions, std::uint64_t seed,
                                  bool require_nonempty = false) {
  for (double f : fractions)
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("split: fractions must lie in [0,1]");
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ValidationError("split: fractions must sum to 1");
  }
  const std::size_t n = conversations.size();
  const auto n_val = static_cast<std::size_t>(std::round(fractions[1] * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::round(fractions[2] * static_cast<double>(n)));
  if (n_val + n_test > n) throw ValidationError("split: fractions exceed conversation count");
  const std::size_t n_train = n - n_val - n_test;
  const std::array<std::size_t, 3> counts{n_train, n_val, n_test};
  if (require_nonempty) {
    static constexpr std::array<const char*, 3> kNames{"train", "val", "test"};
    for (int k = 0; k < 3; ++k) {
      if (fractions[k] > 0.0 && counts[k] == 0) {
        throw ValidationError(std::string("split: ") + kNames[k] + " split would be empty");
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  DatasetSplit split;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& conv = conversations[order[k]];
    if (k < n_train) split.train.push_back(conv);
    else if (k < n_train + n_val) split.val.push_back(conv);
    else split.test.push_back(conv);
  }
  return split;
}

}  // namespace hfgcn
