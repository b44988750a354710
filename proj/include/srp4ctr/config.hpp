#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "srp4ctr/common.hpp"

namespace srp4ctr {

enum class KeyKind { Int, Real, Bool };

struct KeySpec {
  const char* key;
  KeyKind kind;
  const char* def;
  const char* desc;
};

// Every tunable of the lab, with defaults. The CLI help and the effective
// config echo are both generated from this table, so it is the single source
// of truth for key names.
inline const std::vector<KeySpec>& config_schema() {
  static const std::vector<KeySpec> schema = {
      {"seed", KeyKind::Int, "42", "master random seed"},
      {"data.users", KeyKind::Int, "2000", "number of synthetic users"},
      {"data.items", KeyKind::Int, "500", "item vocabulary size (excluding padding id 0)"},
      {"data.genres", KeyKind::Int, "8", "number of item genres (tag vocabulary)"},
      {"data.max_len", KeyKind::Int, "50", "maximum interaction sequence length"},
      {"data.behavior_types", KeyKind::Int, "3", "vocabulary of the action-type behavior feature"},
      {"data.behavior_levels", KeyKind::Int, "3", "vocabulary of the intensity behavior feature"},
      {"data.context_buckets", KeyKind::Int, "4", "vocabulary of the user-segment context feature"},
      {"gen.min_len", KeyKind::Int, "35", "minimum generated sequence length"},
      {"gen.favorites", KeyKind::Int, "5", "favorite-item pool size per user"},
      {"gen.genres_per_user", KeyKind::Int, "2", "preferred genres per user"},
      {"gen.repeat_prob", KeyKind::Real, "0.75", "probability an event revisits the favorite pool"},
      {"gen.tag_noise", KeyKind::Real, "0.3", "probability the genre tag feature is corrupted"},
      {"gen.noise", KeyKind::Real, "0.6", "logistic noise scale in the label model"},
      {"gen.positive_rate", KeyKind::Real, "0.3", "target positive-label fraction"},
      {"gen.zipf", KeyKind::Real, "1.1", "Zipf exponent of item popularity"},
      {"gen.fav_bonus", KeyKind::Real, "0.8", "affinity bonus for favorite-pool items"},
      {"gen.examples_per_user", KeyKind::Int, "4", "scored candidates generated per user"},
      {"model.layers", KeyKind::Int, "2", "transformer layers"},
      {"model.dim", KeyKind::Int, "64", "model width d"},
      {"model.heads", KeyKind::Int, "2", "attention heads"},
      {"model.ffn_mult", KeyKind::Int, "4", "feed-forward width multiplier"},
      {"pretrain.steps", KeyKind::Int, "2000", "pre-training steps"},
      {"pretrain.batch", KeyKind::Int, "64", "pre-training batch size"},
      {"pretrain.lr", KeyKind::Real, "0.012", "pre-training initial learning rate"},
      {"pretrain.lr_end", KeyKind::Real, "0.0001", "pre-training final learning rate"},
      {"pretrain.power", KeyKind::Real, "1.0", "polynomial decay exponent (pre-training)"},
      {"pretrain.item_mask_ratio", KeyKind::Real, "0.2", "per-position item mask probability"},
      {"pretrain.behavior_mask_ratio", KeyKind::Real, "0.2", "per-position behavior mask probability"},
      {"pretrain.behavior_loss_weight", KeyKind::Real, "1.0", "weight of the behavior loss term"},
      {"pretrain.eval_every", KeyKind::Int, "200", "pre-training metric cadence (steps)"},
      {"finetune.steps", KeyKind::Int, "600", "fine-tuning steps"},
      {"finetune.batch", KeyKind::Int, "64", "fine-tuning batch size"},
      {"finetune.lr", KeyKind::Real, "0.001", "fine-tuning initial learning rate"},
      {"finetune.lr_end", KeyKind::Real, "0.0", "fine-tuning final learning rate"},
      {"finetune.power", KeyKind::Real, "1.0", "polynomial decay exponent (fine-tuning)"},
      {"finetune.eval_every", KeyKind::Int, "100", "validation cadence (steps)"},
      {"finetune.val_fraction", KeyKind::Real, "0.1", "fraction of users held out for validation"},
      {"finetune.use_uni_attn", KeyKind::Bool, "true", "enable the target cross-attention block"},
      {"finetune.use_qformer", KeyKind::Bool, "true", "enable the querying transformer"},
      {"finetune.tie_uni_attn", KeyKind::Bool, "false", "alias cross-attention Q/output projections to the encoder's"},
      {"finetune.from_scratch", KeyKind::Bool, "false", "ignore any pre-trained checkpoint"},
      {"finetune.freeze_encoder", KeyKind::Bool, "false", "freeze encoder and embedding parameters"},
      {"finetune.baseline_mp", KeyKind::Bool, "false", "train the frozen-encoder model-patch baseline instead"},
      {"finetune.queries", KeyKind::Int, "4", "querying-transformer query count K"},
      {"finetune.head_hidden", KeyKind::Int, "64", "CTR head hidden width"},
      {"finetune.context_queries", KeyKind::Bool, "true", "offset queries with projected context features"},
      {"serve.batch", KeyKind::Int, "100", "candidates per serving request B"},
  };
  return schema;
}

// Flat key=value configuration. Values are kept as validated strings and
// parsed on access; unknown keys and malformed values are rejected up front.
class LabConfig {
 public:
  LabConfig() {
    for (const auto& s : config_schema()) values_[s.key] = s.def;
  }

  static const KeySpec& spec_for(const std::string& key) {
    for (const auto& s : config_schema())
      if (key == s.key) return s;
    throw ConfigError("unknown config key '" + key + "'");
  }

  void set(const std::string& key, const std::string& value) {
    const KeySpec& s = spec_for(key);
    check_value(s, value);
    values_[key] = value;
  }

  long get_int(const std::string& key) const {
    require_kind(key, KeyKind::Int);
    return std::stol(values_.at(key));
  }

  double get_real(const std::string& key) const {
    const KeySpec& s = spec_for(key);
    if (s.kind == KeyKind::Bool) throw ConfigError("key '" + key + "' is not numeric");
    return std::stod(values_.at(key));
  }

  bool get_bool(const std::string& key) const {
    require_kind(key, KeyKind::Bool);
    return values_.at(key) == "true";
  }

  const std::string& get_raw(const std::string& key) const {
    spec_for(key);
    return values_.at(key);
  }

  // `key = value` lines; '#' starts a comment; blank lines ignored.
  void load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    std::string line;
    long line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ParseError("expected 'key = value'", line_no);
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty() || value.empty())
        throw ParseError("empty key or value", line_no);
      try {
        set(key, value);
      } catch (const ConfigError& e) {
        throw ParseError(e.what(), line_no);
      }
    }
  }

  // "key=value" strings, e.g. from repeated --set flags.
  void apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override must be key=value, got '" + kv + "'");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  // Effective configuration in schema order; parseable by load_file.
  void dump(std::ostream& os) const {
    for (const auto& s : config_schema())
      os << s.key << " = " << values_.at(s.key) << "\n";
  }

  std::string dump_str() const {
    std::ostringstream os;
    dump(os);
    return os.str();
  }

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

 private:
  void require_kind(const std::string& key, KeyKind kind) const {
    if (spec_for(key).kind != kind) throw ConfigError("wrong type for key '" + key + "'");
  }

  static void check_value(const KeySpec& s, const std::string& v) {
    const char* c = v.c_str();
    char* end = nullptr;
    switch (s.kind) {
      case KeyKind::Int: {
        std::strtol(c, &end, 10);
        if (end == c || *end != '\0')
          throw ConfigError("key '" + std::string(s.key) + "' expects an integer, got '" + v + "'");
        break;
      }
      case KeyKind::Real: {
        std::strtod(c, &end);
        if (end == c || *end != '\0')
          throw ConfigError("key '" + std::string(s.key) + "' expects a number, got '" + v + "'");
        break;
      }
      case KeyKind::Bool:
        if (v != "true" && v != "false")
          throw ConfigError("key '" + std::string(s.key) + "' expects true or false, got '" + v + "'");
        break;
    }
  }

  std::map<std::string, std::string> values_;
};

// ---- derived, validated views -------------------------------------------

// Per-field vocabulary sizes. Id 0 is reserved padding in every field and is
// never a real feature value.
struct VocabSpec {
  std::vector<int> item_vocab;      // M fields
  std::vector<int> behavior_vocab;  // N fields
  std::vector<int> context_vocab;   // C fields
  int max_len = 0;

  int m() const { return static_cast<int>(item_vocab.size()); }
  int n() const { return static_cast<int>(behavior_vocab.size()); }
  int c() const { return static_cast<int>(context_vocab.size()); }
};

struct ModelConfig {
  int num_layers = 2;
  int d_model = 64;
  int num_heads = 2;
  int ffn_mult = 4;
  VocabSpec vocab;

  int ffn_dim() const { return d_model * ffn_mult; }
  int head_dim() const { return d_model / num_heads; }
};

struct FinetuneConfig {
  bool use_uni_attn = true;
  bool use_qformer = true;
  bool tie_uni_attn = false;
  bool from_scratch = false;
  bool freeze_encoder = false;
  bool baseline_mp = false;
  bool context_queries = true;
  int queries = 4;
  int head_hidden = 64;
};

struct SyntheticConfig {
  long users = 2000;
  int items = 500;
  int genres = 8;
  int max_len = 50;
  int min_len = 35;
  int behavior_types = 3;
  int behavior_levels = 3;
  int context_buckets = 4;
  int favorites = 5;
  int genres_per_user = 2;
  double repeat_prob = 0.75;
  double tag_noise = 0.3;
  double noise = 0.6;
  double positive_rate = 0.3;
  double zipf = 1.1;
  double fav_bonus = 0.8;
  int examples_per_user = 4;
};

struct TrainPhaseSpec {
  long steps = 0;
  int batch = 0;
  double lr = 0.0;
  double lr_end = 0.0;
  double power = 1.0;
  long eval_every = 0;
  std::uint64_t seed = 0;
};

struct PretrainSpec {
  TrainPhaseSpec phase;
  double item_mask_ratio = 0.2;
  double behavior_mask_ratio = 0.2;
  double behavior_loss_weight = 1.0;
};

struct FinetuneSpec {
  TrainPhaseSpec phase;
  double val_fraction = 0.1;
  FinetuneConfig model;
};

inline VocabSpec vocab_from(const LabConfig& c) {
  VocabSpec v;
  v.item_vocab = {static_cast<int>(c.get_int("data.items")) + 1,
                  static_cast<int>(c.get_int("data.genres")) + 1};
  v.behavior_vocab = {static_cast<int>(c.get_int("data.behavior_types")) + 1,
                      static_cast<int>(c.get_int("data.behavior_levels")) + 1};
  v.context_vocab = {static_cast<int>(c.get_int("data.context_buckets")) + 1};
  v.max_len = static_cast<int>(c.get_int("data.max_len"));
  if (v.max_len < 2) throw ConfigError("data.max_len must be >= 2");
  for (int e : v.item_vocab)
    if (e < 2) throw ConfigError("item vocabularies need at least one real id");
  for (int e : v.behavior_vocab)
    if (e < 2) throw ConfigError("behavior vocabularies need at least one real id");
  return v;
}

inline ModelConfig model_from(const LabConfig& c) {
  ModelConfig m;
  m.num_layers = static_cast<int>(c.get_int("model.layers"));
  m.d_model = static_cast<int>(c.get_int("model.dim"));
  m.num_heads = static_cast<int>(c.get_int("model.heads"));
  m.ffn_mult = static_cast<int>(c.get_int("model.ffn_mult"));
  m.vocab = vocab_from(c);
  if (m.num_layers < 0) throw ConfigError("model.layers must be >= 0");
  if (m.d_model < 2) throw ConfigError("model.dim must be >= 2");
  if (m.num_heads < 1) throw ConfigError("model.heads must be >= 1");
  if (m.d_model % m.num_heads != 0)
    throw ConfigError("model.dim must be divisible by model.heads");
  if (m.ffn_mult < 1) throw ConfigError("model.ffn_mult must be >= 1");
  return m;
}

inline FinetuneConfig finetune_model_from(const LabConfig& c) {
  FinetuneConfig f;
  f.use_uni_attn = c.get_bool("finetune.use_uni_attn");
  f.use_qformer = c.get_bool("finetune.use_qformer");
  f.tie_uni_attn = c.get_bool("finetune.tie_uni_attn");
  f.from_scratch = c.get_bool("finetune.from_scratch");
  f.freeze_encoder = c.get_bool("finetune.freeze_encoder");
  f.baseline_mp = c.get_bool("finetune.baseline_mp");
  f.context_queries = c.get_bool("finetune.context_queries");
  f.queries = static_cast<int>(c.get_int("finetune.queries"));
  f.head_hidden = static_cast<int>(c.get_int("finetune.head_hidden"));
  if (f.queries < 1) throw ConfigError("finetune.queries must be >= 1");
  if (f.queries >= c.get_int("data.max_len"))
    throw ConfigError("finetune.queries must be < data.max_len");
  if (f.head_hidden < 1) throw ConfigError("finetune.head_hidden must be >= 1");
  if (f.baseline_mp) {
    if (f.use_uni_attn || f.use_qformer)
      throw ConfigError("finetune.baseline_mp excludes use_uni_attn and use_qformer");
    if (!f.freeze_encoder)
      throw ConfigError("finetune.baseline_mp requires finetune.freeze_encoder=true");
  }
  return f;
}

inline SyntheticConfig synthetic_from(const LabConfig& c) {
  SyntheticConfig g;
  g.users = c.get_int("data.users");
  g.items = static_cast<int>(c.get_int("data.items"));
  g.genres = static_cast<int>(c.get_int("data.genres"));
  g.max_len = static_cast<int>(c.get_int("data.max_len"));
  g.min_len = static_cast<int>(c.get_int("gen.min_len"));
  g.behavior_types = static_cast<int>(c.get_int("data.behavior_types"));
  g.behavior_levels = static_cast<int>(c.get_int("data.behavior_levels"));
  g.context_buckets = static_cast<int>(c.get_int("data.context_buckets"));
  g.favorites = static_cast<int>(c.get_int("gen.favorites"));
  g.genres_per_user = static_cast<int>(c.get_int("gen.genres_per_user"));
  g.repeat_prob = c.get_real("gen.repeat_prob");
  g.tag_noise = c.get_real("gen.tag_noise");
  g.noise = c.get_real("gen.noise");
  g.positive_rate = c.get_real("gen.positive_rate");
  g.zipf = c.get_real("gen.zipf");
  g.fav_bonus = c.get_real("gen.fav_bonus");
  g.examples_per_user = static_cast<int>(c.get_int("gen.examples_per_user"));
  if (g.users < 2) throw ConfigError("data.users must be >= 2");
  if (g.items < 1) throw ConfigError("data.items must be >= 1");
  if (g.genres < 1) throw ConfigError("data.genres must be >= 1");
  if (g.genres_per_user < 1 || g.genres_per_user > g.genres)
    throw ConfigError("gen.genres_per_user must be in [1, data.genres]");
  if (g.min_len < 2 || g.min_len > g.max_len)
    throw ConfigError("gen.min_len must be in [2, data.max_len]");
  if (g.favorites < 1 || g.favorites > g.items)
    throw ConfigError("gen.favorites must be in [1, data.items]");
  if (g.repeat_prob < 0 || g.repeat_prob >= 1)
    throw ConfigError("gen.repeat_prob must be in [0,1)");
  if (g.tag_noise < 0 || g.tag_noise > 1) throw ConfigError("gen.tag_noise must be in [0,1]");
  if (g.noise < 0) throw ConfigError("gen.noise must be >= 0");
  if (g.positive_rate <= 0 || g.positive_rate >= 1)
    throw ConfigError("gen.positive_rate must be in (0,1)");
  if (g.zipf <= 0) throw ConfigError("gen.zipf must be > 0");
  if (g.examples_per_user < 1) throw ConfigError("gen.examples_per_user must be >= 1");
  return g;
}

inline TrainPhaseSpec phase_from(const LabConfig& c, const std::string& prefix) {
  TrainPhaseSpec t;
  t.steps = c.get_int(prefix + ".steps");
  t.batch = static_cast<int>(c.get_int(prefix + ".batch"));
  t.lr = c.get_real(prefix + ".lr");
  t.lr_end = c.get_real(prefix + ".lr_end");
  t.power = c.get_real(prefix + ".power");
  t.eval_every = c.get_int(prefix + ".eval_every");
  t.seed = static_cast<std::uint64_t>(c.get_int("seed"));
  if (t.steps < 1) throw ConfigError(prefix + ".steps must be >= 1");
  if (t.batch < 1) throw ConfigError(prefix + ".batch must be >= 1");
  if (t.eval_every < 1) throw ConfigError(prefix + ".eval_every must be >= 1");
  if (t.lr < 0 || t.lr_end < 0 || t.lr_end > t.lr)
    throw ConfigError(prefix + ": need 0 <= lr_end <= lr");
  return t;
}

inline PretrainSpec pretrain_from(const LabConfig& c) {
  PretrainSpec p;
  p.phase = phase_from(c, "pretrain");
  p.item_mask_ratio = c.get_real("pretrain.item_mask_ratio");
  p.behavior_mask_ratio = c.get_real("pretrain.behavior_mask_ratio");
  p.behavior_loss_weight = c.get_real("pretrain.behavior_loss_weight");
  if (p.behavior_loss_weight < 0)
    throw ConfigError("pretrain.behavior_loss_weight must be >= 0");
  return p;
}

inline FinetuneSpec finetune_from(const LabConfig& c) {
  FinetuneSpec f;
  f.phase = phase_from(c, "finetune");
  f.val_fraction = c.get_real("finetune.val_fraction");
  f.model = finetune_model_from(c);
  if (f.val_fraction <= 0 || f.val_fraction >= 1)
    throw ConfigError("finetune.val_fraction must be in (0,1)");
  return f;
}

}  // namespace srp4ctr
