#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "srp4ctr/common.hpp"
#include "srp4ctr/config.hpp"

namespace srp4ctr {

// One user-item interaction: M item-side feature ids and N behavior-side
// feature ids. Ids are 1-based; 0 is reserved padding.
struct InteractionEvent {
  std::vector<int> item_ids;
  std::vector<int> behavior_ids;

  bool operator==(const InteractionEvent&) const = default;
};

// Only real events are stored; positions >= true_length() exist solely as
// padding in the model's fixed-length view and never enter attention or loss.
struct InteractionSequence {
  long user_id = 0;
  std::vector<InteractionEvent> events;

  int true_length() const { return static_cast<int>(events.size()); }
  bool operator==(const InteractionSequence&) const = default;
};

struct CtrExample {
  InteractionSequence sequence;
  std::vector<int> target_item;        // M ids
  std::vector<int> context_features;   // C ids
  int label = 0;

  bool operator==(const CtrExample&) const = default;
};

struct PretrainCorpus {
  std::vector<InteractionSequence> sequences;
  bool operator==(const PretrainCorpus&) const = default;
};

struct FinetuneCorpus {
  std::vector<CtrExample> examples;
  bool operator==(const FinetuneCorpus&) const = default;
};

// Positions selected for masking, with the original ids to predict. A
// position may carry either or both mask types; both sets are non-empty.
struct MaskPlan {
  std::vector<int> item_positions;
  std::vector<int> behavior_positions;
  std::vector<int> item_targets;                    // primary item id per item position
  std::vector<std::vector<int>> behavior_targets;   // all N ids per behavior position

  bool empty() const { return item_positions.empty() && behavior_positions.empty(); }
};

// Per position: item-mask with prob item_ratio, otherwise behavior-mask with
// prob behavior_ratio. Resamples until both sets are non-empty; after a
// bounded number of failed draws, forces one mask of each type at two
// distinct random positions (relevant only for vanishing ratios).
inline MaskPlan sample_mask_plan(const InteractionSequence& seq, double item_ratio,
                                 double behavior_ratio, std::uint64_t seed) {
  const int t = seq.true_length();
  if (t < 2)
    throw ContractError("sample_mask_plan: sequence too short (length " +
                        std::to_string(t) + ", need >= 2)");
  if (item_ratio <= 0 || item_ratio >= 1 || behavior_ratio <= 0 || behavior_ratio >= 1)
    throw ConfigError("mask ratio conflict: both ratios must lie strictly in (0,1), got " +
                      std::to_string(item_ratio) + " and " + std::to_string(behavior_ratio));

  Rng rng(seed);
  MaskPlan plan;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    plan.item_positions.clear();
    plan.behavior_positions.clear();
    for (int i = 0; i < t; ++i) {
      // Independent draws: a position may mask the item, the behaviors, or both.
      const bool mask_item = rng.uniform() < item_ratio;
      const bool mask_behavior = rng.uniform() < behavior_ratio;
      if (mask_item) plan.item_positions.push_back(i);
      if (mask_behavior) plan.behavior_positions.push_back(i);
    }
    if (!plan.item_positions.empty() && !plan.behavior_positions.empty()) break;
  }
  if (plan.item_positions.empty() || plan.behavior_positions.empty()) {
    const int a = static_cast<int>(rng.below(static_cast<std::uint32_t>(t)));
    int b = static_cast<int>(rng.below(static_cast<std::uint32_t>(t - 1)));
    if (b >= a) ++b;
    plan.item_positions = {a};
    plan.behavior_positions = {b};
    std::sort(plan.behavior_positions.begin(), plan.behavior_positions.end());
  }
  for (int p : plan.item_positions) plan.item_targets.push_back(seq.events[p].item_ids[0]);
  for (int p : plan.behavior_positions) plan.behavior_targets.push_back(seq.events[p].behavior_ids);
  return plan;
}

// ---- dataset IO ----------------------------------------------------------
// One record per line. Pre-training: `user_id<TAB>ev1;ev2;...` with each
// event `f1,...,fM|b1,...,bN`. Fine-tuning lines append
// `<TAB>t1,...,tM<TAB>c1,...,cC<TAB>label`.

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline long parse_long(const std::string& s, long line_no) {
  if (s.empty()) throw ParseError("empty integer field", line_no);
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size()) throw ParseError("bad integer '" + s + "'", line_no);
  return v;
}

inline std::vector<int> parse_ids(const std::string& s, int expect,
                                  const std::vector<int>& vocab, const char* what,
                                  long line_no) {
  std::vector<int> out;
  if (!(expect == 0 && s.empty())) {
    for (const auto& f : split(s, ',')) out.push_back(static_cast<int>(parse_long(f, line_no)));
  }
  if (static_cast<int>(out.size()) != expect)
    throw ParseError(std::string(what) + ": expected " + std::to_string(expect) +
                     " ids, got " + std::to_string(out.size()), line_no);
  for (int k = 0; k < expect; ++k) {
    if (out[k] < 1 || out[k] >= vocab[k])
      throw ContractError(std::string(what) + " id " + std::to_string(out[k]) +
                          " outside vocabulary [1," + std::to_string(vocab[k]) +
                          ") at line " + std::to_string(line_no));
  }
  return out;
}

inline InteractionSequence parse_sequence(const std::string& user_field,
                                          const std::string& events_field,
                                          const VocabSpec& vocab, long line_no) {
  InteractionSequence seq;
  seq.user_id = parse_long(user_field, line_no);
  if (!events_field.empty()) {
    for (const auto& ev : split(events_field, ';')) {
      const auto bar = ev.find('|');
      if (bar == std::string::npos)
        throw ParseError("event missing '|' separator: '" + ev + "'", line_no);
      InteractionEvent e;
      e.item_ids = parse_ids(ev.substr(0, bar), vocab.m(), vocab.item_vocab, "item feature", line_no);
      e.behavior_ids =
          parse_ids(ev.substr(bar + 1), vocab.n(), vocab.behavior_vocab, "behavior feature", line_no);
      seq.events.push_back(std::move(e));
    }
  }
  if (seq.true_length() > vocab.max_len)
    throw ContractError("sequence longer than max_len at line " + std::to_string(line_no));
  return seq;
}

inline std::string join_ids(const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(ids[i]);
  }
  return out;
}

inline std::string format_sequence(const InteractionSequence& seq) {
  std::string out = std::to_string(seq.user_id) + "\t";
  for (std::size_t i = 0; i < seq.events.size(); ++i) {
    if (i) out += ';';
    out += join_ids(seq.events[i].item_ids);
    out += '|';
    out += join_ids(seq.events[i].behavior_ids);
  }
  return out;
}

}  // namespace detail

inline PretrainCorpus load_pretrain(const std::string& path, const VocabSpec& vocab) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset: " + path);
  PretrainCorpus corpus;
  std::string line;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split(line, '\t');
    if (fields.size() != 2)
      throw ParseError("expected 2 tab-separated fields, got " +
                       std::to_string(fields.size()), line_no);
    corpus.sequences.push_back(detail::parse_sequence(fields[0], fields[1], vocab, line_no));
  }
  return corpus;
}

inline FinetuneCorpus load_finetune(const std::string& path, const VocabSpec& vocab) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset: " + path);
  FinetuneCorpus corpus;
  std::string line;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split(line, '\t');
    if (fields.size() != 5)
      throw ParseError("expected 5 tab-separated fields, got " +
                       std::to_string(fields.size()), line_no);
    CtrExample ex;
    ex.sequence = detail::parse_sequence(fields[0], fields[1], vocab, line_no);
    ex.target_item = detail::parse_ids(fields[2], vocab.m(), vocab.item_vocab, "target feature", line_no);
    ex.context_features =
        detail::parse_ids(fields[3], vocab.c(), vocab.context_vocab, "context feature", line_no);
    const long label = detail::parse_long(fields[4], line_no);
    if (label != 0 && label != 1)
      throw ParseError("label must be 0 or 1", line_no);
    ex.label = static_cast<int>(label);
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

inline void save_pretrain(const PretrainCorpus& corpus, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open dataset for writing: " + path);
  for (const auto& seq : corpus.sequences) os << detail::format_sequence(seq) << "\n";
  if (!os) throw IoError("failed while writing dataset: " + path);
}

inline void save_finetune(const FinetuneCorpus& corpus, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open dataset for writing: " + path);
  for (const auto& ex : corpus.examples) {
    os << detail::format_sequence(ex.sequence) << "\t" << detail::join_ids(ex.target_item)
       << "\t" << detail::join_ids(ex.context_features) << "\t" << ex.label << "\n";
  }
  if (!os) throw IoError("failed while writing dataset: " + path);
}

// Occurrence count of each primary item id across all events; index = item id.
inline std::vector<std::uint64_t> item_frequencies(const PretrainCorpus& corpus,
                                                   int item_count) {
  std::vector<std::uint64_t> freq(static_cast<std::size_t>(item_count) + 1, 0);
  for (const auto& seq : corpus.sequences)
    for (const auto& ev : seq.events) {
      const int id = ev.item_ids[0];
      if (id < 1 || id > item_count)
        throw ContractError("item id " + std::to_string(id) + " outside frequency table");
      ++freq[id];
    }
  return freq;
}

inline std::uint64_t corpus_digest(const PretrainCorpus& corpus) {
  std::string buf;
  for (const auto& seq : corpus.sequences) buf += detail::format_sequence(seq) + "\n";
  return fnv1a64(buf);
}

inline std::uint64_t corpus_digest(const FinetuneCorpus& corpus) {
  std::string buf;
  for (const auto& ex : corpus.examples) {
    buf += detail::format_sequence(ex.sequence) + "\t" + detail::join_ids(ex.target_item) +
           "\t" + detail::join_ids(ex.context_features) + "\t" + std::to_string(ex.label) + "\n";
  }
  return fnv1a64(buf);
}

}  // namespace srp4ctr
