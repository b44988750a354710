#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "srp4ctr/common.hpp"
#include "srp4ctr/config.hpp"
#include "srp4ctr/costmodel.hpp"
#include "srp4ctr/data.hpp"
#include "srp4ctr/encoder.hpp"
#include "srp4ctr/finetune.hpp"
#include "srp4ctr/graph.hpp"
#include "srp4ctr/optim.hpp"
#include "srp4ctr/store.hpp"

namespace srp4ctr {

// ---- metrics -------------------------------------------------------------

// Probability that a random positive outscores a random negative, ties
// counted as half. Rank-sum over sorted scores; the doubled rank arithmetic
// stays in integers, so the result is the exact dyadic rational the pairwise
// definition yields.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw ShapeError("auc: scores and labels differ in length");
  if (scores.empty()) throw MetricError("auc: empty input");
  std::uint64_t pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw ContractError("auc: labels must be 0 or 1");
    pos += static_cast<std::uint64_t>(l);
  }
  const std::uint64_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0)
    throw MetricError("auc undefined: input contains a single class");

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  std::uint64_t doubled_rank_sum = 0;  // sum over positives of 2 * average rank
  std::size_t i = 0;
  const std::size_t n = order.size();
  while (i < n) {
    std::size_t j = i;
    std::uint64_t group_pos = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      group_pos += static_cast<std::uint64_t>(labels[order[j]]);
      ++j;
    }
    doubled_rank_sum += group_pos * static_cast<std::uint64_t>(i + 1 + j);
    i = j;
  }
  const std::uint64_t doubled_u = doubled_rank_sum - pos * (pos + 1);
  return static_cast<double>(doubled_u) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

struct LongtailReport {
  double overall = 0.0;
  std::optional<double> tail;
  std::optional<double> diff;  // tail - overall
  std::vector<int> tail_items;
};

// Tail = bottom 20% of items by frequency (ties broken by id). The frequency
// table is indexed by item id and must cover every scored target.
inline LongtailReport longtail_report(const std::vector<double>& scores,
                                      const std::vector<int>& labels,
                                      const std::vector<int>& item_ids,
                                      const std::vector<std::uint64_t>& freq) {
  if (scores.size() != labels.size() || scores.size() != item_ids.size())
    throw ShapeError("longtail_report: input lengths differ");
  if (freq.size() < 2) throw ContractError("long-tail subset empty: degenerate frequency table");
  for (int id : item_ids)
    if (id < 1 || id >= static_cast<int>(freq.size()))
      throw ContractError("item id " + std::to_string(id) + " not covered by the frequency table");

  const int distinct = static_cast<int>(freq.size()) - 1;
  const int tail_count = distinct / 5;
  if (tail_count == 0) throw ContractError("long-tail subset empty: fewer than 5 items");
  std::vector<int> ids(distinct);
  for (int i = 0; i < distinct; ++i) ids[i] = i + 1;
  std::sort(ids.begin(), ids.end(), [&](int a, int b) {
    return freq[a] != freq[b] ? freq[a] < freq[b] : a < b;
  });

  LongtailReport rep;
  rep.tail_items.assign(ids.begin(), ids.begin() + tail_count);
  std::vector<bool> in_tail(freq.size(), false);
  for (int id : rep.tail_items) in_tail[id] = true;

  rep.overall = auc(scores, labels);
  std::vector<double> ts;
  std::vector<int> tl;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (in_tail[item_ids[i]]) {
      ts.push_back(scores[i]);
      tl.push_back(labels[i]);
    }
  }
  bool has_pos = false, has_neg = false;
  for (int l : tl) (l ? has_pos : has_neg) = true;
  if (!tl.empty() && has_pos && has_neg) {
    rep.tail = auc(ts, tl);
    rep.diff = *rep.tail - rep.overall;
  }
  return rep;
}

// ---- metric log ----------------------------------------------------------

class MetricLog {
 public:
  void add(long step, const std::string& name, double value) {
    std::ostringstream os;
    os << step << "\t" << name << "\t" << std::setprecision(17) << value;
    lines_.push_back(os.str());
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write metrics file: " + path);
    for (const auto& l : lines_) os << l << "\n";
  }

  const std::vector<std::string>& lines() const { return lines_; }

 private:
  std::vector<std::string> lines_;
};

// ---- run state -----------------------------------------------------------

namespace detail {

template <typename F>
void save_run_state(const std::string& path, const ParameterStore<F>& store,
                    const Adam<F>& opt) {
  auto entries = store.items();
  for (auto& e : opt.state_entries(store.items())) entries.push_back(std::move(e));
  Tensor<F> step = Tensor<F>::scalar(static_cast<F>(opt.step_count()));
  entries.emplace_back("opt.step", step);
  save_checkpoint(path, entries);
}

template <typename F>
long load_run_state(const std::string& path, ParameterStore<F>& store, Adam<F>& opt) {
  auto entries = load_checkpoint_entries<F>(path);
  long step = -1;
  for (const auto& [name, t] : entries) {
    if (name == "opt.step") {
      step = static_cast<long>((*t.data)[0]);
    } else if (name.rfind("adam.", 0) == 0) {
      opt.restore_moment(name, t);
    } else {
      if (!store.has(name)) throw IoError("run state has unknown parameter '" + name + "'");
      const Tensor<F>& dst = store.get(name);
      if (dst.shape != t.shape) throw IoError("run state shape mismatch for '" + name + "'");
      std::copy(t.data->begin(), t.data->end(), dst.data->begin());
    }
  }
  if (step < 0) throw IoError("run state missing the step counter: " + path);
  opt.set_step_count(step);
  return step;
}

inline void ensure_dir(const std::string& dir) {
  std::filesystem::create_directories(dir);
}

}  // namespace detail

// ---- pre-training --------------------------------------------------------

struct LossPoint {
  long step = 0;
  double item = 0.0;
  double behavior = 0.0;
  double total = 0.0;
};

struct PretrainResult {
  std::vector<LossPoint> curve;  // first entry is the untrained baseline (step 0)
  std::uint64_t param_digest = 0;
  std::string checkpoint;        // params + optimizer state
  std::vector<std::string> metric_lines;
};

// One optimization step over a batch of sequences; returns the batch losses.
template <typename F>
LossPoint pretrain_step(Graph<F>& g, const EncoderModel<F>& model, const PretrainSpec& spec,
                        const PretrainCorpus& corpus, long step) {
  Rng batch_rng(mix_seed(spec.phase.seed, "pretrain.batch", static_cast<std::uint64_t>(step)));
  std::vector<Tensor<F>> totals;
  LossPoint point;
  point.step = step;
  for (int b = 0; b < spec.phase.batch; ++b) {
    const auto& seq =
        corpus.sequences[batch_rng.below(static_cast<std::uint32_t>(corpus.sequences.size()))];
    const MaskPlan plan = sample_mask_plan(
        seq, spec.item_mask_ratio, spec.behavior_mask_ratio,
        mix_seed(spec.phase.seed, "mask", static_cast<std::uint64_t>(step),
                 static_cast<std::uint64_t>(b)));
    Tensor<F> input = embed_sequence(g, model, seq, &plan);
    EncoderTrace<F> trace = encode(g, model, input);
    PretrainLoss<F> loss = pretrain_loss(g, model, trace, plan, spec.behavior_loss_weight);
    totals.push_back(loss.total);
    point.item += static_cast<double>(loss.item_loss.item());
    point.behavior += static_cast<double>(loss.behavior_loss.item());
  }
  point.item /= spec.phase.batch;
  point.behavior /= spec.phase.batch;
  Tensor<F> batch_loss = g.scale(g.add_n(totals), F(1) / static_cast<F>(spec.phase.batch));
  point.total = static_cast<double>(batch_loss.item());
  if (!std::isfinite(point.total))
    throw Error("non-finite pre-training loss at step " + std::to_string(step));
  if (g.recording) g.backward(batch_loss);
  return point;
}

template <typename F>
PretrainResult run_pretrain(const ModelConfig& mcfg, const PretrainSpec& spec,
                            const PretrainCorpus& corpus, const std::string& out_dir,
                            const std::string& resume_from = "") {
  if (corpus.sequences.empty()) throw ContractError("pre-training corpus is empty");
  ParameterStore<F> store;
  EncoderModel<F> model = build_encoder(store, mcfg, spec.phase.seed, /*with_heads=*/true);
  Adam<F> opt(PolynomialDecay{spec.phase.lr, spec.phase.lr_end, spec.phase.power,
                              spec.phase.steps});
  long start_step = 0;
  if (!resume_from.empty()) start_step = detail::load_run_state(resume_from, store, opt);

  PretrainResult result;
  MetricLog log;
  auto record = [&](const LossPoint& p) {
    result.curve.push_back(p);
    log.add(p.step, "item_loss", p.item);
    log.add(p.step, "behavior_loss", p.behavior);
    log.add(p.step, "total_loss", p.total);
  };

  if (start_step == 0) {
    Graph<F> probe;
    probe.recording = false;
    record(pretrain_step(probe, model, spec, corpus, 0));
  }
  // Logged losses are window means over the batches since the previous log
  // point, not single-batch snapshots.
  LossPoint window;
  long window_n = 0;
  for (long step = start_step; step < spec.phase.steps; ++step) {
    Graph<F> g;
    LossPoint p = pretrain_step(g, model, spec, corpus, step);
    opt.step(store.trainable());
    window.item += p.item;
    window.behavior += p.behavior;
    window.total += p.total;
    ++window_n;
    if ((step + 1) % spec.phase.eval_every == 0 || step + 1 == spec.phase.steps) {
      LossPoint mean;
      mean.step = step + 1;
      mean.item = window.item / window_n;
      mean.behavior = window.behavior / window_n;
      mean.total = window.total / window_n;
      record(mean);
      window = LossPoint{};
      window_n = 0;
    }
  }
  if (result.curve.empty()) {  // resumed at or past the final step
    Graph<F> probe;
    probe.recording = false;
    record(pretrain_step(probe, model, spec, corpus, start_step));
  }

  result.param_digest = store.digest();
  result.metric_lines = log.lines();
  if (!out_dir.empty()) {
    detail::ensure_dir(out_dir + "/checkpoints");
    result.checkpoint = out_dir + "/checkpoints/final.ckpt";
    detail::save_run_state(result.checkpoint, store, opt);
    log.save(out_dir + "/metrics.tsv");
  }
  return result;
}

// ---- fine-tuning ---------------------------------------------------------

struct FinetuneResult {
  double best_auc = 0.0;
  long best_step = 0;
  double final_auc = 0.0;
  std::vector<std::pair<long, double>> auc_curve;
  std::uint64_t param_digest = 0;
  std::string best_checkpoint;
  std::string final_checkpoint;  // params + optimizer state
  std::vector<std::string> metric_lines;
};

inline bool is_validation_user(long user_id, double val_fraction, std::uint64_t seed) {
  const std::uint64_t h = mix_seed(mix_seed(seed, "valsplit"), static_cast<std::uint64_t>(user_id));
  return static_cast<double>(h % 1000000) < val_fraction * 1000000.0;
}

template <typename F>
std::vector<double> score_examples(const CtrModel<F>& model, const FinetuneCorpus& corpus,
                                   const std::vector<std::size_t>& indices) {
  Graph<F> g;
  g.recording = false;
  std::vector<double> scores;
  scores.reserve(indices.size());
  for (std::size_t idx : indices) {
    const CtrExample& ex = corpus.examples[idx];
    scores.push_back(model.fin.baseline_mp ? mp_baseline_forward(g, model, ex).prob
                                           : ctr_forward(g, model, ex).prob);
  }
  return scores;
}

template <typename F>
std::uint64_t encoder_digest(const ParameterStore<F>& store) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [name, t] : store.items()) {
    if (name.rfind("emb.", 0) == 0 || name.rfind("enc.", 0) == 0) {
      h ^= fnv1a64(name);
      h *= 1099511628211ull;
      h ^= value_digest(t);
      h *= 1099511628211ull;
    }
  }
  return h;
}

template <typename F>
FinetuneResult run_finetune(const ModelConfig& mcfg, const FinetuneSpec& spec,
                            const FinetuneCorpus& corpus, const std::string& pretrain_ckpt,
                            const std::string& out_dir, const std::string& resume_from = "") {
  if (corpus.examples.empty()) throw ContractError("fine-tuning corpus is empty");
  const FinetuneConfig& fin = spec.model;

  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
    if (is_validation_user(corpus.examples[i].sequence.user_id, spec.val_fraction,
                           spec.phase.seed))
      val_idx.push_back(i);
    else
      train_idx.push_back(i);
  }
  if (train_idx.empty()) throw ContractError("training split is empty");
  bool vp = false, vn = false;
  for (std::size_t i : val_idx) (corpus.examples[i].label ? vp : vn) = true;
  if (val_idx.empty() || !vp || !vn)
    throw MetricError("validation split lacks both label classes; adjust the split or corpus");

  ParameterStore<F> store;
  CtrModel<F> model = build_ctr_model(store, mcfg, fin, spec.phase.seed);
  if (!fin.from_scratch && !pretrain_ckpt.empty())
    load_checkpoint(pretrain_ckpt, store, /*strict=*/false);
  if (fin.freeze_encoder) freeze_encoder_params(store, mcfg);

  Adam<F> opt(PolynomialDecay{spec.phase.lr, spec.phase.lr_end, spec.phase.power,
                              spec.phase.steps});
  long start_step = 0;
  if (!resume_from.empty()) start_step = detail::load_run_state(resume_from, store, opt);

  std::vector<int> val_labels;
  for (std::size_t i : val_idx) val_labels.push_back(corpus.examples[i].label);

  FinetuneResult result;
  MetricLog log;
  auto evaluate = [&](long step) {
    const double a = auc(score_examples(model, corpus, val_idx), val_labels);
    result.auc_curve.emplace_back(step, a);
    log.add(step, "val_auc", a);
    if (a > result.best_auc) {
      result.best_auc = a;
      result.best_step = step;
      if (!out_dir.empty()) {
        detail::ensure_dir(out_dir + "/checkpoints");
        result.best_checkpoint = out_dir + "/checkpoints/best.ckpt";
        save_checkpoint(result.best_checkpoint, store);
      }
    }
    return a;
  };

  for (long step = start_step; step < spec.phase.steps; ++step) {
    Graph<F> g;
    Rng batch_rng(mix_seed(spec.phase.seed, "finetune.batch", static_cast<std::uint64_t>(step)));
    std::vector<Tensor<F>> losses;
    for (int b = 0; b < spec.phase.batch; ++b) {
      const std::size_t idx =
          train_idx[batch_rng.below(static_cast<std::uint32_t>(train_idx.size()))];
      const CtrExample& ex = corpus.examples[idx];
      Tensor<F> logit = fin.baseline_mp ? mp_baseline_forward(g, model, ex).logit
                                        : ctr_forward(g, model, ex).logit;
      losses.push_back(g.bce_logit(logit, static_cast<F>(ex.label)));
    }
    Tensor<F> batch_loss = g.scale(g.add_n(losses), F(1) / static_cast<F>(spec.phase.batch));
    const double loss_value = static_cast<double>(batch_loss.item());
    if (!std::isfinite(loss_value))
      throw Error("non-finite fine-tuning loss at step " + std::to_string(step));
    g.backward(batch_loss);
    opt.step(store.trainable());

    if ((step + 1) % spec.phase.eval_every == 0 || step + 1 == spec.phase.steps) {
      log.add(step + 1, "train_loss", loss_value);
      result.final_auc = evaluate(step + 1);
    }
  }
  if (result.auc_curve.empty())  // resumed at or past the final step
    result.final_auc = evaluate(start_step);

  result.param_digest = store.digest();
  result.metric_lines = log.lines();
  if (!out_dir.empty()) {
    detail::ensure_dir(out_dir + "/checkpoints");
    result.final_checkpoint = out_dir + "/checkpoints/final.ckpt";
    detail::save_run_state(result.final_checkpoint, store, opt);
    log.save(out_dir + "/metrics.tsv");
  }
  return result;
}

}  // namespace srp4ctr
