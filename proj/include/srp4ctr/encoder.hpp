#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "srp4ctr/common.hpp"
#include "srp4ctr/config.hpp"
#include "srp4ctr/data.hpp"
#include "srp4ctr/graph.hpp"
#include "srp4ctr/store.hpp"
#include "srp4ctr/tensor.hpp"

namespace srp4ctr {

template <typename F>
struct EncoderLayerParams {
  Tensor<F> ln1_g, ln1_b;
  Tensor<F> wq, wk, wv, wo;
  Tensor<F> ln2_g, ln2_b;
  Tensor<F> w1, b1, w2, b2;
};

// Bidirectional transformer over interaction sequences with fused
// item/behavior/position embeddings, dual mask embeddings, and the two
// mask-prediction heads.
template <typename F>
struct EncoderModel {
  ModelConfig cfg;
  std::vector<Tensor<F>> item_tables;      // per item feature field [V_k, d]
  std::vector<Tensor<F>> behavior_tables;  // per behavior feature field [W_n, d]
  Tensor<F> pos;                           // [L, d]
  Tensor<F> mask_item, mask_behavior;      // [1, d]
  std::vector<EncoderLayerParams<F>> layers;
  Tensor<F> item_head_b;                   // [1, V_0]; logits reuse item_tables[0]
  std::vector<Tensor<F>> beh_head_w, beh_head_b;
  bool has_heads = false;
};

namespace detail {

template <typename F>
Tensor<F> init_normal(ParameterStore<F>& store, const std::string& name,
                      std::vector<int> shape, std::uint64_t seed) {
  Rng rng(mix_seed(seed, name));
  return store.add(name, Tensor<F>::truncated_normal(std::move(shape), 0.02, rng));
}

template <typename F>
Tensor<F> init_zero(ParameterStore<F>& store, const std::string& name,
                    std::vector<int> shape) {
  return store.add(name, Tensor<F>::zeros(std::move(shape)));
}

template <typename F>
Tensor<F> init_one(ParameterStore<F>& store, const std::string& name, int n) {
  return store.add(name, Tensor<F>::full({1, n}, F(1)));
}

}  // namespace detail

template <typename F>
EncoderModel<F> build_encoder(ParameterStore<F>& store, const ModelConfig& cfg,
                              std::uint64_t seed, bool with_heads) {
  EncoderModel<F> m;
  m.cfg = cfg;
  const int d = cfg.d_model;
  for (int k = 0; k < cfg.vocab.m(); ++k)
    m.item_tables.push_back(detail::init_normal(store, "emb.item." + std::to_string(k),
                                                {cfg.vocab.item_vocab[k], d}, seed));
  for (int n = 0; n < cfg.vocab.n(); ++n)
    m.behavior_tables.push_back(detail::init_normal(
        store, "emb.behavior." + std::to_string(n), {cfg.vocab.behavior_vocab[n], d}, seed));
  m.pos = detail::init_normal(store, "emb.pos", {cfg.vocab.max_len, d}, seed);
  m.mask_item = detail::init_normal(store, "emb.mask_item", {1, d}, seed);
  m.mask_behavior = detail::init_normal(store, "emb.mask_behavior", {1, d}, seed);

  for (int i = 0; i < cfg.num_layers; ++i) {
    const std::string p = "enc.l" + std::to_string(i) + ".";
    EncoderLayerParams<F> lp;
    lp.ln1_g = detail::init_one(store, p + "ln1.g", d);
    lp.ln1_b = detail::init_zero<F>(store, p + "ln1.b", {1, d});
    lp.wq = detail::init_normal(store, p + "attn.wq", {d, d}, seed);
    lp.wk = detail::init_normal(store, p + "attn.wk", {d, d}, seed);
    lp.wv = detail::init_normal(store, p + "attn.wv", {d, d}, seed);
    lp.wo = detail::init_normal(store, p + "attn.wo", {d, d}, seed);
    lp.ln2_g = detail::init_one(store, p + "ln2.g", d);
    lp.ln2_b = detail::init_zero<F>(store, p + "ln2.b", {1, d});
    lp.w1 = detail::init_normal(store, p + "ffn.w1", {d, cfg.ffn_dim()}, seed);
    lp.b1 = detail::init_zero<F>(store, p + "ffn.b1", {1, cfg.ffn_dim()});
    lp.w2 = detail::init_normal(store, p + "ffn.w2", {cfg.ffn_dim(), d}, seed);
    lp.b2 = detail::init_zero<F>(store, p + "ffn.b2", {1, d});
    m.layers.push_back(std::move(lp));
  }

  if (with_heads) {
    m.has_heads = true;
    m.item_head_b = detail::init_zero<F>(store, "head.item.b", {1, cfg.vocab.item_vocab[0]});
    for (int n = 0; n < cfg.vocab.n(); ++n) {
      const std::string p = "head.beh" + std::to_string(n) + ".";
      m.beh_head_w.push_back(
          detail::init_normal(store, p + "w", {d, cfg.vocab.behavior_vocab[n]}, seed));
      m.beh_head_b.push_back(detail::init_zero<F>(store, p + "b", {1, cfg.vocab.behavior_vocab[n]}));
    }
  }
  return m;
}

// Per-layer activations from one encoding pass. states[0] is the fused input,
// states[i] the output of layer i; keys/values are each layer's projected
// K and V, cached so the target cross-attention path can reuse them without
// touching the sequence again. All tensors are cropped to the true length.
template <typename F>
struct EncoderTrace {
  std::vector<Tensor<F>> states;
  std::vector<Tensor<F>> keys, values;
  int true_length = 0;
};

// Fused per-position input: sum of item feature embeddings + sum of behavior
// feature embeddings + position embedding, with mask embeddings substituted
// where a plan requests. Output has true_length rows.
template <typename F>
Tensor<F> embed_sequence(Graph<F>& g, const EncoderModel<F>& m,
                         const InteractionSequence& seq, const MaskPlan* plan) {
  const int t = seq.true_length();
  if (t < 1) throw ContractError("embed_sequence: empty sequence");
  if (t > m.cfg.vocab.max_len)
    throw ContractError("embed_sequence: sequence longer than the position table");
  if (plan) {
    for (int p : plan->item_positions)
      if (p >= t) throw ContractError("mask position beyond true length");
    for (int p : plan->behavior_positions)
      if (p >= t) throw ContractError("mask position beyond true length");
  }

  std::vector<Tensor<F>> item_parts, behavior_parts;
  for (int k = 0; k < m.cfg.vocab.m(); ++k) {
    std::vector<int> ids(t);
    for (int i = 0; i < t; ++i) ids[i] = seq.events[i].item_ids[k];
    item_parts.push_back(g.gather_rows(m.item_tables[k], ids));
  }
  for (int n = 0; n < m.cfg.vocab.n(); ++n) {
    std::vector<int> ids(t);
    for (int i = 0; i < t; ++i) ids[i] = seq.events[i].behavior_ids[n];
    behavior_parts.push_back(g.gather_rows(m.behavior_tables[n], ids));
  }
  Tensor<F> x = item_parts.size() == 1 ? item_parts[0] : g.add_n(item_parts);
  Tensor<F> s = behavior_parts.size() == 1 ? behavior_parts[0] : g.add_n(behavior_parts);
  if (plan && !plan->item_positions.empty())
    x = g.overwrite_rows(x, plan->item_positions, m.mask_item);
  if (plan && !plan->behavior_positions.empty())
    s = g.overwrite_rows(s, plan->behavior_positions, m.mask_behavior);
  return g.add(g.add(x, s), g.slice_rows(m.pos, 0, t));
}

// Multi-head scaled dot-product attention over explicit K/V; returns the
// concatenated per-head mix, before any output projection.
template <typename F>
Tensor<F> multi_head_attend(Graph<F>& g, const Tensor<F>& q, const Tensor<F>& k,
                            const Tensor<F>& v, int num_heads) {
  const int d = q.cols();
  const int dh = d / num_heads;
  const F inv_sqrt = static_cast<F>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<Tensor<F>> mixed;
  for (int h = 0; h < num_heads; ++h) {
    Tensor<F> qh = g.slice_cols(q, h * dh, (h + 1) * dh);
    Tensor<F> kh = g.slice_cols(k, h * dh, (h + 1) * dh);
    Tensor<F> vh = g.slice_cols(v, h * dh, (h + 1) * dh);
    Tensor<F> scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt);
    mixed.push_back(g.matmul(g.softmax_rows(scores), vh));
  }
  return mixed.size() == 1 ? mixed[0] : g.concat_cols(mixed);
}

template <typename F>
Tensor<F> ffn_block(Graph<F>& g, const Tensor<F>& x, const Tensor<F>& ln_g,
                    const Tensor<F>& ln_b, const Tensor<F>& w1, const Tensor<F>& b1,
                    const Tensor<F>& w2, const Tensor<F>& b2) {
  Tensor<F> h = g.layer_norm_rows(x, ln_g, ln_b);
  Tensor<F> u = g.gelu(g.add_bias(g.matmul(h, w1), b1));
  return g.add(x, g.add_bias(g.matmul(u, w2), b2));
}

// Pre-norm transformer stack. The trace keeps every layer's output plus the
// projected K/V so downstream blocks can attend into any layer.
template <typename F>
EncoderTrace<F> encode(Graph<F>& g, const EncoderModel<F>& m, const Tensor<F>& input) {
  EncoderTrace<F> trace;
  trace.true_length = input.rows();
  trace.states.push_back(input);
  Tensor<F> x = input;
  for (const auto& lp : m.layers) {
    Tensor<F> h = g.layer_norm_rows(x, lp.ln1_g, lp.ln1_b);
    Tensor<F> q = g.matmul(h, lp.wq);
    Tensor<F> k = g.matmul(h, lp.wk);
    Tensor<F> v = g.matmul(h, lp.wv);
    Tensor<F> mixed = multi_head_attend(g, q, k, v, m.cfg.num_heads);
    Tensor<F> x1 = g.add(x, g.matmul(mixed, lp.wo));
    x = ffn_block(g, x1, lp.ln2_g, lp.ln2_b, lp.w1, lp.b1, lp.w2, lp.b2);
    trace.states.push_back(x);
    trace.keys.push_back(k);
    trace.values.push_back(v);
  }
  return trace;
}

template <typename F>
struct PretrainLoss {
  Tensor<F> item_loss;
  Tensor<F> behavior_loss;
  Tensor<F> total;
};

// Masked positions are scored against the primary item table itself (tied
// output weights) plus a per-id bias; the behavior heads score every behavior
// attribute at behavior-masked positions. Each loss is a mean CE over its
// mask set; total adds the weighted behavior term.
template <typename F>
PretrainLoss<F> pretrain_loss(Graph<F>& g, const EncoderModel<F>& m,
                              const EncoderTrace<F>& trace, const MaskPlan& plan,
                              double behavior_weight) {
  if (!m.has_heads) throw ContractError("pretrain_loss: model built without prediction heads");
  if (plan.item_positions.empty() || plan.behavior_positions.empty())
    throw ContractError("pretrain_loss: mask plan must cover both mask types");
  const Tensor<F>& final_state = trace.states.back();

  Tensor<F> item_rows = g.gather_rows(final_state, plan.item_positions);
  Tensor<F> item_logits = g.add_bias(g.matmul_nt(item_rows, m.item_tables[0]), m.item_head_b);
  PretrainLoss<F> out;
  out.item_loss = g.softmax_ce(item_logits, plan.item_targets);

  Tensor<F> beh_rows = g.gather_rows(final_state, plan.behavior_positions);
  std::vector<Tensor<F>> per_attr;
  const int n_attrs = m.cfg.vocab.n();
  for (int n = 0; n < n_attrs; ++n) {
    std::vector<int> targets(plan.behavior_positions.size());
    for (std::size_t j = 0; j < targets.size(); ++j) targets[j] = plan.behavior_targets[j][n];
    Tensor<F> logits = g.add_bias(g.matmul(beh_rows, m.beh_head_w[n]), m.beh_head_b[n]);
    per_attr.push_back(g.softmax_ce(logits, targets));
  }
  Tensor<F> beh_sum = per_attr.size() == 1 ? per_attr[0] : g.add_n(per_attr);
  out.behavior_loss = g.scale(beh_sum, F(1) / static_cast<F>(n_attrs));
  out.total = g.add(out.item_loss, g.scale(out.behavior_loss, static_cast<F>(behavior_weight)));
  return out;
}

}  // namespace srp4ctr
