#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "srp4ctr/common.hpp"
#include "srp4ctr/config.hpp"
#include "srp4ctr/data.hpp"
#include "srp4ctr/encoder.hpp"
#include "srp4ctr/graph.hpp"
#include "srp4ctr/store.hpp"

namespace srp4ctr {

template <typename F>
struct UniLayerParams {
  Tensor<F> lnq_g, lnq_b;
  Tensor<F> wq, wo;  // aliases of the encoder's projections when tied
  Tensor<F> ln2_g, ln2_b;
  Tensor<F> w1, b1, w2, b2;
};

// CTR model: the shared encoder plus the target cross-attention stack, the
// querying transformer, context embeddings and the prediction head. The
// cross-attention block reads the encoder's cached per-layer K/V, so its
// key/value projections are the encoder's own tensors by construction.
template <typename F>
struct CtrModel {
  EncoderModel<F> enc;
  FinetuneConfig fin;
  std::vector<Tensor<F>> context_tables;  // [C_c, d]
  std::vector<UniLayerParams<F>> uni;
  Tensor<F> target_pos;  // [1, d]
  Tensor<F> qf_queries;  // [K, d]
  Tensor<F> qf_ctx_w;    // [d, K*d] when context-driven queries are on
  Tensor<F> qf_lns_g, qf_lns_b;
  Tensor<F> qf_wq, qf_wk, qf_wv, qf_wo;
  Tensor<F> qf_ln2_g, qf_ln2_b;
  Tensor<F> qf_w1, qf_b1, qf_w2, qf_b2;
  Tensor<F> head_w1, head_b1, head_w2, head_b2;
  Tensor<F> adapter;  // model-patch baseline
  Tensor<F> mp_w1, mp_b1, mp_w2, mp_b2;
};

// Width of the concatenated feature vector entering the CTR head.
inline int head_input_dim(const ModelConfig& cfg, const FinetuneConfig& fin) {
  int parts = 2;  // pooled state + target embedding, always present
  if (fin.use_uni_attn) parts += 1;
  if (fin.use_qformer) parts += fin.queries;
  if (cfg.vocab.c() > 0) parts += 1;
  return cfg.d_model * parts;
}

template <typename F>
CtrModel<F> build_ctr_model(ParameterStore<F>& store, const ModelConfig& cfg,
                            const FinetuneConfig& fin, std::uint64_t seed) {
  if (fin.queries >= cfg.vocab.max_len)
    throw ConfigError("query count must be smaller than the sequence length");
  CtrModel<F> m;
  m.enc = build_encoder(store, cfg, seed, /*with_heads=*/false);
  m.fin = fin;
  const int d = cfg.d_model;
  for (int c = 0; c < cfg.vocab.c(); ++c)
    m.context_tables.push_back(detail::init_normal(
        store, "ctx.emb." + std::to_string(c), {cfg.vocab.context_vocab[c], d}, seed));

  if (fin.use_uni_attn) {
    for (int i = 0; i < cfg.num_layers; ++i) {
      const std::string p = "uni.l" + std::to_string(i) + ".";
      UniLayerParams<F> lp;
      lp.lnq_g = detail::init_one(store, p + "lnq.g", d);
      lp.lnq_b = detail::init_zero<F>(store, p + "lnq.b", {1, d});
      if (fin.tie_uni_attn) {
        lp.wq = m.enc.layers[i].wq;
        lp.wo = m.enc.layers[i].wo;
      } else {
        lp.wq = detail::init_normal(store, p + "wq", {d, d}, seed);
        lp.wo = detail::init_normal(store, p + "wo", {d, d}, seed);
      }
      lp.ln2_g = detail::init_one(store, p + "ln2.g", d);
      lp.ln2_b = detail::init_zero<F>(store, p + "ln2.b", {1, d});
      lp.w1 = detail::init_normal(store, p + "ffn.w1", {d, cfg.ffn_dim()}, seed);
      lp.b1 = detail::init_zero<F>(store, p + "ffn.b1", {1, cfg.ffn_dim()});
      lp.w2 = detail::init_normal(store, p + "ffn.w2", {cfg.ffn_dim(), d}, seed);
      lp.b2 = detail::init_zero<F>(store, p + "ffn.b2", {1, d});
      m.uni.push_back(std::move(lp));
    }
    m.target_pos = detail::init_normal(store, "uni.target_pos", {1, d}, seed);
  }

  if (fin.use_qformer) {
    m.qf_queries = detail::init_normal(store, "qf.queries", {fin.queries, d}, seed);
    if (fin.context_queries && cfg.vocab.c() > 0)
      m.qf_ctx_w = detail::init_normal(store, "qf.ctx.w", {d, fin.queries * d}, seed);
    m.qf_lns_g = detail::init_one(store, "qf.lns.g", d);
    m.qf_lns_b = detail::init_zero<F>(store, "qf.lns.b", {1, d});
    m.qf_wq = detail::init_normal(store, "qf.attn.wq", {d, d}, seed);
    m.qf_wk = detail::init_normal(store, "qf.attn.wk", {d, d}, seed);
    m.qf_wv = detail::init_normal(store, "qf.attn.wv", {d, d}, seed);
    m.qf_wo = detail::init_normal(store, "qf.attn.wo", {d, d}, seed);
    m.qf_ln2_g = detail::init_one(store, "qf.ln2.g", d);
    m.qf_ln2_b = detail::init_zero<F>(store, "qf.ln2.b", {1, d});
    m.qf_w1 = detail::init_normal(store, "qf.ffn.w1", {d, cfg.ffn_dim()}, seed);
    m.qf_b1 = detail::init_zero<F>(store, "qf.ffn.b1", {1, cfg.ffn_dim()});
    m.qf_w2 = detail::init_normal(store, "qf.ffn.w2", {cfg.ffn_dim(), d}, seed);
    m.qf_b2 = detail::init_zero<F>(store, "qf.ffn.b2", {1, d});
  }

  if (fin.baseline_mp) {
    m.adapter = detail::init_zero<F>(store, "mp.adapter", {1, d});
    m.mp_w1 = detail::init_normal(store, "mp.head.w1", {2 * d, fin.head_hidden}, seed);
    m.mp_b1 = detail::init_zero<F>(store, "mp.head.b1", {1, fin.head_hidden});
    m.mp_w2 = detail::init_normal(store, "mp.head.w2", {fin.head_hidden, 1}, seed);
    m.mp_b2 = detail::init_zero<F>(store, "mp.head.b2", {1, 1});
  } else {
    const int din = head_input_dim(cfg, fin);
    m.head_w1 = detail::init_normal(store, "head.w1", {din, fin.head_hidden}, seed);
    m.head_b1 = detail::init_zero<F>(store, "head.b1", {1, fin.head_hidden});
    m.head_w2 = detail::init_normal(store, "head.w2", {fin.head_hidden, 1}, seed);
    m.head_b2 = detail::init_zero<F>(store, "head.b2", {1, 1});
  }
  return m;
}

template <typename F>
void freeze_encoder_params(ParameterStore<F>& store, const ModelConfig& cfg) {
  store.set_trainable_prefix("emb.", false);
  if (cfg.num_layers > 0) store.set_trainable_prefix("enc.", false);
}

// Sum of the target's M item-feature embeddings (the shared tables).
template <typename F>
Tensor<F> target_embedding(Graph<F>& g, const CtrModel<F>& m,
                           const std::vector<int>& target_item) {
  if (static_cast<int>(target_item.size()) != m.enc.cfg.vocab.m())
    throw ContractError("target must carry exactly one id per item feature");
  std::vector<Tensor<F>> parts;
  for (int k = 0; k < m.enc.cfg.vocab.m(); ++k)
    parts.push_back(g.gather_rows(m.enc.item_tables[k], {target_item[k]}));
  return parts.size() == 1 ? parts[0] : g.add_n(parts);
}

template <typename F>
Tensor<F> context_embedding(Graph<F>& g, const CtrModel<F>& m,
                            const std::vector<int>& context) {
  if (static_cast<int>(context.size()) != m.enc.cfg.vocab.c())
    throw ContractError("context must carry exactly one id per context feature");
  std::vector<Tensor<F>> parts;
  for (int c = 0; c < m.enc.cfg.vocab.c(); ++c)
    parts.push_back(g.gather_rows(m.context_tables[c], {context[c]}));
  return parts.size() == 1 ? parts[0] : g.add_n(parts);
}

// The target, as a single query, walks the encoder stack: at each layer it
// attends over that layer's cached K/V and passes through its own FFN, all
// with residuals. The sequence activations are read, never written.
template <typename F>
Tensor<F> uni_cross_attention(Graph<F>& g, const CtrModel<F>& m,
                              const EncoderTrace<F>& trace,
                              const std::vector<int>& target_item) {
  if (!m.fin.use_uni_attn)
    throw ContractError("uni_cross_attention called on a model built without it");
  if (trace.keys.size() != m.uni.size())
    throw ConfigError("trace has " + std::to_string(trace.keys.size()) +
                      " layers but the cross-attention stack has " +
                      std::to_string(m.uni.size()));
  Tensor<F> t = g.add(target_embedding(g, m, target_item), m.target_pos);
  for (std::size_t i = 0; i < m.uni.size(); ++i) {
    const auto& lp = m.uni[i];
    Tensor<F> q = g.matmul(g.layer_norm_rows(t, lp.lnq_g, lp.lnq_b), lp.wq);
    Tensor<F> mixed = multi_head_attend(g, q, trace.keys[i], trace.values[i],
                                        m.enc.cfg.num_heads);
    Tensor<F> t1 = g.add(t, g.matmul(mixed, lp.wo));
    t = ffn_block(g, t1, lp.ln2_g, lp.ln2_b, lp.w1, lp.b1, lp.w2, lp.b2);
  }
  return t;
}

// K learnable queries (optionally shifted by a projection of the context
// embedding) cross-attend once over the final sequence state. Depends only on
// the user side, never on the target.
template <typename F>
Tensor<F> qformer_encode(Graph<F>& g, const CtrModel<F>& m, const EncoderTrace<F>& trace,
                         const std::vector<int>& context) {
  if (!m.fin.use_qformer)
    throw ContractError("qformer_encode called on a model built without it");
  const int k_count = m.fin.queries;
  const int d = m.enc.cfg.d_model;
  Tensor<F> queries = m.qf_queries;
  if (m.qf_ctx_w.defined()) {
    Tensor<F> ctx = context_embedding(g, m, context);
    Tensor<F> offsets = g.reshape(g.matmul(ctx, m.qf_ctx_w), {k_count, d});
    queries = g.add(queries, offsets);
  }
  Tensor<F> h = g.layer_norm_rows(trace.states.back(), m.qf_lns_g, m.qf_lns_b);
  Tensor<F> kk = g.matmul(h, m.qf_wk);
  Tensor<F> vv = g.matmul(h, m.qf_wv);
  Tensor<F> qq = g.matmul(queries, m.qf_wq);
  Tensor<F> mixed = multi_head_attend(g, qq, kk, vv, m.enc.cfg.num_heads);
  Tensor<F> a = g.add(queries, g.matmul(mixed, m.qf_wo));
  return ffn_block(g, a, m.qf_ln2_g, m.qf_ln2_b, m.qf_w1, m.qf_b1, m.qf_w2, m.qf_b2);
}

template <typename F>
struct CtrOutput {
  Tensor<F> logit;
  double prob = 0.0;
  EncoderTrace<F> trace;
};

template <typename F>
Tensor<F> mlp_head(Graph<F>& g, const Tensor<F>& feat, const Tensor<F>& w1,
                   const Tensor<F>& b1, const Tensor<F>& w2, const Tensor<F>& b2) {
  Tensor<F> h = g.gelu(g.add_bias(g.matmul(feat, w1), b1));
  return g.add_bias(g.matmul(h, w2), b2);
}

// Scores one candidate given an already-encoded sequence.
template <typename F>
Tensor<F> score_candidate(Graph<F>& g, const CtrModel<F>& m, const EncoderTrace<F>& trace,
                          const Tensor<F>& folded_features,
                          const std::vector<int>& target_item) {
  std::vector<Tensor<F>> parts;
  if (m.fin.use_uni_attn) parts.push_back(uni_cross_attention(g, m, trace, target_item));
  parts.push_back(folded_features);
  parts.push_back(target_embedding(g, m, target_item));
  Tensor<F> feat = g.concat_cols(parts);
  return mlp_head(g, feat, m.head_w1, m.head_b1, m.head_w2, m.head_b2);
}

// Target-independent features: flattened qformer outputs, pooled final state,
// context embedding. Everything here can be computed once per user request.
template <typename F>
Tensor<F> folded_features(Graph<F>& g, const CtrModel<F>& m, const EncoderTrace<F>& trace,
                          const std::vector<int>& context) {
  std::vector<Tensor<F>> parts;
  if (m.fin.use_qformer) {
    Tensor<F> qf = qformer_encode(g, m, trace, context);
    parts.push_back(g.reshape(qf, {1, m.fin.queries * m.enc.cfg.d_model}));
  }
  parts.push_back(g.mean_rows(trace.states.back()));
  if (m.enc.cfg.vocab.c() > 0) parts.push_back(context_embedding(g, m, context));
  return parts.size() == 1 ? parts[0] : g.concat_cols(parts);
}

template <typename F>
CtrOutput<F> ctr_forward(Graph<F>& g, const CtrModel<F>& m, const CtrExample& ex) {
  if (m.fin.baseline_mp) throw ContractError("use mp_baseline_forward for the patch baseline");
  CtrOutput<F> out;
  out.trace = encode(g, m.enc, embed_sequence(g, m.enc, ex.sequence, nullptr));
  Tensor<F> folded = folded_features(g, m, out.trace, ex.context_features);
  out.logit = score_candidate(g, m, out.trace, folded, ex.target_item);
  out.prob = sigmoid(static_cast<double>(out.logit.item()));
  return out;
}

// Frozen-encoder patch baseline: pooled final state shifted by a learnable
// adapter vector, concatenated with the target embedding, through its own MLP.
template <typename F>
CtrOutput<F> mp_baseline_forward(Graph<F>& g, const CtrModel<F>& m, const CtrExample& ex) {
  if (!m.fin.baseline_mp) throw ContractError("model was not built as the patch baseline");
  CtrOutput<F> out;
  out.trace = encode(g, m.enc, embed_sequence(g, m.enc, ex.sequence, nullptr));
  Tensor<F> rep = g.add(g.mean_rows(out.trace.states.back()), m.adapter);
  Tensor<F> feat = g.concat_cols({rep, target_embedding(g, m, ex.target_item)});
  out.logit = mlp_head(g, feat, m.mp_w1, m.mp_b1, m.mp_w2, m.mp_b2);
  out.prob = sigmoid(static_cast<double>(out.logit.item()));
  return out;
}

// Stable binary cross-entropy from a probability, for scoring outside the
// autodiff path; training uses Graph::bce_logit on the raw logit.
inline double binary_ce(double p, double label) {
  const double q = std::min(1.0 - 1e-12, std::max(1e-12, p));
  return -label * std::log(q) - (1.0 - label) * std::log(1.0 - q);
}

}  // namespace srp4ctr
