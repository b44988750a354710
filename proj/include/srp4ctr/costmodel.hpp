#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "srp4ctr/common.hpp"
#include "srp4ctr/config.hpp"
#include "srp4ctr/data.hpp"
#include "srp4ctr/finetune.hpp"
#include "srp4ctr/graph.hpp"

namespace srp4ctr {

struct StageCost {
  std::string name;
  std::uint64_t flops = 0;
  bool foldable = false;
};

// FLOPs convention: a matmul of [m,k]x[k,n] costs 2mkn; element-wise ops,
// softmax and norms are free. Folded serving pays foldable stages once per
// request and non-foldable stages once per candidate.
struct CostReport {
  std::vector<StageCost> stages;
  int batch = 1;
  std::uint64_t efficiency_flops = 0;  // whole stack at batch size one
  std::uint64_t inference_flops = 0;   // folded cost for a B-candidate request

  double ratio() const {
    if (efficiency_flops == 0) throw ContractError("cost ratio undefined: zero efficiency FLOPs");
    return static_cast<double>(inference_flops) / static_cast<double>(efficiency_flops);
  }

  static CostReport compose(std::vector<StageCost> stages, int batch) {
    if (batch < 1) throw ContractError("serving batch must be >= 1");
    CostReport r;
    r.stages = std::move(stages);
    r.batch = batch;
    for (const auto& s : r.stages) {
      r.efficiency_flops += s.flops;
      r.inference_flops += s.foldable ? s.flops : s.flops * static_cast<std::uint64_t>(batch);
    }
    return r;
  }

  std::string to_table() const {
    std::ostringstream os;
    os << std::left << std::setw(18) << "stage" << std::right << std::setw(14) << "flops"
       << "  foldable\n";
    for (const auto& s : stages)
      os << std::left << std::setw(18) << s.name << std::right << std::setw(14) << s.flops
         << "  " << (s.foldable ? "yes" : "no") << "\n";
    os << std::left << std::setw(18) << "efficiency_flops" << std::right << std::setw(14)
       << efficiency_flops << "\n";
    os << std::left << std::setw(18) << "inference_flops" << std::right << std::setw(14)
       << inference_flops << "  (batch " << batch << ")\n";
    os << std::left << std::setw(18) << "ratio" << std::right << std::setw(14) << std::fixed
       << std::setprecision(2) << ratio() << "\n";
    return os.str();
  }

  std::string to_machine() const {
    std::ostringstream os;
    for (const auto& s : stages)
      os << s.name << "\t" << s.flops << "\t" << (s.foldable ? 1 : 0) << "\n";
    return os.str();
  }
};

inline double metric_ratio(double efficiency_flops, double inference_flops) {
  if (!(efficiency_flops > 0))
    throw ContractError("cost ratio undefined: efficiency FLOPs must be positive");
  return inference_flops / efficiency_flops;
}

// Closed-form counts mirroring the forward implementation matmul for matmul,
// at full sequence length L.
inline CostReport count_flops(const ModelConfig& cfg, const FinetuneConfig& fin, int batch) {
  const std::uint64_t l = static_cast<std::uint64_t>(cfg.vocab.max_len);
  const std::uint64_t d = static_cast<std::uint64_t>(cfg.d_model);
  const std::uint64_t f = static_cast<std::uint64_t>(cfg.ffn_dim());
  const std::uint64_t layers = static_cast<std::uint64_t>(cfg.num_layers);
  const std::uint64_t k = static_cast<std::uint64_t>(fin.queries);

  const std::uint64_t encoder = layers * (8 * l * d * d + 4 * l * l * d + 4 * l * d * f);

  std::uint64_t qformer = 0;
  if (fin.use_qformer) {
    if (fin.context_queries && cfg.vocab.c() > 0) qformer += 2 * k * d * d;
    qformer += 4 * l * d * d + 4 * k * d * d + 4 * k * l * d + 4 * k * d * f;
  }

  std::uint64_t uni = 0;
  if (fin.use_uni_attn) uni = layers * (4 * d * d + 4 * l * d + 4 * d * f);

  const std::uint64_t din = static_cast<std::uint64_t>(head_input_dim(cfg, fin));
  const std::uint64_t h1 = static_cast<std::uint64_t>(fin.head_hidden);
  const std::uint64_t head = 2 * din * h1 + 2 * h1;

  return CostReport::compose({{"sequence_encoder", encoder, true},
                              {"qformer", qformer, true},
                              {"uni_cross_attn", uni, false},
                              {"head", head, false}},
                             batch);
}

// ---- serving simulator ---------------------------------------------------

struct ServingRequest {
  InteractionSequence sequence;
  std::vector<int> context;
  std::vector<std::vector<int>> candidates;  // B x M ids
};

struct ServeResult {
  std::vector<double> scores;
  std::uint64_t encoder_flops = 0;
  std::uint64_t qformer_flops = 0;
  std::uint64_t uni_flops = 0;
  std::uint64_t head_flops = 0;

  std::uint64_t total() const {
    return encoder_flops + qformer_flops + uni_flops + head_flops;
  }
};

// Encoder and qformer run once; each candidate pays only cross-attention and
// the head over the cached trace.
template <typename F>
ServeResult serve_folded(const CtrModel<F>& m, const ServingRequest& req) {
  if (req.candidates.empty()) throw ContractError("serving request needs at least one candidate");
  Graph<F> g;
  g.recording = false;
  ServeResult res;

  std::uint64_t mark = flops_value();
  EncoderTrace<F> trace = encode(g, m.enc, embed_sequence(g, m.enc, req.sequence, nullptr));
  res.encoder_flops = flops_value() - mark;

  mark = flops_value();
  Tensor<F> folded = folded_features(g, m, trace, req.context);
  res.qformer_flops = flops_value() - mark;

  for (const auto& cand : req.candidates) {
    std::vector<Tensor<F>> parts;
    mark = flops_value();
    if (m.fin.use_uni_attn) parts.push_back(uni_cross_attention(g, m, trace, cand));
    res.uni_flops += flops_value() - mark;

    mark = flops_value();
    parts.push_back(folded);
    parts.push_back(target_embedding(g, m, cand));
    Tensor<F> logit = mlp_head(g, g.concat_cols(parts), m.head_w1, m.head_b1, m.head_w2, m.head_b2);
    res.head_flops += flops_value() - mark;
    res.scores.push_back(sigmoid(static_cast<double>(logit.item())));
  }
  return res;
}

// Comparator: the full stack runs independently for every candidate.
template <typename F>
ServeResult serve_naive(const CtrModel<F>& m, const ServingRequest& req) {
  if (req.candidates.empty()) throw ContractError("serving request needs at least one candidate");
  Graph<F> g;
  g.recording = false;
  ServeResult res;
  for (const auto& cand : req.candidates) {
    std::uint64_t mark = flops_value();
    EncoderTrace<F> trace = encode(g, m.enc, embed_sequence(g, m.enc, req.sequence, nullptr));
    res.encoder_flops += flops_value() - mark;

    mark = flops_value();
    Tensor<F> folded = folded_features(g, m, trace, req.context);
    res.qformer_flops += flops_value() - mark;

    std::vector<Tensor<F>> parts;
    mark = flops_value();
    if (m.fin.use_uni_attn) parts.push_back(uni_cross_attention(g, m, trace, cand));
    res.uni_flops += flops_value() - mark;

    mark = flops_value();
    parts.push_back(folded);
    parts.push_back(target_embedding(g, m, cand));
    Tensor<F> logit = mlp_head(g, g.concat_cols(parts), m.head_w1, m.head_b1, m.head_w2, m.head_b2);
    res.head_flops += flops_value() - mark;
    res.scores.push_back(sigmoid(static_cast<double>(logit.item())));
  }
  return res;
}

// Full-length random request over the configured vocabularies.
inline ServingRequest random_request(const ModelConfig& cfg, int batch, std::uint64_t seed) {
  Rng rng(mix_seed(seed, "request"));
  ServingRequest req;
  req.sequence.user_id = 1;
  auto draw = [&rng](int vocab) {
    return 1 + static_cast<int>(rng.below(static_cast<std::uint32_t>(vocab - 1)));
  };
  for (int i = 0; i < cfg.vocab.max_len; ++i) {
    InteractionEvent ev;
    for (int k = 0; k < cfg.vocab.m(); ++k) ev.item_ids.push_back(draw(cfg.vocab.item_vocab[k]));
    for (int n = 0; n < cfg.vocab.n(); ++n)
      ev.behavior_ids.push_back(draw(cfg.vocab.behavior_vocab[n]));
    req.sequence.events.push_back(std::move(ev));
  }
  for (int c = 0; c < cfg.vocab.c(); ++c) req.context.push_back(draw(cfg.vocab.context_vocab[c]));
  for (int b = 0; b < batch; ++b) {
    std::vector<int> cand;
    for (int k = 0; k < cfg.vocab.m(); ++k) cand.push_back(draw(cfg.vocab.item_vocab[k]));
    req.candidates.push_back(std::move(cand));
  }
  return req;
}

}  // namespace srp4ctr
