#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "srp4ctr/costmodel.hpp"

namespace {

using srp4ctr::CostReport;
using srp4ctr::CtrModel;
using srp4ctr::FinetuneConfig;
using srp4ctr::ModelConfig;
using srp4ctr::ParameterStore;
using srp4ctr::ServeResult;
using srp4ctr::ServingRequest;
using srp4ctr::StageCost;

ModelConfig serving_config(int layers, int d, int heads, int max_len, bool with_context) {
  ModelConfig cfg;
  cfg.num_layers = layers;
  cfg.d_model = d;
  cfg.num_heads = heads;
  cfg.ffn_mult = 2;
  cfg.vocab.item_vocab = {11, 6};
  cfg.vocab.behavior_vocab = {4, 3};
  cfg.vocab.context_vocab = with_context ? std::vector<int>{5} : std::vector<int>{};
  cfg.vocab.max_len = max_len;
  return cfg;
}

FinetuneConfig serving_fin(bool uni, bool qf, int queries = 3) {
  FinetuneConfig fin;
  fin.use_uni_attn = uni;
  fin.use_qformer = qf;
  fin.queries = queries;
  fin.head_hidden = 7;
  return fin;
}

TEST(CostReport, ComposeSplitsFoldableAndPerCandidateStages) {
  CostReport r = CostReport::compose({{"once", 100, true}, {"each", 40, false}}, 5);
  EXPECT_EQ(r.efficiency_flops, 140u);
  EXPECT_EQ(r.inference_flops, 100u + 5u * 40u);
  EXPECT_NEAR(r.ratio(), 300.0 / 140.0, 1e-15);
  EXPECT_THROW(CostReport::compose({{"a", 1, true}}, 0), srp4ctr::ContractError);
}

TEST(CostReport, RatioUndefinedWithoutWork) {
  CostReport r = CostReport::compose({{"a", 0, true}}, 2);
  EXPECT_THROW(r.ratio(), srp4ctr::ContractError);
}

TEST(CostReport, TablesCarryEveryStageAndTheRatio) {
  CostReport r = CostReport::compose({{"alpha", 10, true}, {"beta", 4, false}}, 3);
  const std::string table = r.to_table();
  EXPECT_NE(table.find("alpha"), std::string::npos);
  EXPECT_NE(table.find("beta"), std::string::npos);
  EXPECT_NE(table.find("ratio"), std::string::npos);
  EXPECT_NE(table.find("1.57"), std::string::npos);  // 22/14
  EXPECT_NE(table.find("(batch 3)"), std::string::npos);
  EXPECT_EQ(r.to_machine(), "alpha\t10\t1\nbeta\t4\t0\n");
}

TEST(MetricRatio, ReproducesPublishedCostQuotients) {
  EXPECT_EQ(std::llround(srp4ctr::metric_ratio(26.88, 64.56) * 100), 240);
  EXPECT_EQ(std::llround(srp4ctr::metric_ratio(8.96, 51.22) * 100), 572);
  EXPECT_THROW(srp4ctr::metric_ratio(0.0, 1.0), srp4ctr::ContractError);
  EXPECT_THROW(srp4ctr::metric_ratio(-2.0, 1.0), srp4ctr::ContractError);
}

TEST(CountFlops, MatchesInstrumentedServingExactly) {
  struct Case {
    int layers, d, heads, max_len, batch;
    bool ctx, uni, qf;
  };
  const std::vector<Case> cases = {
      {1, 4, 1, 6, 3, true, true, true},   {2, 8, 2, 10, 4, true, true, true},
      {2, 8, 4, 7, 2, false, true, true},  {3, 6, 1, 9, 5, true, false, true},
      {1, 8, 2, 8, 3, true, true, false},  {2, 4, 2, 6, 1, false, false, false},
      {0, 4, 1, 5, 2, true, true, true},
  };
  for (const auto& c : cases) {
    const ModelConfig cfg = serving_config(c.layers, c.d, c.heads, c.max_len, c.ctx);
    const FinetuneConfig fin = serving_fin(c.uni, c.qf);
    CostReport want = srp4ctr::count_flops(cfg, fin, c.batch);

    ParameterStore<float> store;
    CtrModel<float> m = srp4ctr::build_ctr_model(store, cfg, fin, 17);
    ServingRequest req = srp4ctr::random_request(cfg, c.batch, 23);
    ServeResult got = srp4ctr::serve_folded(m, req);

    ASSERT_EQ(want.stages.size(), 4u);
    EXPECT_EQ(got.encoder_flops, want.stages[0].flops) << "encoder";
    EXPECT_EQ(got.qformer_flops, want.stages[1].flops) << "qformer";
    EXPECT_EQ(got.uni_flops, want.stages[2].flops * c.batch) << "uni";
    EXPECT_EQ(got.head_flops, want.stages[3].flops * c.batch) << "head";
    EXPECT_EQ(got.total(), want.inference_flops);

    ServingRequest single = srp4ctr::random_request(cfg, 1, 29);
    EXPECT_EQ(srp4ctr::serve_folded(m, single).total(), want.efficiency_flops);
  }
}

TEST(CountFlops, NaivePathPaysTheFullStackPerCandidate) {
  const ModelConfig cfg = serving_config(2, 8, 2, 9, true);
  const FinetuneConfig fin = serving_fin(true, true);
  ParameterStore<float> store;
  CtrModel<float> m = srp4ctr::build_ctr_model(store, cfg, fin, 3);

  const int batch = 6;
  ServingRequest req = srp4ctr::random_request(cfg, batch, 5);
  ServeResult folded = srp4ctr::serve_folded(m, req);
  ServeResult naive = srp4ctr::serve_naive(m, req);

  EXPECT_EQ(naive.encoder_flops, folded.encoder_flops * batch);
  EXPECT_EQ(naive.qformer_flops, folded.qformer_flops * batch);
  EXPECT_EQ(naive.uni_flops, folded.uni_flops);
  EXPECT_EQ(naive.head_flops, folded.head_flops);

  CostReport report = srp4ctr::count_flops(cfg, fin, batch);
  EXPECT_EQ(naive.total(), report.efficiency_flops * batch);
  EXPECT_EQ(folded.total(), report.inference_flops);
}

TEST(CountFlops, SingleCandidateCollapsesTheGap) {
  const ModelConfig cfg = serving_config(1, 8, 2, 7, true);
  const FinetuneConfig fin = serving_fin(true, true);
  CostReport r = srp4ctr::count_flops(cfg, fin, 1);
  EXPECT_EQ(r.inference_flops, r.efficiency_flops);
  EXPECT_NEAR(r.ratio(), 1.0, 1e-15);
}

TEST(CountFlops, FoldedShareOfNaiveShrinksWithBatch) {
  const ModelConfig cfg = serving_config(2, 8, 2, 10, true);
  const FinetuneConfig fin = serving_fin(true, true);
  double prev = 2.0;
  for (int b : {1, 2, 5, 10, 50, 100}) {
    CostReport r = srp4ctr::count_flops(cfg, fin, b);
    const double naive_total = static_cast<double>(r.efficiency_flops) * b;
    const double share = static_cast<double>(r.inference_flops) / naive_total;
    EXPECT_LT(share, prev) << "batch " << b;
    prev = share;
  }
  EXPECT_LT(prev, 0.55);  // at batch 100 nearly everything is amortized away
}

TEST(Serving, FoldedAndNaiveScoresAgree) {
  const ModelConfig cfg = serving_config(2, 8, 2, 10, true);
  const FinetuneConfig fin = serving_fin(true, true);
  ParameterStore<float> store;
  CtrModel<float> m = srp4ctr::build_ctr_model(store, cfg, fin, 31);

  ServingRequest req = srp4ctr::random_request(cfg, 20, 37);
  ServeResult folded = srp4ctr::serve_folded(m, req);
  ServeResult naive = srp4ctr::serve_naive(m, req);
  ASSERT_EQ(folded.scores.size(), 20u);
  ASSERT_EQ(naive.scores.size(), 20u);
  double dev = 0;
  for (int i = 0; i < 20; ++i) dev = std::max(dev, std::abs(folded.scores[i] - naive.scores[i]));
  EXPECT_LE(dev, 1e-5);
  for (double s : folded.scores) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
}

TEST(Serving, EmptyCandidateListRejected) {
  const ModelConfig cfg = serving_config(1, 4, 1, 5, true);
  ParameterStore<float> store;
  CtrModel<float> m = srp4ctr::build_ctr_model(store, cfg, serving_fin(true, true), 2);
  ServingRequest req = srp4ctr::random_request(cfg, 1, 3);
  req.candidates.clear();
  EXPECT_THROW(srp4ctr::serve_folded(m, req), srp4ctr::ContractError);
  EXPECT_THROW(srp4ctr::serve_naive(m, req), srp4ctr::ContractError);
}

TEST(RandomRequest, ShapesAndRangesFollowTheConfig) {
  const ModelConfig cfg = serving_config(1, 4, 1, 7, true);
  ServingRequest req = srp4ctr::random_request(cfg, 9, 11);
  EXPECT_EQ(req.sequence.true_length(), 7);
  EXPECT_EQ(req.candidates.size(), 9u);
  EXPECT_EQ(req.context.size(), 1u);
  for (const auto& ev : req.sequence.events) {
    ASSERT_EQ(ev.item_ids.size(), 2u);
    ASSERT_EQ(ev.behavior_ids.size(), 2u);
    EXPECT_GE(ev.item_ids[0], 1);
    EXPECT_LT(ev.item_ids[0], 11);
    EXPECT_GE(ev.item_ids[1], 1);
    EXPECT_LT(ev.item_ids[1], 6);
    EXPECT_GE(ev.behavior_ids[0], 1);
    EXPECT_LT(ev.behavior_ids[0], 4);
  }
  for (const auto& cand : req.candidates) {
    ASSERT_EQ(cand.size(), 2u);
    EXPECT_GE(cand[0], 1);
    EXPECT_LT(cand[0], 11);
  }
  EXPECT_GE(req.context[0], 1);
  EXPECT_LT(req.context[0], 5);

  ServingRequest again = srp4ctr::random_request(cfg, 9, 11);
  EXPECT_EQ(req.sequence.events[0].item_ids, again.sequence.events[0].item_ids);
  EXPECT_EQ(req.candidates, again.candidates);
}

}  // namespace
