#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "srp4ctr/synthetic.hpp"
#include "srp4ctr/train.hpp"

namespace {

using srp4ctr::CtrModel;
using srp4ctr::FinetuneSpec;
using srp4ctr::Graph;
using srp4ctr::ModelConfig;
using srp4ctr::ParameterStore;
using srp4ctr::PretrainSpec;
using srp4ctr::Rng;
using srp4ctr::SyntheticConfig;
using srp4ctr::SyntheticOutput;
using srp4ctr::Tensor;

double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::uint64_t wins = 0, ties = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1) ++pos;
    else ++neg;
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j]) ++wins;
      else if (scores[i] == scores[j]) ++ties;
    }
  }
  const std::uint64_t doubled = 2 * wins + ties;
  return static_cast<double>(doubled) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

TEST(Auc, HandCases) {
  EXPECT_DOUBLE_EQ(srp4ctr::auc({0.1, 0.9}, {0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(srp4ctr::auc({0.9, 0.1}, {0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(srp4ctr::auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(srp4ctr::auc({0.2, 0.8, 0.5}, {0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(srp4ctr::auc({0.3, 0.3, 0.7}, {0, 1, 1}), 0.75);
}

TEST(Auc, MatchesPairwiseOracleExactlyWithTies) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(120));
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool has_pos = false, has_neg = false;
    for (int i = 0; i < n; ++i) {
      scores[i] = 0.05 * static_cast<double>(rng.below(21));  // coarse grid forces ties
      labels[i] = static_cast<int>(rng.below(2));
      (labels[i] ? has_pos : has_neg) = true;
    }
    if (!has_pos) labels[0] = 1;
    if (!has_neg) labels[n - 1] = 0;
    EXPECT_EQ(srp4ctr::auc(scores, labels), pairwise_auc(scores, labels)) << "trial " << trial;
  }
}

TEST(Auc, RejectsDegenerateInputs) {
  EXPECT_THROW(srp4ctr::auc({0.5}, {1, 0}), srp4ctr::ShapeError);
  EXPECT_THROW(srp4ctr::auc({}, {}), srp4ctr::MetricError);
  EXPECT_THROW(srp4ctr::auc({0.1, 0.2}, {1, 1}), srp4ctr::MetricError);
  EXPECT_THROW(srp4ctr::auc({0.1, 0.2}, {0, 0}), srp4ctr::MetricError);
  EXPECT_THROW(srp4ctr::auc({0.1, 0.2}, {0, 2}), srp4ctr::ContractError);
}

TEST(Longtail, BottomFifthByFrequencyFormsTheTail) {
  // ids 1..10; ids 3 and 7 are rarest -> tail = {3, 7} (10 / 5 = 2 items)
  std::vector<std::uint64_t> freq(11, 50);
  freq[0] = 0;
  freq[3] = 1;
  freq[7] = 2;
  std::vector<double> scores = {0.9, 0.2, 0.8, 0.3, 0.7, 0.4, 0.6, 0.5};
  std::vector<int> labels = {1, 0, 1, 0, 1, 0, 1, 0};
  std::vector<int> items = {3, 3, 7, 7, 1, 2, 4, 5};

  srp4ctr::LongtailReport rep = srp4ctr::longtail_report(scores, labels, items, freq);
  EXPECT_EQ(rep.tail_items, (std::vector<int>{3, 7}));
  EXPECT_DOUBLE_EQ(rep.overall, srp4ctr::auc(scores, labels));
  ASSERT_TRUE(rep.tail.has_value());
  EXPECT_DOUBLE_EQ(*rep.tail, srp4ctr::auc({0.9, 0.2, 0.8, 0.3}, {1, 0, 1, 0}));
  ASSERT_TRUE(rep.diff.has_value());
  EXPECT_DOUBLE_EQ(*rep.diff, *rep.tail - rep.overall);
}

TEST(Longtail, FrequencyTiesBreakByItemId) {
  std::vector<std::uint64_t> freq(11, 5);  // all equal -> two smallest ids win
  freq[0] = 0;
  std::vector<double> scores = {0.9, 0.1};
  std::vector<int> labels = {1, 0};
  std::vector<int> items = {1, 2};
  srp4ctr::LongtailReport rep = srp4ctr::longtail_report(scores, labels, items, freq);
  EXPECT_EQ(rep.tail_items, (std::vector<int>{1, 2}));
}

TEST(Longtail, SingleClassTailReportsNoTailAuc) {
  std::vector<std::uint64_t> freq(11, 50);
  freq[0] = 0;
  freq[3] = 1;
  freq[7] = 2;
  std::vector<double> scores = {0.9, 0.8, 0.2, 0.3};
  std::vector<int> labels = {1, 1, 0, 0};
  std::vector<int> items = {3, 7, 1, 2};  // tail examples are all positive
  srp4ctr::LongtailReport rep = srp4ctr::longtail_report(scores, labels, items, freq);
  EXPECT_FALSE(rep.tail.has_value());
  EXPECT_FALSE(rep.diff.has_value());
  EXPECT_DOUBLE_EQ(rep.overall, srp4ctr::auc(scores, labels));
}

TEST(Longtail, RejectsUncoveredIdsAndTinyVocabularies) {
  std::vector<std::uint64_t> freq(11, 5);
  EXPECT_THROW(srp4ctr::longtail_report({0.5, 0.6}, {0, 1}, {1, 11}, freq),
               srp4ctr::ContractError);
  EXPECT_THROW(srp4ctr::longtail_report({0.5, 0.6}, {0, 1}, {1, 0}, freq),
               srp4ctr::ContractError);
  std::vector<std::uint64_t> tiny(4, 5);  // 3 distinct items -> tail would be empty
  EXPECT_THROW(srp4ctr::longtail_report({0.5, 0.6}, {0, 1}, {1, 2}, tiny),
               srp4ctr::ContractError);
  EXPECT_THROW(srp4ctr::longtail_report({0.5}, {0, 1}, {1}, freq), srp4ctr::ShapeError);
}

TEST(MetricLog, TabSeparatedLinesSurviveRoundTrip) {
  srp4ctr::MetricLog log;
  log.add(0, "loss", 0.1 + 0.2);  // a value that needs full precision
  log.add(10, "auc", 0.75);
  const auto lines = log.lines();
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0].substr(0, 7), "0\tloss\t");
  const double parsed = std::stod(lines[0].substr(7));
  EXPECT_EQ(parsed, 0.1 + 0.2);  // precision 17 keeps the exact double

  const std::string path =
      (std::filesystem::temp_directory_path() / "srp4ctr_mlog.tsv").string();
  log.save(path);
  std::ifstream in(path);
  std::string l1, l2;
  std::getline(in, l1);
  std::getline(in, l2);
  EXPECT_EQ(l1, lines[0]);
  EXPECT_EQ(l2, lines[1]);
  std::filesystem::remove(path);
}

TEST(ValidationSplit, DeterministicShareFollowsFraction) {
  int held = 0;
  const int users = 20000;
  for (int u = 1; u <= users; ++u) held += srp4ctr::is_validation_user(u, 0.25, 7) ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(held) / users, 0.25, 0.02);
  for (int u = 1; u <= 100; ++u) {
    EXPECT_FALSE(srp4ctr::is_validation_user(u, 0.0, 7));
    EXPECT_EQ(srp4ctr::is_validation_user(u, 0.25, 7), srp4ctr::is_validation_user(u, 0.25, 7));
  }
  int moved = 0;
  for (int u = 1; u <= 1000; ++u)
    if (srp4ctr::is_validation_user(u, 0.25, 7) != srp4ctr::is_validation_user(u, 0.25, 8))
      ++moved;
  EXPECT_GT(moved, 0);
}

// ---- tiny end-to-end training smokes -------------------------------------

SyntheticConfig tiny_world() {
  SyntheticConfig c;
  c.users = 60;
  c.items = 25;
  c.genres = 4;
  c.max_len = 10;
  c.min_len = 6;
  c.behavior_types = 2;
  c.behavior_levels = 2;
  c.context_buckets = 3;
  c.favorites = 3;
  c.genres_per_user = 2;
  c.repeat_prob = 0.7;
  c.noise = 0.5;
  c.positive_rate = 0.35;
  c.examples_per_user = 4;
  return c;
}

ModelConfig tiny_model(const SyntheticConfig& s) {
  ModelConfig cfg;
  cfg.num_layers = 1;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.ffn_mult = 2;
  cfg.vocab.item_vocab = {s.items + 1, s.genres + 1};
  cfg.vocab.behavior_vocab = {s.behavior_types + 1, s.behavior_levels + 1};
  cfg.vocab.context_vocab = {s.context_buckets + 1};
  cfg.vocab.max_len = s.max_len;
  return cfg;
}

PretrainSpec tiny_pretrain_spec(long steps, std::uint64_t seed) {
  PretrainSpec spec;
  spec.phase.steps = steps;
  spec.phase.batch = 8;
  spec.phase.lr = 0.01;
  spec.phase.lr_end = 0.001;
  spec.phase.power = 1.0;
  spec.phase.eval_every = 10;
  spec.phase.seed = seed;
  return spec;
}

std::string fresh_dir(const std::string& tag) {
  const std::string dir = (std::filesystem::temp_directory_path() / tag).string();
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

TEST(RunPretrain, CurveCheckpointAndDeterminism) {
  const SyntheticConfig world = tiny_world();
  const SyntheticOutput data = srp4ctr::generate_synthetic(world, 5);
  const ModelConfig cfg = tiny_model(world);
  const std::string out = fresh_dir("srp4ctr_rt_pre");

  srp4ctr::PretrainResult a =
      srp4ctr::run_pretrain<float>(cfg, tiny_pretrain_spec(20, 3), data.pretrain, out);
  ASSERT_EQ(a.curve.size(), 3u);  // steps 0, 10, 20
  EXPECT_EQ(a.curve[0].step, 0);
  EXPECT_EQ(a.curve[2].step, 20);
  EXPECT_GT(a.curve[0].item, a.curve[2].item);  // tiny task learns something
  EXPECT_TRUE(std::filesystem::exists(a.checkpoint));
  EXPECT_TRUE(std::filesystem::exists(out + "/metrics.tsv"));

  srp4ctr::PretrainResult b =
      srp4ctr::run_pretrain<float>(cfg, tiny_pretrain_spec(20, 3), data.pretrain, "");
  EXPECT_EQ(a.param_digest, b.param_digest);
  EXPECT_EQ(a.metric_lines, b.metric_lines);

  srp4ctr::PretrainResult c =
      srp4ctr::run_pretrain<float>(cfg, tiny_pretrain_spec(20, 4), data.pretrain, "");
  EXPECT_NE(a.param_digest, c.param_digest);
  std::filesystem::remove_all(out);
}

TEST(RunPretrain, ResumeReproducesUninterruptedRun) {
  const SyntheticConfig world = tiny_world();
  const SyntheticOutput data = srp4ctr::generate_synthetic(world, 5);
  const ModelConfig cfg = tiny_model(world);
  const PretrainSpec spec = tiny_pretrain_spec(20, 3);

  srp4ctr::PretrainResult full =
      srp4ctr::run_pretrain<float>(cfg, spec, data.pretrain, "");

  // replay the first half by hand with the same schedule, save, resume
  ParameterStore<float> store;
  srp4ctr::EncoderModel<float> model =
      srp4ctr::build_encoder(store, cfg, spec.phase.seed, /*with_heads=*/true);
  srp4ctr::Adam<float> opt(srp4ctr::PolynomialDecay{spec.phase.lr, spec.phase.lr_end,
                                                    spec.phase.power, spec.phase.steps});
  for (long step = 0; step < 10; ++step) {
    Graph<float> g;
    srp4ctr::pretrain_step(g, model, spec, data.pretrain, step);
    opt.step(store.trainable());
  }
  const std::string out = fresh_dir("srp4ctr_rt_resume");
  const std::string half = out + "/half.ckpt";
  srp4ctr::detail::save_run_state(half, store, opt);

  srp4ctr::PretrainResult resumed =
      srp4ctr::run_pretrain<float>(cfg, spec, data.pretrain, "", half);
  EXPECT_EQ(resumed.param_digest, full.param_digest);
  std::filesystem::remove_all(out);
}

TEST(RunPretrain, ZeroLearningRateFreezesParameters) {
  const SyntheticConfig world = tiny_world();
  const SyntheticOutput data = srp4ctr::generate_synthetic(world, 5);
  const ModelConfig cfg = tiny_model(world);

  ParameterStore<float> reference;
  srp4ctr::build_encoder(reference, cfg, 3, /*with_heads=*/true);

  PretrainSpec spec = tiny_pretrain_spec(5, 3);
  spec.phase.lr = 0.0;
  spec.phase.lr_end = 0.0;
  srp4ctr::PretrainResult r = srp4ctr::run_pretrain<float>(cfg, spec, data.pretrain, "");
  EXPECT_EQ(r.param_digest, reference.digest());
}

TEST(RunPretrain, EmptyCorpusRejected) {
  const SyntheticConfig world = tiny_world();
  const ModelConfig cfg = tiny_model(world);
  srp4ctr::PretrainCorpus empty;
  EXPECT_THROW(srp4ctr::run_pretrain<float>(cfg, tiny_pretrain_spec(5, 3), empty, ""),
               srp4ctr::ContractError);
}

FinetuneSpec tiny_finetune_spec(long steps, std::uint64_t seed) {
  FinetuneSpec spec;
  spec.phase.steps = steps;
  spec.phase.batch = 8;
  spec.phase.lr = 0.005;
  spec.phase.lr_end = 0.001;
  spec.phase.power = 1.0;
  spec.phase.eval_every = 10;
  spec.phase.seed = seed;
  spec.val_fraction = 0.2;
  spec.model.queries = 2;
  spec.model.head_hidden = 8;
  return spec;
}

TEST(RunFinetune, ScratchRunProducesCurveAndCheckpoints) {
  const SyntheticConfig world = tiny_world();
  const SyntheticOutput data = srp4ctr::generate_synthetic(world, 5);
  const ModelConfig cfg = tiny_model(world);
  FinetuneSpec spec = tiny_finetune_spec(20, 3);
  spec.model.from_scratch = true;
  const std::string out = fresh_dir("srp4ctr_rt_fin");

  srp4ctr::FinetuneResult r =
      srp4ctr::run_finetune<float>(cfg, spec, data.finetune, "", out);
  ASSERT_EQ(r.auc_curve.size(), 2u);  // steps 10 and 20
  EXPECT_GE(r.best_auc, 0.0);
  EXPECT_LE(r.best_auc, 1.0);
  EXPECT_GE(r.best_auc, r.final_auc - 1e-12);
  EXPECT_TRUE(std::filesystem::exists(r.best_checkpoint));
  EXPECT_TRUE(std::filesystem::exists(r.final_checkpoint));
  EXPECT_TRUE(std::filesystem::exists(out + "/metrics.tsv"));

  srp4ctr::FinetuneResult again =
      srp4ctr::run_finetune<float>(cfg, spec, data.finetune, "", "");
  EXPECT_EQ(r.param_digest, again.param_digest);
  EXPECT_EQ(r.best_auc, again.best_auc);
  std::filesystem::remove_all(out);
}

TEST(RunFinetune, FrozenEncoderKeepsEncoderBytes) {
  const SyntheticConfig world = tiny_world();
  const SyntheticOutput data = srp4ctr::generate_synthetic(world, 5);
  const ModelConfig cfg = tiny_model(world);
  FinetuneSpec spec = tiny_finetune_spec(10, 3);
  spec.model.from_scratch = true;
  spec.model.freeze_encoder = true;
  const std::string out = fresh_dir("srp4ctr_rt_frozen");

  ParameterStore<float> probe;
  srp4ctr::build_ctr_model(probe, cfg, spec.model, spec.phase.seed);
  const std::uint64_t enc_before = srp4ctr::encoder_digest(probe);
  const std::uint64_t all_before = probe.digest();

  srp4ctr::FinetuneResult r =
      srp4ctr::run_finetune<float>(cfg, spec, data.finetune, "", out);

  srp4ctr::load_checkpoint(r.final_checkpoint, probe, /*strict=*/false);
  EXPECT_EQ(srp4ctr::encoder_digest(probe), enc_before);
  EXPECT_NE(probe.digest(), all_before);  // the head did move
  std::filesystem::remove_all(out);
}

TEST(RunFinetune, MissingValidationClassesRejected) {
  const SyntheticConfig world = tiny_world();
  const SyntheticOutput data = srp4ctr::generate_synthetic(world, 5);
  const ModelConfig cfg = tiny_model(world);
  srp4ctr::FinetuneCorpus one_class;
  for (const auto& ex : data.finetune.examples)
    if (ex.label == 1) one_class.examples.push_back(ex);
  FinetuneSpec spec = tiny_finetune_spec(5, 3);
  spec.model.from_scratch = true;
  EXPECT_THROW(srp4ctr::run_finetune<float>(cfg, spec, one_class, "", ""),
               srp4ctr::MetricError);
}

TEST(ScoreExamples, MatchesSingleForwardProbabilities) {
  const SyntheticConfig world = tiny_world();
  const SyntheticOutput data = srp4ctr::generate_synthetic(world, 5);
  const ModelConfig cfg = tiny_model(world);
  FinetuneSpec spec = tiny_finetune_spec(5, 3);

  ParameterStore<float> store;
  CtrModel<float> model = srp4ctr::build_ctr_model(store, cfg, spec.model, 11);
  const std::vector<std::size_t> idx = {0, 3, 7};
  const std::vector<double> scores = srp4ctr::score_examples(model, data.finetune, idx);
  ASSERT_EQ(scores.size(), 3u);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    Graph<float> g;
    g.recording = false;
    EXPECT_EQ(scores[k], srp4ctr::ctr_forward(g, model, data.finetune.examples[idx[k]]).prob);
  }
}

TEST(EncoderDigest, TracksOnlyEncoderAndEmbeddingPrefixes) {
  const SyntheticConfig world = tiny_world();
  const ModelConfig cfg = tiny_model(world);
  FinetuneSpec spec = tiny_finetune_spec(5, 3);
  ParameterStore<float> store;
  CtrModel<float> model = srp4ctr::build_ctr_model(store, cfg, spec.model, 11);

  const std::uint64_t d0 = srp4ctr::encoder_digest(store);
  model.head_w1.at(0, 0) += 1.0f;
  EXPECT_EQ(srp4ctr::encoder_digest(store), d0);
  model.enc.item_tables[0].at(1, 0) += 1.0f;
  EXPECT_NE(srp4ctr::encoder_digest(store), d0);
}

}  // namespace
