#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "srp4ctr/cli.hpp"

namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = srp4ctr::dispatch(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> tiny_sets() {
  return {
      "--set", "data.users=40",          "--set", "data.items=25",
      "--set", "data.genres=4",          "--set", "data.max_len=10",
      "--set", "gen.min_len=6",          "--set", "data.behavior_types=2",
      "--set", "data.behavior_levels=2", "--set", "data.context_buckets=3",
      "--set", "model.layers=1",         "--set", "model.dim=8",
      "--set", "model.heads=2",          "--set", "model.ffn_mult=2",
      "--set", "pretrain.steps=6",       "--set", "pretrain.batch=8",
      "--set", "pretrain.eval_every=3",  "--set", "finetune.steps=6",
      "--set", "finetune.batch=8",       "--set", "finetune.eval_every=3",
      "--set", "finetune.queries=2",     "--set", "finetune.head_hidden=8",
  };
}

std::vector<std::string> with_tiny(std::vector<std::string> head,
                                   std::vector<std::string> tail = {}) {
  std::vector<std::string> args = std::move(head);
  const auto sets = tiny_sets();
  args.insert(args.end(), sets.begin(), sets.end());
  args.insert(args.end(), tail.begin(), tail.end());
  return args;
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto tab = line.find('\t');
    if (tab != std::string::npos) kv[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return kv;
}

std::string fresh_dir(const std::string& tag) {
  const std::string dir = (fs::temp_directory_path() / tag).string();
  fs::remove_all(dir);
  return dir;
}

srp4ctr::LabConfig tiny_config() {
  srp4ctr::LabConfig cfg;
  const auto sets = tiny_sets();
  for (std::size_t i = 0; i + 1 < sets.size(); i += 2)
    if (sets[i] == "--set") cfg.apply_override(sets[i + 1]);
  return cfg;
}

TEST(Help, ListsEveryConfigKeyWithItsDefault) {
  const CliResult r = run_cli({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const auto& s : srp4ctr::config_schema()) {
    std::ostringstream expect;
    expect << "  " << std::left << std::setw(34) << s.key << " default " << std::setw(8)
           << s.def;
    EXPECT_NE(r.out.find(expect.str()), std::string::npos) << "missing key " << s.key;
  }
  for (const char* sub : {"gen-data", "pretrain", "finetune", "eval", "flops", "serve-sim"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(Dispatch, RejectsMissingCommandAndBadFlags) {
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"gen-data", "--bogus"}).code, 1);
  EXPECT_EQ(run_cli({"no-such-command"}).code, 1);
  const CliResult r = run_cli({"gen-data", "--set", "no.such.key=1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  EXPECT_EQ(run_cli({"gen-data", "--set", "pretrain.steps=abc"}).code, 1);
  EXPECT_EQ(run_cli({"pretrain"}).code, 1);  // --data is required
}

TEST(GenData, DeterministicCorporaThatRoundTrip) {
  const std::string d1 = fresh_dir("srp4ctr_cli_gen1");
  const std::string d2 = fresh_dir("srp4ctr_cli_gen2");
  const CliResult a = run_cli(with_tiny({"gen-data"}, {"--out", d1}));
  const CliResult b = run_cli(with_tiny({"gen-data"}, {"--out", d2}));
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_TRUE(fs::exists(d1 + "/pretrain.tsv"));
  EXPECT_TRUE(fs::exists(d1 + "/finetune.tsv"));
  EXPECT_TRUE(fs::exists(d1 + "/config"));

  const auto kv = parse_kv(a.out);
  ASSERT_TRUE(kv.count("pretrain_digest"));
  const srp4ctr::ModelConfig mcfg = srp4ctr::model_from(tiny_config());
  const srp4ctr::PretrainCorpus pre = srp4ctr::load_pretrain(d1 + "/pretrain.tsv", mcfg.vocab);
  const srp4ctr::FinetuneCorpus fin = srp4ctr::load_finetune(d1 + "/finetune.tsv", mcfg.vocab);
  std::ostringstream hex1, hex2;
  hex1 << std::hex << std::setfill('0') << std::setw(16) << srp4ctr::corpus_digest(pre);
  hex2 << std::hex << std::setfill('0') << std::setw(16) << srp4ctr::corpus_digest(fin);
  EXPECT_EQ(kv.at("pretrain_digest"), hex1.str());
  EXPECT_EQ(kv.at("finetune_digest"), hex2.str());

  const CliResult c = run_cli(with_tiny({"gen-data"}, {"--out", d1, "--seed", "7"}));
  ASSERT_EQ(c.code, 0);
  EXPECT_NE(parse_kv(c.out).at("pretrain_digest"), kv.at("pretrain_digest"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

struct Pipeline {
  std::string data_dir, pre_dir, fin_dir;
  std::map<std::string, std::string> pre_kv, fin_kv;
};

Pipeline run_tiny_pipeline(const std::string& tag) {
  Pipeline p;
  p.data_dir = fresh_dir(tag + "_data");
  p.pre_dir = fresh_dir(tag + "_pre");
  p.fin_dir = fresh_dir(tag + "_fin");
  EXPECT_EQ(run_cli(with_tiny({"gen-data"}, {"--out", p.data_dir})).code, 0);
  const CliResult pr = run_cli(with_tiny(
      {"pretrain", "--data", p.data_dir + "/pretrain.tsv"}, {"--out", p.pre_dir}));
  EXPECT_EQ(pr.code, 0) << pr.err;
  p.pre_kv = parse_kv(pr.out);
  const CliResult fr = run_cli(with_tiny(
      {"finetune", "--data", p.data_dir + "/finetune.tsv", "--init",
       p.pre_kv.at("checkpoint")},
      {"--out", p.fin_dir}));
  EXPECT_EQ(fr.code, 0) << fr.err;
  p.fin_kv = parse_kv(fr.out);
  return p;
}

TEST(Pipeline, PretrainFinetuneEvalFitTogether) {
  Pipeline p = run_tiny_pipeline("srp4ctr_cli_pipe");
  EXPECT_TRUE(fs::exists(p.pre_dir + "/metrics.tsv"));
  EXPECT_TRUE(fs::exists(p.pre_dir + "/checkpoints/final.ckpt"));
  EXPECT_TRUE(fs::exists(p.pre_dir + "/config"));
  ASSERT_TRUE(p.pre_kv.count("final_item_loss"));
  EXPECT_GT(std::stod(p.pre_kv.at("final_item_loss")), 0.0);

  ASSERT_TRUE(p.fin_kv.count("best_val_auc"));
  const double best = std::stod(p.fin_kv.at("best_val_auc"));
  EXPECT_GE(best, 0.0);
  EXPECT_LE(best, 1.0);
  EXPECT_TRUE(fs::exists(p.fin_kv.at("best_checkpoint")));
  EXPECT_TRUE(fs::exists(p.fin_kv.at("final_checkpoint")));

  const CliResult ev = run_cli(with_tiny(
      {"eval", "--data", p.data_dir + "/finetune.tsv", "--checkpoint",
       p.fin_kv.at("best_checkpoint")},
      {"--freq-data", p.data_dir + "/pretrain.tsv"}));
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto ekv = parse_kv(ev.out);
  ASSERT_TRUE(ekv.count("auc"));
  const double a = std::stod(ekv.at("auc"));
  EXPECT_GE(a, 0.0);
  EXPECT_LE(a, 1.0);
  EXPECT_TRUE(ekv.count("overall_auc"));
  EXPECT_TRUE(ekv.count("tail_auc"));

  fs::remove_all(p.data_dir);
  fs::remove_all(p.pre_dir);
  fs::remove_all(p.fin_dir);
}

TEST(Pipeline, RerunsOverwriteTheSameOutputDirectory) {
  const std::string data = fresh_dir("srp4ctr_cli_idem_data");
  const std::string out = fresh_dir("srp4ctr_cli_idem_pre");
  ASSERT_EQ(run_cli(with_tiny({"gen-data"}, {"--out", data})).code, 0);
  const CliResult a = run_cli(
      with_tiny({"pretrain", "--data", data + "/pretrain.tsv"}, {"--out", out}));
  const CliResult b = run_cli(
      with_tiny({"pretrain", "--data", data + "/pretrain.tsv"}, {"--out", out}));
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(a.out, b.out);  // same digests, same files, no stale leftovers
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST(Pipeline, ResumingAFinishedRunIsSafe) {
  const std::string data = fresh_dir("srp4ctr_cli_res_data");
  const std::string out = fresh_dir("srp4ctr_cli_res_pre");
  ASSERT_EQ(run_cli(with_tiny({"gen-data"}, {"--out", data})).code, 0);
  const CliResult a = run_cli(
      with_tiny({"pretrain", "--data", data + "/pretrain.tsv"}, {"--out", out}));
  ASSERT_EQ(a.code, 0);
  const std::string ckpt = parse_kv(a.out).at("checkpoint");
  const CliResult b = run_cli(with_tiny(
      {"pretrain", "--data", data + "/pretrain.tsv", "--resume", ckpt}, {"--out", out}));
  EXPECT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(parse_kv(b.out).at("param_digest"), parse_kv(a.out).at("param_digest"));
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST(Finetune, RequiresInitUnlessScratch) {
  const std::string data = fresh_dir("srp4ctr_cli_init_data");
  ASSERT_EQ(run_cli(with_tiny({"gen-data"}, {"--out", data})).code, 0);
  const CliResult r = run_cli(
      with_tiny({"finetune", "--data", data + "/finetune.tsv"}, {"--out", ""}));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("fine-tuning needs --init <checkpoint> unless "
                       "finetune.from_scratch=true"),
            std::string::npos);
  const CliResult ok = run_cli(with_tiny(
      {"finetune", "--data", data + "/finetune.tsv", "--set",
       "finetune.from_scratch=true"},
      {"--out", ""}));
  EXPECT_EQ(ok.code, 0) << ok.err;
  fs::remove_all(data);
}

TEST(Flops, ReportMatchesTheCostModel) {
  const CliResult r = run_cli(with_tiny({"flops"}, {"--batch", "5", "--out", ""}));
  ASSERT_EQ(r.code, 0) << r.err;
  const srp4ctr::LabConfig cfg = tiny_config();
  const srp4ctr::CostReport expect = srp4ctr::count_flops(
      srp4ctr::model_from(cfg), srp4ctr::finetune_model_from(cfg), 5);
  EXPECT_NE(r.out.find("(batch 5)"), std::string::npos);
  EXPECT_NE(r.out.find(expect.to_machine()), std::string::npos);
}

TEST(ServeSim, FoldedAndNaiveAgreeOnScores) {
  const CliResult r = run_cli(
      with_tiny({"serve-sim", "--mode", "both"}, {"--batch", "7", "--out", ""}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto kv = parse_kv(r.out);
  ASSERT_TRUE(kv.count("max_deviation"));
  EXPECT_LE(std::stod(kv.at("max_deviation")), 1e-5);
  EXPECT_NE(r.out.find("folded\tsequence_encoder"), std::string::npos);
  EXPECT_NE(r.out.find("naive\ttotal"), std::string::npos);

  const CliResult folded = run_cli(
      with_tiny({"serve-sim", "--mode", "folded"}, {"--batch", "3", "--out", ""}));
  ASSERT_EQ(folded.code, 0);
  EXPECT_EQ(folded.out.find("max_deviation"), std::string::npos);
  EXPECT_EQ(run_cli({"serve-sim", "--mode", "sideways"}).code, 1);
}

TEST(Config, FileThenOverridesThenSeedFlag) {
  const std::string dir = fresh_dir("srp4ctr_cli_cfg");
  fs::create_directories(dir);
  const std::string cfg_path = dir + "/lab.cfg";
  {
    std::ofstream os(cfg_path);
    os << "# comment line\n";
    os << "pretrain.steps = 9\n";
    os << "seed = 5\n";
  }
  const std::string out = dir + "/out";
  const CliResult r = run_cli({"gen-data", "--config", cfg_path, "--set",
                               "pretrain.batch=3", "--set", "data.users=10", "--set",
                               "data.max_len=8", "--set", "gen.min_len=5", "--seed",
                               "11", "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(out + "/config");
  std::stringstream echo;
  echo << in.rdbuf();
  EXPECT_NE(echo.str().find("pretrain.steps = 9"), std::string::npos);
  EXPECT_NE(echo.str().find("pretrain.batch = 3"), std::string::npos);
  EXPECT_NE(echo.str().find("seed = 11"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Eval, RejectsMissingCheckpoint) {
  const std::string data = fresh_dir("srp4ctr_cli_ev_data");
  ASSERT_EQ(run_cli(with_tiny({"gen-data"}, {"--out", data})).code, 0);
  const CliResult r = run_cli(with_tiny(
      {"eval", "--data", data + "/finetune.tsv", "--checkpoint", data + "/missing.ckpt"},
      {"--out", ""}));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  fs::remove_all(data);
}

}  // namespace
