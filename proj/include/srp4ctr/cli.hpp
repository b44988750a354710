#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "srp4ctr/common.hpp"
#include "srp4ctr/config.hpp"
#include "srp4ctr/costmodel.hpp"
#include "srp4ctr/data.hpp"
#include "srp4ctr/synthetic.hpp"
#include "srp4ctr/train.hpp"

namespace srp4ctr {

namespace cli_detail {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  long seed = -1;
  std::string out_dir;
};

inline void add_common(CLI::App* cmd, CommonOpts& o, const std::string& default_out) {
  o.out_dir = default_out;
  cmd->add_option("--config", o.config_path, "configuration file (key = value lines)");
  cmd->add_option("--set", o.overrides, "override a config key, key=value (repeatable)");
  cmd->add_option("--seed", o.seed, "override the master seed");
  cmd->add_option("--out", o.out_dir, "output directory")->capture_default_str();
}

inline LabConfig build_config(const CommonOpts& o) {
  LabConfig cfg;
  if (!o.config_path.empty()) cfg.load_file(o.config_path);
  for (const auto& kv : o.overrides) cfg.apply_override(kv);
  if (o.seed >= 0) cfg.set("seed", std::to_string(o.seed));
  return cfg;
}

inline void write_config_echo(const LabConfig& cfg, const std::string& out_dir) {
  if (out_dir.empty()) return;  // --out "" keeps the run in memory only
  std::filesystem::create_directories(out_dir);
  std::ofstream os(out_dir + "/config", std::ios::trunc);
  if (!os) throw IoError("cannot write config echo under " + out_dir);
  cfg.dump(os);
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(16) << v;
  return os.str();
}

inline std::string config_key_listing() {
  std::ostringstream os;
  os << "Config keys (file < --set < flags):\n";
  for (const auto& s : config_schema())
    os << "  " << std::left << std::setw(34) << s.key << " default " << std::setw(8)
       << s.def << " " << s.desc << "\n";
  return os.str();
}

inline int run_gen_data(const CommonOpts& o, std::ostream& out) {
  if (o.out_dir.empty()) throw ConfigError("gen-data needs a non-empty --out");
  LabConfig cfg = build_config(o);
  const SyntheticConfig scfg = synthetic_from(cfg);
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  const SyntheticOutput data = generate_synthetic(scfg, seed);
  std::filesystem::create_directories(o.out_dir);
  save_pretrain(data.pretrain, o.out_dir + "/pretrain.tsv");
  save_finetune(data.finetune, o.out_dir + "/finetune.tsv");
  write_config_echo(cfg, o.out_dir);

  std::size_t positives = 0;
  for (const auto& ex : data.finetune.examples) positives += ex.label;
  out << "pretrain_sequences\t" << data.pretrain.sequences.size() << "\n";
  out << "finetune_examples\t" << data.finetune.examples.size() << "\n";
  out << "positive_rate\t" << std::setprecision(6)
      << static_cast<double>(positives) / data.finetune.examples.size() << "\n";
  out << "pretrain_digest\t" << hex64(corpus_digest(data.pretrain)) << "\n";
  out << "finetune_digest\t" << hex64(corpus_digest(data.finetune)) << "\n";
  return 0;
}

inline int run_pretrain_cmd(const CommonOpts& o, const std::string& data_path,
                            const std::string& resume, std::ostream& out) {
  LabConfig cfg = build_config(o);
  const ModelConfig mcfg = model_from(cfg);
  const PretrainSpec spec = pretrain_from(cfg);
  const PretrainCorpus corpus = load_pretrain(data_path, mcfg.vocab);
  write_config_echo(cfg, o.out_dir);
  const PretrainResult res = run_pretrain<float>(mcfg, spec, corpus, o.out_dir, resume);
  const LossPoint& last = res.curve.back();
  out << "final_item_loss\t" << std::setprecision(9) << last.item << "\n";
  out << "final_behavior_loss\t" << last.behavior << "\n";
  out << "final_total_loss\t" << last.total << "\n";
  out << "checkpoint\t" << res.checkpoint << "\n";
  out << "param_digest\t" << hex64(res.param_digest) << "\n";
  return 0;
}

inline int run_finetune_cmd(const CommonOpts& o, const std::string& data_path,
                            const std::string& init_ckpt, const std::string& resume,
                            std::ostream& out) {
  LabConfig cfg = build_config(o);
  const ModelConfig mcfg = model_from(cfg);
  const FinetuneSpec spec = finetune_from(cfg);
  if (!spec.model.from_scratch && init_ckpt.empty() && resume.empty())
    throw ConfigError("fine-tuning needs --init <checkpoint> unless finetune.from_scratch=true");
  const FinetuneCorpus corpus = load_finetune(data_path, mcfg.vocab);
  write_config_echo(cfg, o.out_dir);
  const FinetuneResult res =
      run_finetune<float>(mcfg, spec, corpus, init_ckpt, o.out_dir, resume);
  out << "best_val_auc\t" << std::setprecision(9) << res.best_auc << "\n";
  out << "best_step\t" << res.best_step << "\n";
  out << "final_val_auc\t" << res.final_auc << "\n";
  out << "best_checkpoint\t" << res.best_checkpoint << "\n";
  out << "final_checkpoint\t" << res.final_checkpoint << "\n";
  out << "param_digest\t" << hex64(res.param_digest) << "\n";
  return 0;
}

inline int run_eval(const CommonOpts& o, const std::string& data_path,
                    const std::string& ckpt, const std::string& freq_data,
                    std::ostream& out) {
  LabConfig cfg = build_config(o);
  const ModelConfig mcfg = model_from(cfg);
  const FinetuneConfig fin = finetune_model_from(cfg);
  const FinetuneCorpus corpus = load_finetune(data_path, mcfg.vocab);
  if (corpus.examples.empty()) throw ContractError("evaluation dataset is empty");

  ParameterStore<float> store;
  CtrModel<float> model =
      build_ctr_model(store, mcfg, fin, static_cast<std::uint64_t>(cfg.get_int("seed")));
  load_checkpoint(ckpt, store, /*strict=*/false);

  std::vector<std::size_t> all(corpus.examples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const std::vector<double> scores = score_examples(model, corpus, all);
  std::vector<int> labels, items;
  for (const auto& ex : corpus.examples) {
    labels.push_back(ex.label);
    items.push_back(ex.target_item[0]);
  }
  out << "auc\t" << std::setprecision(9) << auc(scores, labels) << "\n";
  if (!freq_data.empty()) {
    const PretrainCorpus events = load_pretrain(freq_data, mcfg.vocab);
    const auto freq =
        item_frequencies(events, static_cast<int>(cfg.get_int("data.items")));
    const LongtailReport rep = longtail_report(scores, labels, items, freq);
    out << "overall_auc\t" << rep.overall << "\n";
    if (rep.tail) {
      out << "tail_auc\t" << *rep.tail << "\n";
      out << "tail_diff\t" << *rep.diff << "\n";
    } else {
      out << "tail_auc\tundefined\n";
    }
  }
  return 0;
}

inline int run_flops(const CommonOpts& o, long batch_override, std::ostream& out) {
  LabConfig cfg = build_config(o);
  if (batch_override > 0) cfg.set("serve.batch", std::to_string(batch_override));
  const ModelConfig mcfg = model_from(cfg);
  const FinetuneConfig fin = finetune_model_from(cfg);
  const int batch = static_cast<int>(cfg.get_int("serve.batch"));
  const CostReport report = count_flops(mcfg, fin, batch);
  out << report.to_table();
  out << report.to_machine();
  return 0;
}

inline int run_serve_sim(const CommonOpts& o, const std::string& mode,
                         const std::string& ckpt, long batch_override,
                         std::ostream& out, std::ostream& err) {
  if (mode != "folded" && mode != "naive" && mode != "both")
    throw ConfigError("serve-sim --mode must be folded, naive, or both");
  LabConfig cfg = build_config(o);
  if (batch_override > 0) cfg.set("serve.batch", std::to_string(batch_override));
  const ModelConfig mcfg = model_from(cfg);
  const FinetuneConfig fin = finetune_model_from(cfg);
  const int batch = static_cast<int>(cfg.get_int("serve.batch"));
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed"));

  ParameterStore<float> store;
  CtrModel<float> model = build_ctr_model(store, mcfg, fin, seed);
  if (!ckpt.empty()) load_checkpoint(ckpt, store, /*strict=*/false);
  const ServingRequest req = random_request(mcfg, batch, mix_seed(seed, "serve"));
  const CostReport predicted = count_flops(mcfg, fin, batch);
  out << predicted.to_table();

  auto emit = [&out](const char* tag, const ServeResult& r) {
    out << tag << "\tsequence_encoder\t" << r.encoder_flops << "\n";
    out << tag << "\tqformer\t" << r.qformer_flops << "\n";
    out << tag << "\tuni_cross_attn\t" << r.uni_flops << "\n";
    out << tag << "\thead\t" << r.head_flops << "\n";
    out << tag << "\ttotal\t" << r.total() << "\n";
  };

  if (mode == "folded" || mode == "both") emit("folded", serve_folded(model, req));
  if (mode == "naive" || mode == "both") emit("naive", serve_naive(model, req));
  if (mode == "both") {
    const ServeResult f = serve_folded(model, req);
    const ServeResult n = serve_naive(model, req);
    double dev = 0.0;
    for (std::size_t i = 0; i < f.scores.size(); ++i)
      dev = std::max(dev, std::abs(f.scores[i] - n.scores[i]));
    out << "max_deviation\t" << std::setprecision(9) << dev << "\n";
    if (dev > 1e-5) {
      err << "error: folded and naive serving disagree by " << dev << "\n";
      return 2;
    }
  }
  return 0;
}

}  // namespace cli_detail

// Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
inline int dispatch(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sequential-recommendation pre-training lab for CTR prediction"};
  app.footer(cli_detail::config_key_listing());
  app.require_subcommand(1);

  cli_detail::CommonOpts gen_o, pre_o, fin_o, eval_o, flops_o, serve_o;
  std::string pre_data, pre_resume;
  std::string fin_data, fin_init, fin_resume;
  std::string eval_data, eval_ckpt, eval_freq;
  long flops_batch = 0, serve_batch = 0;
  std::string serve_mode = "both", serve_ckpt;

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic corpora");
  cli_detail::add_common(gen, gen_o, "out/data");

  CLI::App* pre = app.add_subcommand("pretrain", "run masked pre-training");
  cli_detail::add_common(pre, pre_o, "runs/pretrain");
  pre->add_option("--data", pre_data, "pre-training dataset")->required();
  pre->add_option("--resume", pre_resume, "continue from a saved run state");

  CLI::App* ft = app.add_subcommand("finetune", "train the CTR model");
  cli_detail::add_common(ft, fin_o, "runs/finetune");
  ft->add_option("--data", fin_data, "fine-tuning dataset")->required();
  ft->add_option("--init", fin_init, "pre-trained checkpoint to start from");
  ft->add_option("--resume", fin_resume, "continue from a saved run state");

  CLI::App* ev = app.add_subcommand("eval", "score a dataset with a checkpoint");
  cli_detail::add_common(ev, eval_o, "out/eval");
  ev->add_option("--data", eval_data, "dataset to score")->required();
  ev->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  ev->add_option("--freq-data", eval_freq,
                 "interaction log for item frequencies (enables the long-tail report)");

  CLI::App* fl = app.add_subcommand("flops", "analytic cost report");
  cli_detail::add_common(fl, flops_o, "out/flops");
  fl->add_option("--batch", flops_batch, "serving batch size B");

  CLI::App* sv = app.add_subcommand("serve-sim", "instrumented serving simulation");
  cli_detail::add_common(sv, serve_o, "out/serve");
  sv->add_option("--mode", serve_mode, "folded, naive, or both")->capture_default_str();
  sv->add_option("--batch", serve_batch, "serving batch size B");
  sv->add_option("--checkpoint", serve_ckpt, "model checkpoint (random init if absent)");

  std::vector<const char*> argv;
  argv.push_back("srp4ctr");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return cli_detail::run_gen_data(gen_o, out);
    if (pre->parsed()) return cli_detail::run_pretrain_cmd(pre_o, pre_data, pre_resume, out);
    if (ft->parsed())
      return cli_detail::run_finetune_cmd(fin_o, fin_data, fin_init, fin_resume, out);
    if (ev->parsed()) return cli_detail::run_eval(eval_o, eval_data, eval_ckpt, eval_freq, out);
    if (fl->parsed()) return cli_detail::run_flops(flops_o, flops_batch, out);
    if (sv->parsed())
      return cli_detail::run_serve_sim(serve_o, serve_mode, serve_ckpt, serve_batch, out, err);
    err << "error: no command given\n";
    return 1;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const MetricError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace srp4ctr
