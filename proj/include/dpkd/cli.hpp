// Copyright 2026 The DPKD Lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// `dpkd` command-line entry point. Every subcommand writes its artifacts under
// --out and starts with a manifest (config hash + seed). Options can come from
// a TOML/INI file given with --config; flags override file values.
//
// Exit codes: 0 success, 1 invalid usage or input, 2 runtime failure.

#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "dpkd/data.hpp"
#include "dpkd/error.hpp"
#include "dpkd/eval.hpp"
#include "dpkd/gradients.hpp"
#include "dpkd/judge.hpp"
#include "dpkd/metrics.hpp"
#include "dpkd/seqmodel.hpp"
#include "dpkd/toy.hpp"
#include "dpkd/trainer.hpp"
#include "dpkd/verify.hpp"
#include "json.hpp"

namespace dpkd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitRuntime = 2;

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct RunConfig {
  std::string out_dir = "out";
  std::uint64_t seed = 0;

  // Trainer.
  std::string method = "dpkd";
  std::string optimizer = "sgd";
  TrainerConfig trainer;
  bool no_lm_loss = false;
  bool no_length_norm = false;
  bool cpo_corrected = false;
  bool ablation = false;
  std::size_t seqkd_samples = 1000;

  // Data and models.
  std::string train_path, valid_path, test_path, pretrain_path;
  std::string teacher_path, student_path, model_path, metrics_path;
  std::size_t n_train = 200, n_valid = 50, n_test = 50;
  std::uint64_t grammar_seed = ToyOptions{}.grammar_seed;
  std::size_t min_words = 0;

  // Evaluation and experiments.
  std::vector<std::size_t> boundaries{30, 70};
  std::vector<double> scales{0.0, 0.05, 0.1, 0.2};
  std::size_t n_per_scale = 10;
  int instances = 20;
  double grad_tolerance = 1e-5;
  std::string judge_url;
};

class Runner {
 public:
  Runner(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(int argc, const char* const* argv) {
    CLI::App app{"Preference-based distillation on tabular sequence models", "dpkd"};
    app.require_subcommand(1, 1);
    app.set_config("--config", "", "TOML/INI file with option values");
    app.add_option("--out", cfg_.out_dir, "Output directory")->capture_default_str();
    app.add_option("--seed", cfg_.seed, "Run seed")->capture_default_str();

    auto* gen = app.add_subcommand("gen-data", "Write the synthetic toy corpus as JSONL");
    gen->add_option("--n-train", cfg_.n_train)->capture_default_str();
    gen->add_option("--n-valid", cfg_.n_valid)->capture_default_str();
    gen->add_option("--n-test", cfg_.n_test)->capture_default_str();
    gen->add_option("--grammar-seed", cfg_.grammar_seed)->capture_default_str();

    auto* sft = app.add_subcommand("sft", "Supervised fine-tuning");
    add_trainer_options(sft);
    add_data_options(sft);
    sft->add_option("--init", cfg_.student_path, "Initial checkpoint")->check(CLI::ExistingFile);

    auto* distill = app.add_subcommand("distill", "Distill a teacher into a student");
    add_trainer_options(distill);
    add_data_options(distill);
    distill->add_option("--method", cfg_.method,
                        "sft|kd|seqkd|rkld|minillm|dpkd|ipo|cpo|simpo")
        ->capture_default_str();
    distill->add_option("--teacher", cfg_.teacher_path)->check(CLI::ExistingFile);
    distill->add_option("--student", cfg_.student_path)->check(CLI::ExistingFile);
    distill->add_option("--pretrain", cfg_.pretrain_path, "LM-regularizer corpus (JSONL)")
        ->check(CLI::ExistingFile);
    distill->add_flag("--no-lm-loss", cfg_.no_lm_loss, "Set lambda = 0");
    distill->add_flag("--no-length-norm", cfg_.no_length_norm, "Use beta instead of beta/|y|");
    distill->add_flag("--ablation", cfg_.ablation,
                      "Run full / no-LM-loss / no-length-norm and tabulate them");
    distill->add_option("--seqkd-samples", cfg_.seqkd_samples)->capture_default_str();

    auto* eval = app.add_subcommand("eval", "Greedy-decode a test set and score it");
    eval->add_option("--model", cfg_.model_path)->check(CLI::ExistingFile);
    eval->add_option("--test", cfg_.test_path)->check(CLI::ExistingFile);
    eval->add_option("--boundaries", cfg_.boundaries, "Length-split boundaries")
        ->delimiter(',')
        ->capture_default_str();
    eval->add_option("--max-len", cfg_.trainer.max_len)->capture_default_str();
    eval->add_option("--judge-url", cfg_.judge_url, "External judge base URL");

    auto* verify = app.add_subcommand("verify", "Run the exact-oracle self-check suite");
    verify->add_option("--instances", cfg_.instances)->capture_default_str();

    auto* gradcheck = app.add_subcommand("gradcheck", "Analytic vs finite-difference gradient");
    gradcheck->add_option("--instances", cfg_.instances)->capture_default_str();
    gradcheck->add_option("--tolerance", cfg_.grad_tolerance)->capture_default_str();

    auto* sweep = app.add_subcommand("noise-sweep", "Perturb a model and record metric spread");
    sweep->add_option("--scales", cfg_.scales)->delimiter(',')->capture_default_str();
    sweep->add_option("--n-per-scale", cfg_.n_per_scale)->capture_default_str();
    sweep->add_option("--model", cfg_.model_path, "Base model")->check(CLI::ExistingFile);
    sweep->add_option("--teacher", cfg_.teacher_path)->check(CLI::ExistingFile);
    sweep->add_option("--valid", cfg_.valid_path)->check(CLI::ExistingFile);
    sweep->add_option("--beta", cfg_.trainer.dpkd.beta)->capture_default_str();
    sweep->add_option("--max-len", cfg_.trainer.max_len)->capture_default_str();

    auto* curves = app.add_subcommand("curves", "Validate and re-export a metrics CSV");
    curves->add_option("--metrics", cfg_.metrics_path)->required()->check(CLI::ExistingFile);

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      out_ << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
      out_ << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err_ << "error: " << e.what() << "\n";
      if (dynamic_cast<const CLI::FileError*>(&e) == nullptr) err_ << app.help();
      return kExitInvalid;
    }

    CLI::App* sub = app.get_subcommands().front();
    try {
      prepare(sub->get_name());
      std::filesystem::create_directories(cfg_.out_dir);
      write_manifest(sub->get_name(), run_config_text(app.config_to_str(true, false), sub->get_name()));
      const std::string name = sub->get_name();
      if (name == "gen-data") return cmd_gen_data();
      if (name == "sft") return cmd_sft();
      if (name == "distill") return cmd_distill();
      if (name == "eval") return cmd_eval();
      if (name == "verify") return cmd_verify();
      if (name == "gradcheck") return cmd_gradcheck();
      if (name == "noise-sweep") return cmd_noise_sweep();
      if (name == "curves") return cmd_curves();
      err_ << "error: unknown subcommand " << name << "\n";
      return kExitInvalid;
    } catch (const DomainError& e) {
      err_ << "error: " << e.what() << "\n";
      return kExitInvalid;
    } catch (const SchemaError& e) {
      err_ << "error: " << e.what() << "\n";
      return kExitInvalid;
    } catch (const ParseError& e) {
      err_ << "error: " << e.what() << "\n";
      return kExitInvalid;
    } catch (const std::exception& e) {
      err_ << "runtime error: " << e.what() << "\n";
      return kExitRuntime;
    }
  }

 private:
  void add_trainer_options(CLI::App* sub) {
    auto& t = cfg_.trainer;
    sub->add_option("--lr", t.lr, "Learning rate")->capture_default_str();
    sub->add_option("--epochs", t.epochs)->capture_default_str();
    sub->add_option("--batch-size", t.batch_size)->capture_default_str();
    sub->add_option("--max-len", t.max_len, "Generation bound m")->capture_default_str();
    sub->add_option("--optimizer", cfg_.optimizer, "sgd|adam")->capture_default_str();
    sub->add_option("--adam-beta1", t.adam.beta1)->capture_default_str();
    sub->add_option("--adam-beta2", t.adam.beta2)->capture_default_str();
    sub->add_option("--adam-eps", t.adam.eps)->capture_default_str();
    sub->add_option("--beta", t.dpkd.beta)->capture_default_str();
    sub->add_option("--lambda", t.dpkd.lambda, "LM-loss weight")->capture_default_str();
    sub->add_option("--tau", t.dpkd.tau, "IPO margin parameter")->capture_default_str();
    sub->add_option("--gamma-margin", t.dpkd.gamma_margin, "SimPO margin")->capture_default_str();
    sub->add_flag("--cpo-corrected", cfg_.cpo_corrected, "Contrastive CPO form");
    sub->add_option("--temperature", t.temperature)->capture_default_str();
    sub->add_flag("--record-wall-time", t.record_wall_time, "Fill wall_ms (not reproducible)");
    sub->add_flag("--keep-checkpoints", t.keep_checkpoints, "Write a checkpoint per epoch");
  }

  void add_data_options(CLI::App* sub) {
    sub->add_option("--train", cfg_.train_path, "Training JSONL")->check(CLI::ExistingFile);
    sub->add_option("--valid", cfg_.valid_path, "Validation JSONL")->check(CLI::ExistingFile);
    sub->add_option("--min-words", cfg_.min_words, "Drop outputs shorter than this")
        ->capture_default_str();
  }

  void prepare(const std::string& name) {
    auto& t = cfg_.trainer;
    t.seed = cfg_.seed;
    t.optimizer = parse_optimizer(cfg_.optimizer);
    t.method = name == "sft" ? Method::sft : parse_method(cfg_.method);
    if (cfg_.no_lm_loss) t.dpkd.lambda = 0.0;
    if (cfg_.no_length_norm) t.dpkd.length_norm = false;
    t.dpkd.cpo_literal = !cfg_.cpo_corrected;
    t.validate();
    LengthSplit{cfg_.boundaries}.validate();
    if (cfg_.ablation && t.method != Method::dpkd)
      throw DomainError("--ablation requires --method dpkd");
  }

  std::string path(const std::string& file) const {
    return (std::filesystem::path(cfg_.out_dir) / file).string();
  }

  // Global options and the chosen subcommand's options, one per line. The
  // output directory is left out so relocated reruns hash identically.
  static std::string run_config_text(const std::string& all, const std::string& sub) {
    std::istringstream in(all);
    std::string line, kept;
    const std::string prefix = sub + ".";
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      const std::string key = line.substr(0, eq);
      if (key == "out") continue;
      if (key.find('.') == std::string::npos || key.rfind(prefix, 0) == 0) kept += line + "\n";
    }
    return kept;
  }

  void write_manifest(const std::string& command, const std::string& config_text) {
    nlohmann::ordered_json m;
    m["command"] = command;
    m["seed"] = cfg_.seed;
    m["config_hash"] = fmt::format("{:016x}", fnv1a(config_text));
    m["config"] = config_text;
    write_text_file(path("manifest.json"), m.dump(2) + "\n");
  }

  // Default inputs: the toy task for this seed.
  const ToyTask& toy() {
    if (!toy_) toy_ = make_toy_task(cfg_.seed);
    return *toy_;
  }

  const Vocab& vocab_for_data() {
    if (!cfg_.teacher_path.empty()) return loaded_teacher().vocab();
    if (!cfg_.student_path.empty()) return loaded_student().vocab();
    if (!cfg_.model_path.empty()) return loaded_model().vocab();
    return toy().vocab;
  }

  const SeqModel& loaded_teacher() {
    if (!teacher_) teacher_ = load_checkpoint(cfg_.teacher_path);
    return *teacher_;
  }
  const SeqModel& loaded_student() {
    if (!student_) student_ = load_checkpoint(cfg_.student_path);
    return *student_;
  }
  const SeqModel& loaded_model() {
    if (!model_) model_ = load_checkpoint(cfg_.model_path);
    return *model_;
  }

  Corpus corpus_or(const std::string& file, const Corpus& fallback) {
    Corpus c = file.empty() ? fallback : load_jsonl(file, vocab_for_data());
    c = filter_by_max_len(c, cfg_.trainer.max_len);
    return cfg_.min_words > 0 ? filter_by_length(c, cfg_.min_words) : c;
  }

  void write_metrics(const TrainResult& res, const std::string& stem) {
    write_text_file(path(stem + ".csv"), metrics_csv(res.metrics));
    if (cfg_.trainer.keep_checkpoints) {
      std::filesystem::create_directories(path("checkpoints"));
      for (std::size_t e = 0; e < res.checkpoints.size(); ++e)
        save_checkpoint(res.checkpoints[e],
                        path(fmt::format("checkpoints/{}_epoch_{:03d}.json", stem, e)));
    }
  }

  void report_rows(const TrainResult& res) {
    const auto& last = res.metrics.back();
    out_ << fmt::format("epochs={} kd_loss={:.6f} lm_loss={:.6f} total_loss={:.6f} rouge_l={:.4f}\n",
                        last.epoch, last.kd_loss, last.lm_loss, last.total_loss, last.rouge_l);
  }

  int cmd_gen_data() {
    const Vocab vocab = toy_vocab();
    const ToyOptions opt;
    auto gen = [&](std::size_t n, std::uint64_t stream, const char* file) {
      if (n == 0) {
        write_text_file(path(file), "");
        return;
      }
      save_jsonl(synth_toy_corpus(vocab, cfg_.grammar_seed, n, opt.lengths, opt.dominant_prob,
                                  derive_seed(cfg_.seed, stream)),
                 path(file));
    };
    gen(cfg_.n_train, 1, "train.jsonl");
    gen(cfg_.n_valid, 2, "valid.jsonl");
    gen(cfg_.n_test, 3, "test.jsonl");
    out_ << "wrote " << path("train.jsonl") << ", valid.jsonl, test.jsonl\n";
    return kExitOk;
  }

  int cmd_sft() {
    const bool use_toy = cfg_.train_path.empty();
    const Corpus train = corpus_or(cfg_.train_path, use_toy ? toy().train : Corpus{});
    if (train.empty()) throw DomainError("sft: training corpus is empty");
    const Corpus valid =
        cfg_.valid_path.empty() ? (use_toy ? toy().valid : Corpus{}) : corpus_or(cfg_.valid_path, {});
    const SeqModel init = !cfg_.student_path.empty()
                              ? loaded_student()
                              : SeqModel::uniform(train.vocab(), ToyOptions{}.order);
    EvalContext ctx;
    if (!valid.empty()) ctx.valid = &valid;
    const auto res = run_sft(cfg_.trainer, train, init, ctx);
    write_metrics(res, "metrics");
    save_checkpoint(res.model, path("model.json"));
    report_rows(res);
    return kExitOk;
  }

  TrainResult train_once(const TrainerConfig& t, const Corpus& train, const Corpus& pretrain,
                         const SeqModel& teacher, const SeqModel& init, const EvalContext& ctx) {
    switch (t.method) {
      case Method::sft: return run_sft(t, train, init, ctx);
      case Method::kd: return run_word_kd(t, train, teacher, init, pretrain, ctx);
      case Method::seqkd:
        return run_seqkd(t, train.prompts(), teacher, init, cfg_.seqkd_samples, ctx);
      case Method::rkld: return run_rkld(t, train.prompts(), teacher, init, ctx);
      default: return run_distillation(t, train, pretrain, teacher, init, ctx);
    }
  }

  int cmd_distill() {
    const bool use_toy = cfg_.teacher_path.empty();
    if (use_toy != cfg_.train_path.empty())
      throw DomainError("distill: --teacher and --train must be given together");
    const SeqModel teacher = use_toy ? toy().teacher : loaded_teacher();
    const Corpus train = corpus_or(cfg_.train_path, use_toy ? toy().train : Corpus{});
    if (train.empty()) throw DomainError("distill: training corpus is empty");
    const Corpus valid = cfg_.valid_path.empty() ? (use_toy ? toy().valid : Corpus{})
                                                 : corpus_or(cfg_.valid_path, {});
    const Corpus pretrain = cfg_.pretrain_path.empty() ? train : corpus_or(cfg_.pretrain_path, {});
    SeqModel init;
    if (!cfg_.student_path.empty()) {
      init = loaded_student();
    } else if (use_toy) {
      init = toy().student_init;
    } else {
      // SFT-initialized student from the pretraining corpus.
      TrainerConfig warm = cfg_.trainer;
      warm.method = Method::sft;
      warm.keep_checkpoints = false;
      init = run_sft(warm, pretrain, SeqModel::uniform(teacher.vocab(), teacher.order())).model;
    }
    if (use_toy) {
      save_checkpoint(teacher, path("teacher.json"));
      save_checkpoint(init, path("student_init.json"));
    }
    EvalContext ctx;
    ctx.teacher = &teacher;
    if (!valid.empty()) ctx.valid = &valid;

    if (!cfg_.ablation) {
      const auto res = train_once(cfg_.trainer, train, pretrain, teacher, init, ctx);
      write_metrics(res, "metrics");
      save_checkpoint(res.model, path("student.json"));
      report_rows(res);
      return kExitOk;
    }

    struct Arm {
      const char* name;
      TrainerConfig cfg;
    };
    std::vector<Arm> arms{{"full", cfg_.trainer}, {"no_lm_loss", cfg_.trainer},
                          {"no_length_norm", cfg_.trainer}};
    arms[1].cfg.dpkd.lambda = 0.0;
    arms[2].cfg.dpkd.length_norm = false;
    std::string table =
        "variant,lambda,length_norm,rouge_l,first_token_rkld,mean_implicit_reward,"
        "max_identity_residual\n";
    for (const auto& arm : arms) {
      const auto res = train_once(arm.cfg, train, pretrain, teacher, init, ctx);
      write_metrics(res, std::string("metrics_") + arm.name);
      save_checkpoint(res.model, path(std::string("student_") + arm.name + ".json"));
      double residual = 0.0;
      for (const auto& row : res.metrics)
        residual = std::max(residual, total_loss_residual(row, effective_lambda(arm.cfg)));
      const auto& last = res.metrics.back();
      table += fmt::format("{},{},{},{},{},{},{}\n", arm.name, csv_number(arm.cfg.dpkd.lambda),
                           arm.cfg.dpkd.length_norm ? 1 : 0, csv_number(last.rouge_l),
                           csv_number(last.first_token_rkld),
                           csv_number(last.mean_implicit_reward), csv_number(residual));
    }
    write_text_file(path("ablation.csv"), table);
    out_ << table;
    return kExitOk;
  }

  int cmd_eval() {
    const bool use_toy = cfg_.model_path.empty();
    const SeqModel model = use_toy ? toy().student_init : loaded_model();
    const Corpus test = corpus_or(cfg_.test_path, use_toy ? toy().valid : Corpus{});
    const auto rep = evaluate(model, test, LengthSplit{cfg_.boundaries}, cfg_.trainer.max_len,
                              cfg_.seed);
    auto j = to_json(rep);
    if (!cfg_.judge_url.empty()) {
      const auto jc = JudgeConfig::from_env(cfg_.judge_url);
      double sum = 0.0;
      std::size_t available = 0;
      for (std::size_t i = 0; i < test.size(); ++i) {
        const auto y = greedy(model, test.prompt(i), cfg_.trainer.max_len);
        const auto r = judge_client(jc, test.examples()[i].instruction,
                                    decode_tokens(model.vocab(), y.tokens),
                                    test.examples()[i].output,
                                    [this](const std::string& m) { err_ << "judge: " << m << "\n"; });
        if (r.available()) {
          sum += *r.score;
          ++available;
        }
      }
      j["judge"] = {{"available", available},
                    {"mean_score", available ? nlohmann::ordered_json(sum / available) : nullptr}};
    }
    write_text_file(path("eval_report.json"), j.dump(2) + "\n");
    out_ << j.dump(2) << "\n";
    return kExitOk;
  }

  int cmd_verify() {
    VerifyOptions opt;
    opt.seed = cfg_.seed;
    opt.instances = cfg_.instances;
    const auto checks = run_oracle_suite(opt);
    std::string table = "check,residual,tolerance,status\n";
    for (const auto& c : checks) {
      table += fmt::format("{},{:.3e},{:.0e},{}\n", c.name, c.residual, c.tolerance,
                           c.passed ? "PASS" : "FAIL");
      out_ << fmt::format("{:<40} {:>11.3e} < {:<7.0e} {}\n", c.name, c.residual, c.tolerance,
                          c.passed ? "PASS" : "FAIL");
    }
    write_text_file(path("verify.csv"), table);
    return all_passed(checks) ? kExitOk : kExitRuntime;
  }

  int cmd_gradcheck() {
    std::mt19937_64 rng(derive_seed(cfg_.seed, 0x9C));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    GradCheckReport worst;
    auto records = nlohmann::ordered_json::array();
    for (int i = 0; i < cfg_.instances; ++i) {
      const Vocab v = synthetic_vocab(3 + i % 3);
      const int order = 1 + i % 2;
      const SeqModel student = random_model(v, order, 1.0, derive_seed(cfg_.seed, i, 0));
      const SeqModel teacher = random_model(v, order, 1.0, derive_seed(cfg_.seed, i, 1));
      DPKDConfig dcfg;
      dcfg.beta = 0.1 + 4.9 * unif(rng);
      dcfg.length_norm = i % 2 == 0;
      std::vector<PairExample> batch;
      const int n = 1 + static_cast<int>(unif(rng) * 8);
      for (int b = 0; b < n; ++b) {
        const Prompt x = random_prompt(v, 3, rng);
        batch.push_back({x, sample(teacher, x, 5, derive_seed(cfg_.seed, i, b, 0)),
                         sample(student, x, 5, derive_seed(cfg_.seed, i, b, 1))});
      }
      const auto rep = grad_check(
          dpkd_grad(batch, student, teacher, dcfg),
          numeric_grad(
              [&](const SeqModel& s) {
                return dpkd_loss<long double>(std::span<const PairExample>(batch), s, teacher, dcfg);
              },
              student));
      auto rec = to_json(rep);
      rec["instance"] = i;
      records.push_back(rec);
      if (rep.max_rel_err >= worst.max_rel_err) worst = rep;
    }
    nlohmann::ordered_json j;
    j["instances"] = cfg_.instances;
    j["tolerance"] = cfg_.grad_tolerance;
    j["max_rel_err"] = worst.max_rel_err;
    j["passed"] = worst.max_rel_err < cfg_.grad_tolerance;
    j["per_instance"] = records;
    write_text_file(path("gradcheck.json"), j.dump(2) + "\n");
    out_ << fmt::format("gradcheck: {} instances, max relative error {:.3e} ({})\n",
                        cfg_.instances, worst.max_rel_err,
                        worst.max_rel_err < cfg_.grad_tolerance ? "PASS" : "FAIL");
    return worst.max_rel_err < cfg_.grad_tolerance ? kExitOk : kExitRuntime;
  }

  int cmd_noise_sweep() {
    const bool use_toy = cfg_.model_path.empty() || cfg_.teacher_path.empty();
    if (cfg_.model_path.empty() != cfg_.teacher_path.empty())
      throw DomainError("noise-sweep: --model and --teacher must be given together");
    const SeqModel base = use_toy ? toy().student_init : loaded_model();
    const SeqModel teacher = use_toy ? toy().teacher : loaded_teacher();
    const Corpus valid = corpus_or(cfg_.valid_path, use_toy ? toy().valid : Corpus{});
    const auto rows = noise_sweep(base, teacher, valid, cfg_.scales, cfg_.n_per_scale,
                                  cfg_.trainer.dpkd.beta, cfg_.seed, cfg_.trainer.max_len);
    write_text_file(path("noise_sweep.csv"), noise_sweep_csv(rows));
    for (const auto& [scale, rkld] : mean_rkld_by_scale(rows))
      out_ << fmt::format("scale={} mean_rkld={:.6g}\n", scale, rkld);
    return kExitOk;
  }

  int cmd_curves() {
    const auto rows = load_curves(cfg_.metrics_path);
    if (rows.empty()) throw DomainError("curves: metrics file has no rows");
    export_curves(rows, path("curves.csv"));
    out_ << fmt::format("{} rows -> {}\n", rows.size(), path("curves.csv"));
    return kExitOk;
  }

  std::ostream& out_;
  std::ostream& err_;
  RunConfig cfg_;
  std::optional<ToyTask> toy_;
  std::optional<SeqModel> teacher_, student_, model_;
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  return Runner(out, err).run(argc, argv);
}

// Convenience for tests: args exclude the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"dpkd"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace dpkd::cli
