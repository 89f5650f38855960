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

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dpkd/toy.hpp"
#include "dpkd/verify.hpp"

namespace dpkd {
namespace {

const ToyTask& toy() {
  static const ToyTask task = make_toy_task(0);
  return task;
}

TrainerConfig toy_config(Method method, int epochs = 30) {
  TrainerConfig cfg;
  cfg.method = method;
  cfg.epochs = epochs;
  cfg.max_len = toy().max_len;
  return cfg;
}

bool same_logits(const SeqModel& a, const SeqModel& b, double tol = 0.0) {
  const auto& x = a.logits();
  const auto& y = b.logits();
  if (!x.same_shape(y)) return false;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c)
      if (std::abs(x(r, c) - y(r, c)) > tol) return false;
  return true;
}

void expect_total_identity(const TrainResult& res, double lambda) {
  for (const auto& row : res.metrics)
    EXPECT_LE(std::abs(total_loss_residual(row, lambda)), 1e-9) << "epoch " << row.epoch;
}

// Two-context-deep one-hot model following a -> b -> c -> EOS from any state.
SeqModel deterministic_teacher(const Vocab& v) {
  SeqModel m = SeqModel::uniform(v, 1);
  for (double& w : m.logits().values()) w = -1000.0;
  m.logits()(0, 2) = 0.0;
  m.logits()(1, 1) = 0.0;
  m.logits()(2, 3) = 0.0;
  m.logits()(3, 4) = 0.0;
  m.logits()(4, 1) = 0.0;
  return m;
}

TEST(TrainerConfig, Validation) {
  TrainerConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.lr = -1.0;
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg = {};
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg = {};
  cfg.temperature = 0.0;
  EXPECT_THROW(cfg.validate(), DomainError);
  EXPECT_EQ(parse_method("minillm"), Method::rkld);
  EXPECT_THROW(parse_method("akl"), DomainError);
  EXPECT_EQ(parse_optimizer("adam"), OptimizerKind::adam);
}

TEST(Distillation, ZeroLearningRateFreezesModelAndLosses) {
  TrainerConfig cfg = toy_config(Method::dpkd, 4);
  cfg.lr = 0.0;
  const auto res = run_distillation(cfg, toy().train, toy().train, toy().teacher, toy().student_init);
  EXPECT_TRUE(same_logits(res.model, toy().student_init));
  ASSERT_EQ(res.metrics.size(), 5u);
  for (const auto& row : res.metrics) {
    EXPECT_EQ(row.kd_loss, res.metrics[0].kd_loss);
    EXPECT_EQ(row.lm_loss, res.metrics[0].lm_loss);
  }
}

TEST(Distillation, StudentEqualsTeacherStartsAtLn2) {
  const auto res = run_distillation(toy_config(Method::dpkd, 1), toy().train, Corpus{},
                                    toy().teacher, toy().teacher);
  EXPECT_NEAR(res.metrics[0].kd_loss, std::log(2.0), 1e-6);
  EXPECT_EQ(res.metrics[0].first_token_kld, 0.0);
}

TEST(Distillation, ToyTrendsMoveTowardTeacher) {
  const auto res = run_distillation(toy_config(Method::dpkd), toy().train, toy().train,
                                    toy().teacher, toy().student_init);
  ASSERT_EQ(res.metrics.size(), 31u);
  EXPECT_LT(res.metrics.back().first_token_rkld, res.metrics.front().first_token_rkld);
  EXPECT_GT(res.metrics.back().mean_implicit_reward, res.metrics.front().mean_implicit_reward);
  expect_total_identity(res, 0.1);
}

TEST(Distillation, DeterministicForFixedSeed) {
  TrainerConfig cfg = toy_config(Method::dpkd, 5);
  cfg.seed = 11;
  EvalContext ctx;
  ctx.valid = &toy().valid;
  const auto a = run_distillation(cfg, toy().train, toy().train, toy().teacher, toy().student_init, ctx);
  const auto b = run_distillation(cfg, toy().train, toy().train, toy().teacher, toy().student_init, ctx);
  EXPECT_EQ(metrics_csv(a.metrics), metrics_csv(b.metrics));
  EXPECT_EQ(checkpoint_text(a.model), checkpoint_text(b.model));
  for (const auto& row : a.metrics) {
    EXPECT_EQ(row.wall_ms, 0.0);
    EXPECT_FALSE(std::isnan(row.rouge_l));
  }
  cfg.seed = 12;
  const auto c = run_distillation(cfg, toy().train, toy().train, toy().teacher, toy().student_init, ctx);
  EXPECT_NE(metrics_csv(a.metrics), metrics_csv(c.metrics));
}

TEST(Distillation, VariantsTrainAndKeepBookkeeping) {
  std::vector<std::size_t> first(16);
  for (std::size_t i = 0; i < first.size(); ++i) first[i] = i;
  const Corpus small = toy().train.subset(first);
  for (Method m : {Method::ipo, Method::cpo, Method::simpo}) {
    TrainerConfig cfg = toy_config(m, 2);
    cfg.keep_checkpoints = true;
    const auto res = run_distillation(cfg, small, small, toy().teacher, toy().student_init);
    EXPECT_EQ(res.checkpoints.size(), 3u);
    for (const auto& row : res.metrics) EXPECT_TRUE(std::isfinite(row.kd_loss)) << to_string(m);
    expect_total_identity(res, cfg.dpkd.lambda);
  }
}

TEST(Distillation, RejectsMismatchedModelsAndMethods) {
  const SeqModel other = SeqModel::uniform(toy().vocab, 1);
  EXPECT_THROW(run_distillation(toy_config(Method::dpkd, 1), toy().train, Corpus{}, toy().teacher,
                                other),
               DomainError);
  EXPECT_THROW(run_distillation(toy_config(Method::kd, 1), toy().train, Corpus{}, toy().teacher,
                                toy().student_init),
               DomainError);
  const Corpus foreign(synthetic_vocab(5), {{"w0", "", "w1"}});
  EXPECT_THROW(run_distillation(toy_config(Method::dpkd, 1), foreign, Corpus{}, toy().teacher,
                                toy().student_init),
               DomainError);
}

TEST(Sft, ZeroLearningRateLeavesModelUnchanged) {
  TrainerConfig cfg = toy_config(Method::sft, 3);
  cfg.lr = 0.0;
  const auto res = run_sft(cfg, toy().train, toy().student_init);
  EXPECT_TRUE(same_logits(res.model, toy().student_init));
  expect_total_identity(res, 1.0);
}

TEST(Sft, ConvergesOnDeterministicGenerator) {
  const Vocab v = toy_vocab();
  const Corpus data = synth_toy_corpus(v, 77, 200, {1, 4}, 1.0);
  TrainerConfig cfg = toy_config(Method::sft, 60);
  cfg.lr = 1.0;
  const auto res = run_sft(cfg, data, SeqModel::uniform(v, 2));
  const auto ex = data.lm_examples();
  EXPECT_LT(lm_loss(res.model, std::span<const LmExample>(ex)), 0.05);
}

TEST(Sft, WindowedLossNonIncreasingOnToyTask) {
  const auto res = run_sft(toy_config(Method::sft, 30), toy().train, toy().student_init);
  std::vector<double> windows;
  for (std::size_t start = 1; start + 5 <= res.metrics.size(); start += 5) {
    double s = 0.0;
    for (std::size_t e = start; e < start + 5; ++e) s += res.metrics[e].lm_loss;
    windows.push_back(s / 5.0);
  }
  ASSERT_EQ(windows.size(), 6u);
  for (std::size_t k = 1; k < windows.size(); ++k) EXPECT_LE(windows[k], windows[k - 1]);
}

TEST(Sft, AdamAlsoDescends) {
  TrainerConfig cfg = toy_config(Method::sft, 10);
  cfg.optimizer = OptimizerKind::adam;
  cfg.lr = 0.05;
  const auto res = run_sft(cfg, toy().train, toy().student_init);
  EXPECT_LT(res.metrics.back().lm_loss, res.metrics.front().lm_loss);
}

TEST(WordKd, StudentEqualsTeacherIsAFixedPoint) {
  const auto res = run_word_kd(toy_config(Method::kd, 3), toy().train, toy().teacher, toy().teacher);
  EXPECT_TRUE(same_logits(res.model, toy().teacher, 1e-9));
  EXPECT_NEAR(res.metrics.back().kd_loss, 0.0, 1e-12);
}

TEST(WordKd, ConvergesOnVisitedContexts) {
  TrainerConfig cfg = toy_config(Method::kd, 150);
  cfg.lr = 2.0;
  const auto res = run_word_kd(cfg, toy().train, toy().teacher, toy().student_init);
  EXPECT_LT(res.metrics.back().first_token_kld, 1e-3);
}

TEST(WordKd, ZeroLambdaReportsButIgnoresLmLoss) {
  TrainerConfig cfg = toy_config(Method::kd, 2);
  cfg.dpkd.lambda = 0.0;
  const auto res =
      run_word_kd(cfg, toy().train, toy().teacher, toy().student_init, toy().train);
  for (const auto& row : res.metrics) {
    EXPECT_GT(row.lm_loss, 0.0);
    EXPECT_EQ(row.total_loss, row.kd_loss);
  }
}

TEST(SeqKd, NoSamplesLeavesModelUnchanged) {
  const auto prompts = toy().train.prompts();
  const auto res =
      run_seqkd(toy_config(Method::seqkd, 2), prompts, toy().teacher, toy().student_init, 0);
  EXPECT_TRUE(same_logits(res.model, toy().student_init));
}

TEST(SeqKd, DeterministicTeacherReducesToSft) {
  const Vocab v({"<bos>", "<eos>", "a", "b", "c"}, 0, 1);
  const SeqModel teacher = deterministic_teacher(v);
  const SeqModel init = random_model(v, 1, 0.5, 3);
  const std::vector<Prompt> prompts{Prompt{{2}}, Prompt{{3}}, Prompt{{4, 2}}};
  TrainerConfig cfg = toy_config(Method::seqkd, 5);
  const auto seqkd = run_seqkd(cfg, prompts, teacher, init, 7);
  std::vector<LmExample> data;
  for (std::size_t s = 0; s < 7; ++s)
    data.push_back({prompts[s % 3], greedy(teacher, prompts[s % 3], cfg.max_len)});
  EvalContext ctx;
  ctx.teacher = &teacher;
  ctx.prompts = prompts;
  cfg.method = Method::sft;
  const auto sft = run_sft(cfg, std::span<const LmExample>(data), init, ctx);
  EXPECT_EQ(checkpoint_text(seqkd.model), checkpoint_text(sft.model));
  EXPECT_EQ(metrics_csv(seqkd.metrics), metrics_csv(sft.metrics));
}

TEST(SeqKd, LargeSampleLimitMatchesTeacher) {
  TrainerConfig cfg = toy_config(Method::seqkd, 5);
  cfg.lr = 1.0;
  cfg.batch_size = 16;
  const auto prompts = toy().train.prompts();
  const auto res = run_seqkd(cfg, prompts, toy().teacher, toy().student_init, 10000);
  EXPECT_LT(res.metrics.back().first_token_kld, 0.05);
}

TEST(Rkld, StudentEqualsTeacherHasZeroObjective) {
  const auto prompts = toy().train.prompts();
  const auto res = run_rkld(toy_config(Method::rkld, 2), prompts, toy().teacher, toy().teacher);
  for (const auto& row : res.metrics) EXPECT_NEAR(row.kd_loss, 0.0, 1e-12);
  EXPECT_TRUE(same_logits(res.model, toy().teacher, 1e-9));
}

TEST(Rkld, ConcentratesOnATeacherMode) {
  // One decision over {EOS, a, b}: the teacher has two modes (EOS and b).
  const Vocab v({"<bos>", "<eos>", "a", "b"}, 0, 1);
  SeqModel teacher = SeqModel::uniform(v, 1);
  SeqModel student = SeqModel::uniform(v, 1);
  for (std::size_t r = 0; r < 4; ++r) {
    teacher.logits()(r, 0) = student.logits()(r, 0) = -1000.0;
    teacher.logits()(r, 1) = std::log(0.45);
    teacher.logits()(r, 2) = std::log(0.10);
    teacher.logits()(r, 3) = std::log(0.45);
  }
  auto max_mode_mass = [](const SeqModel& m) {
    const auto d = next_token_dist(m, Prompt{});
    return std::max(d[1], d[3]);
  };
  TrainerConfig cfg = toy_config(Method::rkld, 50);
  cfg.max_len = 1;
  cfg.lr = 0.5;
  const std::vector<Prompt> prompts(8, Prompt{});
  const auto res = run_rkld(cfg, prompts, teacher, student);
  EXPECT_GT(max_mode_mass(res.model), max_mode_mass(student));
}

TEST(Rkld, ToyReverseKlDecreases) {
  std::vector<std::size_t> first(40);
  for (std::size_t i = 0; i < first.size(); ++i) first[i] = i;
  const auto prompts = toy().train.subset(first).prompts();
  TrainerConfig cfg = toy_config(Method::rkld, 10);
  cfg.lr = 0.5;
  const auto res = run_rkld(cfg, prompts, toy().teacher, toy().student_init);
  auto mean_rkld = [&](const SeqModel& m) {
    double s = 0.0;
    for (const auto& x : prompts) s += reverse_kld(m, toy().teacher, x, cfg.max_len);
    return s / static_cast<double>(prompts.size());
  };
  EXPECT_LT(mean_rkld(res.model), mean_rkld(toy().student_init));
}

TEST(Bookkeeping, TotalLossIdentityForEveryMethod) {
  TrainerConfig cfg = toy_config(Method::dpkd, 2);
  cfg.dpkd.lambda = 0.37;
  std::vector<std::size_t> first(24);
  for (std::size_t i = 0; i < first.size(); ++i) first[i] = i;
  const Corpus small = toy().train.subset(first);
  expect_total_identity(run_distillation(cfg, small, small, toy().teacher, toy().student_init), 0.37);
  cfg.method = Method::kd;
  expect_total_identity(run_word_kd(cfg, small, toy().teacher, toy().student_init, small), 0.37);
  cfg.method = Method::rkld;
  expect_total_identity(run_rkld(cfg, small.prompts(), toy().teacher, toy().student_init), 0.37);
  cfg.method = Method::seqkd;
  expect_total_identity(run_seqkd(cfg, small.prompts(), toy().teacher, toy().student_init, 30), 1.0);
  cfg.record_wall_time = true;
  cfg.method = Method::sft;
  const auto timed = run_sft(cfg, small, toy().student_init);
  expect_total_identity(timed, 1.0);
  EXPECT_GT(timed.metrics.back().wall_ms, 0.0);
}

}  // namespace
}  // namespace dpkd
