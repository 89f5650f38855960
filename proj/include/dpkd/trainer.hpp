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

// Training procedures: the on-policy pairwise distillation loop and the
// SFT / word-level KD / SeqKD / reverse-KL baselines, with per-epoch metrics.

#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpkd/data.hpp"
#include "dpkd/error.hpp"
#include "dpkd/eval.hpp"
#include "dpkd/gradients.hpp"
#include "dpkd/metrics.hpp"
#include "dpkd/objectives.hpp"
#include "dpkd/seeding.hpp"
#include "dpkd/seqmodel.hpp"

namespace dpkd {

enum class Method { sft, kd, seqkd, rkld, dpkd, ipo, cpo, simpo };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::sft: return "sft";
    case Method::kd: return "kd";
    case Method::seqkd: return "seqkd";
    case Method::rkld: return "rkld";
    case Method::dpkd: return "dpkd";
    case Method::ipo: return "ipo";
    case Method::cpo: return "cpo";
    case Method::simpo: return "simpo";
  }
  throw DomainError("unknown method");
}

// "minillm" is accepted as an alias of rkld.
inline Method parse_method(std::string_view s) {
  for (Method m : {Method::sft, Method::kd, Method::seqkd, Method::rkld, Method::dpkd,
                   Method::ipo, Method::cpo, Method::simpo})
    if (s == to_string(m)) return m;
  if (s == "minillm") return Method::rkld;
  throw DomainError("unknown method '" + std::string(s) + "'");
}

inline bool is_preference_method(Method m) {
  return m == Method::dpkd || m == Method::ipo || m == Method::cpo || m == Method::simpo;
}

inline Variant variant_of(Method m) {
  switch (m) {
    case Method::ipo: return Variant::ipo;
    case Method::cpo: return Variant::cpo;
    case Method::simpo: return Variant::simpo;
    default: return Variant::dpkd;
  }
}

enum class OptimizerKind { sgd, adam };

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw DomainError("unknown optimizer '" + std::string(s) + "'");
}

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainerConfig {
  Method method = Method::dpkd;
  double lr = 0.1;
  int epochs = 30;
  int batch_size = 8;
  std::uint64_t seed = 0;
  int max_len = 6;
  OptimizerKind optimizer = OptimizerKind::sgd;
  AdamParams adam;
  DPKDConfig dpkd;
  double temperature = 1.0;  // sampling temperature for on-policy responses
  bool record_wall_time = false;  // off keeps metrics byte-reproducible
  bool keep_checkpoints = false;

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw DomainError("TrainerConfig: lr must be >= 0");
    if (epochs < 1) throw DomainError("TrainerConfig: epochs must be >= 1");
    if (batch_size < 1) throw DomainError("TrainerConfig: batch_size must be >= 1");
    if (max_len < 1) throw DomainError("TrainerConfig: max_len must be >= 1");
    if (!(temperature > 0.0) || !std::isfinite(temperature))
      throw DomainError("TrainerConfig: temperature must be > 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
        !(adam.eps > 0.0))
      throw DomainError("TrainerConfig: invalid adam parameters");
    dpkd.validate();
  }
};

// Weight on lm_loss in MetricsRow::total_loss. SFT and SeqKD report their
// likelihood loss as lm_loss with kd_loss = 0, so the weight there is 1.
inline double effective_lambda(const TrainerConfig& cfg) {
  return cfg.method == Method::sft || cfg.method == Method::seqkd ? 1.0 : cfg.dpkd.lambda;
}

class Optimizer {
 public:
  Optimizer(const TrainerConfig& cfg, const SeqModel& model)
      : kind_(cfg.optimizer), lr_(cfg.lr), adam_(cfg.adam) {
    if (kind_ == OptimizerKind::adam) {
      m_ = zero_grad(model);
      v_ = zero_grad(model);
    }
  }

  void step(SeqModel& model, const GradTable& grad) {
    auto w = model.logits().values();
    const auto g = grad.values();
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
      return;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(adam_.beta1, t_);
    const double c2 = 1.0 - std::pow(adam_.beta2, t_);
    auto m = m_.values();
    auto v = v_.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = adam_.beta1 * m[i] + (1.0 - adam_.beta1) * g[i];
      v[i] = adam_.beta2 * v[i] + (1.0 - adam_.beta2) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + adam_.eps);
    }
  }

 private:
  OptimizerKind kind_;
  double lr_;
  AdamParams adam_;
  GradTable m_, v_;
  int t_ = 0;
};

// What per-epoch metrics are measured on. Teacher-dependent columns are NaN
// without a teacher; rouge_l is NaN without a validation corpus.
struct EvalContext {
  const Corpus* valid = nullptr;
  const SeqModel* teacher = nullptr;
  std::vector<Prompt> prompts;  // used when `valid` is absent
};

struct TrainResult {
  SeqModel model;
  std::vector<MetricsRow> metrics;
  std::vector<SeqModel> checkpoints;  // one per row when keep_checkpoints
};

// Stream roles for sampling seeds.
inline constexpr std::uint64_t kTeacherRole = 0;
inline constexpr std::uint64_t kStudentRole = 1;
inline constexpr std::uint64_t kSeqKdRole = 2;
inline constexpr std::uint64_t kEvalRole = 3;

namespace detail {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Teacher responses used by mean_implicit_reward; fixed for the whole run.
inline std::vector<Trajectory> eval_teacher_samples(const TrainerConfig& cfg,
                                                    const EvalContext& ctx,
                                                    std::span<const Prompt> prompts) {
  std::vector<Trajectory> out;
  if (!ctx.teacher) return out;
  out.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i)
    out.push_back(sample(*ctx.teacher, prompts[i], cfg.max_len,
                         derive_seed(cfg.seed, i, kEvalRole)));
  return out;
}

inline void fill_eval_metrics(MetricsRow& row, const SeqModel& student, const TrainerConfig& cfg,
                              const EvalContext& ctx, std::span<const Prompt> prompts,
                              const std::vector<Trajectory>& teacher_samples) {
  row.mean_implicit_reward = row.first_token_kld = row.first_token_rkld = kNaN;
  row.rouge_l = kNaN;
  if (ctx.teacher && !prompts.empty()) {
    double reward = 0.0;
    for (std::size_t i = 0; i < prompts.size(); ++i)
      reward += implicit_reward(student, *ctx.teacher, prompts[i], teacher_samples[i],
                                cfg.dpkd.beta);
    row.mean_implicit_reward = reward / static_cast<double>(prompts.size());
    row.first_token_kld =
        first_token_divergence(student, *ctx.teacher, prompts, KlDirection::forward);
    row.first_token_rkld =
        first_token_divergence(student, *ctx.teacher, prompts, KlDirection::reverse);
  }
  if (ctx.valid && !ctx.valid->empty()) row.rouge_l = mean_rouge_l(student, *ctx.valid, cfg.max_len);
}

struct StepOutput {
  double kd_loss = 0.0;
  double lm_loss = 0.0;
  GradTable grad;  // empty when no update is requested
};

// Batch b covers items [b*B, min((b+1)*B, n)) in fixed order.
using BatchFn = std::function<StepOutput(std::size_t begin, std::size_t end, const SeqModel&,
                                         bool want_grad)>;

// Row 0 evaluates the initial model (losses over all batches, no update);
// rows 1..E are training epochs whose losses average the pre-update batch
// losses, with evaluation metrics taken after the epoch.
inline TrainResult train_loop(const TrainerConfig& cfg, std::size_t n_items,
                              const SeqModel& init, const EvalContext& ctx,
                              const BatchFn& batch_fn) {
  TrainResult res{init, {}, {}};
  Optimizer opt(cfg, init);
  const std::span<const Prompt> prompts =
      ctx.valid ? std::span<const Prompt>(ctx.valid->prompts()) : std::span<const Prompt>(ctx.prompts);
  const auto teacher_samples = eval_teacher_samples(cfg, ctx, prompts);
  const double lambda = effective_lambda(cfg);
  const auto B = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double kd_sum = 0.0, lm_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < n_items; begin += B) {
      const std::size_t end = std::min(begin + B, n_items);
      StepOutput out = batch_fn(begin, end, res.model, epoch > 0);
      kd_sum += out.kd_loss;
      lm_sum += out.lm_loss;
      ++n_batches;
      if (epoch > 0) opt.step(res.model, out.grad);
    }
    MetricsRow row;
    row.epoch = epoch;
    row.kd_loss = n_batches ? kd_sum / static_cast<double>(n_batches) : 0.0;
    row.lm_loss = n_batches ? lm_sum / static_cast<double>(n_batches) : 0.0;
    row.total_loss = row.kd_loss + lambda * row.lm_loss;
    fill_eval_metrics(row, res.model, cfg, ctx, prompts, teacher_samples);
    row.wall_ms = cfg.record_wall_time
                      ? std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count()
                      : 0.0;
    res.metrics.push_back(row);
    if (cfg.keep_checkpoints) res.checkpoints.push_back(res.model);
  }
  return res;
}

inline void require_shared_shape(const SeqModel& a, const SeqModel& b, const char* what) {
  if (!a.same_shape(b))
    throw DomainError(std::string(what) + ": teacher and student must share vocabulary and order");
}

inline void require_corpus_vocab(const Corpus& c, const SeqModel& m, const char* what) {
  if (!(c.vocab() == m.vocab()))
    throw DomainError(std::string(what) + ": corpus vocabulary differs from the model's");
}

// Adds lambda * grad lm_loss and returns lm_loss on the pretrain slice that
// pairs with batch [begin, end); 0 when the corpus is empty.
inline double add_lm_term(GradTable* grad, const SeqModel& student,
                          const std::vector<LmExample>& pretrain, std::size_t begin,
                          std::size_t end, double lambda) {
  if (pretrain.empty()) return 0.0;
  std::vector<LmExample> slice;
  for (std::size_t i = begin; i < end; ++i) slice.push_back(pretrain[i % pretrain.size()]);
  if (grad && lambda != 0.0) grad->axpy(lambda, lm_grad(student, slice));
  return lm_loss(student, slice);
}

}  // namespace detail

// Supervised fine-tuning on (prompt, response) pairs.
inline TrainResult run_sft(const TrainerConfig& cfg, std::span<const LmExample> data,
                           const SeqModel& student_init, const EvalContext& ctx = {}) {
  cfg.validate();
  if (ctx.teacher) detail::require_shared_shape(*ctx.teacher, student_init, "run_sft");
  return detail::train_loop(
      cfg, data.size(), student_init, ctx,
      [&](std::size_t begin, std::size_t end, const SeqModel& student, bool want_grad) {
        detail::StepOutput out;
        const auto batch = data.subspan(begin, end - begin);
        out.lm_loss = lm_loss(student, batch);
        if (want_grad) out.grad = lm_grad(student, batch);
        return out;
      });
}

inline TrainResult run_sft(const TrainerConfig& cfg, const Corpus& train,
                           const SeqModel& student_init, const EvalContext& ctx = {}) {
  detail::require_corpus_vocab(train, student_init, "run_sft");
  const auto data = train.lm_examples();
  return run_sft(cfg, std::span<const LmExample>(data), student_init, ctx);
}

// On-policy pairwise distillation: per batch, sample y_t ~ p and y_s ~ q_theta,
// score the four log terms, and step on L_kd + lambda * L_pt. cfg.method picks
// the preference loss (dpkd, ipo, cpo, simpo). Samples use common random
// numbers keyed by (seed, example, role), so a frozen student sees the same
// pairs every epoch.
inline TrainResult run_distillation(const TrainerConfig& cfg, const Corpus& train,
                                    const Corpus& pretrain, const SeqModel& teacher,
                                    const SeqModel& student_init, const EvalContext& ctx_in = {}) {
  cfg.validate();
  if (!is_preference_method(cfg.method))
    throw DomainError("run_distillation: method must be dpkd, ipo, cpo or simpo");
  detail::require_shared_shape(teacher, student_init, "run_distillation");
  detail::require_corpus_vocab(train, student_init, "run_distillation");
  if (!pretrain.empty()) detail::require_corpus_vocab(pretrain, student_init, "run_distillation");
  DPKDConfig dcfg = cfg.dpkd;
  dcfg.variant = variant_of(cfg.method);
  EvalContext ctx = ctx_in;
  if (!ctx.teacher) ctx.teacher = &teacher;
  if (!ctx.valid && ctx.prompts.empty()) ctx.prompts = train.prompts();
  const auto lm_data = pretrain.lm_examples();
  return detail::train_loop(
      cfg, train.size(), student_init, ctx,
      [&](std::size_t begin, std::size_t end, const SeqModel& student, bool want_grad) {
        std::vector<PairExample> pairs;
        for (std::size_t i = begin; i < end; ++i) {
          const Prompt& x = train.prompt(i);
          pairs.push_back({x,
                           sample(teacher, x, cfg.max_len, derive_seed(cfg.seed, i, kTeacherRole),
                                  cfg.temperature),
                           sample(student, x, cfg.max_len, derive_seed(cfg.seed, i, kStudentRole),
                                  cfg.temperature)});
        }
        detail::StepOutput out;
        out.kd_loss = preference_loss(std::span<const PairExample>(pairs), student, teacher, dcfg);
        if (want_grad) {
          if (dcfg.variant == Variant::dpkd) {
            out.grad = dpkd_grad(pairs, student, teacher, dcfg);
          } else {
            out.grad = numeric_grad(
                [&](const SeqModel& s) {
                  return variant_loss<long double>(std::span<const PairExample>(pairs), s,
                                                   teacher, dcfg);
                },
                student);
          }
        }
        out.lm_loss = detail::add_lm_term(want_grad ? &out.grad : nullptr, student, lm_data,
                                          begin, end, dcfg.lambda);
        return out;
      });
}

// Word-level KD: mean per-step KL(p(.|s_t) || q(.|s_t)) over the contexts of
// the dataset responses, plus lambda * L_pt.
inline TrainResult run_word_kd(const TrainerConfig& cfg, const Corpus& train,
                               const SeqModel& teacher, const SeqModel& student_init,
                               const Corpus& pretrain = {}, const EvalContext& ctx_in = {}) {
  cfg.validate();
  detail::require_shared_shape(teacher, student_init, "run_word_kd");
  detail::require_corpus_vocab(train, student_init, "run_word_kd");
  EvalContext ctx = ctx_in;
  if (!ctx.teacher) ctx.teacher = &teacher;
  if (!ctx.valid && ctx.prompts.empty()) ctx.prompts = train.prompts();
  const auto lm_data = pretrain.lm_examples();
  return detail::train_loop(
      cfg, train.size(), student_init, ctx,
      [&](std::size_t begin, std::size_t end, const SeqModel& student, bool want_grad) {
        detail::StepOutput out;
        if (want_grad) out.grad = zero_grad(student);
        std::vector<std::size_t> rows;
        for (std::size_t i = begin; i < end; ++i)
          for_each_step(student, train.prompt(i), train.response(i),
                        [&](std::size_t row, TokenId) { rows.push_back(row); });
        const double inv = 1.0 / static_cast<double>(rows.size());
        double kl = 0.0;
        for (std::size_t row : rows) {
          const auto lp = log_softmax(teacher.logits().row(row));
          const auto lq = log_softmax(student.logits().row(row));
          kl += categorical_kl(lp, lq);
          if (want_grad) {
            auto g = out.grad.row(row);
            for (std::size_t v = 0; v < g.size(); ++v)
              g[v] += inv * (std::exp(lq[v]) - std::exp(lp[v]));
          }
        }
        out.kd_loss = kl * inv;
        out.lm_loss = detail::add_lm_term(want_grad ? &out.grad : nullptr, student, lm_data,
                                          begin, end, cfg.dpkd.lambda);
        return out;
      });
}

// SeqKD: MLE on n_samples teacher responses (prompts cycled in order).
inline TrainResult run_seqkd(const TrainerConfig& cfg, std::span<const Prompt> prompts,
                             const SeqModel& teacher, const SeqModel& student_init,
                             std::size_t n_samples, const EvalContext& ctx_in = {}) {
  cfg.validate();
  detail::require_shared_shape(teacher, student_init, "run_seqkd");
  if (n_samples > 0 && prompts.empty()) throw DomainError("run_seqkd: no prompts");
  std::vector<LmExample> data;
  data.reserve(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const Prompt& x = prompts[s % prompts.size()];
    data.push_back({x, sample(teacher, x, cfg.max_len, derive_seed(cfg.seed, s, kSeqKdRole),
                              cfg.temperature)});
  }
  EvalContext ctx = ctx_in;
  if (!ctx.teacher) ctx.teacher = &teacher;
  if (!ctx.valid && ctx.prompts.empty()) ctx.prompts.assign(prompts.begin(), prompts.end());
  return run_sft(cfg, std::span<const LmExample>(data), student_init, ctx);
}

// Reverse-KL baseline: mean over student samples of sum_t KL(q(.|s_t) || p(.|s_t)),
// with the contexts s_t held fixed and the gradient taken by central
// differences of those exact per-context terms.
inline TrainResult run_rkld(const TrainerConfig& cfg, std::span<const Prompt> prompts,
                            const SeqModel& teacher, const SeqModel& student_init,
                            const EvalContext& ctx_in = {}) {
  cfg.validate();
  detail::require_shared_shape(teacher, student_init, "run_rkld");
  EvalContext ctx = ctx_in;
  if (!ctx.teacher) ctx.teacher = &teacher;
  if (!ctx.valid && ctx.prompts.empty()) ctx.prompts.assign(prompts.begin(), prompts.end());
  return detail::train_loop(
      cfg, prompts.size(), student_init, ctx,
      [&](std::size_t begin, std::size_t end, const SeqModel& student, bool want_grad) {
        std::vector<std::size_t> rows;
        for (std::size_t i = begin; i < end; ++i) {
          const auto y = sample(student, prompts[i], cfg.max_len,
                                derive_seed(cfg.seed, i, kStudentRole), cfg.temperature);
          for_each_step(student, prompts[i], y, [&](std::size_t row, TokenId) { rows.push_back(row); });
        }
        const double inv = 1.0 / static_cast<double>(end - begin);
        auto objective = [&](const SeqModel& s) {
          double sum = 0.0;
          for (std::size_t row : rows)
            sum += categorical_kl(log_softmax(s.logits().row(row)),
                                  log_softmax(teacher.logits().row(row)));
          return sum * inv;
        };
        detail::StepOutput out;
        out.kd_loss = objective(student);
        if (want_grad) out.grad = numeric_grad(objective, student);
        return out;
      });
}

}  // namespace dpkd
