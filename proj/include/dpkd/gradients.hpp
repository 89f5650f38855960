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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "dpkd/error.hpp"
#include "dpkd/objectives.hpp"
#include "dpkd/seqmodel.hpp"
#include "dpkd/table.hpp"
#include "json.hpp"

namespace dpkd {

// dL/d(logits), same index structure as SeqModel::logits().
using GradTable = Table;

inline GradTable zero_grad(const SeqModel& model) {
  return GradTable(model.logits().rows(), model.logits().cols(), 0.0);
}

// grad += scale * d/d(logits) log q(y|x). Each step contributes
// (onehot(y_t) - q(.|s_t)) to the row of s_t.
inline void accumulate_logprob_grad(GradTable& grad, const SeqModel& model, const Prompt& x,
                                    const Trajectory& y, double scale) {
  check_trajectory(model, y);
  for_each_step(model, x, y, [&](std::size_t row, TokenId tok) {
    const auto q = softmax(model.logits().row(row));
    auto g = grad.row(row);
    for (std::size_t v = 0; v < q.size(); ++v) g[v] -= scale * q[v];
    g[static_cast<std::size_t>(tok)] += scale;
  });
}

inline GradTable logprob_grad(const SeqModel& model, const Prompt& x, const Trajectory& y) {
  GradTable g = zero_grad(model);
  accumulate_logprob_grad(g, model, x, y, 1.0);
  return g;
}

// sigma(-margin) for each pair: the factor that scales the pair's
// score-difference term. Equals 1 - P(y_t > y_s) under the implicit reward
// (with per-trajectory beta/|y| under length normalization).
inline std::vector<double> dpkd_pair_weights(std::span<const PairExample> batch,
                                             const SeqModel& student, const SeqModel& teacher,
                                             const DPKDConfig& cfg) {
  std::vector<double> w;
  w.reserve(batch.size());
  for (const auto& pair : batch)
    w.push_back(sigmoid(-dpkd_margin(pair_log_terms(student, teacher, pair), cfg.beta,
                                     cfg.length_norm)));
  return w;
}

// Analytic gradient of dpkd_loss:
//   -mean_i sigma(-m_i) * (c_t grad log q(y_t) - c_s grad log q(y_s))
// with c = beta (or beta/|y| under length normalization).
inline GradTable dpkd_grad(std::span<const PairExample> batch, const SeqModel& student,
                           const SeqModel& teacher, const DPKDConfig& cfg) {
  require_nonempty(batch.size(), "dpkd_grad");
  cfg.validate();
  if (cfg.variant != Variant::dpkd)
    throw DomainError("dpkd_grad: analytic gradient exists only for the dpkd variant");
  GradTable grad = zero_grad(student);
  const auto weights = dpkd_pair_weights(batch, student, teacher, cfg);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& pair = batch[i];
    const double c_t = ratio_coefficient(cfg.beta, cfg.length_norm, pair.y_t.length());
    const double c_s = ratio_coefficient(cfg.beta, cfg.length_norm, pair.y_s.length());
    accumulate_logprob_grad(grad, student, pair.x, pair.y_t, -inv_n * weights[i] * c_t);
    accumulate_logprob_grad(grad, student, pair.x, pair.y_s, inv_n * weights[i] * c_s);
  }
  return grad;
}

// Gradient of lm_loss (mean over examples of -log q(y|x)/|y|).
inline GradTable lm_grad(const SeqModel& student, std::span<const LmExample> corpus_batch) {
  require_nonempty(corpus_batch.size(), "lm_grad");
  GradTable grad = zero_grad(student);
  const double inv_n = 1.0 / static_cast<double>(corpus_batch.size());
  for (const auto& ex : corpus_batch)
    accumulate_logprob_grad(grad, student, ex.x, ex.y,
                            -inv_n / static_cast<double>(ex.y.length()));
  return grad;
}

using Objective = std::function<double(const SeqModel&)>;

inline constexpr double kDefaultFiniteDifferenceStep = 1e-4;

// Central differences (f(theta + h e_i) - f(theta - h e_i)) / 2h over every
// logit; 2 * #logits objective evaluations. The difference is taken in the
// objective's own return type, so a long double objective resolves gradients
// far below the rounding of a double-valued loss.
template <class Fn>
GradTable numeric_grad(Fn&& objective, const SeqModel& student,
                       double h = kDefaultFiniteDifferenceStep) {
  if (!(h > 0.0) || !std::isfinite(h)) throw DomainError("numeric_grad: h must be > 0");
  GradTable grad = zero_grad(student);
  SeqModel probe = student;
  auto values = probe.logits().values();
  auto out = grad.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double step_up = values[i] - saved;
    const auto f_plus = objective(static_cast<const SeqModel&>(probe));
    values[i] = saved - h;
    const double step_down = saved - values[i];
    const auto f_minus = objective(static_cast<const SeqModel&>(probe));
    values[i] = saved;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
      throw NumericError("numeric_grad: objective is not finite near coordinate " +
                         std::to_string(i));
    using R = std::common_type_t<decltype(f_plus), double>;
    // Divide by the representable step actually taken.
    out[i] = static_cast<double>((f_plus - f_minus) / (static_cast<R>(step_up) + step_down));
  }
  return grad;
}

struct GradCheckReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::size_t worst_row = 0;  // coordinate with the largest relative error
  std::size_t worst_col = 0;
};

// Relative error uses max(|a|, |n|, 1e-8) as denominator.
inline GradCheckReport grad_check(const GradTable& analytic, const GradTable& numeric) {
  if (!analytic.same_shape(numeric)) throw DomainError("grad_check: shape mismatch");
  GradCheckReport rep;
  for (std::size_t r = 0; r < analytic.rows(); ++r) {
    for (std::size_t c = 0; c < analytic.cols(); ++c) {
      const double a = analytic(r, c);
      const double n = numeric(r, c);
      const double abs_err = std::abs(a - n);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(n), 1e-8});
      rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
      if (rel_err > rep.max_rel_err) {
        rep.max_rel_err = rel_err;
        rep.worst_row = r;
        rep.worst_col = c;
      }
    }
  }
  return rep;
}

inline nlohmann::ordered_json to_json(const GradCheckReport& r) {
  return {{"max_abs_err", r.max_abs_err},
          {"max_rel_err", r.max_rel_err},
          {"worst_coordinate", {{"row", r.worst_row}, {"col", r.worst_col}}}};
}

}  // namespace dpkd
