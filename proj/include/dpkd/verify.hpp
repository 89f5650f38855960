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

// Self-check suite run by `dpkd verify`: exact oracles on small random
// instances, each reported with its worst residual and tolerance.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dpkd/eval.hpp"
#include "dpkd/gradients.hpp"
#include "dpkd/objectives.hpp"
#include "dpkd/oracles.hpp"
#include "dpkd/seeding.hpp"
#include "dpkd/seqmodel.hpp"
#include "json.hpp"

namespace dpkd {

struct OracleCheck {
  std::string name;
  double residual = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  int instances = 20;
  int max_len = 4;
};

// Vocabulary <bos>, <eos>, w0, w1, ... of the given size.
inline Vocab synthetic_vocab(std::size_t size) {
  if (size < 3) throw DomainError("synthetic_vocab: need at least 3 tokens");
  std::vector<std::string> tokens{"<bos>", "<eos>"};
  for (std::size_t i = 2; i < size; ++i) tokens.push_back("w" + std::to_string(i - 2));
  return Vocab(tokens, 0, 1);
}

// Logits drawn i.i.d. N(0, scale^2).
inline SeqModel random_model(const Vocab& vocab, int order, double scale, std::uint64_t seed) {
  return perturb(SeqModel::uniform(vocab, order), scale, seed);
}

inline Prompt random_prompt(const Vocab& vocab, std::size_t max_tokens, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> len(0, max_tokens);
  std::uniform_int_distribution<TokenId> tok(2, static_cast<TokenId>(vocab.size() - 1));
  Prompt x;
  const std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i) x.tokens.push_back(tok(rng));
  return x;
}

namespace detail {

inline OracleCheck make_check(std::string name, double residual, double tolerance) {
  return {std::move(name), residual, tolerance, std::isfinite(residual) && residual < tolerance};
}

}  // namespace detail

inline std::vector<OracleCheck> run_oracle_suite(const VerifyOptions& opt = {}) {
  std::vector<OracleCheck> out;
  std::mt19937_64 rng(derive_seed(opt.seed, 0xC0FFEE));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int m = opt.max_len;

  // Trajectory probabilities sum to one.
  {
    double worst = 0.0;
    for (int i = 0; i < opt.instances; ++i) {
      const Vocab v = synthetic_vocab(3 + i % 3);
      const SeqModel model = random_model(v, 1 + i % 2, 1.5, derive_seed(opt.seed, 1, i));
      const auto d = enumerate_distribution(model, random_prompt(v, 3, rng), m);
      worst = std::max(worst, std::abs(d.total() - 1.0));
    }
    out.push_back(detail::make_check("enumeration_normalizes", worst, 1e-12));
  }

  // Analytic gradient vs long-double central differences.
  {
    double worst = 0.0;
    for (int i = 0; i < opt.instances; ++i) {
      const Vocab v = synthetic_vocab(3 + i % 3);
      const int order = 1 + i % 2;
      const SeqModel student = random_model(v, order, 1.0, derive_seed(opt.seed, 2, i, 0));
      const SeqModel teacher = random_model(v, order, 1.0, derive_seed(opt.seed, 2, i, 1));
      DPKDConfig cfg;
      cfg.beta = 0.1 + 4.9 * unif(rng);
      cfg.length_norm = i % 2 == 0;
      std::vector<PairExample> batch;
      const int n = 1 + static_cast<int>(unif(rng) * 8);
      for (int b = 0; b < n; ++b) {
        const Prompt x = random_prompt(v, 3, rng);
        batch.push_back({x, sample(teacher, x, m, derive_seed(opt.seed, 2, i, b, 0)),
                         sample(student, x, m, derive_seed(opt.seed, 2, i, b, 1))});
      }
      const auto analytic = dpkd_grad(batch, student, teacher, cfg);
      const auto numeric = numeric_grad(
          [&](const SeqModel& s) {
            return dpkd_loss<long double>(std::span<const PairExample>(batch), s, teacher, cfg);
          },
          student);
      worst = std::max(worst, grad_check(analytic, numeric).max_rel_err);
    }
    out.push_back(detail::make_check("dpkd_gradient_vs_finite_differences", worst, 1e-5));
  }

  // Closed-form optimum: normalization, optimality against perturbations,
  // reward recovery.
  {
    double norm = 0.0, recovery = 0.0, shortfall = 0.0;
    for (int i = 0; i < opt.instances; ++i) {
      const Vocab v = synthetic_vocab(4);
      const SeqModel teacher = random_model(v, 2, 1.0, derive_seed(opt.seed, 3, i));
      const Prompt x = random_prompt(v, 2, rng);
      const double beta = 0.1 + 4.9 * unif(rng);
      std::normal_distribution<double> gauss(0.0, 1.0);
      const auto reward =
          make_reward_table(teacher, x, m, [&](const Trajectory&) { return gauss(rng); });
      const auto q_star = optimal_student(teacher, reward, beta, x);
      norm = std::max(norm, std::abs(q_star.total() - 1.0));
      const auto p = enumerate_distribution(teacher, x, m);
      const double best = objective_value(q_star, p, reward, beta);
      for (int k = 0; k < 50; ++k) {
        TrajectoryDistribution d = q_star;
        double total = 0.0;
        for (double& w : d.prob) {
          w *= std::exp(0.5 * gauss(rng));
          total += w;
        }
        for (double& w : d.prob) w /= total;
        shortfall = std::max(shortfall, objective_value(d, p, reward, beta) - best);
      }
      const auto r = reward_from_policies(q_star, teacher, beta,
                                          partition_z(teacher, reward, beta, x), x);
      for (std::size_t k = 0; k < r.reward.size(); ++k)
        recovery = std::max(recovery, std::abs(r.reward[k] - reward.reward[k]));
    }
    out.push_back(detail::make_check("optimal_student_normalizes", norm, 1e-9));
    // Perturbed distributions never score above q*; the residual is the
    // largest excess (0 when all are below).
    out.push_back(detail::make_check("optimal_student_beats_perturbations",
                                     std::max(shortfall, 0.0), 1e-12));
    out.push_back(detail::make_check("reward_round_trip", recovery, 1e-9));
  }

  // Soft-Bellman telescoping along every EOS-terminated trajectory.
  {
    double worst = 0.0;
    for (int i = 0; i < opt.instances; ++i) {
      const Vocab v = synthetic_vocab(3 + i % 2);
      const SeqModel teacher = random_model(v, 1 + i % 2, 1.0, derive_seed(opt.seed, 4, i));
      const Prompt x = random_prompt(v, 2, rng);
      const double beta = 0.2 + 2.0 * unif(rng);
      const std::uint64_t rs = derive_seed(opt.seed, 4, i, 1);
      const StepReward reward = [rs](std::span<const TokenId> prefix, TokenId a) {
        std::uint64_t h = rs;
        for (TokenId t : prefix) h = mix64(h ^ static_cast<std::uint64_t>(t + 7));
        h = mix64(h ^ static_cast<std::uint64_t>(a + 101));
        return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
      };
      const auto table = build_q_table(teacher, reward, beta, x, m);
      for (const auto& st : enumerate_trajectories(teacher, x, m)) {
        if (!st.trajectory.terminated) continue;
        worst = std::max(worst,
                         std::abs(telescoping_check(teacher, table, beta, x, st.trajectory, reward)));
      }
    }
    out.push_back(detail::make_check("q_telescoping", worst, 1e-9));
  }

  // Step-wise vs sequence-level preference probability.
  {
    double worst = 0.0;
    for (int i = 0; i < opt.instances * 10; ++i) {
      const Vocab v = synthetic_vocab(5);
      const SeqModel student = random_model(v, 2, 1.0, derive_seed(opt.seed, 5, i, 0));
      const SeqModel teacher = random_model(v, 2, 1.0, derive_seed(opt.seed, 5, i, 1));
      const Prompt x = random_prompt(v, 3, rng);
      Trajectory y_t = sample(teacher, x, 8, derive_seed(opt.seed, 5, i, 2));
      Trajectory y_s = sample(student, x, 8, derive_seed(opt.seed, 5, i, 3));
      if (!y_t.terminated || !y_s.terminated) continue;
      worst = std::max(worst, pl_bt_equivalence(student, teacher, 0.1 + 4.9 * unif(rng), x, y_t,
                                                y_s).diff);
    }
    out.push_back(detail::make_check("plackett_luce_matches_bradley_terry", worst, 1e-12));
  }

  // Loss floor at student == teacher and BT complementarity.
  {
    double floor = 0.0;
    for (int i = 0; i < opt.instances; ++i) {
      const Vocab v = synthetic_vocab(5);
      const SeqModel teacher = random_model(v, 2, 1.0, derive_seed(opt.seed, 6, i));
      std::vector<PairExample> batch;
      for (int b = 0; b < 4; ++b) {
        const Prompt x = random_prompt(v, 3, rng);
        batch.push_back({x, sample(teacher, x, m, derive_seed(opt.seed, 6, i, b, 0)),
                         sample(teacher, x, m, derive_seed(opt.seed, 6, i, b, 1))});
      }
      DPKDConfig cfg;
      cfg.length_norm = i % 2 == 0;
      floor = std::max(floor, std::abs(dpkd_loss(std::span<const PairExample>(batch), teacher,
                                                 teacher, cfg) -
                                       std::log(2.0)));
    }
    out.push_back(detail::make_check("dpkd_loss_floor_ln2", floor, 1e-12));
    double sym = 0.0;
    std::normal_distribution<double> gauss(0.0, 5.0);
    for (int i = 0; i < 10000; ++i) {
      const double a = gauss(rng), b = gauss(rng);
      sym = std::max(sym, std::abs(bt_preference(a, b) + bt_preference(b, a) - 1.0));
    }
    out.push_back(detail::make_check("bt_complementarity", sym, 1e-12));
  }

  // Rouge-L worked example: "a b c d" vs "a c d".
  out.push_back(detail::make_check("rouge_l_worked_example",
                                   std::abs(rouge_l("a b c d", "a c d") - 6.0 / 7.0), 1e-12));
  return out;
}

inline bool all_passed(const std::vector<OracleCheck>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

inline nlohmann::ordered_json to_json(const std::vector<OracleCheck>& checks) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& c : checks)
    arr.push_back({{"name", c.name},
                   {"residual", c.residual},
                   {"tolerance", c.tolerance},
                   {"passed", c.passed}});
  return arr;
}

}  // namespace dpkd
