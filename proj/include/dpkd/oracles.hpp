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

// Exact, enumeration-backed checks of the KL-regularized reward view of
// distillation:
//
//   J(q) = E_q[r(x,y)] - beta * KL(q || p)
//   Z(x) = sum_y p(y|x) exp(r(x,y)/beta)
//   q*(y|x) = p(y|x) exp(r(x,y)/beta) / Z(x)
//   r(x,y) = beta log(q*/p) + beta log Z(x)
//
// and of the token-level soft-Bellman view, where the state is the prompt plus
// the generated prefix and the action is the next token:
//
//   Q*(s,a) = r(s,a) + beta log p(a|s) + V*(s·a),  V* = 0 at EOS
//   V*(s)   = beta log sum_a exp(Q*(s,a)/beta)
//   q*(a|s) = exp((Q*(s,a) - V*(s))/beta)

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "dpkd/error.hpp"
#include "dpkd/objectives.hpp"
#include "dpkd/seqmodel.hpp"

namespace dpkd {

// Probability distribution over an enumerated trajectory space.
struct TrajectoryDistribution {
  Prompt x;
  int max_len = 0;
  std::vector<Trajectory> support;
  std::vector<double> prob;

  double total() const {
    double s = 0.0;
    for (double p : prob) s += p;
    return s;
  }
};

inline TrajectoryDistribution enumerate_distribution(const SeqModel& model, const Prompt& x,
                                                     int max_len) {
  TrajectoryDistribution d{x, max_len, {}, {}};
  for (auto& st : enumerate_trajectories(model, x, max_len)) {
    d.support.push_back(std::move(st.trajectory));
    d.prob.push_back(st.prob);
  }
  return d;
}

// Sequence-level reward r(x, y) over the full enumerated space of a prompt.
struct RewardTable {
  Prompt x;
  int max_len = 0;
  std::vector<Trajectory> support;
  std::vector<double> reward;

  double at(const Trajectory& y) const {
    for (std::size_t i = 0; i < support.size(); ++i)
      if (support[i] == y) return reward[i];
    throw DomainError("RewardTable: trajectory outside the enumerated space");
  }
};

// Reward table over the trajectory space of `model` at (x, max_len).
template <class Fn>
RewardTable make_reward_table(const SeqModel& model, const Prompt& x, int max_len, Fn&& fn) {
  RewardTable t{x, max_len, {}, {}};
  for (auto& st : enumerate_trajectories(model, x, max_len)) {
    const double r = fn(st.trajectory);
    if (!std::isfinite(r)) throw DomainError("RewardTable: non-finite reward");
    t.reward.push_back(r);
    t.support.push_back(std::move(st.trajectory));
  }
  return t;
}

namespace detail {

inline void require_same_support(const std::vector<Trajectory>& a,
                                 const std::vector<Trajectory>& b) {
  if (a.size() != b.size()) throw DomainError("support size mismatch");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a[i] == b[i])) throw DomainError("support order mismatch");
}

}  // namespace detail

// E_d[r] - beta * KL(d || p) for an arbitrary distribution d on the reward's
// support; zero-probability entries contribute nothing.
inline double objective_value(const TrajectoryDistribution& d,
                              const TrajectoryDistribution& teacher,
                              const RewardTable& reward, double beta) {
  if (!(beta > 0.0)) throw DomainError("objective_value: beta must be > 0");
  detail::require_same_support(d.support, reward.support);
  detail::require_same_support(teacher.support, reward.support);
  double expected_reward = 0.0;
  double kl = 0.0;
  for (std::size_t i = 0; i < d.prob.size(); ++i) {
    const double q = d.prob[i];
    if (q == 0.0) continue;
    expected_reward += q * reward.reward[i];
    kl += q * (std::log(q) - std::log(teacher.prob[i]));
  }
  return expected_reward - beta * kl;
}

inline double objective_value(const SeqModel& student, const SeqModel& teacher,
                              const RewardTable& reward, double beta, const Prompt& x,
                              int max_len) {
  return objective_value(enumerate_distribution(student, x, max_len),
                         enumerate_distribution(teacher, x, max_len), reward, beta);
}

// Z(x) = sum_y p(y|x) exp(r/beta), summed directly.
inline double partition_z(const SeqModel& teacher, const RewardTable& reward, double beta,
                          const Prompt& x) {
  if (!(beta > 0.0)) throw DomainError("partition_z: beta must be > 0");
  const auto p = enumerate_trajectories(teacher, x, reward.max_len);
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i].trajectory == reward.support[i]))
      throw DomainError("partition_z: reward table does not match teacher support");
    z += p[i].prob * std::exp(reward.reward[i] / beta);
  }
  return z;
}

// log Z(x) via log-sum-exp over (log p + r/beta).
inline double log_partition_z(const SeqModel& teacher, const RewardTable& reward, double beta,
                              const Prompt& x) {
  if (!(beta > 0.0)) throw DomainError("log_partition_z: beta must be > 0");
  const auto p = enumerate_trajectories(teacher, x, reward.max_len);
  detail::require_same_support(reward.support, [&] {
    std::vector<Trajectory> s;
    for (const auto& st : p) s.push_back(st.trajectory);
    return s;
  }());
  std::vector<double> terms;
  for (std::size_t i = 0; i < p.size(); ++i) terms.push_back(p[i].logprob + reward.reward[i] / beta);
  return log_sum_exp(terms);
}

// q*(y|x) = p(y|x) exp(r/beta) / Z(x), computed in log space.
inline TrajectoryDistribution optimal_student(const SeqModel& teacher, const RewardTable& reward,
                                              double beta, const Prompt& x) {
  const double log_z = log_partition_z(teacher, reward, beta, x);
  const auto p = enumerate_trajectories(teacher, x, reward.max_len);
  TrajectoryDistribution q{x, reward.max_len, {}, {}};
  for (std::size_t i = 0; i < p.size(); ++i) {
    q.support.push_back(p[i].trajectory);
    q.prob.push_back(std::exp(p[i].logprob + reward.reward[i] / beta - log_z));
  }
  return q;
}

// r*(x,y) = beta log(q*/p) + beta log Z(x).
inline RewardTable reward_from_policies(const TrajectoryDistribution& q_star,
                                        const SeqModel& teacher, double beta, double z,
                                        const Prompt& x) {
  if (!(beta > 0.0)) throw DomainError("reward_from_policies: beta must be > 0");
  if (!(z > 0.0)) throw DomainError("reward_from_policies: Z must be > 0");
  const auto p = enumerate_trajectories(teacher, x, q_star.max_len);
  RewardTable r{x, q_star.max_len, {}, {}};
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i].trajectory == q_star.support[i]))
      throw DomainError("reward_from_policies: support mismatch");
    if (!(q_star.prob[i] > 0.0))
      throw DomainError("reward_from_policies: q* has zero mass on a trajectory");
    r.support.push_back(p[i].trajectory);
    r.reward.push_back(beta * (std::log(q_star.prob[i]) - p[i].logprob) + beta * std::log(z));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Token-level view.

// Per-step reward r(s_t, a_t); `prefix` is the generated part of s_t (the
// prompt is fixed per table).
using StepReward = std::function<double(std::span<const TokenId> prefix, TokenId action)>;

// Sum_t r(s_t, a_t) along a trajectory.
inline double sequence_reward(const StepReward& reward, const Trajectory& y) {
  double total = 0.0;
  for (std::size_t t = 0; t < y.tokens.size(); ++t)
    total += reward(std::span<const TokenId>(y.tokens.data(), t), y.tokens[t]);
  return total;
}

struct QTable {
  Prompt x;
  int max_len = 0;
  double beta = 1.0;
  double gamma = 1.0;  // undiscounted
  TokenId eos = 1;
  std::map<std::vector<TokenId>, std::vector<double>> q;  // non-terminal states
  std::map<std::vector<TokenId>, double> v;               // every state

  // EOS-terminated or length-m (truncated) prefixes take no further action.
  bool is_terminal(std::span<const TokenId> prefix) const {
    return (!prefix.empty() && prefix.back() == eos) ||
           static_cast<int>(prefix.size()) == max_len;
  }

  double value(std::span<const TokenId> prefix) const {
    auto it = v.find(std::vector<TokenId>(prefix.begin(), prefix.end()));
    if (it == v.end()) throw DomainError("QTable: state outside the enumerated tree");
    return it->second;
  }

  double q_value(std::span<const TokenId> prefix, TokenId action) const {
    auto it = q.find(std::vector<TokenId>(prefix.begin(), prefix.end()));
    if (it == q.end()) throw DomainError("QTable: no actions at this state");
    return it->second.at(static_cast<std::size_t>(action));
  }

  // log q*(a|s) = (Q*(s,a) - V*(s)) / beta
  double log_policy(std::span<const TokenId> prefix, TokenId action) const {
    return (q_value(prefix, action) - value(prefix)) / beta;
  }
  double policy(std::span<const TokenId> prefix, TokenId action) const {
    return std::exp(log_policy(prefix, action));
  }
};

// Backward induction over the full prefix tree of (x, max_len).
inline QTable build_q_table(const SeqModel& teacher, const StepReward& reward, double beta,
                            const Prompt& x, int max_len,
                            std::uint64_t budget = kDefaultEnumerationBudget) {
  if (!(beta > 0.0)) throw DomainError("build_q_table: beta must be > 0");
  check_enumeration_budget(teacher.vocab_size(), max_len, budget);
  QTable table;
  table.x = x;
  table.max_len = max_len;
  table.beta = beta;
  table.eos = teacher.vocab().eos();
  const std::size_t v = teacher.vocab_size();
  std::vector<TokenId> prefix;

  auto solve = [&](auto&& self, const ContextCursor& cursor) -> double {
    if (table.is_terminal(prefix)) {
      table.v[prefix] = 0.0;
      return 0.0;
    }
    const auto log_p = log_softmax(teacher.logits().row(cursor.row()));
    std::vector<double> q_row(v);
    for (std::size_t a = 0; a < v; ++a) {
      const TokenId tok = static_cast<TokenId>(a);
      const double r = reward(prefix, tok);
      if (!std::isfinite(r)) throw DomainError("build_q_table: non-finite step reward");
      prefix.push_back(tok);
      ContextCursor child = cursor;
      child.push(tok);
      const double v_next = self(self, child);
      prefix.pop_back();
      q_row[a] = r + beta * log_p[a] + table.gamma * v_next;
    }
    std::vector<double> scaled(v);
    for (std::size_t a = 0; a < v; ++a) scaled[a] = q_row[a] / beta;
    const double value = beta * log_sum_exp(scaled);
    table.q[prefix] = std::move(q_row);
    table.v[prefix] = value;
    return value;
  };
  solve(solve, ContextCursor(teacher, x));
  return table;
}

// Sum_t r(s_t,a_t) - [V*(s_0) + beta * Sum_t log(q*(a_t|s_t) / p(a_t|s_t))]
// along an EOS-terminated trajectory, with q* and V* read from `q_policy`.
inline double telescoping_check(const SeqModel& teacher, const QTable& q_policy, double beta,
                                const Prompt& x, const Trajectory& y,
                                const StepReward& reward) {
  check_trajectory(teacher, y);
  if (!y.terminated) throw DomainError("telescoping_check: trajectory must end with EOS");
  double rewards = 0.0;
  double log_ratios = 0.0;
  ContextCursor cursor(teacher, x);
  for (std::size_t t = 0; t < y.tokens.size(); ++t) {
    const std::span<const TokenId> prefix(y.tokens.data(), t);
    const TokenId a = y.tokens[t];
    const auto log_p = log_softmax(teacher.logits().row(cursor.row()));
    rewards += reward(prefix, a);
    log_ratios += q_policy.log_policy(prefix, a) - log_p[static_cast<std::size_t>(a)];
    cursor.push(a);
  }
  return rewards - (q_policy.value({}) + beta * log_ratios);
}

struct PlBtResult {
  double lhs = 0.0;   // from per-step sums of beta log(q/p)
  double rhs = 0.0;   // sequence-level preference probability
  double diff = 0.0;  // |lhs - rhs|
};

// Trajectory preference built from per-step log-ratios versus the
// sequence-level implicit-reward preference.
inline PlBtResult pl_bt_equivalence(const SeqModel& student, const SeqModel& teacher,
                                    double beta, const Prompt& x, const Trajectory& y_t,
                                    const Trajectory& y_s) {
  if (!y_t.terminated || !y_s.terminated)
    throw DomainError("pl_bt_equivalence: both trajectories must end with EOS");
  auto stepwise_return = [&](const Trajectory& y) {
    std::vector<TokenId> context = x.tokens;
    double total = 0.0;
    for (TokenId a : y.tokens) {
      const auto q = next_token_dist(student, context);
      const auto p = next_token_dist(teacher, context);
      total += beta * (std::log(q[static_cast<std::size_t>(a)]) -
                       std::log(p[static_cast<std::size_t>(a)]));
      context.push_back(a);
    }
    return total;
  };
  PlBtResult out;
  out.lhs = sigmoid(stepwise_return(y_t) - stepwise_return(y_s));
  out.rhs = dpkd_preference_prob(student, teacher, x, y_t, y_s, beta);
  out.diff = std::abs(out.lhs - out.rhs);
  return out;
}

}  // namespace dpkd
