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

// Scalar objectives: Bradley-Terry preference, implicit reward, the
// preference distillation loss (plain and length-normalized), the LM
// regularizer, sequence-level forward/reverse KL, and the IPO/CPO/SimPO
// preference variants.

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpkd/error.hpp"
#include "dpkd/seqmodel.hpp"

namespace dpkd {

enum class Variant { dpkd, ipo, cpo, simpo };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::dpkd: return "dpkd";
    case Variant::ipo: return "ipo";
    case Variant::cpo: return "cpo";
    case Variant::simpo: return "simpo";
  }
  throw DomainError("unknown preference variant");
}

inline Variant parse_variant(std::string_view s) {
  if (s == "dpkd") return Variant::dpkd;
  if (s == "ipo") return Variant::ipo;
  if (s == "cpo") return Variant::cpo;
  if (s == "simpo") return Variant::simpo;
  throw DomainError("unknown preference variant '" + std::string(s) + "'");
}

struct DPKDConfig {
  double beta = 1.0;
  double lambda = 0.1;       // LM-loss weight
  bool length_norm = true;   // beta -> beta/|y| per trajectory
  Variant variant = Variant::dpkd;
  double tau = 0.5;          // IPO
  double gamma_margin = 1.0; // SimPO
  // CPO as printed: the sigma argument is the self-ratio log(q(y_t)/q(y_t))
  // and the bracketed NLL enters with a plus sign. false selects the
  // contrastive form -log sigma(beta log q(y_t)/q(y_s)) - log q(y_t).
  bool cpo_literal = true;

  void validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw DomainError("DPKDConfig: beta must be > 0");
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
      throw DomainError("DPKDConfig: lambda must be >= 0");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("DPKDConfig: tau must be > 0");
    if (!(gamma_margin >= 0.0) || !std::isfinite(gamma_margin))
      throw DomainError("DPKDConfig: gamma_margin must be >= 0");
    (void)to_string(variant);
  }
};

struct PairExample {
  Prompt x;
  Trajectory y_t;  // teacher response
  Trajectory y_s;  // student response
};

// One (prompt, text) item of the LM-regularizer corpus.
struct LmExample {
  Prompt x;
  Trajectory y;
};

struct LossBreakdown {
  double kd_loss = 0.0;
  double lm_loss = 0.0;
  double total = 0.0;
};

// ---------------------------------------------------------------------------
// Numerically stable sigmoid pieces.

template <class Real>
Real sigmoid(Real z) {
  if (z >= 0) return 1 / (1 + std::exp(-z));
  const Real e = std::exp(z);
  return e / (1 + e);
}

// log sigma(z) = -softplus(-z)
template <class Real>
Real log_sigmoid(Real z) {
  if (z >= 0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

// P(y1 > y2) = sigma(r1 - r2)
inline double bt_preference(double r1, double r2) { return sigmoid(r1 - r2); }

// beta * (log q(y|x) - log p(y|x))
inline double implicit_reward(const SeqModel& student, const SeqModel& teacher,
                              const Prompt& x, const Trajectory& y, double beta) {
  if (!(beta > 0.0)) throw DomainError("implicit_reward: beta must be > 0");
  return beta * (seq_logprob(student, x, y) - seq_logprob(teacher, x, y));
}

inline double dpkd_preference_prob(const SeqModel& student, const SeqModel& teacher,
                                   const Prompt& x, const Trajectory& y_t,
                                   const Trajectory& y_s, double beta) {
  return bt_preference(implicit_reward(student, teacher, x, y_t, beta),
                       implicit_reward(student, teacher, x, y_s, beta));
}

// The four log items of a pair: log p(y_t), log p(y_s), log q(y_t), log q(y_s).
template <class Real = double>
struct PairLogTerms {
  Real logq_t = 0;
  Real logp_t = 0;
  Real logq_s = 0;
  Real logp_s = 0;
  std::size_t len_t = 0;
  std::size_t len_s = 0;
};

template <class Real = double>
PairLogTerms<Real> pair_log_terms(const SeqModel& student, const SeqModel& teacher,
                                  const PairExample& pair) {
  return {seq_logprob<Real>(student, pair.x, pair.y_t),
          seq_logprob<Real>(teacher, pair.x, pair.y_t),
          seq_logprob<Real>(student, pair.x, pair.y_s),
          seq_logprob<Real>(teacher, pair.x, pair.y_s),
          pair.y_t.length(),
          pair.y_s.length()};
}

// Per-trajectory coefficient on the log-ratio: beta, or beta/|y| with length
// normalization (|y| counts generated tokens, EOS included).
template <class Real = double>
Real ratio_coefficient(double beta, bool length_norm, std::size_t len) {
  return length_norm ? static_cast<Real>(beta) / static_cast<Real>(len)
                     : static_cast<Real>(beta);
}

// Argument of sigma in the preference loss:
// c_t * log(q/p)(y_t) - c_s * log(q/p)(y_s).
template <class Real>
Real dpkd_margin(const PairLogTerms<Real>& t, double beta, bool length_norm) {
  return ratio_coefficient<Real>(beta, length_norm, t.len_t) * (t.logq_t - t.logp_t) -
         ratio_coefficient<Real>(beta, length_norm, t.len_s) * (t.logq_s - t.logp_s);
}

inline void require_nonempty(std::size_t n, const char* what) {
  if (n == 0) throw DomainError(std::string(what) + ": empty batch");
}

// Mean over the batch of -log sigma(margin).
template <class Real = double>
Real dpkd_loss(std::span<const PairExample> batch, const SeqModel& student,
               const SeqModel& teacher, const DPKDConfig& cfg) {
  require_nonempty(batch.size(), "dpkd_loss");
  cfg.validate();
  Real sum = 0;
  for (const auto& pair : batch)
    sum -= log_sigmoid(dpkd_margin(pair_log_terms<Real>(student, teacher, pair), cfg.beta,
                                   cfg.length_norm));
  return sum / static_cast<Real>(batch.size());
}

// Mean over examples of -log q(y|x) / |y|.
template <class Real = double>
Real lm_loss(const SeqModel& student, std::span<const LmExample> corpus_batch) {
  require_nonempty(corpus_batch.size(), "lm_loss");
  Real sum = 0;
  for (const auto& ex : corpus_batch)
    sum -= seq_logprob<Real>(student, ex.x, ex.y) / static_cast<Real>(ex.y.length());
  return sum / static_cast<Real>(corpus_batch.size());
}

// IPO / CPO / SimPO as defined alongside the DPKD loss; Variant::dpkd
// delegates to dpkd_loss.
template <class Real = double>
Real variant_loss(std::span<const PairExample> batch, const SeqModel& student,
                  const SeqModel& teacher, const DPKDConfig& cfg) {
  require_nonempty(batch.size(), "variant_loss");
  cfg.validate();
  if (cfg.variant == Variant::dpkd) return dpkd_loss<Real>(batch, student, teacher, cfg);
  const Real beta = static_cast<Real>(cfg.beta);
  Real sum = 0;
  for (const auto& pair : batch) {
    switch (cfg.variant) {
      case Variant::simpo: {
        const Real lq_t = seq_logprob<Real>(student, pair.x, pair.y_t);
        const Real lq_s = seq_logprob<Real>(student, pair.x, pair.y_s);
        const Real z = beta / static_cast<Real>(pair.y_t.length()) * lq_t -
                       beta / static_cast<Real>(pair.y_s.length()) * lq_s -
                       static_cast<Real>(cfg.gamma_margin);
        sum -= log_sigmoid(z);
        break;
      }
      case Variant::cpo: {
        const Real lq_t = seq_logprob<Real>(student, pair.x, pair.y_t);
        if (cfg.cpo_literal) {
          // log(q(y_t)/q(y_t)) is identically zero.
          sum += -(log_sigmoid(beta * (lq_t - lq_t)) - lq_t);
        } else {
          const Real lq_s = seq_logprob<Real>(student, pair.x, pair.y_s);
          sum += -log_sigmoid(beta * (lq_t - lq_s)) - lq_t;
        }
        break;
      }
      case Variant::ipo: {
        const auto t = pair_log_terms<Real>(student, teacher, pair);
        const Real h = (t.logq_t - t.logp_t) - (t.logq_s - t.logp_s) -
                       1 / (2 * static_cast<Real>(cfg.tau));
        sum += h * h;
        break;
      }
      default:
        throw DomainError("variant_loss: unknown variant");
    }
  }
  return sum / static_cast<Real>(batch.size());
}

// Distillation term for the configured variant.
template <class Real = double>
Real preference_loss(std::span<const PairExample> batch, const SeqModel& student,
                     const SeqModel& teacher, const DPKDConfig& cfg) {
  return cfg.variant == Variant::dpkd ? dpkd_loss<Real>(batch, student, teacher, cfg)
                                      : variant_loss<Real>(batch, student, teacher, cfg);
}

// L = L_kd + lambda * L_pt. An empty corpus batch contributes lm_loss = 0.
inline LossBreakdown total_loss(std::span<const PairExample> batch,
                                std::span<const LmExample> corpus_batch,
                                const SeqModel& student, const SeqModel& teacher,
                                const DPKDConfig& cfg) {
  LossBreakdown out;
  out.kd_loss = preference_loss(batch, student, teacher, cfg);
  out.lm_loss = corpus_batch.empty() ? 0.0 : lm_loss(student, corpus_batch);
  out.total = out.kd_loss + cfg.lambda * out.lm_loss;
  return out;
}

// ---------------------------------------------------------------------------
// Exact sequence-level KL divergences by joint enumeration of both models over
// the same trajectory space (terminated <= m plus truncated at m).

struct SequenceKl {
  double forward = 0.0;  // sum_y p log(p/q)
  double reverse = 0.0;  // sum_y q log(q/p)
};

inline SequenceKl sequence_kl(const SeqModel& student, const SeqModel& teacher,
                              const Prompt& x, int max_len,
                              std::uint64_t budget = kDefaultEnumerationBudget) {
  if (!student.same_shape(teacher))
    throw DomainError("sequence_kl: student and teacher must share vocabulary and order");
  check_enumeration_budget(student.vocab_size(), max_len, budget);
  const TokenId eos = student.vocab().eos();
  const std::size_t v = student.vocab_size();
  SequenceKl acc;
  auto visit = [&](auto&& self, const ContextCursor& cursor, int depth, double lq,
                   double lp) -> void {
    const auto lq_row = log_softmax(student.logits().row(cursor.row()));
    const auto lp_row = log_softmax(teacher.logits().row(cursor.row()));
    for (std::size_t a = 0; a < v; ++a) {
      const double nq = lq + lq_row[a];
      const double np = lp + lp_row[a];
      if (static_cast<TokenId>(a) == eos || depth + 1 == max_len) {
        acc.forward += std::exp(np) * (np - nq);
        acc.reverse += std::exp(nq) * (nq - np);
      } else {
        ContextCursor child = cursor;
        child.push(static_cast<TokenId>(a));
        self(self, child, depth + 1, nq, np);
      }
    }
  };
  visit(visit, ContextCursor(student, x), 0, 0.0, 0.0);
  // Rounding can leave -1e-17 on identical models.
  acc.forward = std::max(acc.forward, 0.0);
  acc.reverse = std::max(acc.reverse, 0.0);
  return acc;
}

inline double forward_kld(const SeqModel& student, const SeqModel& teacher, const Prompt& x,
                          int max_len) {
  return sequence_kl(student, teacher, x, max_len).forward;
}

inline double reverse_kld(const SeqModel& student, const SeqModel& teacher, const Prompt& x,
                          int max_len) {
  return sequence_kl(student, teacher, x, max_len).reverse;
}

enum class KlDirection { forward, reverse };

// KL between two categorical distributions given as log-probabilities.
inline double categorical_kl(std::span<const double> log_a, std::span<const double> log_b) {
  double kl = 0.0;
  for (std::size_t i = 0; i < log_a.size(); ++i)
    kl += std::exp(log_a[i]) * (log_a[i] - log_b[i]);
  return std::max(kl, 0.0);
}

// KL between first-step next-token distributions, averaged over prompts.
// forward = KL(p || q), reverse = KL(q || p).
inline double first_token_divergence(const SeqModel& student, const SeqModel& teacher,
                                     std::span<const Prompt> prompts, KlDirection direction) {
  if (prompts.empty()) throw DomainError("first_token_divergence: no prompts");
  if (!student.same_shape(teacher))
    throw DomainError("first_token_divergence: models must share vocabulary and order");
  double sum = 0.0;
  for (const auto& x : prompts) {
    const std::size_t row = ContextCursor(student, x).row();
    const auto lq = log_softmax(student.logits().row(row));
    const auto lp = log_softmax(teacher.logits().row(row));
    sum += direction == KlDirection::forward ? categorical_kl(lp, lq) : categorical_kl(lq, lp);
  }
  return sum / static_cast<double>(prompts.size());
}

}  // namespace dpkd
