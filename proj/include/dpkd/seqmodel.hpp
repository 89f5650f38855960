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

// Tabular order-k autoregressive sequence model. The same type plays the
// teacher and the student; every distribution it defines over bounded-length
// trajectories can be enumerated exactly.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "dpkd/error.hpp"
#include "dpkd/table.hpp"
#include "json.hpp"

namespace dpkd {

using TokenId = std::int32_t;

class Vocab {
 public:
  Vocab() = default;
  Vocab(std::vector<std::string> tokens, TokenId bos_id, TokenId eos_id,
        std::optional<TokenId> unk_id = std::nullopt)
      : tokens_(std::move(tokens)), bos_(bos_id), eos_(eos_id), unk_(unk_id) {
    if (tokens_.size() < 3)
      throw DomainError("Vocab: need at least BOS, EOS and one content token");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i].empty()) throw DomainError("Vocab: empty token string");
      if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
        throw DomainError("Vocab: duplicate token '" + tokens_[i] + "'");
    }
    if (!contains(bos_) || !contains(eos_))
      throw DomainError("Vocab: bos/eos id out of range");
    if (bos_ == eos_) throw DomainError("Vocab: bos_id must differ from eos_id");
    if (unk_ && (!contains(*unk_) || *unk_ == bos_ || *unk_ == eos_))
      throw DomainError("Vocab: invalid unk id");
  }

  std::size_t size() const { return tokens_.size(); }
  TokenId bos() const { return bos_; }
  TokenId eos() const { return eos_; }
  std::optional<TokenId> unk() const { return unk_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool contains(TokenId id) const {
    return id >= 0 && static_cast<std::size_t>(id) < tokens_.size();
  }
  const std::string& token(TokenId id) const {
    if (!contains(id)) throw DomainError(fmt::format("Vocab: invalid token id {}", id));
    return tokens_[static_cast<std::size_t>(id)];
  }
  std::optional<TokenId> find(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.tokens_ == b.tokens_ && a.bos_ == b.bos_ && a.eos_ == b.eos_ &&
           a.unk_ == b.unk_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId bos_ = 0;
  TokenId eos_ = 1;
  std::optional<TokenId> unk_;
};

// x = {x_0, ..., x_{l-1}}; never contains EOS.
struct Prompt {
  std::vector<TokenId> tokens;
  friend bool operator==(const Prompt&, const Prompt&) = default;
};

// Generated continuation. `terminated` means the last token is EOS; otherwise
// generation was cut at the maximum length.
struct Trajectory {
  std::vector<TokenId> tokens;
  bool terminated = false;

  std::size_t length() const { return tokens.size(); }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

class SeqModel {
 public:
  SeqModel() = default;
  SeqModel(Vocab vocab, int order, Table logits)
      : vocab_(std::move(vocab)), order_(order), logits_(std::move(logits)) {
    if (order_ < 1) throw DomainError("SeqModel: order must be positive");
    const std::size_t v = vocab_.size();
    std::size_t rows = 1;
    for (int i = 0; i < order_; ++i) {
      if (rows > std::numeric_limits<std::size_t>::max() / v)
        throw CapacityError("SeqModel: context table too large");
      rows *= v;
    }
    if (logits_.rows() != rows || logits_.cols() != v)
      throw DomainError(fmt::format("SeqModel: logits must be {}x{}, got {}x{}", rows,
                                    v, logits_.rows(), logits_.cols()));
    for (double x : logits_.values())
      if (!std::isfinite(x)) throw DomainError("SeqModel: non-finite logit");
  }

  static SeqModel uniform(Vocab vocab, int order) {
    std::size_t rows = 1;
    for (int i = 0; i < order; ++i) rows *= vocab.size();
    const std::size_t cols = vocab.size();
    return SeqModel(std::move(vocab), order, Table(rows, cols, 0.0));
  }

  const Vocab& vocab() const { return vocab_; }
  int order() const { return order_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  std::size_t num_contexts() const { return logits_.rows(); }

  const Table& logits() const { return logits_; }
  // Mutable access for optimizers; callers keep every entry finite.
  Table& logits() { return logits_; }

  void check_token(TokenId id) const {
    if (!vocab_.contains(id))
      throw DomainError(fmt::format("invalid token id {} for vocabulary of size {}", id,
                                    vocab_.size()));
  }

  // Row of the last `order` tokens of `context`, left-padded with BOS.
  std::size_t context_row(std::span<const TokenId> context) const {
    const std::size_t v = vocab_.size();
    std::size_t row = 0;
    const std::size_t k = static_cast<std::size_t>(order_);
    for (std::size_t i = 0; i < k; ++i) {
      TokenId tok = vocab_.bos();
      const std::size_t pad = k > context.size() ? k - context.size() : 0;
      if (i >= pad) tok = context[context.size() - k + i];
      check_token(tok);
      row = row * v + static_cast<std::size_t>(tok);
    }
    return row;
  }

  bool same_shape(const SeqModel& other) const {
    return vocab_ == other.vocab_ && order_ == other.order_;
  }

  friend bool operator==(const SeqModel& a, const SeqModel& b) {
    return a.same_shape(b) && a.logits_ == b.logits_;
  }

 private:
  Vocab vocab_;
  int order_ = 1;
  Table logits_;
};

// Tracks the table row for (prompt ++ generated prefix) as tokens are appended.
class ContextCursor {
 public:
  ContextCursor(const SeqModel& model, const Prompt& prompt)
      : v_(model.vocab_size()), modulus_(model.num_contexts()) {
    row_ = 0;
    for (int i = 0; i < model.order(); ++i)
      row_ = row_ * v_ + static_cast<std::size_t>(model.vocab().bos());
    for (TokenId t : prompt.tokens) {
      model.check_token(t);
      if (t == model.vocab().eos()) throw DomainError("prompt must not contain EOS");
      push(t);
    }
  }

  std::size_t row() const { return row_; }
  void push(TokenId t) { row_ = (row_ * v_ + static_cast<std::size_t>(t)) % modulus_; }

 private:
  std::size_t v_;
  std::size_t modulus_;
  std::size_t row_ = 0;
};

// Real selects the accumulation type; gradient checks evaluate objectives in
// long double so that finite differences resolve below double rounding.
template <class Real = double>
Real log_sum_exp(std::span<const double> xs) {
  Real m = -std::numeric_limits<Real>::infinity();
  for (double x : xs) m = std::max(m, static_cast<Real>(x));
  if (!std::isfinite(m)) return m;
  Real s = 0;
  for (double x : xs) s += std::exp(static_cast<Real>(x) - m);
  return m + std::log(s);
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
  return p;
}

inline std::vector<double> log_softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> lp(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) lp[i] = logits[i] - lse;
  return lp;
}

inline std::vector<double> next_token_dist(const SeqModel& model,
                                           std::span<const TokenId> context) {
  for (TokenId t : context) model.check_token(t);
  return softmax(model.logits().row(model.context_row(context)));
}

inline std::vector<double> next_token_dist(const SeqModel& model, const Prompt& x) {
  return next_token_dist(model, std::span<const TokenId>(x.tokens));
}

inline void check_trajectory(const SeqModel& model, const Trajectory& y) {
  if (y.tokens.empty()) throw DomainError("trajectory must be nonempty");
  const TokenId eos = model.vocab().eos();
  for (std::size_t i = 0; i < y.tokens.size(); ++i) {
    model.check_token(y.tokens[i]);
    if (y.tokens[i] == eos && i + 1 != y.tokens.size())
      throw DomainError("EOS may only appear as the final token");
  }
  if (y.terminated != (y.tokens.back() == eos))
    throw DomainError("trajectory terminated flag disagrees with final token");
}

// Visits every generation step: fn(row, token) with the table row of the
// state s_t and the action y_t.
template <class Fn>
void for_each_step(const SeqModel& model, const Prompt& x, const Trajectory& y, Fn&& fn) {
  ContextCursor cursor(model, x);
  for (TokenId t : y.tokens) {
    fn(cursor.row(), t);
    cursor.push(t);
  }
}

// log q(y|x): sum of per-step next-token log-probabilities, EOS step included.
template <class Real = double>
Real seq_logprob(const SeqModel& model, const Prompt& x, const Trajectory& y) {
  check_trajectory(model, y);
  Real total = 0;
  for_each_step(model, x, y, [&](std::size_t row, TokenId t) {
    const auto r = model.logits().row(row);
    total += static_cast<Real>(r[static_cast<std::size_t>(t)]) - log_sum_exp<Real>(r);
  });
  return total;
}

// Ancestral sampling. temperature == 0 selects the argmax (lowest id on ties).
inline Trajectory sample(const SeqModel& model, const Prompt& x, int max_len,
                         std::uint64_t seed, double temperature = 1.0) {
  if (max_len < 1) throw DomainError("sample: max_len must be >= 1");
  if (temperature < 0.0 || !std::isfinite(temperature))
    throw DomainError("sample: temperature must be finite and >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  ContextCursor cursor(model, x);
  const TokenId eos = model.vocab().eos();
  Trajectory y;
  std::vector<double> scaled(model.vocab_size());
  while (static_cast<int>(y.tokens.size()) < max_len) {
    const auto row = model.logits().row(cursor.row());
    TokenId next = 0;
    if (temperature == 0.0) {
      next = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
    } else {
      for (std::size_t i = 0; i < row.size(); ++i) scaled[i] = row[i] / temperature;
      const auto p = softmax(scaled);
      const double u = unif(rng);
      double acc = 0.0;
      next = static_cast<TokenId>(p.size() - 1);
      for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) {
          next = static_cast<TokenId>(i);
          break;
        }
      }
    }
    y.tokens.push_back(next);
    if (next == eos) {
      y.terminated = true;
      break;
    }
    cursor.push(next);
  }
  return y;
}

inline Trajectory greedy(const SeqModel& model, const Prompt& x, int max_len) {
  return sample(model, x, max_len, 0, 0.0);
}

struct ScoredTrajectory {
  Trajectory trajectory;
  double logprob = 0.0;
  double prob = 0.0;
};

inline constexpr std::uint64_t kDefaultEnumerationBudget = 1'000'000;

// Throws CapacityError when |V|^max_len exceeds `budget`.
inline void check_enumeration_budget(std::size_t vocab_size, int max_len,
                                     std::uint64_t budget) {
  if (max_len < 1) throw DomainError("enumeration: max_len must be >= 1");
  std::uint64_t leaves = 1;
  for (int i = 0; i < max_len; ++i) {
    if (leaves > budget / vocab_size)
      throw CapacityError(fmt::format(
          "enumeration of |V|^m = {}^{} trajectories exceeds budget {}", vocab_size,
          max_len, budget));
    leaves *= vocab_size;
  }
}

// Every terminated trajectory of length <= m plus every truncated one of
// length m, in depth-first token-id order. Probabilities sum to 1.
inline std::vector<ScoredTrajectory> enumerate_trajectories(
    const SeqModel& model, const Prompt& x, int max_len,
    std::uint64_t budget = kDefaultEnumerationBudget) {
  check_enumeration_budget(model.vocab_size(), max_len, budget);
  std::vector<ScoredTrajectory> out;
  const TokenId eos = model.vocab().eos();
  const std::size_t v = model.vocab_size();
  std::vector<TokenId> prefix;

  auto visit = [&](auto&& self, const ContextCursor& cursor, double logprob) -> void {
    const auto lp = log_softmax(model.logits().row(cursor.row()));
    for (std::size_t a = 0; a < v; ++a) {
      const TokenId tok = static_cast<TokenId>(a);
      const double next_lp = logprob + lp[a];
      prefix.push_back(tok);
      if (tok == eos || static_cast<int>(prefix.size()) == max_len) {
        out.push_back({Trajectory{prefix, tok == eos}, next_lp, std::exp(next_lp)});
      } else {
        ContextCursor child = cursor;
        child.push(tok);
        self(self, child, next_lp);
      }
      prefix.pop_back();
    }
  };
  visit(visit, ContextCursor(model, x), 0.0);
  return out;
}

// Adds i.i.d. N(0, scale^2) noise to every logit.
inline SeqModel perturb(const SeqModel& model, double scale, std::uint64_t seed) {
  if (!(scale >= 0.0) || !std::isfinite(scale))
    throw DomainError("perturb: scale must be finite and >= 0");
  SeqModel out = model;
  if (scale == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, scale);
  for (double& w : out.logits().values()) w += noise(rng);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint text. JSON document; logits are written with 17 significant
// digits so load(save(m)) is bit-identical.

inline constexpr int kCheckpointSchemaVersion = 1;

namespace detail {

inline std::string format_double(double x) {
  if (x == 0.0) return std::signbit(x) ? "-0.0" : "0.0";
  return fmt::format("{:.17g}", x);
}

}  // namespace detail

inline std::string checkpoint_text(const SeqModel& model) {
  using nlohmann::json;
  const Vocab& vocab = model.vocab();
  std::string s;
  s += "{\n";
  s += fmt::format("  \"schema_version\": {},\n", kCheckpointSchemaVersion);
  s += "  \"kind\": \"dpkd.seqmodel\",\n";
  s += "  \"vocab\": " + json(vocab.tokens()).dump() + ",\n";
  s += fmt::format("  \"bos_id\": {},\n", vocab.bos());
  s += fmt::format("  \"eos_id\": {},\n", vocab.eos());
  s += "  \"unk_id\": " + (vocab.unk() ? std::to_string(*vocab.unk()) : "null") + ",\n";
  s += fmt::format("  \"order\": {},\n", model.order());
  s += "  \"logits\": [\n";
  const Table& t = model.logits();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    s += "    [";
    for (std::size_t c = 0; c < t.cols(); ++c) {
      if (c) s += ", ";
      s += detail::format_double(t(r, c));
    }
    s += r + 1 < t.rows() ? "],\n" : "]\n";
  }
  s += "  ]\n}\n";
  return s;
}

inline SeqModel parse_checkpoint(const std::string& text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  try {
    if (doc.at("schema_version").get<int>() != kCheckpointSchemaVersion)
      throw SchemaError("checkpoint: unsupported schema_version");
    auto tokens = doc.at("vocab").get<std::vector<std::string>>();
    std::optional<TokenId> unk;
    if (!doc.at("unk_id").is_null()) unk = doc.at("unk_id").get<TokenId>();
    Vocab vocab(std::move(tokens), doc.at("bos_id").get<TokenId>(),
                doc.at("eos_id").get<TokenId>(), unk);
    const int order = doc.at("order").get<int>();
    const auto& rows = doc.at("logits");
    if (!rows.is_array() || rows.empty()) throw SchemaError("checkpoint: logits must be a nonempty array");
    Table t(rows.size(), vocab.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto& row = rows[r];
      if (!row.is_array() || row.size() != vocab.size())
        throw SchemaError(fmt::format("checkpoint: logits row {} has wrong width", r));
      for (std::size_t c = 0; c < row.size(); ++c) t(r, c) = row[c].get<double>();
    }
    return SeqModel(std::move(vocab), order, std::move(t));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const SeqModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out << checkpoint_text(model);
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

inline SeqModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace dpkd
