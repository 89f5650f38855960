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
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "dpkd/seqmodel.hpp"
#include "dpkd/verify.hpp"
#include "oracle.hpp"

namespace dpkd {
namespace {

Vocab vocab_n(std::size_t n) { return synthetic_vocab(n); }

SeqModel model_with_row(const Vocab& v, std::vector<double> row) {
  SeqModel m = SeqModel::uniform(v, 1);
  for (std::size_t r = 0; r < m.num_contexts(); ++r)
    for (std::size_t c = 0; c < row.size(); ++c) m.logits()(r, c) = row[c];
  return m;
}

TEST(Vocab, RejectsInvalidConfigurations) {
  EXPECT_THROW(Vocab({"<bos>", "<eos>"}, 0, 1), DomainError);
  EXPECT_THROW(Vocab({"<bos>", "<eos>", "a"}, 0, 0), DomainError);
  EXPECT_THROW(Vocab({"<bos>", "<eos>", "a"}, 0, 3), DomainError);
  EXPECT_THROW(Vocab({"<bos>", "a", "a"}, 0, 1), DomainError);
  EXPECT_THROW(Vocab({"<bos>", "<eos>", "a"}, 0, 1, 1), DomainError);
  const Vocab v({"<bos>", "<eos>", "a", "<unk>"}, 0, 1, 3);
  EXPECT_EQ(v.find("a"), 2);
  EXPECT_FALSE(v.find("zzz"));
  EXPECT_EQ(v.unk(), 3);
}

TEST(SeqModel, ValidatesShapeAndFiniteness) {
  const Vocab v = vocab_n(3);
  EXPECT_THROW(SeqModel(v, 0, Table(1, 3)), DomainError);
  EXPECT_THROW(SeqModel(v, 1, Table(2, 3)), DomainError);
  Table t(3, 3);
  t(1, 1) = std::nan("");
  EXPECT_THROW(SeqModel(v, 1, t), DomainError);
  EXPECT_EQ(SeqModel::uniform(v, 2).num_contexts(), 9u);
}

TEST(NextTokenDist, UniformRow) {
  const Vocab v = vocab_n(4);
  const auto d = next_token_dist(SeqModel::uniform(v, 1), std::vector<TokenId>{});
  for (double p : d) EXPECT_DOUBLE_EQ(p, 0.25);
}

TEST(NextTokenDist, ClosedFormTwoLogits) {
  // BOS gets a vanishing logit so the row acts as the two-token row (0, ln 2).
  const Vocab v({"<bos>", "<eos>", "a"}, 0, 1);
  const SeqModel m = model_with_row(v, {-1000.0, 0.0, std::log(2.0)});
  const auto d = next_token_dist(m, std::vector<TokenId>{});
  EXPECT_EQ(d[0], 0.0);
  EXPECT_NEAR(d[1], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(d[2], 2.0 / 3.0, 1e-15);
}

TEST(NextTokenDist, MatchesLongDoubleOracle) {
  const Vocab v({"<bos>", "<eos>", "a"}, 0, 1);
  const SeqModel m = model_with_row(v, {0.3, -1.1, 2.0});
  const auto d = next_token_dist(m, std::vector<TokenId>{2});
  const auto ref = oracle::probs(m, {2});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(d[i], static_cast<double>(ref[i]), 1e-15);
  EXPECT_NEAR(d[0] + d[1] + d[2], 1.0, 1e-12);
}

TEST(NextTokenDist, RowsNormalizeAndAreShiftInvariant) {
  const Vocab v = vocab_n(5);
  SeqModel m = random_model(v, 2, 2.0, 7);
  std::mt19937_64 rng(1);
  for (std::size_t r = 0; r < m.num_contexts(); ++r) {
    double s = 0.0;
    for (double p : softmax(m.logits().row(r))) s += p;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  const std::vector<TokenId> ctx{3, 4};
  const auto before = next_token_dist(m, ctx);
  const std::size_t row = m.context_row(ctx);
  for (double& w : m.logits().row(row)) w += 17.25;
  const auto after = next_token_dist(m, ctx);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(before[i], after[i], 1e-12);
}

TEST(NextTokenDist, RejectsInvalidToken) {
  const SeqModel m = SeqModel::uniform(vocab_n(3), 1);
  EXPECT_THROW(next_token_dist(m, std::vector<TokenId>{5}), DomainError);
  EXPECT_THROW(next_token_dist(m, std::vector<TokenId>{-1}), DomainError);
}

TEST(ContextRow, LeftPadsWithBos) {
  const Vocab v = vocab_n(5);
  const SeqModel m = SeqModel::uniform(v, 2);
  EXPECT_EQ(m.context_row(std::vector<TokenId>{}), oracle::window_row(m, {}));
  EXPECT_EQ(m.context_row(std::vector<TokenId>{3}), oracle::window_row(m, {3}));
  EXPECT_EQ(m.context_row(std::vector<TokenId>{2, 3, 4}), oracle::window_row(m, {2, 3, 4}));
  EXPECT_EQ(m.context_row(std::vector<TokenId>{3}), 0u * 5 + 3);
}

TEST(Prompt, EosIsRejected) {
  const SeqModel m = SeqModel::uniform(vocab_n(3), 1);
  EXPECT_THROW(ContextCursor(m, Prompt{{2, 1}}), DomainError);
}

TEST(SeqLogprob, DeterministicModelScoresOwnGreedyOutputAsZero) {
  const Vocab v = vocab_n(4);
  SeqModel m = SeqModel::uniform(v, 1);
  // BOS -> 2 -> 3 -> EOS with one-hot rows (exp(-1000) underflows to 0).
  for (std::size_t r = 0; r < m.num_contexts(); ++r)
    for (std::size_t c = 0; c < 4; ++c) m.logits()(r, c) = -1000.0;
  m.logits()(0, 2) = 0.0;
  m.logits()(2, 3) = 0.0;
  m.logits()(3, 1) = 0.0;
  m.logits()(1, 1) = 0.0;
  const Trajectory y = greedy(m, Prompt{}, 10);
  EXPECT_EQ(y.tokens, (std::vector<TokenId>{2, 3, 1}));
  EXPECT_TRUE(y.terminated);
  EXPECT_EQ(seq_logprob(m, Prompt{}, y), 0.0);
}

TEST(SeqLogprob, UniformModel) {
  const SeqModel m = SeqModel::uniform(vocab_n(4), 2);
  EXPECT_NEAR(seq_logprob(m, Prompt{{2}}, Trajectory{{2, 3, 1}, true}), 3 * std::log(0.25),
              1e-12);
}

TEST(SeqLogprob, RejectsMalformedTrajectories) {
  const SeqModel m = SeqModel::uniform(vocab_n(4), 1);
  EXPECT_THROW(seq_logprob(m, Prompt{}, Trajectory{{}, false}), DomainError);
  EXPECT_THROW(seq_logprob(m, Prompt{}, Trajectory{{1, 2}, false}), DomainError);
  EXPECT_THROW(seq_logprob(m, Prompt{}, Trajectory{{2, 1}, false}), DomainError);
  EXPECT_THROW(seq_logprob(m, Prompt{}, Trajectory{{2, 7}, false}), DomainError);
}

TEST(SeqLogprob, MatchesOracleAndEnumeration) {
  for (int trial = 0; trial < 10; ++trial) {
    const Vocab v = vocab_n(3 + trial % 3);
    const SeqModel m = random_model(v, 1 + trial % 2, 1.5, 100 + trial);
    const Prompt x{{2}};
    const auto listed = enumerate_trajectories(m, x, 4);
    for (const auto& st : listed) {
      const double lp = seq_logprob(m, x, st.trajectory);
      EXPECT_NEAR(lp, static_cast<double>(oracle::seq_logprob(m, x.tokens, st.trajectory.tokens)),
                  1e-12);
      EXPECT_NEAR(std::exp(lp), st.prob, 1e-9 * st.prob);
    }
  }
}

TEST(Enumerate, SingleStepEqualsFirstDistribution) {
  const Vocab v = vocab_n(3);
  const SeqModel m = random_model(v, 1, 1.0, 3);
  const auto listed = enumerate_trajectories(m, Prompt{}, 1);
  ASSERT_EQ(listed.size(), 3u);
  const auto d = next_token_dist(m, std::vector<TokenId>{});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(listed[i].prob, d[i], 1e-15);
}

TEST(Enumerate, UniformHandCount) {
  const SeqModel m = SeqModel::uniform(vocab_n(3), 1);
  const auto listed = enumerate_trajectories(m, Prompt{}, 2);
  // {EOS} and 2 * 3 length-2 strings whose first token is not EOS.
  ASSERT_EQ(listed.size(), 7u);
  for (const auto& st : listed) {
    const double want = st.trajectory.length() == 1 ? 1.0 / 3.0 : 1.0 / 9.0;
    EXPECT_NEAR(st.prob, want, 1e-15);
  }
}

TEST(Enumerate, SupportMatchesOdometerAndSumsToOne) {
  for (int trial = 0; trial < 8; ++trial) {
    const Vocab v = vocab_n(3 + trial % 3);
    const SeqModel m = random_model(v, 1 + trial % 2, 2.0, trial);
    const int len = 2 + trial % 3;
    const auto listed = enumerate_trajectories(m, Prompt{{2}}, len);
    const auto all = oracle::all_trajectories(v.size(), v.eos(), len);
    std::map<std::vector<TokenId>, double> got;
    double total = 0.0;
    for (const auto& st : listed) {
      got[st.trajectory.tokens] = st.prob;
      total += st.prob;
    }
    EXPECT_EQ(got.size(), all.size());
    for (const auto& y : all) {
      ASSERT_TRUE(got.count(y));
      EXPECT_NEAR(got[y], static_cast<double>(oracle::seq_prob(m, {2}, y)), 1e-12);
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Enumerate, BudgetIsEnforced) {
  const SeqModel m = SeqModel::uniform(vocab_n(5), 1);
  EXPECT_THROW(enumerate_trajectories(m, Prompt{}, 6, 1000), CapacityError);
  EXPECT_NO_THROW(enumerate_trajectories(m, Prompt{}, 4, 1000));
}

TEST(Sample, OneHotEosFirst) {
  const Vocab v = vocab_n(3);
  SeqModel m = SeqModel::uniform(v, 1);
  m.logits()(0, 1) = 1000.0;
  const auto y = sample(m, Prompt{}, 5, 42);
  EXPECT_EQ(y.tokens, std::vector<TokenId>{1});
  EXPECT_TRUE(y.terminated);
}

TEST(Sample, DeterministicAndTruncates) {
  const SeqModel m = random_model(vocab_n(5), 2, 1.0, 9);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto a = sample(m, Prompt{{2, 3}}, 3, s);
    EXPECT_EQ(a, sample(m, Prompt{{2, 3}}, 3, s));
    EXPECT_LE(a.length(), 3u);
    EXPECT_NO_THROW(check_trajectory(m, a));
  }
  EXPECT_THROW(sample(m, Prompt{}, 0, 1), DomainError);
}

TEST(Sample, EosFrequencyWithinThreeSigma) {
  const Vocab v = vocab_n(3);
  SeqModel m = SeqModel::uniform(v, 1);
  // P(EOS) = 0.4, P(a) = 0.6, P(BOS) = 0 at every step.
  for (std::size_t r = 0; r < 3; ++r) {
    m.logits()(r, 0) = -1000.0;
    m.logits()(r, 1) = std::log(0.4);
    m.logits()(r, 2) = std::log(0.6);
  }
  const int n = 100000;
  int eos_first = 0;
  for (int i = 0; i < n; ++i) eos_first += sample(m, Prompt{}, 4, 1000 + i).tokens[0] == 1;
  const double sigma = std::sqrt(n * 0.4 * 0.6);
  EXPECT_LT(std::abs(eos_first - 0.4 * n), 3 * sigma);
}

TEST(Sample, TrajectoryFrequenciesMatchEnumeration) {
  const SeqModel m = random_model(vocab_n(3), 1, 1.0, 5);
  const Prompt x{{2}};
  const auto listed = enumerate_trajectories(m, x, 3);
  std::map<std::vector<TokenId>, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[sample(m, x, 3, 77 + i).tokens];
  for (const auto& st : listed) {
    const double sigma = std::sqrt(n * st.prob * (1 - st.prob));
    EXPECT_LT(std::abs(counts[st.trajectory.tokens] - n * st.prob), 4 * sigma + 1)
        << "trajectory of length " << st.trajectory.length();
  }
}

TEST(Sample, ZeroTemperatureIsArgmaxWithLowestIdOnTies) {
  const Vocab v = vocab_n(4);
  SeqModel m = SeqModel::uniform(v, 1);
  m.logits()(0, 2) = 1.0;
  m.logits()(0, 3) = 1.0;
  m.logits()(2, 1) = 5.0;
  const auto y = sample(m, Prompt{}, 5, 1, 0.0);
  EXPECT_EQ(y.tokens, (std::vector<TokenId>{2, 1}));
}

TEST(Perturb, ScaleZeroIsIdentity) {
  const SeqModel m = random_model(vocab_n(4), 2, 1.0, 1);
  EXPECT_EQ(perturb(m, 0.0, 99), m);
  EXPECT_THROW(perturb(m, -0.1, 1), DomainError);
}

TEST(Perturb, DeterministicWithExpectedSpread) {
  const Vocab v = vocab_n(100);
  const SeqModel m = SeqModel::uniform(v, 1);  // 10^4 logits
  const SeqModel a = perturb(m, 0.1, 5);
  EXPECT_EQ(a, perturb(m, 0.1, 5));
  double sum = 0.0, sq = 0.0;
  const auto w = a.logits().values();
  for (double x : w) {
    sum += x;
    sq += x * x;
  }
  const double n = static_cast<double>(w.size());
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  EXPECT_NEAR(sd, 0.1, 0.005);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  Vocab v({"<bos>", "<eos>", "a", "<unk>"}, 0, 1, 3);
  SeqModel m = random_model(v, 2, 3.0, 11);
  m.logits()(0, 0) = -0.0;
  m.logits()(0, 1) = 1e-300;
  m.logits()(0, 2) = 0.1;
  const std::string text = checkpoint_text(m);
  const SeqModel back = parse_checkpoint(text);
  EXPECT_EQ(back, m);
  EXPECT_EQ(checkpoint_text(back), text);
  EXPECT_TRUE(std::signbit(back.logits()(0, 0)));
}

TEST(Checkpoint, MalformedInputsAreRejected) {
  EXPECT_THROW(parse_checkpoint("{"), ParseError);
  EXPECT_THROW(parse_checkpoint("{}"), SchemaError);
  const SeqModel m = SeqModel::uniform(vocab_n(3), 1);
  std::string text = checkpoint_text(m);
  text.replace(text.find("\"order\": 1"), 10, "\"order\": 2");
  EXPECT_THROW(parse_checkpoint(text), DomainError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.json"), IoError);
}

}  // namespace
}  // namespace dpkd
