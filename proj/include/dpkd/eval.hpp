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

// Generation metrics, length-bucketed reports, the noise-perturbation sweep
// and training-curve export.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "dpkd/data.hpp"
#include "dpkd/error.hpp"
#include "dpkd/metrics.hpp"
#include "dpkd/objectives.hpp"
#include "dpkd/seeding.hpp"
#include "dpkd/seqmodel.hpp"
#include "json.hpp"

namespace dpkd {

template <class T>
std::size_t lcs_length(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// LCS-F1 (beta = 1) over tokens.
template <class T>
double rouge_l(std::span<const T> candidate, std::span<const T> reference) {
  if (reference.empty()) throw DomainError("rouge_l: empty reference");
  const std::size_t lcs = lcs_length(candidate, reference);
  if (lcs == 0) return 0.0;
  const double p = static_cast<double>(lcs) / static_cast<double>(candidate.size());
  const double r = static_cast<double>(lcs) / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

inline double rouge_l(std::string_view candidate, std::string_view reference) {
  const auto c = split_words(candidate);
  const auto r = split_words(reference);
  return rouge_l(std::span<const std::string>(c), std::span<const std::string>(r));
}

// Trim and collapse internal whitespace; case-sensitive.
inline std::string normalize_whitespace(std::string_view text) {
  std::string out;
  for (const auto& w : split_words(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

inline int exact_match(std::string_view candidate, std::string_view reference) {
  return normalize_whitespace(candidate) == normalize_whitespace(reference) ? 1 : 0;
}

struct LengthSplit {
  std::vector<std::size_t> boundaries{30, 70};

  void validate() const {
    for (std::size_t i = 0; i < boundaries.size(); ++i) {
      if (boundaries[i] == 0) throw DomainError("LengthSplit: boundaries must be positive");
      if (i > 0 && boundaries[i] <= boundaries[i - 1])
        throw DomainError("LengthSplit: boundaries must be strictly ascending");
    }
  }

  std::size_t num_buckets() const { return boundaries.size() + 1; }

  // Bucket b holds lengths in [lower(b), upper(b)).
  std::size_t bucket(std::size_t len) const {
    return static_cast<std::size_t>(
        std::upper_bound(boundaries.begin(), boundaries.end(), len) - boundaries.begin());
  }
  std::size_t lower(std::size_t b) const { return b == 0 ? 0 : boundaries[b - 1]; }
  std::optional<std::size_t> upper(std::size_t b) const {
    if (b < boundaries.size()) return boundaries[b];
    return std::nullopt;
  }
};

struct SplitScore {
  std::size_t lower = 0;
  std::optional<std::size_t> upper;  // none = unbounded
  std::optional<double> rouge_l_mean;
  std::optional<double> exact_match_pct;
  std::size_t n = 0;
};

struct EvalReport {
  double rouge_l_mean = 0.0;
  double exact_match_pct = 0.0;
  std::size_t n_examples = 0;
  std::vector<SplitScore> splits;
};

// Greedy decoding per prompt, scored against the reference output; buckets
// use the reference's word count. Greedy decoding ignores `rng_seed`, which
// is kept so stochastic decoders share the signature.
inline EvalReport evaluate(const SeqModel& model, const Corpus& test_set,
                           const LengthSplit& split, int max_len,
                           std::uint64_t rng_seed = 0) {
  (void)rng_seed;
  if (test_set.empty()) throw DomainError("evaluate: empty test set");
  split.validate();
  if (!(model.vocab() == test_set.vocab()))
    throw DomainError("evaluate: model and corpus vocabularies differ");
  EvalReport rep;
  rep.n_examples = test_set.size();
  std::vector<double> rouge_sum(split.num_buckets(), 0.0), em_sum(split.num_buckets(), 0.0);
  std::vector<std::size_t> counts(split.num_buckets(), 0);
  double rouge_total = 0.0, em_total = 0.0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const auto y = greedy(model, test_set.prompt(i), max_len);
    const std::string candidate = decode_tokens(model.vocab(), y.tokens);
    const std::string& reference = test_set.examples()[i].output;
    const double r = rouge_l(candidate, reference);
    const double em = exact_match(candidate, reference);
    const std::size_t b = split.bucket(word_count(reference));
    rouge_sum[b] += r;
    em_sum[b] += em;
    ++counts[b];
    rouge_total += r;
    em_total += em;
  }
  const double n = static_cast<double>(test_set.size());
  rep.rouge_l_mean = rouge_total / n;
  rep.exact_match_pct = 100.0 * em_total / n;
  for (std::size_t b = 0; b < split.num_buckets(); ++b) {
    SplitScore s{split.lower(b), split.upper(b), std::nullopt, std::nullopt, counts[b]};
    if (counts[b] > 0) {
      s.rouge_l_mean = rouge_sum[b] / static_cast<double>(counts[b]);
      s.exact_match_pct = 100.0 * em_sum[b] / static_cast<double>(counts[b]);
    }
    rep.splits.push_back(s);
  }
  return rep;
}

inline nlohmann::ordered_json to_json(const EvalReport& rep) {
  nlohmann::ordered_json j;
  j["rouge_l_mean"] = rep.rouge_l_mean;
  j["exact_match_pct"] = rep.exact_match_pct;
  j["n_examples"] = rep.n_examples;
  j["splits"] = nlohmann::ordered_json::array();
  for (const auto& s : rep.splits) {
    nlohmann::ordered_json b;
    b["min_len"] = s.lower;
    b["max_len_exclusive"] = s.upper ? nlohmann::ordered_json(*s.upper) : nullptr;
    b["rouge_l_mean"] = s.rouge_l_mean ? nlohmann::ordered_json(*s.rouge_l_mean) : nullptr;
    b["exact_match_pct"] =
        s.exact_match_pct ? nlohmann::ordered_json(*s.exact_match_pct) : nullptr;
    b["n"] = s.n;
    j["splits"].push_back(b);
  }
  return j;
}

// Mean greedy Rouge-L of `model` on a corpus.
inline double mean_rouge_l(const SeqModel& model, const Corpus& corpus, int max_len) {
  if (corpus.empty()) throw DomainError("mean_rouge_l: empty corpus");
  double sum = 0.0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto y = greedy(model, corpus.prompt(i), max_len);
    sum += rouge_l(decode_tokens(model.vocab(), y.tokens), corpus.examples()[i].output);
  }
  return sum / static_cast<double>(corpus.size());
}

// ---------------------------------------------------------------------------
// Noise sweep.

struct NoiseSweepRow {
  double scale = 0.0;
  std::uint64_t seed = 0;
  double rkld = 0.0;  // mean exact sequence KL(perturbed || base) over eval prompts
  double mean_implicit_reward = 0.0;
  double rouge_l = 0.0;
};

inline constexpr const char* kNoiseSweepHeader = "scale,seed,rkld,mean_implicit_reward,rouge_l";

// Perturbs `base` n_per_scale times per scale and records the divergence from
// the base model, the implicit reward of reference responses against the
// teacher, and greedy Rouge-L. Rows are ordered by scale, then draw.
inline std::vector<NoiseSweepRow> noise_sweep(const SeqModel& base, const SeqModel& teacher,
                                              const Corpus& eval_set,
                                              std::span<const double> scales,
                                              std::size_t n_per_scale, double beta,
                                              std::uint64_t rng_seed, int max_len) {
  if (eval_set.empty()) throw DomainError("noise_sweep: empty eval set");
  if (!base.same_shape(teacher)) throw DomainError("noise_sweep: base/teacher shape mismatch");
  for (double s : scales)
    if (!(s >= 0.0) || !std::isfinite(s)) throw DomainError("noise_sweep: scales must be >= 0");
  std::vector<NoiseSweepRow> rows;
  rows.reserve(scales.size() * n_per_scale);
  const double n = static_cast<double>(eval_set.size());
  for (std::size_t si = 0; si < scales.size(); ++si) {
    for (std::size_t j = 0; j < n_per_scale; ++j) {
      const std::uint64_t seed = derive_seed(rng_seed, si, j);
      const SeqModel model = perturb(base, scales[si], seed);
      NoiseSweepRow row{scales[si], seed, 0.0, 0.0, 0.0};
      for (std::size_t i = 0; i < eval_set.size(); ++i) {
        const Prompt& x = eval_set.prompt(i);
        row.rkld += reverse_kld(model, base, x, max_len);
        row.mean_implicit_reward += implicit_reward(model, teacher, x, eval_set.response(i), beta);
      }
      row.rkld /= n;
      row.mean_implicit_reward /= n;
      row.rouge_l = mean_rouge_l(model, eval_set, max_len);
      rows.push_back(row);
    }
  }
  return rows;
}

inline std::string noise_sweep_csv(const std::vector<NoiseSweepRow>& rows) {
  std::string out = std::string(kNoiseSweepHeader) + "\n";
  for (const auto& r : rows)
    out += fmt::format("{},{},{},{},{}\n", csv_number(r.scale), r.seed, csv_number(r.rkld),
                       csv_number(r.mean_implicit_reward), csv_number(r.rouge_l));
  return out;
}

// Per-scale mean rkld in the order scales first appear.
inline std::vector<std::pair<double, double>> mean_rkld_by_scale(
    const std::vector<NoiseSweepRow>& rows) {
  std::vector<std::pair<double, double>> out;
  std::vector<std::size_t> counts;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == r.scale; });
    if (it == out.end()) {
      out.emplace_back(r.scale, 0.0);
      counts.push_back(0);
      it = out.end() - 1;
    }
    const auto k = static_cast<std::size_t>(it - out.begin());
    it->second += r.rkld;
    ++counts[k];
  }
  for (std::size_t k = 0; k < out.size(); ++k) out[k].second /= static_cast<double>(counts[k]);
  return out;
}

// ---------------------------------------------------------------------------
// Curves.

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void export_curves(const std::vector<MetricsRow>& metrics, const std::string& path) {
  if (metrics.empty()) throw DomainError("export_curves: no metrics");
  write_text_file(path, metrics_csv(metrics));
}

inline std::vector<MetricsRow> load_curves(const std::string& path) {
  return parse_metrics_csv(read_text_file(path));
}

}  // namespace dpkd
