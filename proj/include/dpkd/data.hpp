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

// Instruction-tuning records: JSONL ingestion, whitespace tokenization,
// response-length filtering, seeded splits and a synthetic toy corpus.

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "dpkd/error.hpp"
#include "dpkd/objectives.hpp"
#include "dpkd/seeding.hpp"
#include "dpkd/seqmodel.hpp"
#include "json.hpp"

namespace dpkd {

struct InstructionExample {
  std::string instruction;
  std::string input;
  std::string output;
  friend bool operator==(const InstructionExample&, const InstructionExample&) = default;
};

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

inline std::size_t word_count(std::string_view text) { return split_words(text).size(); }

// Maps words to ids; out-of-vocabulary words (and literal BOS/EOS strings)
// become UNK. Throws DomainError when UNK is needed but the vocabulary has none.
inline std::vector<TokenId> encode_words(const Vocab& vocab, std::span<const std::string> words) {
  std::vector<TokenId> ids;
  ids.reserve(words.size());
  for (const auto& w : words) {
    auto id = vocab.find(w);
    if (!id || *id == vocab.bos() || *id == vocab.eos()) {
      if (!vocab.unk())
        throw DomainError("word '" + w + "' is not in the vocabulary and no UNK token is set");
      id = vocab.unk();
    }
    ids.push_back(*id);
  }
  return ids;
}

inline std::string decode_tokens(const Vocab& vocab, std::span<const TokenId> ids) {
  std::string out;
  for (TokenId id : ids) {
    if (id == vocab.eos()) break;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

// Ordered examples plus their tokenization against one vocabulary. The prompt
// is instruction ++ input; the response is output ++ EOS.
class Corpus {
 public:
  Corpus() = default;
  Corpus(Vocab vocab, std::vector<InstructionExample> examples)
      : vocab_(std::move(vocab)), examples_(std::move(examples)) {
    prompts_.reserve(examples_.size());
    responses_.reserve(examples_.size());
    for (const auto& ex : examples_) {
      if (ex.instruction.empty() || ex.output.empty())
        throw SchemaError("instruction and output must be nonempty");
      auto words = split_words(ex.instruction);
      const auto input_words = split_words(ex.input);
      words.insert(words.end(), input_words.begin(), input_words.end());
      prompts_.push_back(Prompt{encode_words(vocab_, words)});
      const auto out_words = split_words(ex.output);
      if (out_words.empty()) throw SchemaError("output has no words");
      Trajectory y{encode_words(vocab_, out_words), true};
      y.tokens.push_back(vocab_.eos());
      responses_.push_back(std::move(y));
    }
  }

  const Vocab& vocab() const { return vocab_; }
  const std::vector<InstructionExample>& examples() const { return examples_; }
  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }

  const Prompt& prompt(std::size_t i) const { return prompts_.at(i); }
  const Trajectory& response(std::size_t i) const { return responses_.at(i); }
  const std::vector<Prompt>& prompts() const { return prompts_; }
  const std::vector<Trajectory>& responses() const { return responses_; }

  std::vector<LmExample> lm_examples() const {
    std::vector<LmExample> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back({prompts_[i], responses_[i]});
    return out;
  }

  Corpus subset(std::span<const std::size_t> indices) const {
    std::vector<InstructionExample> picked;
    picked.reserve(indices.size());
    for (std::size_t i : indices) picked.push_back(examples_.at(i));
    return Corpus(vocab_, std::move(picked));
  }

 private:
  Vocab vocab_;
  std::vector<InstructionExample> examples_;
  std::vector<Prompt> prompts_;
  std::vector<Trajectory> responses_;
};

// One {"instruction", "input", "output"} object per line. "input" may be
// omitted (treated as empty); blank lines are skipped.
inline Corpus load_jsonl(const std::string& path, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<InstructionExample> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(fmt::format("{}:{}: malformed JSON record: {}", path, line_no, e.what()));
    }
    if (!rec.is_object())
      throw SchemaError(fmt::format("{}:{}: record must be a JSON object", path, line_no));
    auto field = [&](const char* key, bool required) -> std::string {
      auto it = rec.find(key);
      if (it == rec.end()) {
        if (required)
          throw SchemaError(fmt::format("{}:{}: missing key '{}'", path, line_no, key));
        return {};
      }
      if (!it->is_string())
        throw SchemaError(fmt::format("{}:{}: key '{}' must be a string", path, line_no, key));
      return it->get<std::string>();
    };
    InstructionExample ex{field("instruction", true), field("input", false),
                          field("output", true)};
    if (ex.instruction.empty() || ex.output.empty())
      throw SchemaError(fmt::format("{}:{}: instruction and output must be nonempty", path,
                                    line_no));
    examples.push_back(std::move(ex));
  }
  return Corpus(vocab, std::move(examples));
}

inline void save_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const auto& ex : corpus.examples()) {
    nlohmann::ordered_json rec;
    rec["instruction"] = ex.instruction;
    rec["input"] = ex.input;
    rec["output"] = ex.output;
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

// Keeps examples whose output has at least `min_words` whitespace words.
inline Corpus filter_by_length(const Corpus& corpus, std::size_t min_words) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (word_count(corpus.examples()[i].output) >= min_words) keep.push_back(i);
  return corpus.subset(keep);
}

// Drops examples whose tokenized response (EOS included) is longer than the
// model's generation bound m.
inline Corpus filter_by_max_len(const Corpus& corpus, int max_len) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (static_cast<int>(corpus.response(i).length()) <= max_len) keep.push_back(i);
  return corpus.subset(keep);
}

struct CorpusSplits {
  Corpus train;
  Corpus valid;
  Corpus test;
};

// Seeded shuffle, then largest-remainder apportionment of the three sizes.
inline CorpusSplits split(const Corpus& corpus, std::array<double, 3> fractions,
                          std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw DomainError("split: fractions must be >= 0");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DomainError("split: fractions must sum to 1");

  const std::size_t n = corpus.size();
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainders{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double target = fractions[k] * static_cast<double>(n);
    sizes[k] = static_cast<std::size_t>(std::floor(target + 1e-9));
    sizes[k] = std::min(sizes[k], n - assigned);
    remainders[k] = target - static_cast<double>(sizes[k]);
    assigned += sizes[k];
  }
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k)
      if (remainders[k] > remainders[best]) best = k;
    ++sizes[best];
    remainders[best] -= 1.0;
    ++assigned;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::span<const std::size_t> all(order);
  return {corpus.subset(all.subspan(0, sizes[0])),
          corpus.subset(all.subspan(sizes[0], sizes[1])),
          corpus.subset(all.subspan(sizes[0] + sizes[1], sizes[2]))};
}

// ---------------------------------------------------------------------------
// Synthetic instruction corpus.

struct LengthRange {
  std::size_t min_words = 1;
  std::size_t max_words = 5;
};

// Seeded order-2 pattern over content tokens: every two-token context has a
// dominant continuation (possibly EOS) taken with probability `dominant_prob`
// and a fallback continuation otherwise. The grammar is redrawn until every
// dominant chain started from a prompt-final context ends within the word
// range, and prompts are drawn to end in such a context, so an order-2 table
// fits the corpus almost exactly. Rare fallback paths still obey the range by
// forbidding EOS below the minimum and forcing it at the maximum.
struct ToyGrammar {
  std::vector<TokenId> content;  // emittable non-special tokens
  TokenId bos = 0;
  TokenId eos = 1;
  double dominant_prob = 0.97;
  LengthRange range;
  std::size_t prompt_min = 2;
  std::size_t prompt_max = 3;
  // Indexed by prev2 * |V| + prev1.
  std::vector<TokenId> dominant;
  std::vector<TokenId> fallback;
  std::vector<std::size_t> starts;  // contexts a prompt may end in
  std::size_t vocab_size = 0;

  std::size_t context(TokenId p2, TokenId p1) const {
    return static_cast<std::size_t>(p2) * vocab_size + static_cast<std::size_t>(p1);
  }

  // Words emitted by following dominant moves from `ctx`, or none if the
  // chain does not reach EOS within max_words.
  std::optional<std::size_t> dominant_chain_words(std::size_t ctx) const {
    for (std::size_t words = 0; words <= range.max_words; ++words) {
      const TokenId next = dominant[ctx];
      if (next == eos) return words;
      ctx = context(static_cast<TokenId>(ctx % vocab_size), next);
    }
    return std::nullopt;
  }

  static ToyGrammar make(const Vocab& vocab, std::uint64_t seed, double dominant_prob,
                         LengthRange range) {
    if (!(dominant_prob > 0.0 && dominant_prob <= 1.0))
      throw DomainError("ToyGrammar: dominant_prob must be in (0, 1]");
    ToyGrammar g;
    g.bos = vocab.bos();
    g.eos = vocab.eos();
    g.dominant_prob = dominant_prob;
    g.range = range;
    g.vocab_size = vocab.size();
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      const auto id = static_cast<TokenId>(i);
      if (id != vocab.bos() && id != vocab.eos() && id != vocab.unk()) g.content.push_back(id);
    }
    if (g.content.empty()) throw DomainError("ToyGrammar: vocabulary has no content tokens");
    std::vector<TokenId> choices = g.content;
    choices.push_back(g.eos);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, choices.size() - 1);
    const std::size_t contexts = g.vocab_size * g.vocab_size;
    constexpr int kMaxAttempts = 10000;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      g.dominant.assign(contexts, g.eos);
      g.fallback.assign(contexts, g.eos);
      for (std::size_t c = 0; c < contexts; ++c) {
        g.dominant[c] = choices[pick(rng)];
        do {
          g.fallback[c] = choices[pick(rng)];
        } while (g.fallback[c] == g.dominant[c]);
      }
      g.starts.clear();
      for (TokenId c1 : g.content)
        for (TokenId c2 : g.content) {
          const auto words = g.dominant_chain_words(g.context(c1, c2));
          if (words && *words >= range.min_words) g.starts.push_back(g.context(c1, c2));
        }
      // Ask for a reasonably diverse set of prompt endings.
      if (g.starts.size() * 2 >= g.content.size() * g.content.size()) return g;
    }
    throw DomainError("ToyGrammar: no grammar satisfies the length range");
  }

  InstructionExample generate(const Vocab& vocab, std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> plen(prompt_min, prompt_max);
    std::uniform_int_distribution<std::size_t> tok(0, content.size() - 1);
    std::uniform_int_distribution<std::size_t> start(0, starts.size() - 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const std::size_t n_prompt = plen(rng);
    std::vector<TokenId> seq;
    for (std::size_t i = 0; i + 2 < n_prompt; ++i) seq.push_back(content[tok(rng)]);
    const std::size_t end_ctx = starts[start(rng)];
    seq.push_back(static_cast<TokenId>(end_ctx / vocab_size));
    seq.push_back(static_cast<TokenId>(end_ctx % vocab_size));
    std::vector<TokenId> response;
    while (true) {
      const std::size_t ctx = context(seq[seq.size() - 2], seq.back());
      TokenId next = unif(rng) < dominant_prob ? dominant[ctx] : fallback[ctx];
      if (response.size() >= range.max_words) next = eos;
      if (next == eos && response.size() < range.min_words)
        next = dominant[ctx] != eos ? dominant[ctx] : fallback[ctx];
      if (next == eos) break;
      response.push_back(next);
      seq.push_back(next);
    }
    return {decode_tokens(vocab, std::span<const TokenId>(seq.data(), n_prompt)), "",
            decode_tokens(vocab, response)};
  }
};

// `stream` selects an independent draw of examples from the same grammar.
inline Corpus synth_toy_corpus(const Vocab& vocab, std::uint64_t grammar_seed,
                               std::size_t n_examples, LengthRange range = {},
                               double dominant_prob = 0.97, std::uint64_t stream = 0) {
  if (n_examples < 1) throw DomainError("synth_toy_corpus: n_examples must be >= 1");
  if (range.min_words < 1 || range.max_words < range.min_words)
    throw DomainError("synth_toy_corpus: invalid length range");
  const ToyGrammar g = ToyGrammar::make(vocab, grammar_seed, dominant_prob, range);
  std::mt19937_64 rng(derive_seed(grammar_seed, stream));
  std::vector<InstructionExample> examples;
  examples.reserve(n_examples);
  for (std::size_t i = 0; i < n_examples; ++i) examples.push_back(g.generate(vocab, rng));
  return Corpus(vocab, std::move(examples));
}

// <bos>, <eos> and three content words: the standard |V| = 5 toy vocabulary.
inline Vocab toy_vocab() { return Vocab({"<bos>", "<eos>", "a", "b", "c"}, 0, 1); }

}  // namespace dpkd
