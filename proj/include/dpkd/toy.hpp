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

// The standard toy distillation benchmark: |V| = 5, order 2, responses of
// 1-4 words. The teacher is fit by SFT on a large synthetic corpus; the
// student starts from a perturbed uniform model with a short SFT warm-up on a
// small subset.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dpkd/data.hpp"
#include "dpkd/seeding.hpp"
#include "dpkd/seqmodel.hpp"
#include "dpkd/trainer.hpp"

namespace dpkd {

struct ToyOptions {
  std::uint64_t grammar_seed = 2024;
  double dominant_prob = 0.97;
  LengthRange lengths{1, 4};
  int order = 2;
  int max_len = 6;
  std::size_t teacher_examples = 1000;
  std::size_t train_examples = 200;
  std::size_t valid_examples = 50;
  std::size_t warmup_examples = 20;
  int teacher_epochs = 40;
  double teacher_lr = 1.0;
  int warmup_epochs = 3;
  double warmup_lr = 1.0;
  double init_noise = 0.5;
};

struct ToyTask {
  Vocab vocab;
  Corpus teacher_data;
  Corpus train;
  Corpus valid;
  SeqModel teacher;
  SeqModel student_init;
  int max_len = 6;
};

// Deterministic in (seed, options). The grammar and teacher depend only on
// the options; train/valid draws and the student init depend on `seed`.
inline ToyTask make_toy_task(std::uint64_t seed, const ToyOptions& opt = {}) {
  ToyTask task;
  task.vocab = toy_vocab();
  task.max_len = opt.max_len;
  task.teacher_data = synth_toy_corpus(task.vocab, opt.grammar_seed, opt.teacher_examples,
                                       opt.lengths, opt.dominant_prob, 0);
  task.train = synth_toy_corpus(task.vocab, opt.grammar_seed, opt.train_examples, opt.lengths,
                                opt.dominant_prob, derive_seed(seed, 1));
  task.valid = synth_toy_corpus(task.vocab, opt.grammar_seed, opt.valid_examples, opt.lengths,
                                opt.dominant_prob, derive_seed(seed, 2));

  TrainerConfig tcfg;
  tcfg.method = Method::sft;
  tcfg.epochs = opt.teacher_epochs;
  tcfg.lr = opt.teacher_lr;
  tcfg.batch_size = 16;
  tcfg.max_len = opt.max_len;
  task.teacher =
      run_sft(tcfg, task.teacher_data, SeqModel::uniform(task.vocab, opt.order)).model;

  TrainerConfig wcfg = tcfg;
  wcfg.epochs = opt.warmup_epochs;
  wcfg.lr = opt.warmup_lr;
  wcfg.seed = seed;
  std::vector<std::size_t> first(std::min(opt.warmup_examples, task.train.size()));
  for (std::size_t i = 0; i < first.size(); ++i) first[i] = i;
  const SeqModel noisy =
      perturb(SeqModel::uniform(task.vocab, opt.order), opt.init_noise, derive_seed(seed, 3));
  task.student_init = run_sft(wcfg, task.train.subset(first), noisy).model;
  return task;
}

}  // namespace dpkd
