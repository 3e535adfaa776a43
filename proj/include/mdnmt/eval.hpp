// Copyright 2026 The mdnmt Authors. All Rights Reserved.
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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mdnmt/corpus.hpp"
#include "mdnmt/nmt.hpp"
#include "mdnmt/subword.hpp"

namespace mdnmt {

struct BleuScore {
  double bleu = 0;                   // in [0, 1]
  std::vector<double> precisions;    // modified precision per order, p1 first
  std::vector<std::size_t> matches;  // clipped n-gram matches per order
  std::vector<std::size_t> totals;   // hypothesis n-grams per order
  double brevity_penalty = 1;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
};

struct BleuOptions {
  std::size_t max_order = 4;
  bool lowercase = false;  // cased by default
};

// Corpus BLEU, single reference, no smoothing: any order with zero matches
// gives bleu = 0. Throws LengthMismatchError when the lists differ in size
// and ConfigError when they are empty.
BleuScore bleu(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references,
               const BleuOptions& options = {});

// SMOOTHED sentence-level BLEU (add-one on orders >= 2). Not comparable to
// corpus BLEU; for tie-breaking on tiny dev sets only.
double smoothed_sentence_bleu(const Sentence& hypothesis, const Sentence& reference, std::size_t max_order = 4);

// exp(mean token cross-entropy). Throws DivergenceError when non-finite and
// ConfigError on an empty corpus.
double perplexity(const ModelCheckpoint& checkpoint, std::span<const EncodedPair> corpus);

// A dev or test set: model inputs plus word-level references.
struct EvalSet {
  std::string name;
  std::vector<EncodedPair> pairs;
  std::vector<Sentence> references;  // target side with BPE undone
};

// Encodes a (segmented) corpus; references are its targets with BPE undone.
EvalSet make_eval_set(const std::string& name, const ParallelCorpus& corpus, const Vocabulary& source_vocab,
                      const Vocabulary& target_vocab);

// Ids to words: decode, drop a dangling trailing "@@" a model may emit,
// then undo BPE.
Sentence postprocess(const Vocabulary& target_vocab, const std::vector<std::int32_t>& ids);

// Decoding length cap used throughout: 2 * source length + 10.
inline std::size_t default_max_len(std::size_t source_len) { return 2 * source_len + 10; }

using Decoder = std::function<Hypothesis(const std::vector<std::int32_t>& source)>;

std::vector<Sentence> translate_set(const EvalSet& set, const Vocabulary& target_vocab, const Decoder& decode);
BleuScore decode_bleu(const EvalSet& set, const Vocabulary& target_vocab, const Decoder& decode);

struct ReportRow {
  std::string system;
  std::string testset;
  double bleu = 0;  // in [0, 1]; printed x100
  double ppl = 0;   // printed as "-" when not finite or not positive
};

// "SYSTEM<TAB>TESTSET<TAB>BLEUx100<TAB>PPL", two decimals.
std::string format_report_row(const ReportRow& row);

}  // namespace mdnmt
