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
#include <ostream>
#include <vector>

#include "mdnmt/corpus.hpp"
#include "mdnmt/ngram_lm.hpp"

namespace mdnmt {

// In- and out-of-domain language models for each side of the corpus.
struct SelectionLms {
  NgramLm source_in;
  NgramLm source_out;
  NgramLm target_in;
  NgramLm target_out;
};

// Trains the four selection LMs: "in" on the in-domain corpus, "out" on
// the out-of-domain corpus being ranked.
SelectionLms train_selection_lms(const ParallelCorpus& in_domain, const ParallelCorpus& out_of_domain,
                                 const LmConfig& config = {});

struct SelectionScore {
  std::size_t pair_index = 0;
  double score = 0;  // nats per token; lower is closer to in-domain

  friend bool operator==(const SelectionScore&, const SelectionScore&) = default;
};

struct SelectionConfig {
  double fraction = 1.0;  // in (0, 1]
  bool bilingual = true;  // false scores the source side only

  void validate() const;
};

// Modified Moore-Lewis cross-entropy difference:
//   [H_in(src) - H_out(src)] + bilingual * [H_in(tgt) - H_out(tgt)]
SelectionScore score_pair(const SentencePair& pair, std::size_t index, const SelectionLms& lms,
                          bool bilingual = true);

// Ascending by score; equal scores keep corpus order.
std::vector<SelectionScore> rank_corpus(const ParallelCorpus& corpus, const SelectionLms& lms,
                                        bool bilingual = true);

// Number of pairs kept for a fraction: ceil(fraction * n), at least 1 when
// n > 0.
std::size_t selected_count(double fraction, std::size_t n);

// Keeps the best-ranked ceil(fraction * |corpus|) pairs, re-emitted in
// original corpus order.
ParallelCorpus select_fraction(const ParallelCorpus& corpus, const SelectionLms& lms,
                               const SelectionConfig& config);
ParallelCorpus select_fraction(const ParallelCorpus& corpus, const std::vector<SelectionScore>& ranking,
                               double fraction);

// Threshold mode: keeps every pair scoring strictly below `threshold`.
ParallelCorpus select_below(const ParallelCorpus& corpus, const std::vector<SelectionScore>& ranking,
                            double threshold);

// "INDEX<TAB>SCORE" lines, scores with 12 significant digits.
void write_scores(std::ostream& out, const std::vector<SelectionScore>& ranking);

}  // namespace mdnmt
