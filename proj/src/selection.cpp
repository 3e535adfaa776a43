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

#include "mdnmt/selection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mdnmt/error.hpp"

namespace mdnmt {

namespace {

std::vector<Sentence> side(const ParallelCorpus& c, bool source) {
  std::vector<Sentence> out;
  out.reserve(c.size());
  for (const auto& p : c.pairs) out.push_back(source ? p.source : p.target);
  return out;
}

}  // namespace

SelectionLms train_selection_lms(const ParallelCorpus& in_domain, const ParallelCorpus& out_of_domain,
                                 const LmConfig& config) {
  return SelectionLms{
      train_lm(side(in_domain, true), config),
      train_lm(side(out_of_domain, true), config),
      train_lm(side(in_domain, false), config),
      train_lm(side(out_of_domain, false), config),
  };
}

void SelectionConfig::validate() const {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("selection fraction must lie in (0, 1]");
  }
}

SelectionScore score_pair(const SentencePair& pair, std::size_t index, const SelectionLms& lms,
                          bool bilingual) {
  double score = lms.source_in.cross_entropy(pair.source) - lms.source_out.cross_entropy(pair.source);
  if (bilingual) {
    score += lms.target_in.cross_entropy(pair.target) - lms.target_out.cross_entropy(pair.target);
  }
  if (!std::isfinite(score)) throw DataError("non-finite selection score for pair " + std::to_string(index));
  return {index, score};
}

std::vector<SelectionScore> rank_corpus(const ParallelCorpus& corpus, const SelectionLms& lms,
                                        bool bilingual) {
  std::vector<SelectionScore> scores;
  scores.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    scores.push_back(score_pair(corpus.pairs[i], i, lms, bilingual));
  }
  std::stable_sort(scores.begin(), scores.end(),
                   [](const SelectionScore& a, const SelectionScore& b) { return a.score < b.score; });
  return scores;
}

std::size_t selected_count(double fraction, std::size_t n) {
  if (n == 0) return 0;
  const double want = std::ceil(fraction * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(want, 1.0)), 1, n);
}

ParallelCorpus select_fraction(const ParallelCorpus& corpus, const std::vector<SelectionScore>& ranking,
                               double fraction) {
  SelectionConfig{fraction, true}.validate();
  if (ranking.size() != corpus.size()) throw ConfigError("ranking does not cover the corpus");
  const std::size_t keep = selected_count(fraction, corpus.size());
  std::vector<std::size_t> idx;
  idx.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) idx.push_back(ranking[i].pair_index);
  std::sort(idx.begin(), idx.end());
  ParallelCorpus out{corpus.domain, {}};
  out.pairs.reserve(keep);
  for (auto i : idx) out.pairs.push_back(corpus.pairs[i]);
  return out;
}

ParallelCorpus select_fraction(const ParallelCorpus& corpus, const SelectionLms& lms,
                               const SelectionConfig& config) {
  config.validate();
  if (corpus.empty()) return corpus;
  return select_fraction(corpus, rank_corpus(corpus, lms, config.bilingual), config.fraction);
}

ParallelCorpus select_below(const ParallelCorpus& corpus, const std::vector<SelectionScore>& ranking,
                            double threshold) {
  std::vector<std::size_t> idx;
  for (const auto& s : ranking) {
    if (s.score < threshold) idx.push_back(s.pair_index);
  }
  std::sort(idx.begin(), idx.end());
  ParallelCorpus out{corpus.domain, {}};
  for (auto i : idx) out.pairs.push_back(corpus.pairs.at(i));
  return out;
}

void write_scores(std::ostream& out, const std::vector<SelectionScore>& ranking) {
  char buf[64];
  for (const auto& s : ranking) {
    std::snprintf(buf, sizeof buf, "%.12g", s.score);
    out << s.pair_index << '\t' << buf << '\n';
  }
}

}  // namespace mdnmt
