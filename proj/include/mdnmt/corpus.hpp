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
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace mdnmt {

// A tokenized sentence. Tokens are non-empty and contain no whitespace.
using Sentence = std::vector<std::string>;

struct SentencePair {
  Sentence source;
  Sentence target;

  friend bool operator==(const SentencePair&, const SentencePair&) = default;
  friend auto operator<=>(const SentencePair&, const SentencePair&) = default;
};

// Name of a corpus' domain, e.g. "ted" or "un". Non-empty, no whitespace.
class DomainId {
 public:
  DomainId() = default;
  explicit DomainId(std::string name);

  const std::string& name() const { return name_; }

  friend bool operator==(const DomainId&, const DomainId&) = default;
  friend auto operator<=>(const DomainId&, const DomainId&) = default;

 private:
  std::string name_;
};

// Aligned sentence pairs from one domain. Order is significant: indices
// are used for stable tie-breaking during data selection.
struct ParallelCorpus {
  DomainId domain;
  std::vector<SentencePair> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

// Throws DataError when a token is empty or contains whitespace, or when a
// pair has an empty side.
void validate_sentence(const Sentence& s);
void validate_pair(const SentencePair& p);

// Reads two line-aligned UTF-8 files. Each line is split on whitespace
// runs. Pairs whose source or target line is blank are dropped.
ParallelCorpus load_corpus(const std::filesystem::path& source_path,
                           const std::filesystem::path& target_path, const DomainId& domain);

void write_corpus(const ParallelCorpus& corpus, const std::filesystem::path& source_path,
                  const std::filesystem::path& target_path);

// Tokenizer: a documented subset of the Moses rules.
//   1. split on ASCII whitespace;
//   2. from each chunk, peel leading and trailing punctuation code points
//      off as single-character tokens; the interior ("don't", "3.14")
//      stays whole; a chunk made only of punctuation becomes one token per
//      character.
// Punctuation is ASCII punctuation plus a small set of common Unicode
// quotes, dashes and ellipsis. Idempotent on its own output.
Sentence tokenize(std::string_view raw_line);

bool is_punctuation(std::string_view code_point);

std::string domain_tag(const DomainId& domain);
bool is_domain_tag(std::string_view token);

// Prefixes each source sentence with "<dom:NAME>". Throws DoubleTagError
// when any source already starts with a domain tag and CollisionError when
// the tag string occurs anywhere else in the corpus.
ParallelCorpus augment_with_domain_tag(const ParallelCorpus& corpus);

// Fisher-Yates shuffle driven by SplitMix64(seed): for i = n-1 .. 1,
// swap(i, below(i + 1)).
ParallelCorpus shuffle(const ParallelCorpus& corpus, std::uint64_t seed);

inline constexpr std::size_t kDefaultMaxLength = 80;

// Drops pairs where either side is longer than max_len tokens.
ParallelCorpus filter_by_length(const ParallelCorpus& corpus,
                                std::size_t max_len = kDefaultMaxLength);

ParallelCorpus concatenate(const std::vector<const ParallelCorpus*>& parts, const DomainId& domain);

// Desk-scale multi-domain translation task.
//
// Source words are drawn from a shared vocabulary whose words all have a
// base translation. Each domain owns a disjoint slice of that vocabulary
// (its lexicon) and translates those words through its own substitution
// table instead. In a domain's native sentences a token is drawn from its
// own lexicon with probability lexicon_rate, from the other domains'
// lexicons (translated by the base table) with probability foreign_rate,
// and otherwise from the general words. A share of each domain's sentences
// is instead drawn in the in-domain style (domain 0's distribution and
// table); this share is how "distance" from the in-domain is controlled.
// Translation is monotone and word-for-word.
struct SyntheticTaskSpec {
  std::size_t shared_vocab_size = 60;
  std::size_t per_domain_lexicon_size = 8;
  std::size_t domain_count = 3;
  std::pair<std::size_t, std::size_t> sentence_length_range{4, 10};
  std::vector<std::size_t> pair_counts;  // one per domain
  std::uint64_t seed = 1;

  double lexicon_rate = 0.3;
  double foreign_rate = 0.15;
  // Fraction of each domain's sentences produced in the in-domain style.
  // Empty means: 1 for domain 0, then linearly from near_share down to 0
  // across the remaining non-held-out domains.
  std::vector<double> in_domain_share;
  double near_share = 0.3;
  // The last held_out_count domains are meant as unseen test domains; they
  // get no in-domain share and are excluded from the size invariant.
  std::size_t held_out_count = 0;
  // Fraction of a held-out domain's sentences drawn in the style of a
  // uniformly chosen out-of-domain corpus (domains 1 .. trained-1).
  double held_out_mix = 0.5;

  void validate() const;
};

// Source and target word lists of the generated task, for audits.
struct SyntheticLexicon {
  std::vector<std::string> source_words;       // shared vocabulary
  std::vector<std::string> base_translation;   // parallel to source_words
  // per domain: source word index -> domain target word
  std::vector<std::vector<std::pair<std::size_t, std::string>>> substitution;
};

// Generates one corpus per domain, named "dom0", "dom1", ...; dom0 is the
// designated in-domain corpus and must not be larger than any other
// non-held-out domain. Bit-reproducible from spec.seed.
std::vector<ParallelCorpus> generate_synthetic_domains(const SyntheticTaskSpec& spec);

SyntheticLexicon synthetic_lexicon(const SyntheticTaskSpec& spec);

}  // namespace mdnmt
