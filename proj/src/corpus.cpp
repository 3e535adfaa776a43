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

#include "mdnmt/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>

#include "mdnmt/error.hpp"
#include "mdnmt/rng.hpp"
#include "mdnmt/text.hpp"

namespace mdnmt {

DomainId::DomainId(std::string name) : name_(std::move(name)) {
  if (name_.empty()) throw ConfigError("domain name must be non-empty");
  for (char c : name_) {
    if (text::is_space(c)) throw ConfigError("domain name contains whitespace: '" + name_ + "'");
  }
}

void validate_sentence(const Sentence& s) {
  for (const auto& tok : s) {
    if (tok.empty()) throw DataError("empty token in sentence");
    for (char c : tok) {
      if (text::is_space(c)) throw DataError("token contains whitespace: '" + tok + "'");
    }
  }
}

void validate_pair(const SentencePair& p) {
  if (p.source.empty() || p.target.empty()) throw DataError("sentence pair has an empty side");
  validate_sentence(p.source);
  validate_sentence(p.target);
}

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!text::is_valid_utf8(line)) throw DecodeError(path.string(), lineno);
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace

ParallelCorpus load_corpus(const std::filesystem::path& source_path,
                           const std::filesystem::path& target_path, const DomainId& domain) {
  const auto src = read_lines(source_path);
  const auto tgt = read_lines(target_path);
  if (src.size() != tgt.size()) {
    throw AlignmentError(source_path.string(), src.size(), target_path.string(), tgt.size());
  }
  ParallelCorpus corpus{domain, {}};
  corpus.pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    SentencePair p{text::split_whitespace(src[i]), text::split_whitespace(tgt[i])};
    if (p.source.empty() || p.target.empty()) continue;
    corpus.pairs.push_back(std::move(p));
  }
  return corpus;
}

void write_corpus(const ParallelCorpus& corpus, const std::filesystem::path& source_path,
                  const std::filesystem::path& target_path) {
  std::ofstream src(source_path, std::ios::binary);
  std::ofstream tgt(target_path, std::ios::binary);
  if (!src || !tgt) throw DataError("cannot write corpus to " + source_path.string());
  for (const auto& p : corpus.pairs) {
    src << text::join(p.source) << '\n';
    tgt << text::join(p.target) << '\n';
  }
}

bool is_punctuation(std::string_view cp) {
  if (cp.size() == 1) {
    const auto c = static_cast<unsigned char>(cp[0]);
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
           (c >= 0x7B && c <= 0x7E);
  }
  static const std::array<std::string_view, 14> kUnicodePunct = {
      "«", "»", "¡", "¿", "‘", "’", "“",
      "”", "–", "—", "…", "،", "؟", "؛"};
  return std::find(kUnicodePunct.begin(), kUnicodePunct.end(), cp) != kUnicodePunct.end();
}

Sentence tokenize(std::string_view raw_line) {
  Sentence out;
  for (const auto& chunk : text::split_whitespace(raw_line)) {
    auto chars = text::utf8_chars(chunk);
    if (!chars) {
      // Not valid UTF-8: keep the chunk intact rather than split mid-sequence.
      out.push_back(chunk);
      continue;
    }
    const auto& cps = *chars;
    std::size_t lo = 0;
    std::size_t hi = cps.size();
    while (lo < hi && is_punctuation(cps[lo])) ++lo;
    while (hi > lo && is_punctuation(cps[hi - 1])) --hi;
    for (std::size_t i = 0; i < lo; ++i) out.push_back(cps[i]);
    if (hi > lo) {
      std::string core;
      for (std::size_t i = lo; i < hi; ++i) core += cps[i];
      out.push_back(std::move(core));
    }
    for (std::size_t i = hi; i < cps.size(); ++i) out.push_back(cps[i]);
  }
  return out;
}

std::string domain_tag(const DomainId& domain) { return "<dom:" + domain.name() + ">"; }

bool is_domain_tag(std::string_view token) {
  return token.size() > 6 && token.starts_with("<dom:") && token.ends_with(">");
}

ParallelCorpus augment_with_domain_tag(const ParallelCorpus& corpus) {
  const std::string tag = domain_tag(corpus.domain);
  ParallelCorpus out{corpus.domain, {}};
  out.pairs.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& p = corpus.pairs[i];
    if (!p.source.empty() && is_domain_tag(p.source.front())) {
      throw DoubleTagError("pair " + std::to_string(i) + " is already tagged with " +
                           p.source.front());
    }
    for (const auto* side : {&p.source, &p.target}) {
      if (std::find(side->begin(), side->end(), tag) != side->end()) {
        throw CollisionError("domain tag " + tag + " collides with a corpus token in pair " +
                             std::to_string(i));
      }
    }
    SentencePair q;
    q.source.reserve(p.source.size() + 1);
    q.source.push_back(tag);
    q.source.insert(q.source.end(), p.source.begin(), p.source.end());
    q.target = p.target;
    out.pairs.push_back(std::move(q));
  }
  return out;
}

ParallelCorpus shuffle(const ParallelCorpus& corpus, std::uint64_t seed) {
  ParallelCorpus out = corpus;
  SplitMix64 rng(seed);
  for (std::size_t i = out.pairs.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(out.pairs[i - 1], out.pairs[j]);
  }
  return out;
}

ParallelCorpus filter_by_length(const ParallelCorpus& corpus, std::size_t max_len) {
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  ParallelCorpus out{corpus.domain, {}};
  for (const auto& p : corpus.pairs) {
    if (p.source.size() <= max_len && p.target.size() <= max_len) out.pairs.push_back(p);
  }
  return out;
}

ParallelCorpus concatenate(const std::vector<const ParallelCorpus*>& parts, const DomainId& domain) {
  ParallelCorpus out{domain, {}};
  for (const auto* part : parts) {
    out.pairs.insert(out.pairs.end(), part->pairs.begin(), part->pairs.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic domains

void SyntheticTaskSpec::validate() const {
  if (domain_count < 1) throw ConfigError("synthetic spec: domain_count must be >= 1");
  if (sentence_length_range.first < 1 || sentence_length_range.second < sentence_length_range.first) {
    throw ConfigError("synthetic spec: need 1 <= min length <= max length");
  }
  if (pair_counts.size() != domain_count) {
    throw ConfigError("synthetic spec: pair_counts must have one entry per domain");
  }
  for (auto c : pair_counts) {
    if (c < 1) throw ConfigError("synthetic spec: pair counts must be >= 1");
  }
  if (per_domain_lexicon_size < 1) throw ConfigError("synthetic spec: lexicon size must be >= 1");
  if (held_out_count >= domain_count) {
    throw ConfigError("synthetic spec: at least one domain must not be held out");
  }
  for (std::size_t d = 1; d + held_out_count < domain_count; ++d) {
    if (pair_counts[d] < pair_counts[0]) {
      throw ConfigError("synthetic spec: the in-domain corpus (domain 0) must be the smallest");
    }
  }
  if (lexicon_rate < 0 || foreign_rate < 0 || lexicon_rate + foreign_rate > 1) {
    throw ConfigError("synthetic spec: lexicon_rate + foreign_rate must lie in [0, 1]");
  }
  if (!in_domain_share.empty() && in_domain_share.size() != domain_count) {
    throw ConfigError("synthetic spec: in_domain_share must have one entry per domain");
  }
  if (held_out_mix < 0 || held_out_mix > 1) throw ConfigError("synthetic spec: held_out_mix must lie in [0, 1]");
  for (double s : in_domain_share) {
    if (s < 0 || s > 1) throw ConfigError("synthetic spec: in_domain_share entries must lie in [0, 1]");
  }
  if (shared_vocab_size <= domain_count * per_domain_lexicon_size) {
    throw CapacityError("synthetic spec: shared vocabulary of " + std::to_string(shared_vocab_size) +
                        " cannot hold " + std::to_string(domain_count) +
                        " disjoint lexicons of " + std::to_string(per_domain_lexicon_size) +
                        " words plus general words");
  }
}

namespace {

constexpr std::string_view kSourceConsonants = "bdfgklmnprstvz";
constexpr std::string_view kTargetConsonants = "chjkqwxyl";
constexpr std::string_view kVowels = "aeiou";

std::string make_word(SplitMix64& rng, std::string_view consonants) {
  const auto syllables = 2 + rng.below(2);
  std::string w;
  for (std::uint64_t s = 0; s < syllables; ++s) {
    w += consonants[rng.below(consonants.size())];
    w += kVowels[rng.below(kVowels.size())];
  }
  return w;
}

std::vector<std::string> make_unique_words(SplitMix64& rng, std::string_view consonants,
                                           std::size_t count, std::set<std::string>& taken) {
  std::vector<std::string> out;
  out.reserve(count);
  while (out.size() < count) {
    auto w = make_word(rng, consonants);
    if (taken.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

struct Task {
  SyntheticLexicon lexicon;
  std::vector<std::vector<std::size_t>> slices;  // per domain, source word indices
  std::vector<std::size_t> general;              // word indices outside every slice
};

Task build_task(const SyntheticTaskSpec& spec) {
  spec.validate();
  SplitMix64 rng(mix_seed(spec.seed, 0x5eed));
  Task task;
  std::set<std::string> taken_src;
  std::set<std::string> taken_tgt;
  task.lexicon.source_words = make_unique_words(rng, kSourceConsonants, spec.shared_vocab_size, taken_src);
  task.lexicon.base_translation =
      make_unique_words(rng, kTargetConsonants, spec.shared_vocab_size, taken_tgt);

  std::vector<std::size_t> perm(spec.shared_vocab_size);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

  const std::size_t L = spec.per_domain_lexicon_size;
  task.slices.resize(spec.domain_count);
  task.lexicon.substitution.resize(spec.domain_count);
  for (std::size_t d = 0; d < spec.domain_count; ++d) {
    auto targets = make_unique_words(rng, kTargetConsonants, L, taken_tgt);
    for (std::size_t k = 0; k < L; ++k) {
      const std::size_t w = perm[d * L + k];
      task.slices[d].push_back(w);
      task.lexicon.substitution[d].emplace_back(w, targets[k]);
    }
  }
  task.general.assign(perm.begin() + static_cast<std::ptrdiff_t>(spec.domain_count * L), perm.end());
  std::sort(task.general.begin(), task.general.end());
  return task;
}

std::vector<double> effective_shares(const SyntheticTaskSpec& spec) {
  if (!spec.in_domain_share.empty()) return spec.in_domain_share;
  std::vector<double> share(spec.domain_count, 0.0);
  share[0] = 1.0;
  const std::size_t trained = spec.domain_count - spec.held_out_count;
  if (trained == 2) {
    share[1] = spec.near_share;
  } else if (trained > 2) {
    for (std::size_t d = 1; d < trained; ++d) {
      share[d] = spec.near_share * static_cast<double>(trained - 1 - d) / static_cast<double>(trained - 2);
    }
  }
  return share;
}

SentencePair sample_pair(const SyntheticTaskSpec& spec, const Task& task, std::size_t style,
                         SplitMix64& rng) {
  const auto [lo, hi] = spec.sentence_length_range;
  const std::size_t len = lo + rng.below(hi - lo + 1);
  SentencePair p;
  p.source.reserve(len);
  p.target.reserve(len);
  const auto& own = task.lexicon.substitution[style];
  const std::size_t foreign_count = (spec.domain_count - 1) * spec.per_domain_lexicon_size;
  for (std::size_t i = 0; i < len; ++i) {
    const double u = rng.uniform01();
    if (u < spec.lexicon_rate) {
      const auto& [w, tgt] = own[rng.below(own.size())];
      p.source.push_back(task.lexicon.source_words[w]);
      p.target.push_back(tgt);
      continue;
    }
    std::size_t w;
    if (u < spec.lexicon_rate + spec.foreign_rate && foreign_count > 0) {
      std::size_t k = rng.below(foreign_count);
      std::size_t d = k / spec.per_domain_lexicon_size;
      if (d >= style) ++d;
      w = task.slices[d][k % spec.per_domain_lexicon_size];
    } else {
      w = task.general[rng.below(task.general.size())];
    }
    p.source.push_back(task.lexicon.source_words[w]);
    p.target.push_back(task.lexicon.base_translation[w]);
  }
  return p;
}

}  // namespace

SyntheticLexicon synthetic_lexicon(const SyntheticTaskSpec& spec) { return build_task(spec).lexicon; }

std::vector<ParallelCorpus> generate_synthetic_domains(const SyntheticTaskSpec& spec) {
  const Task task = build_task(spec);
  const auto share = effective_shares(spec);
  std::vector<ParallelCorpus> out;
  out.reserve(spec.domain_count);
  for (std::size_t d = 0; d < spec.domain_count; ++d) {
    SplitMix64 rng(mix_seed(spec.seed, 1000 + d));
    ParallelCorpus corpus{DomainId("dom" + std::to_string(d)), {}};
    corpus.pairs.reserve(spec.pair_counts[d]);
    const std::size_t trained = spec.domain_count - spec.held_out_count;
    const bool held_out = d >= trained;
    for (std::size_t i = 0; i < spec.pair_counts[d]; ++i) {
      std::size_t style = rng.uniform01() < share[d] ? 0 : d;
      if (held_out && trained > 1 && rng.uniform01() < spec.held_out_mix) style = 1 + rng.below(trained - 1);
      corpus.pairs.push_back(sample_pair(spec, task, style, rng));
    }
    out.push_back(std::move(corpus));
  }
  return out;
}

}  // namespace mdnmt
