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

#include "mdnmt/subword.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include "mdnmt/error.hpp"
#include "mdnmt/text.hpp"

namespace mdnmt {

namespace {

constexpr std::string_view kBpeHeader = "#mdnmt-bpe v1";

std::vector<std::string> chars_of(const std::string& word) {
  auto chars = text::utf8_chars(word);
  if (!chars) throw DataError("invalid UTF-8 in word '" + word + "'");
  return std::move(*chars);
}

// Merges every non-overlapping occurrence of (left, right), scanning left
// to right. Returns true if anything changed.
bool merge_in_place(std::vector<std::string>& symbols, const std::string& left,
                    const std::string& right) {
  bool changed = false;
  std::size_t out = 0;
  for (std::size_t i = 0; i < symbols.size();) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      symbols[out++] = left + right;
      i += 2;
      changed = true;
    } else {
      if (out != i) symbols[out] = std::move(symbols[i]);
      ++out;
      ++i;
    }
  }
  symbols.resize(out);
  return changed;
}

}  // namespace

BpeModel::BpeModel(std::vector<Merge> merges) : merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    const auto& [left, right] = merges_[i];
    if (left.empty() || right.empty()) {
      throw DataError("BPE merge " + std::to_string(i) + " has an empty side");
    }
    if (!rank_[left].emplace(right, i).second) {
      throw DataError("duplicate BPE merge '" + left + " " + right + "'");
    }
  }
}

std::vector<std::string> BpeModel::segment_word(const std::string& word) const {
  auto symbols = chars_of(word);
  if (symbols.size() < 2 || merges_.empty()) return symbols;
  // Equivalent to applying every merge in learned order: a merge can only
  // fire after all lower-ranked merges have had their turn.
  std::size_t floor = 0;  // lowest rank still allowed to fire
  while (symbols.size() > 1) {
    std::size_t best = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto row = rank_.find(symbols[i]);
      if (row == rank_.end()) continue;
      auto it = row->second.find(symbols[i + 1]);
      if (it != row->second.end() && it->second >= floor && it->second < best) best = it->second;
    }
    if (best == std::numeric_limits<std::size_t>::max()) break;
    merge_in_place(symbols, merges_[best].first, merges_[best].second);
    floor = best + 1;
  }
  return symbols;
}

Sentence BpeModel::apply(const Sentence& sentence) const {
  Sentence out;
  out.reserve(sentence.size() * 2);
  for (const auto& word : sentence) {
    auto units = segment_word(word);
    for (std::size_t i = 0; i < units.size(); ++i) {
      if (i + 1 < units.size()) units[i] += kBpeMarker;
      out.push_back(std::move(units[i]));
    }
  }
  return out;
}

void BpeModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << kBpeHeader << '\n';
  for (const auto& [l, r] : merges_) out << l << ' ' << r << '\n';
}

BpeModel BpeModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kBpeHeader) {
    throw DataError("unsupported BPE model header in " + path.string());
  }
  std::vector<Merge> merges;
  while (std::getline(in, line)) {
    auto parts = text::split_whitespace(line);
    if (parts.size() != 2) throw DataError("malformed BPE merge line: '" + line + "'");
    merges.emplace_back(std::move(parts[0]), std::move(parts[1]));
  }
  return BpeModel(std::move(merges));
}

BpeModel learn_bpe(const std::vector<Sentence>& corpus, std::size_t num_merges) {
  if (corpus.empty()) throw ConfigError("learn_bpe: corpus is empty");

  std::map<std::string, std::int64_t> word_freq;
  for (const auto& s : corpus) {
    for (const auto& w : s) ++word_freq[w];
  }

  // Symbols are interned so pair counting works on integers.
  std::vector<std::string> symbol_text;
  std::unordered_map<std::string, std::uint32_t> symbol_id;
  auto intern = [&](const std::string& s) {
    auto [it, inserted] = symbol_id.emplace(s, static_cast<std::uint32_t>(symbol_text.size()));
    if (inserted) symbol_text.push_back(s);
    return it->second;
  };

  struct Word {
    std::vector<std::uint32_t> symbols;
    std::int64_t freq;
  };
  std::vector<Word> words;
  words.reserve(word_freq.size());
  for (const auto& [w, f] : word_freq) {
    Word word{{}, f};
    for (const auto& c : chars_of(w)) word.symbols.push_back(intern(c));
    words.push_back(std::move(word));
  }

  std::vector<BpeModel::Merge> merges;
  std::unordered_map<std::uint64_t, std::int64_t> counts;
  for (std::size_t m = 0; m < num_merges; ++m) {
    counts.clear();
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        counts[(std::uint64_t{w.symbols[i]} << 32) | w.symbols[i + 1]] += w.freq;
      }
    }
    std::uint64_t best_key = 0;
    std::int64_t best_count = 0;
    for (const auto& [key, c] : counts) {
      if (c < best_count) continue;
      if (c > best_count) {
        best_key = key;
        best_count = c;
        continue;
      }
      const auto& l = symbol_text[key >> 32];
      const auto& r = symbol_text[key & 0xffffffffu];
      const auto& bl = symbol_text[best_key >> 32];
      const auto& br = symbol_text[best_key & 0xffffffffu];
      if (std::tie(l, r) < std::tie(bl, br)) best_key = key;
    }
    if (best_count < 2) break;

    const std::uint32_t left = static_cast<std::uint32_t>(best_key >> 32);
    const std::uint32_t right = static_cast<std::uint32_t>(best_key & 0xffffffffu);
    merges.emplace_back(symbol_text[left], symbol_text[right]);
    const std::uint32_t merged = intern(symbol_text[left] + symbol_text[right]);
    for (auto& w : words) {
      auto& s = w.symbols;
      std::size_t out = 0;
      for (std::size_t i = 0; i < s.size();) {
        if (i + 1 < s.size() && s[i] == left && s[i + 1] == right) {
          s[out++] = merged;
          i += 2;
        } else {
          s[out++] = s[i++];
        }
      }
      s.resize(out);
    }
  }
  return BpeModel(std::move(merges));
}

Sentence undo_bpe(const Sentence& sentence) {
  Sentence out;
  std::string pending;
  bool open = false;
  for (const auto& tok : sentence) {
    if (tok.size() >= kBpeMarker.size() && tok.ends_with(kBpeMarker)) {
      pending.append(tok, 0, tok.size() - kBpeMarker.size());
      open = true;
    } else {
      pending += tok;
      out.push_back(std::move(pending));
      pending.clear();
      open = false;
    }
  }
  if (open) throw SegmentationError("dangling '@@' continuation at sentence end");
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

const std::vector<std::string>& Vocabulary::base_reserved() {
  static const std::vector<std::string> kReserved = {"<pad>", "<s>", "</s>", "<unk>"};
  return kReserved;
}

Vocabulary::Vocabulary() : Vocabulary(base_reserved(), base_reserved().size()) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::size_t reserved_count)
    : tokens_(std::move(tokens)), reserved_count_(reserved_count) {
  const auto& base = base_reserved();
  if (tokens_.size() < base.size() || reserved_count_ < base.size() || reserved_count_ > tokens_.size() ||
      !std::equal(base.begin(), base.end(), tokens_.begin())) {
    throw VocabularyError("vocabulary must start with <pad> <s> </s> <unk>");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw VocabularyError("empty vocabulary token at id " + std::to_string(i));
    if (!ids_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
      throw VocabularyError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

std::int32_t Vocabulary::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw VocabularyError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> Vocabulary::encode(const Sentence& s) const {
  std::vector<std::int32_t> ids;
  ids.reserve(s.size());
  for (const auto& t : s) ids.push_back(id_of(t));
  return ids;
}

Sentence Vocabulary::decode(const std::vector<std::int32_t>& ids) const {
  Sentence out;
  for (auto id : ids) {
    if (id == kEos) break;
    if (id == kBos || id == kPad) continue;
    out.push_back(token(id));
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw VocabularyError("malformed vocabulary line: '" + line + "'");
    const auto id = std::stoull(line.substr(tab + 1));
    if (id != tokens.size()) throw VocabularyError("vocabulary ids must be dense and ordered");
    tokens.push_back(line.substr(0, tab));
  }
  std::size_t reserved = base_reserved().size();
  while (reserved < tokens.size() && is_domain_tag(tokens[reserved])) ++reserved;
  return Vocabulary(std::move(tokens), reserved);
}

Vocabulary build_vocab(const std::vector<Sentence>& corpus, std::size_t limit,
                       const std::vector<std::string>& extra_reserved) {
  std::vector<std::string> tokens = Vocabulary::base_reserved();
  tokens.insert(tokens.end(), extra_reserved.begin(), extra_reserved.end());
  const std::size_t reserved = tokens.size();
  if (limit <= reserved) {
    throw ConfigError("vocabulary limit " + std::to_string(limit) + " must exceed the " +
                      std::to_string(reserved) + " reserved tokens");
  }
  std::map<std::string, std::int64_t> freq;
  for (const auto& s : corpus) {
    for (const auto& t : s) ++freq[t];
  }
  for (const auto& r : tokens) freq.erase(r);
  std::vector<std::pair<std::string, std::int64_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (std::size_t i = 0; i < ranked.size() && tokens.size() < limit; ++i) {
    tokens.push_back(ranked[i].first);
  }
  return Vocabulary(std::move(tokens), reserved);
}

}  // namespace mdnmt
