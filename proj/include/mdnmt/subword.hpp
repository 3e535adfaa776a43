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
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mdnmt/corpus.hpp"

namespace mdnmt {

inline constexpr std::string_view kBpeMarker = "@@";
inline constexpr std::size_t kDesktopBpeMerges = 500;
// Production setting used for the full-size corpora.
inline constexpr std::size_t kProductionBpeMerges = 50000;

// Ordered merge rules learned by learn_bpe. Immutable after learning.
class BpeModel {
 public:
  using Merge = std::pair<std::string, std::string>;

  BpeModel() = default;
  explicit BpeModel(std::vector<Merge> merges);

  const std::vector<Merge>& merges() const { return merges_; }
  std::size_t size() const { return merges_.size(); }

  // Splits each word into code points, applies the merges in learned order
  // and suffixes every non-final unit with "@@".
  Sentence apply(const Sentence& sentence) const;
  std::vector<std::string> segment_word(const std::string& word) const;

  void save(const std::filesystem::path& path) const;
  static BpeModel load(const std::filesystem::path& path);

 private:
  std::vector<Merge> merges_;
  std::map<std::string, std::map<std::string, std::size_t, std::less<>>, std::less<>> rank_;
};

// Greedy most-frequent-pair merging over word-internal symbol sequences,
// weighted by word frequency. Ties go to the lexicographically smallest
// (left, right) pair. Stops early once no pair occurs at least twice.
BpeModel learn_bpe(const std::vector<Sentence>& corpus, std::size_t num_merges);

inline Sentence apply_bpe(const BpeModel& model, const Sentence& sentence) {
  return model.apply(sentence);
}

// Joins "@@"-suffixed units with their successor. Throws SegmentationError
// when the last token still carries the marker.
Sentence undo_bpe(const Sentence& sentence);

// Token <-> id map. Reserved tokens take the lowest ids:
// 0 <pad>, 1 <s>, 2 </s>, 3 <unk>, then any extra reserved tokens such as
// domain tags, in the order given.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kBos = 1;
  static constexpr std::int32_t kEos = 2;
  static constexpr std::int32_t kUnk = 3;
  static const std::vector<std::string>& base_reserved();

  Vocabulary();
  // Builds from an explicit id-ordered token list (which must start with the
  // reserved tokens).
  explicit Vocabulary(std::vector<std::string> tokens, std::size_t reserved_count);

  std::size_t size() const { return tokens_.size(); }
  std::size_t reserved_count() const { return reserved_count_; }

  // Unknown tokens map to kUnk.
  std::int32_t id_of(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(std::int32_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<std::int32_t> encode(const Sentence& s) const;
  // Stops at </s>; drops <s> and <pad>.
  Sentence decode(const std::vector<std::int32_t>& ids) const;

  // "TOKEN<TAB>ID" lines.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.reserved_count_ == b.reserved_count_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
  std::size_t reserved_count_ = 0;
};

// Keeps the most frequent tokens until the vocabulary (reserved tokens
// included) reaches `limit`; frequency ties are broken lexicographically.
Vocabulary build_vocab(const std::vector<Sentence>& corpus, std::size_t limit,
                       const std::vector<std::string>& extra_reserved = {});

}  // namespace mdnmt
