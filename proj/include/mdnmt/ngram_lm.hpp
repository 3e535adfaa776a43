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
#include <tuple>
#include <unordered_map>
#include <vector>

#include "mdnmt/corpus.hpp"

namespace mdnmt {

struct LmConfig {
  std::size_t order = 3;
  // One weight per order, lowest order first. Empty means uniform.
  std::vector<double> weights;
};

// Interpolated n-gram language model:
//
//   p(w | h) = sum_k weights[k-1] * q_k(w | last k-1 tokens of h)
//
//   q_1(w)     = (c(w) + 1) / (N + |V| + 2)       add-one over V, </s>, <unk>
//   q_k(w | g) = c(g w) / c(g .)                  when the context g was seen
//              = q_{k-1}(w | g minus its oldest token)   otherwise
//
// Sentences are padded with order-1 <s> tokens and one </s>; N counts every
// predicted token including </s>. Unknown words are scored as <unk>. Every
// distribution sums to one over V plus </s> and <unk>; probabilities are
// strictly positive because the unigram weight must be > 0. Natural logs.
class NgramLm {
 public:
  std::size_t order() const { return order_; }
  const std::vector<double>& weights() const { return weights_; }

  // Context tokens are oldest first; only the last order-1 are used and
  // missing positions are treated as <s>.
  double prob(const std::vector<std::string>& context, const std::string& token) const;

  double log_prob(const Sentence& sentence) const;
  // -log_prob / (tokens + 1), the +1 for </s>.
  double cross_entropy(const Sentence& sentence) const;

  // Tokens that can be predicted: training vocabulary, </s>, <unk>, sorted.
  std::vector<std::string> outcome_space() const;
  // Contexts of length k-1 observed for order k, each oldest-first.
  std::vector<std::vector<std::string>> observed_contexts(std::size_t k) const;

  // (order, context, token, count) rows, sorted; the full model state.
  using CountRow = std::tuple<std::size_t, std::string, std::string, std::int64_t>;
  std::vector<CountRow> count_rows() const;

  // Versioned text: header with order and weights, then one
  // "ORDER<TAB>CONTEXT<TAB>TOKEN<TAB>COUNT" line per count.
  void save(const std::filesystem::path& path) const;
  static NgramLm load(const std::filesystem::path& path);

  friend bool operator==(const NgramLm& a, const NgramLm& b) {
    return a.order_ == b.order_ && a.weights_ == b.weights_ && a.count_rows() == b.count_rows();
  }

 private:
  friend NgramLm train_lm(const std::vector<Sentence>&, const LmConfig&);

  struct ContextCounts {
    std::int64_t total = 0;
    std::unordered_map<std::int32_t, std::int64_t> next;
  };

  static constexpr std::int32_t kBos = 0;
  static constexpr std::int32_t kEos = 1;
  static constexpr std::int32_t kUnk = 2;

  NgramLm(std::size_t order, std::vector<double> weights);
  std::int32_t intern(const std::string& token);
  std::int32_t lookup(const std::string& token) const;
  void add_count(std::size_t k, const std::int32_t* context, std::int32_t token, std::int64_t count);
  // history holds order-1 ids, oldest first.
  double prob_ids(const std::int32_t* history, std::int32_t token) const;
  static std::string key_of(const std::int32_t* context, std::size_t len);

  std::size_t order_ = 1;
  std::vector<double> weights_;
  std::vector<std::string> token_text_;
  std::unordered_map<std::string, std::int32_t> token_id_;
  // counts_[k-1]: context key (k-1 ids) -> successor counts
  std::vector<std::unordered_map<std::string, ContextCounts>> counts_;
  std::int64_t unigram_total_ = 0;
};

NgramLm train_lm(const std::vector<Sentence>& corpus, const LmConfig& config = {});

inline double log_prob(const NgramLm& lm, const Sentence& s) { return lm.log_prob(s); }
inline double cross_entropy(const NgramLm& lm, const Sentence& s) { return lm.cross_entropy(s); }

}  // namespace mdnmt
