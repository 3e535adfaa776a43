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

#include "mdnmt/ngram_lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mdnmt/error.hpp"
#include "mdnmt/text.hpp"

namespace mdnmt {

namespace {

constexpr std::string_view kLmHeader = "#mdnmt-lm v1";
const std::string kBosText = "<s>";
const std::string kEosText = "</s>";
const std::string kUnkText = "<unk>";

std::vector<double> resolve_weights(const LmConfig& config) {
  if (config.order < 1) throw ConfigError("LM order must be >= 1");
  std::vector<double> w = config.weights;
  if (w.empty()) w.assign(config.order, 1.0 / static_cast<double>(config.order));
  if (w.size() != config.order) throw ConfigError("LM needs one interpolation weight per order");
  double sum = 0;
  for (double x : w) {
    if (!(x >= 0)) throw ConfigError("LM interpolation weights must be >= 0");
    sum += x;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw ConfigError("LM interpolation weights must sum to 1");
  if (!(w[0] > 0)) throw ConfigError("LM unigram weight must be > 0");
  return w;
}

}  // namespace

NgramLm::NgramLm(std::size_t order, std::vector<double> weights)
    : order_(order), weights_(std::move(weights)), counts_(order) {
  intern(kBosText);
  intern(kEosText);
  intern(kUnkText);
}

std::int32_t NgramLm::intern(const std::string& token) {
  auto [it, inserted] = token_id_.emplace(token, static_cast<std::int32_t>(token_text_.size()));
  if (inserted) token_text_.push_back(token);
  return it->second;
}

std::int32_t NgramLm::lookup(const std::string& token) const {
  auto it = token_id_.find(token);
  if (it == token_id_.end() || it->second == kBos) return kUnk;
  return it->second;
}

std::string NgramLm::key_of(const std::int32_t* context, std::size_t len) {
  std::string key(len * sizeof(std::int32_t), '\0');
  if (len) std::memcpy(key.data(), context, key.size());
  return key;
}

void NgramLm::add_count(std::size_t k, const std::int32_t* context, std::int32_t token,
                        std::int64_t count) {
  auto& cc = counts_[k - 1][key_of(context, k - 1)];
  cc.total += count;
  cc.next[token] += count;
  if (k == 1) unigram_total_ += count;
}

double NgramLm::prob_ids(const std::int32_t* history, std::int32_t token) const {
  const std::size_t n = order_;
  const auto& uni = counts_[0];
  std::int64_t c1 = 0;
  if (auto it = uni.find(std::string()); it != uni.end()) {
    if (auto jt = it->second.next.find(token); jt != it->second.next.end()) c1 = jt->second;
  }
  // Vocabulary size excludes <s>; <unk> and </s> are always outcomes.
  const auto outcomes = static_cast<double>(token_text_.size() - 1);
  double q = (static_cast<double>(c1) + 1.0) / (static_cast<double>(unigram_total_) + outcomes);
  double p = weights_[0] * q;
  for (std::size_t k = 2; k <= n; ++k) {
    const std::int32_t* ctx = history + (n - 1) - (k - 1);
    const auto& table = counts_[k - 1];
    if (auto it = table.find(key_of(ctx, k - 1)); it != table.end() && it->second.total > 0) {
      std::int64_t c = 0;
      if (auto jt = it->second.next.find(token); jt != it->second.next.end()) c = jt->second;
      q = static_cast<double>(c) / static_cast<double>(it->second.total);
    }
    p += weights_[k - 1] * q;
  }
  return p;
}

double NgramLm::prob(const std::vector<std::string>& context, const std::string& token) const {
  std::vector<std::int32_t> history(order_ > 1 ? order_ - 1 : 0, kBos);
  const std::size_t take = std::min(context.size(), history.size());
  for (std::size_t i = 0; i < take; ++i) {
    const auto& t = context[context.size() - take + i];
    history[history.size() - take + i] = (t == kBosText) ? kBos : lookup(t);
  }
  const std::int32_t id = token == kEosText ? kEos : lookup(token);
  return prob_ids(history.data(), id);
}

double NgramLm::log_prob(const Sentence& sentence) const {
  const std::size_t pad = order_ - 1;
  std::vector<std::int32_t> seq(pad, kBos);
  seq.reserve(pad + sentence.size() + 1);
  for (const auto& t : sentence) seq.push_back(lookup(t));
  seq.push_back(kEos);
  // prob_ids reads order-1 history ids; for order 1 it reads none.
  std::vector<std::int32_t> scratch(pad + 1, kBos);
  double total = 0;
  for (std::size_t i = pad; i < seq.size(); ++i) {
    const std::int32_t* history = pad ? &seq[i - pad] : scratch.data();
    total += std::log(prob_ids(history, seq[i]));
  }
  return total;
}

double NgramLm::cross_entropy(const Sentence& sentence) const {
  return -log_prob(sentence) / static_cast<double>(sentence.size() + 1);
}

std::vector<std::string> NgramLm::outcome_space() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < token_text_.size(); ++i) {
    if (static_cast<std::int32_t>(i) != kBos) out.push_back(token_text_[i]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::vector<std::string>> NgramLm::observed_contexts(std::size_t k) const {
  if (k < 1 || k > order_) throw ConfigError("observed_contexts: order out of range");
  std::vector<std::vector<std::string>> out;
  for (const auto& [key, cc] : counts_[k - 1]) {
    std::vector<std::string> ctx(k - 1);
    for (std::size_t i = 0; i + 1 < k; ++i) {
      std::int32_t id;
      std::memcpy(&id, key.data() + i * sizeof(id), sizeof(id));
      ctx[i] = token_text_[static_cast<std::size_t>(id)];
    }
    out.push_back(std::move(ctx));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<NgramLm::CountRow> NgramLm::count_rows() const {
  std::vector<CountRow> rows;
  for (std::size_t k = 1; k <= order_; ++k) {
    for (const auto& [key, cc] : counts_[k - 1]) {
      std::vector<std::string> ctx(k - 1);
      for (std::size_t i = 0; i + 1 < k; ++i) {
        std::int32_t id;
        std::memcpy(&id, key.data() + i * sizeof(id), sizeof(id));
        ctx[i] = token_text_[static_cast<std::size_t>(id)];
      }
      const std::string ctx_text = text::join(ctx);
      for (const auto& [tok, c] : cc.next) {
        rows.emplace_back(k, ctx_text, token_text_[static_cast<std::size_t>(tok)], c);
      }
    }
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

void NgramLm::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << kLmHeader << '\n' << "order\t" << order_ << '\n' << "weights";
  char buf[64];
  for (double w : weights_) {
    std::snprintf(buf, sizeof buf, "%.17g", w);
    out << '\t' << buf;
  }
  out << '\n';
  for (const auto& [k, ctx, tok, c] : count_rows()) {
    out << k << '\t' << ctx << '\t' << tok << '\t' << c << '\n';
  }
}

NgramLm NgramLm::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kLmHeader) {
    throw DataError("unsupported LM header in " + path.string());
  }
  auto fields = [](const std::string& l) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
      auto tab = l.find('\t', start);
      parts.push_back(l.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    return parts;
  };
  LmConfig config;
  if (!std::getline(in, line)) throw DataError("truncated LM file " + path.string());
  auto f = fields(line);
  if (f.size() != 2 || f[0] != "order") throw DataError("malformed LM order line");
  config.order = std::stoull(f[1]);
  if (!std::getline(in, line)) throw DataError("truncated LM file " + path.string());
  f = fields(line);
  if (f.empty() || f[0] != "weights") throw DataError("malformed LM weights line");
  for (std::size_t i = 1; i < f.size(); ++i) config.weights.push_back(std::stod(f[i]));
  NgramLm lm(config.order, resolve_weights(config));
  while (std::getline(in, line)) {
    f = fields(line);
    if (f.size() != 4) throw DataError("malformed LM count line: '" + line + "'");
    const std::size_t k = std::stoull(f[0]);
    if (k < 1 || k > lm.order_) throw DataError("LM count line has order out of range");
    auto ctx_tokens = text::split_whitespace(f[1]);
    if (ctx_tokens.size() != k - 1) throw DataError("LM context length does not match its order");
    std::vector<std::int32_t> ctx;
    for (const auto& t : ctx_tokens) ctx.push_back(lm.intern(t));
    lm.add_count(k, ctx.data(), lm.intern(f[2]), std::stoll(f[3]));
  }
  return lm;
}

NgramLm train_lm(const std::vector<Sentence>& corpus, const LmConfig& config) {
  if (corpus.empty()) throw ConfigError("train_lm: corpus is empty");
  NgramLm lm(config.order, resolve_weights(config));
  const std::size_t pad = config.order - 1;
  std::vector<std::int32_t> seq;
  for (const auto& s : corpus) {
    seq.assign(pad, NgramLm::kBos);
    for (const auto& t : s) seq.push_back(lm.intern(t));
    seq.push_back(NgramLm::kEos);
    for (std::size_t i = pad; i < seq.size(); ++i) {
      for (std::size_t k = 1; k <= config.order; ++k) {
        lm.add_count(k, &seq[i - (k - 1)], seq[i], 1);
      }
    }
  }
  return lm;
}

}  // namespace mdnmt
