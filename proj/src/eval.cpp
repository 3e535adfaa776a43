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

#include "mdnmt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "mdnmt/error.hpp"
#include "mdnmt/text.hpp"

namespace mdnmt {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const Sentence& s, std::size_t n) {
  NgramCounts counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    ++counts[std::vector<std::string>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                      s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

Sentence lower(const Sentence& s) {
  Sentence out;
  out.reserve(s.size());
  for (const auto& t : s) out.push_back(text::ascii_lower(t));
  return out;
}

// Clipped matches and hypothesis n-gram total for one sentence and order.
std::pair<std::size_t, std::size_t> clipped(const Sentence& hyp, const Sentence& ref, std::size_t n) {
  const NgramCounts h = count_ngrams(hyp, n);
  const NgramCounts r = count_ngrams(ref, n);
  std::size_t match = 0, total = 0;
  for (const auto& [gram, c] : h) {
    total += c;
    auto it = r.find(gram);
    if (it != r.end()) match += std::min(c, it->second);
  }
  return {match, total};
}

}  // namespace

BleuScore bleu(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references,
               const BleuOptions& options) {
  if (hypotheses.size() != references.size()) {
    throw LengthMismatchError("BLEU needs one reference per hypothesis: " + std::to_string(hypotheses.size()) +
                              " hypotheses, " + std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw ConfigError("BLEU of an empty corpus is undefined");
  if (options.max_order < 1) throw ConfigError("BLEU max_order must be >= 1");
  BleuScore s;
  s.matches.assign(options.max_order, 0);
  s.totals.assign(options.max_order, 0);
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const Sentence h = options.lowercase ? lower(hypotheses[i]) : hypotheses[i];
    const Sentence r = options.lowercase ? lower(references[i]) : references[i];
    s.hyp_len += h.size();
    s.ref_len += r.size();
    for (std::size_t n = 1; n <= options.max_order; ++n) {
      const auto [m, t] = clipped(h, r, n);
      s.matches[n - 1] += m;
      s.totals[n - 1] += t;
    }
  }
  double log_sum = 0;
  bool zero = false;
  for (std::size_t n = 0; n < options.max_order; ++n) {
    const double p = s.totals[n] ? static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]) : 0.0;
    s.precisions.push_back(p);
    if (p <= 0) {
      zero = true;
    } else {
      log_sum += std::log(p);
    }
  }
  if (s.hyp_len == 0) {
    s.brevity_penalty = 0;
  } else if (s.hyp_len < s.ref_len) {
    s.brevity_penalty = std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len));
  }
  s.bleu = zero ? 0.0 : s.brevity_penalty * std::exp(log_sum / static_cast<double>(options.max_order));
  return s;
}

double smoothed_sentence_bleu(const Sentence& hypothesis, const Sentence& reference, std::size_t max_order) {
  if (hypothesis.empty()) return 0;
  double log_sum = 0;
  for (std::size_t n = 1; n <= max_order; ++n) {
    const auto [m, t] = clipped(hypothesis, reference, n);
    const double add = n == 1 ? 0.0 : 1.0;
    if (m + add == 0) return 0;
    log_sum += std::log((static_cast<double>(m) + add) / (static_cast<double>(t) + add));
  }
  double bp = 1;
  if (hypothesis.size() < reference.size()) {
    bp = std::exp(1.0 - static_cast<double>(reference.size()) / static_cast<double>(hypothesis.size()));
  }
  return bp * std::exp(log_sum / static_cast<double>(max_order));
}

double perplexity(const ModelCheckpoint& checkpoint, std::span<const EncodedPair> corpus) {
  if (corpus.empty()) throw ConfigError("perplexity of an empty corpus is undefined");
  const CorpusLoss loss = corpus_loss(checkpoint, corpus);
  const double ppl = std::exp(loss.total_nll / static_cast<double>(loss.tokens));
  if (!std::isfinite(ppl)) throw DivergenceError("non-finite perplexity", 0);
  return ppl;
}

EvalSet make_eval_set(const std::string& name, const ParallelCorpus& corpus, const Vocabulary& source_vocab,
                      const Vocabulary& target_vocab) {
  EvalSet set;
  set.name = name;
  for (const auto& p : corpus.pairs) {
    set.pairs.push_back({source_vocab.encode(p.source), target_vocab.encode(p.target)});
    set.references.push_back(undo_bpe(p.target));
  }
  return set;
}

Sentence postprocess(const Vocabulary& target_vocab, const std::vector<std::int32_t>& ids) {
  Sentence words = target_vocab.decode(ids);
  if (!words.empty() && words.back().size() >= 2 && words.back().ends_with("@@")) {
    words.back().resize(words.back().size() - 2);
    if (words.back().empty()) words.pop_back();
  }
  return undo_bpe(words);
}

std::vector<Sentence> translate_set(const EvalSet& set, const Vocabulary& target_vocab, const Decoder& decode) {
  std::vector<Sentence> out;
  out.reserve(set.pairs.size());
  for (const auto& p : set.pairs) out.push_back(postprocess(target_vocab, decode(p.source).tokens));
  return out;
}

BleuScore decode_bleu(const EvalSet& set, const Vocabulary& target_vocab, const Decoder& decode) {
  return bleu(translate_set(set, target_vocab, decode), set.references);
}

std::string format_report_row(const ReportRow& row) {
  char bleu[32];
  std::snprintf(bleu, sizeof bleu, "%.2f", row.bleu * 100.0);
  std::string ppl = "-";
  if (std::isfinite(row.ppl) && row.ppl > 0) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", row.ppl);
    ppl = buf;
  }
  return row.system + "\t" + row.testset + "\t" + bleu + "\t" + ppl;
}

}  // namespace mdnmt
