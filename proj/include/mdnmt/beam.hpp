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

// Beam search shared by single-model and ensemble decoding.
//
// A Scorer provides
//   using State = ...;
//   State initial();
//   Eigen::VectorXd advance(State& state, std::int32_t prev_token);
// where advance feeds prev_token, updates state in place and returns
// log-probabilities over the target vocabulary.

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <vector>

#include "mdnmt/nmt.hpp"
#include "mdnmt/subword.hpp"

namespace mdnmt {

namespace detail {

inline bool better_hypothesis(const Hypothesis& a, const Hypothesis& b) {
  if (a.normalized_score != b.normalized_score) return a.normalized_score > b.normalized_score;
  return a.tokens < b.tokens;
}

}  // namespace detail

// When `all` is given it receives every finished hypothesis, best first.
template <class Scorer>
Hypothesis beam_search(Scorer& scorer, std::size_t beam, std::size_t max_len,
                       std::vector<Hypothesis>* all = nullptr) {
  using State = typename Scorer::State;
  struct Item {
    std::vector<std::int32_t> tokens;
    double score;
    State state;
  };
  struct Candidate {
    std::size_t parent;
    std::int32_t token;
    double score;
  };

  std::vector<Item> active;
  active.push_back(Item{{}, 0.0, scorer.initial()});
  std::vector<Hypothesis> finished;

  for (std::size_t step = 0; step < max_len && !active.empty(); ++step) {
    const std::size_t live = beam - std::min(beam, finished.size());
    if (live == 0) break;

    std::vector<Candidate> candidates;
    std::vector<State> advanced;
    advanced.reserve(active.size());
    for (std::size_t i = 0; i < active.size(); ++i) {
      State s = active[i].state;
      const std::int32_t prev = active[i].tokens.empty() ? Vocabulary::kBos : active[i].tokens.back();
      const Eigen::VectorXd logp = scorer.advance(s, prev);
      advanced.push_back(std::move(s));
      for (Eigen::Index v = 0; v < logp.size(); ++v) {
        const auto tok = static_cast<std::int32_t>(v);
        if (tok == Vocabulary::kPad || tok == Vocabulary::kBos) continue;
        candidates.push_back({i, tok, active[i].score + logp[v]});
      }
    }

    // Rank by score, then by the resulting token sequence.
    auto before = [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      const auto& ta = active[a.parent].tokens;
      const auto& tb = active[b.parent].tokens;
      if (ta != tb) return ta < tb;
      return a.token < b.token;
    };
    const std::size_t keep = std::min(live, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), before);

    std::vector<Item> next;
    for (std::size_t k = 0; k < keep; ++k) {
      const auto& c = candidates[k];
      std::vector<std::int32_t> tokens = active[c.parent].tokens;
      tokens.push_back(c.token);
      if (c.token == Vocabulary::kEos) {
        const double n = static_cast<double>(tokens.size());
        finished.push_back(Hypothesis{std::move(tokens), c.score, c.score / n});
      } else {
        next.push_back(Item{std::move(tokens), c.score, advanced[c.parent]});
      }
    }
    active = std::move(next);
  }
  for (auto& item : active) {
    const double n = static_cast<double>(std::max<std::size_t>(item.tokens.size(), 1));
    finished.push_back(Hypothesis{std::move(item.tokens), item.score, item.score / n});
  }
  std::sort(finished.begin(), finished.end(), detail::better_hypothesis);
  if (all) *all = finished;
  if (finished.empty()) return Hypothesis{};
  return finished.front();
}

}  // namespace mdnmt
