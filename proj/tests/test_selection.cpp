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

#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "mdnmt/error.hpp"
#include "mdnmt/selection.hpp"
#include "test_util.hpp"

using namespace mdnmt;
using mdnmt::testing::load_fixture;
using mdnmt::testing::pairs_from_json;

namespace {

ParallelCorpus small(const std::vector<std::pair<Sentence, Sentence>>& pairs, const std::string& name) {
  ParallelCorpus c{DomainId(name), {}};
  for (const auto& [s, t] : pairs) c.pairs.push_back({s, t});
  return c;
}

}  // namespace

TEST_CASE("identical models score every pair zero") {
  const auto c = small({{{"a", "b"}, {"x"}}, {{"b"}, {"y", "x"}}}, "d");
  const auto lms = train_selection_lms(c, c);
  for (const auto& s : rank_corpus(c, lms)) CHECK(s.score == 0.0);
}

TEST_CASE("an in-domain pair scores below an out-of-domain pair") {
  const auto in = small({{{"a", "b"}, {"x", "y"}}, {{"b", "a"}, {"y", "x"}}}, "in");
  const auto out = small({{{"c", "d"}, {"z", "w"}}, {{"d", "c"}, {"w", "z"}}}, "out");
  const auto lms = train_selection_lms(in, out);
  CHECK(score_pair(in.pairs[0], 0, lms).score < score_pair(out.pairs[0], 0, lms).score);
}

TEST_CASE("one-token pair against unigram models by hand") {
  LmConfig cfg;
  cfg.order = 1;
  const auto in = small({{{"a"}, {"x"}}}, "in");
  const auto out = small({{{"b"}, {"y"}}}, "out");
  const auto lms = train_selection_lms(in, out, cfg);
  // Source: H_in(a) = -(log 2/5 + log 2/5)/2, H_out(a) = -(log 1/5 + log 2/5)/2.
  const double src = -(std::log(0.4) + std::log(0.4)) / 2 + (std::log(0.2) + std::log(0.4)) / 2;
  CHECK(score_pair(in.pairs[0], 0, lms, false).score == doctest::Approx(src).epsilon(1e-14));
  CHECK(score_pair(in.pairs[0], 0, lms, true).score == doctest::Approx(2 * src).epsilon(1e-14));
}

TEST_CASE("rankings match the brute-force Moore-Lewis oracle") {
  const auto cases = load_fixture("selection_cases.json");
  REQUIRE(cases.size() >= 100);
  for (const auto& c : cases) {
    LmConfig cfg;
    cfg.order = c["order"].get<std::size_t>();
    const bool bilingual = c["bilingual"].get<bool>();
    const auto lms = train_selection_lms(pairs_from_json(c["in"], "in"), pairs_from_json(c["out"], "out"), cfg);
    const auto cand = pairs_from_json(c["candidates"], "cand");
    const auto expect = c["scores"].get<std::vector<double>>();
    const auto expect_rank = c["ranking"].get<std::vector<std::size_t>>();
    const auto ranking = rank_corpus(cand, lms, bilingual);
    REQUIRE(ranking.size() == expect.size());
    for (std::size_t pos = 0; pos < ranking.size(); ++pos) {
      const auto& r = ranking[pos];
      CHECK(std::fabs(r.score - expect[r.pair_index]) <= 1e-9);
      // Same order up to scores that agree within the tolerance.
      CHECK(std::fabs(expect[r.pair_index] - expect[expect_rank[pos]]) <= 1e-9);
    }
  }
}

TEST_CASE("ties keep corpus order") {
  const auto c = small({{{"q"}, {"r"}}, {{"q"}, {"r"}}, {{"q"}, {"r"}}}, "d");
  const auto lms = train_selection_lms(small({{{"a"}, {"b"}}}, "i"), small({{{"c"}, {"d"}}}, "o"));
  const auto r = rank_corpus(c, lms);
  CHECK(r[0].pair_index == 0);
  CHECK(r[1].pair_index == 1);
  CHECK(r[2].pair_index == 2);
  CHECK(rank_corpus(small({{{"q"}, {"r"}}}, "one"), lms).size() == 1);
}

TEST_CASE("selected counts use the ceiling and never drop to zero") {
  CHECK(selected_count(0.03, 100) == 3);
  CHECK(selected_count(0.05, 100) == 5);
  CHECK(selected_count(0.2, 10) == 2);
  CHECK(selected_count(0.01, 10) == 1);
  CHECK(selected_count(1.0, 7) == 7);
  CHECK(selected_count(0.5, 0) == 0);
  CHECK_THROWS_AS(SelectionConfig{0.0}.validate(), ConfigError);
  CHECK_THROWS_AS(SelectionConfig{1.5}.validate(), ConfigError);
}

TEST_CASE("fraction one is the identity and the selection is a ranking prefix in corpus order") {
  const auto cases = load_fixture("selection_cases.json");
  const auto& c = cases[0];
  const auto lms = train_selection_lms(pairs_from_json(c["in"], "in"), pairs_from_json(c["out"], "out"));
  ParallelCorpus cand = pairs_from_json(c["candidates"], "cand");
  for (const auto& extra : cases[1]["candidates"]) cand.pairs.push_back({extra[0].get<Sentence>(), extra[1].get<Sentence>()});
  CHECK(select_fraction(cand, lms, SelectionConfig{1.0}).pairs == cand.pairs);
  const auto ranking = rank_corpus(cand, lms);
  const auto half = select_fraction(cand, ranking, 0.5);
  std::vector<std::size_t> prefix;
  for (std::size_t i = 0; i < half.size(); ++i) prefix.push_back(ranking[i].pair_index);
  std::sort(prefix.begin(), prefix.end());
  REQUIRE(prefix.size() == half.size());
  for (std::size_t i = 0; i < prefix.size(); ++i) CHECK(half.pairs[i] == cand.pairs[prefix[i]]);
}

TEST_CASE("score dump re-sorts to the selected set") {
  const auto cases = load_fixture("selection_cases.json");
  const auto& c = cases[3];
  const auto cand = pairs_from_json(c["candidates"], "cand");
  const auto lms = train_selection_lms(pairs_from_json(c["in"], "in"), pairs_from_json(c["out"], "out"));
  const auto ranking = rank_corpus(cand, lms);
  std::ostringstream dump;
  write_scores(dump, ranking);
  std::istringstream in(dump.str());
  std::vector<std::pair<double, std::size_t>> rows;
  std::size_t idx;
  double score;
  while (in >> idx >> score) rows.emplace_back(score, idx);
  REQUIRE(rows.size() == cand.size());
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  const auto chosen = select_fraction(cand, ranking, 0.5);
  std::vector<std::size_t> from_dump;
  for (std::size_t i = 0; i < chosen.size(); ++i) from_dump.push_back(rows[i].second);
  std::sort(from_dump.begin(), from_dump.end());
  for (std::size_t i = 0; i < chosen.size(); ++i) CHECK(chosen.pairs[i] == cand.pairs[from_dump[i]]);
}

TEST_CASE("swapping the models negates every score") {
  const auto cases = load_fixture("selection_cases.json");
  const auto& c = cases[5];
  const auto in = pairs_from_json(c["in"], "in"), out = pairs_from_json(c["out"], "out");
  const auto cand = pairs_from_json(c["candidates"], "cand");
  const auto fwd = train_selection_lms(in, out), rev = train_selection_lms(out, in);
  for (std::size_t i = 0; i < cand.size(); ++i) {
    CHECK(score_pair(cand.pairs[i], i, fwd).score == -score_pair(cand.pairs[i], i, rev).score);
  }
}

TEST_CASE("select_below keeps scores under the threshold") {
  const auto cases = load_fixture("selection_cases.json");
  const auto& c = cases[7];
  const auto cand = pairs_from_json(c["candidates"], "cand");
  const auto lms = train_selection_lms(pairs_from_json(c["in"], "in"), pairs_from_json(c["out"], "out"));
  const auto ranking = rank_corpus(cand, lms);
  const auto kept = select_below(cand, ranking, 0.0);
  const auto n = std::count_if(ranking.begin(), ranking.end(), [](const auto& s) { return s.score < 0.0; });
  CHECK(kept.size() == static_cast<std::size_t>(n));
}
