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


// Acceptance checks. Prints one PASS/FAIL line per criterion; an optional
// argument selects a single criterion by number.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "mdnmt/ensemble.hpp"
#include "mdnmt/eval.hpp"
#include "mdnmt/experiments.hpp"
#include "mdnmt/ngram_lm.hpp"
#include "mdnmt/schedule.hpp"
#include "mdnmt/selection.hpp"
#include "test_util.hpp"

using namespace mdnmt;
using mdnmt::testing::load_fixture;
using mdnmt::testing::pairs_from_json;
using mdnmt::testing::sentences;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr std::size_t kGradConfigs = 24;
constexpr double kGradBudgetSeconds = 120;
constexpr double kOracleTolerance = 1e-9;
constexpr std::size_t kOracleCases = 100;
constexpr double kEnsembleTolerance = 1e-12;
constexpr std::size_t kPropertyCases = 1000;
constexpr double kNormTolerance = 1e-9;
constexpr std::size_t kFindingSeeds = 5;
constexpr std::size_t kFindingRequired = 4;
constexpr std::size_t kMaxParameters = 200000;
constexpr double kFindingBudgetSeconds = 30 * 60;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Outcome gradients() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  SplitMix64 rng(777);
  double worst = 0;
  std::size_t entries = 0;
  for (std::size_t i = 0; i < kGradConfigs; ++i) {
    const auto c = testing::random_tiny_config(rng);
    auto params = init_model(c).params;
    testing::randomize(params, rng, 0.5);
    const auto g = testing::gradient_check(c, params, testing::random_batch(c, rng, 2, 4));
    worst = std::max(worst, g.max_rel_error);
    entries += g.checked;
  }
  const double secs = testing::seconds_since(t0);
  o.require(worst < kGradTolerance, fmt("max rel error %.3g", worst));
  o.require(secs < kGradBudgetSeconds, fmt("took %.1f s", secs));
  o.detail = fmt("%g configs, %g entries, max rel error %.3g", kGradConfigs, entries, worst) +
             fmt(", %.1f s", secs) + (o.detail.empty() ? "" : " [" + o.detail + "]");
  return o;
}

Outcome oracles() {
  Outcome o;
  std::size_t lm_cases = 0, sel_cases = 0, bleu_cases = 0;
  double lm_err = 0, sel_err = 0, bleu_err = 0;
  bool order_ok = true;

  for (const auto& c : load_fixture("lm_cases.json")) {
    LmConfig cfg;
    cfg.order = c["order"].get<std::size_t>();
    cfg.weights = c["weights"].get<std::vector<double>>();
    const auto lm = train_lm(sentences(c["corpus"]), cfg);
    for (const auto& q : c["queries"]) {
      const double got = lm.prob(q["context"].get<std::vector<std::string>>(), q["token"].get<std::string>());
      lm_err = std::max(lm_err, std::fabs(got - q["prob"].get<double>()));
    }
    ++lm_cases;
  }

  for (const auto& c : load_fixture("selection_cases.json")) {
    LmConfig cfg;
    cfg.order = c["order"].get<std::size_t>();
    const auto lms = train_selection_lms(pairs_from_json(c["in"], "in"), pairs_from_json(c["out"], "out"), cfg);
    const auto expect = c["scores"].get<std::vector<double>>();
    const auto expect_rank = c["ranking"].get<std::vector<std::size_t>>();
    const auto ranking = rank_corpus(pairs_from_json(c["candidates"], "cand"), lms, c["bilingual"].get<bool>());
    if (ranking.size() != expect.size()) {
      order_ok = false;
      continue;
    }
    for (std::size_t pos = 0; pos < ranking.size(); ++pos) {
      sel_err = std::max(sel_err, std::fabs(ranking[pos].score - expect[ranking[pos].pair_index]));
      if (std::fabs(expect[ranking[pos].pair_index] - expect[expect_rank[pos]]) > kOracleTolerance) order_ok = false;
    }
    ++sel_cases;
  }

  for (const auto& c : load_fixture("bleu_cases.json")) {
    const auto b = bleu(sentences(c["hyps"]), sentences(c["refs"]));
    bleu_err = std::max(bleu_err, std::fabs(b.bleu - c["expected"]["bleu"].get<double>()));
    ++bleu_cases;
  }

  const Sentence sevens(7, "the");
  const auto clip = bleu({sevens}, {{"the", "cat", "is", "on", "the", "mat"}});
  const bool p1_exact = clip.precisions[0] == 2.0 / 7.0;

  o.require(lm_cases >= kOracleCases && lm_err <= kOracleTolerance, fmt("LM max error %.3g", lm_err));
  o.require(sel_cases >= kOracleCases && sel_err <= kOracleTolerance && order_ok,
            fmt("selection max error %.3g", sel_err));
  o.require(bleu_cases >= kOracleCases && bleu_err <= kOracleTolerance, fmt("BLEU max error %.3g", bleu_err));
  o.require(p1_exact, fmt("clipped p1 %.17g", clip.precisions[0]));
  const std::string summary = fmt("LM %g cases err %.2g, ", lm_cases, lm_err) +
                              fmt("selection %g cases err %.2g, ", sel_cases, sel_err) +
                              fmt("BLEU %g cases err %.2g, p1 = 2/7 ", bleu_cases, bleu_err) +
                              (p1_exact ? "exact" : "inexact");
  o.detail = summary + (o.detail.empty() ? "" : " [" + o.detail + "]");
  return o;
}

Outcome continuity() {
  Outcome o;
  const auto task = testing::make_tiny_task(31, {40, 80, 80});
  TrainingData data;
  for (const auto& e : task.encoded) data[e.domain] = e;
  ModelConfig c;
  c.source_vocab = task.source_vocab.size();
  c.target_vocab = task.target_vocab.size();
  c.embedding_dim = 8;
  c.hidden_dim = 12;
  c.seed = 31;
  std::size_t compared = 0;
  for (auto opt : {OptimizerType::kSgd, OptimizerType::kAdagrad, OptimizerType::kAdam}) {
    RunOptions ro;
    ro.hyper.optimizer = opt;
    ro.hyper.learning_rate = opt == OptimizerType::kSgd ? 0.5 : 0.02;
    ro.hyper.batch_size = 8;
    const auto od = concat_plan({DomainId("dom1"), DomainId("dom2")}, 2);
    const auto whole_plan = finetune_plan(od, DomainId("dom0"), 2);
    const auto a = run_plan(whole_plan, init_model(c), data, {}, task.target_vocab, ro);
    const auto b = run_plan(whole_plan, init_model(c), data, {}, task.target_vocab, ro);
    o.require(serialize_checkpoint(a.final) == serialize_checkpoint(b.final), "repeat run differs");

    const auto first = run_plan(od, init_model(c), data, {}, task.target_vocab, ro);
    const auto path = testing::scratch_dir("acceptance_resume") / "od.ckpt";
    save_checkpoint(first.final, path);
    const auto loaded = load_checkpoint(path);
    o.require(serialize_checkpoint(loaded) == serialize_checkpoint(first.final), "save/load not byte-identical");
    const auto resumed = run_plan(concat_plan({DomainId("dom0")}, 2), loaded, data, {}, task.target_vocab, ro);
    o.require(serialize_checkpoint(resumed.final) == serialize_checkpoint(a.final), "resume differs");

    // Epoch-level resume in the middle of a stage.
    TrainHyper h = ro.hyper;
    auto straight = init_model(c);
    for (int e = 0; e < 3; ++e) straight = train_epoch(std::move(straight), task.encoded[1], h);
    auto part = init_model(c);
    part = train_epoch(std::move(part), task.encoded[1], h);
    save_checkpoint(part, path);
    part = load_checkpoint(path);
    for (int e = 0; e < 2; ++e) part = train_epoch(std::move(part), task.encoded[1], h);
    o.require(serialize_checkpoint(part) == serialize_checkpoint(straight), "mid-stage resume differs");
    compared += 4;
  }
  o.detail = fmt("%g byte comparisons over three optimizers", compared) + (o.detail.empty() ? "" : " [" + o.detail + "]");
  return o;
}

Outcome ensembles() {
  Outcome o;
  SplitMix64 rng(4242);
  double worst = 0;
  std::size_t steps = 0;
  bool decodes = true;
  for (std::uint64_t s = 1; s <= 10; ++s) {
    ModelConfig c;
    c.source_vocab = c.target_vocab = 14;
    c.embedding_dim = 8;
    c.hidden_dim = 12;
    c.seed = s;
    auto m = init_model(c);
    testing::randomize(m.params, rng, 0.8);
    const Translator single(m);
    for (std::size_t n : {1u, 2u, 3u}) {
      std::vector<double> w(n);
      for (auto& x : w) x = rng.uniform(0.1, 1.0);
      double sum = 0;
      for (auto x : w) sum += x;
      for (auto& x : w) x /= sum;
      const Ensemble ens(weighted_ensemble(std::vector<const ModelCheckpoint*>(n, &m), w));
      for (int k = 0; k < 5; ++k) {
        const auto src = testing::random_batch(c, rng, 1, 6)[0].source;
        const auto es = ens.encode(src);
        auto estate = ens.initial_state(es);
        const auto ss = single.encode(src);
        auto sstate = single.initial_state(ss);
        std::int32_t prev = Vocabulary::kBos;
        for (int t = 0; t < 8; ++t) {
          const auto pe = ensemble_step(ens, es, estate, prev);
          const auto ps = single.step(ss, sstate, prev);
          worst = std::max(worst, (pe - ps).cwiseAbs().maxCoeff());
          ++steps;
          prev = static_cast<std::int32_t>(3 + rng.below(c.target_vocab - 3));
        }
        const auto d = decode_beam(m, src, 4, 12);
        const auto e = decode_ensemble(balanced_ensemble(std::vector<const ModelCheckpoint*>(n, &m)), src, 4, 12);
        decodes = decodes && d.tokens == e.tokens;
      }
    }
  }
  o.require(worst < kEnsembleTolerance, fmt("per-step max diff %.3g", worst));
  o.require(decodes, "ensemble decode differs from the single model");

  // Grid search against the uniform point on an in-domain dev set.
  const auto task = testing::make_tiny_task(41, {40, 150, 150});
  ParallelCorpus dev{DomainId("dom0"), {task.domains[0].pairs.begin(), task.domains[0].pairs.begin() + 20}};
  const auto dev_set = make_eval_set("dom0", dev, task.source_vocab, task.target_vocab);
  std::vector<ModelCheckpoint> models;
  for (std::size_t k = 0; k < 3; ++k) {
    ModelConfig c;
    c.source_vocab = task.source_vocab.size();
    c.target_vocab = task.target_vocab.size();
    c.embedding_dim = 8;
    c.hidden_dim = 16;
    c.seed = 50 + k;
    TrainHyper h;
    h.optimizer = OptimizerType::kAdagrad;
    h.learning_rate = 0.1;
    h.batch_size = 8;
    auto ck = init_model(c);
    for (int e = 0; e < 15; ++e) ck = train_epoch(std::move(ck), task.encoded[k], h);
    models.push_back(std::move(ck));
  }
  bool grid_ok = true;
  std::string grid_detail;
  for (std::size_t n : {2u, 3u}) {
    std::vector<const ModelCheckpoint*> members;
    for (std::size_t k = 0; k < n; ++k) members.push_back(&models[k]);
    const double step = n == 2 ? 0.1 : 1.0 / 6.0;
    const auto lattice = weight_lattice(n, step);
    const std::vector<double> uniform(n, 1.0 / static_cast<double>(n));
    bool has_uniform = false;
    for (const auto& w : lattice) {
      bool eq = true;
      for (std::size_t k = 0; k < n; ++k) eq = eq && std::fabs(w[k] - uniform[k]) < 1e-12;
      has_uniform = has_uniform || eq;
    }
    const auto grid = grid_search_weights(members, dev_set, task.target_vocab, step, 2);
    const double balanced = decode_bleu(dev_set, task.target_vocab, [&](const std::vector<std::int32_t>& src) {
                              return decode_ensemble(balanced_ensemble(members), src, 2, default_max_len(src.size()));
                            }).bleu;
    grid_ok = grid_ok && has_uniform && grid.bleu >= balanced;
    grid_detail += fmt("%g members: tuned %.4f vs uniform %.4f; ", n, grid.bleu, balanced);
  }
  grid_detail.resize(grid_detail.size() - 2);
  o.require(grid_ok, "grid below uniform or uniform missing from lattice");
  o.detail = fmt("%g steps max diff %.2g; ", steps, worst) + grid_detail + (o.detail.empty() ? "" : " [" + o.detail + "]");
  return o;
}

Outcome findings() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto config = default_finding_suite_config();
  ModelConfig bound = config.model;
  bound.source_vocab = config.task.shared_vocab_size + 4;
  bound.target_vocab = config.task.shared_vocab_size + config.task.domain_count * config.task.per_domain_lexicon_size + 4;
  const std::size_t params = parameter_count(bound);
  std::vector<std::uint64_t> seeds;
  for (std::size_t s = 1; s <= kFindingSeeds; ++s) seeds.push_back(s);
  const auto report = run_finding_suite(config, seeds, [](const std::string& l) { std::cerr << l << "\n"; });
  write_findings_summary(std::cout, report);
  const double secs = testing::seconds_since(t0);
  std::string per;
  for (const auto& f : report.findings) {
    per += "(" + f.id + ") " + std::to_string(f.passes()) + "/" + std::to_string(f.per_seed.size()) + " ";
    if (f.id == "a" || f.id == "b" || f.id == "c" || f.id == "d") {
      o.require(f.passes() >= kFindingRequired, "finding " + f.id + " below " + std::to_string(kFindingRequired));
    }
  }
  if (!per.empty()) per.pop_back();
  o.require(params <= kMaxParameters, fmt("%g parameters", params));
  o.require(secs < kFindingBudgetSeconds, fmt("took %.0f s", secs));
  o.detail = per + fmt("; <= %g parameters, %.0f s", params, secs) + (o.detail.empty() ? "" : " [" + o.detail + "]");
  return o;
}

// Joint permutation of random hypotheses and references.
bool bleu_permutation_case(SplitMix64& rng) {
  const std::size_t n = 1 + rng.below(15);
  auto sentence = [&] {
    Sentence s(1 + rng.below(10));
    for (auto& w : s) w = "w" + std::to_string(rng.below(6));
    return s;
  };
  std::vector<Sentence> h(n), r(n);
  for (std::size_t i = 0; i < n; ++i) {
    h[i] = sentence();
    r[i] = sentence();
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::vector<Sentence> ph, pr;
  for (auto i : perm) {
    ph.push_back(h[i]);
    pr.push_back(r[i]);
  }
  const auto a = bleu(h, r), b = bleu(ph, pr);
  return a.bleu == b.bleu && a.matches == b.matches && a.totals == b.totals;
}

Outcome invariants() {
  Outcome o;
  SplitMix64 rng(9001);
  auto word = [&](std::size_t alphabet, std::size_t max_len) {
    std::string w(1 + rng.below(max_len), 'a');
    for (auto& ch : w) ch = static_cast<char>('a' + rng.below(alphabet));
    return w;
  };

  std::size_t bpe_fail = 0;
  for (std::size_t i = 0; i < kPropertyCases; ++i) {
    std::vector<Sentence> corpus(1 + rng.below(6));
    for (auto& s : corpus) {
      s.resize(1 + rng.below(6));
      for (auto& w : s) w = word(4, 7);
    }
    const auto model = learn_bpe(corpus, rng.below(30));
    Sentence probe(1 + rng.below(6));
    for (auto& w : probe) w = word(6, 9);
    const auto& s = rng.below(2) ? corpus[rng.below(corpus.size())] : probe;
    if (undo_bpe(model.apply(s)) != s) ++bpe_fail;
  }

  std::size_t lm_fail = 0;
  for (std::size_t i = 0; i < kPropertyCases; ++i) {
    std::vector<Sentence> corpus(1 + rng.below(5));
    for (auto& s : corpus) {
      s.resize(rng.below(6));
      for (auto& w : s) w = word(3, 2);
    }
    LmConfig cfg;
    cfg.order = 1 + rng.below(4);
    const auto lm = train_lm(corpus, cfg);
    std::vector<std::string> ctx(rng.below(4));
    for (auto& w : ctx) w = word(4, 2);
    double sum = 0;
    for (const auto& w : lm.outcome_space()) sum += lm.prob(ctx, w);
    if (std::fabs(sum - 1.0) > kNormTolerance) ++lm_fail;
  }

  std::size_t nest_fail = 0;
  for (std::size_t i = 0; i < kPropertyCases; ++i) {
    auto corpus = [&](const std::string& name, std::size_t n, std::size_t alphabet) {
      ParallelCorpus c{DomainId(name), {}};
      for (std::size_t k = 0; k < n; ++k) {
        SentencePair p;
        p.source.resize(1 + rng.below(5));
        p.target.resize(1 + rng.below(5));
        for (auto& w : p.source) w = word(alphabet, 1);
        for (auto& w : p.target) w = word(alphabet, 1);
        c.pairs.push_back(std::move(p));
      }
      return c;
    };
    const auto lms = train_selection_lms(corpus("in", 3 + rng.below(5), 3), corpus("out", 3 + rng.below(5), 6));
    const auto cand = corpus("cand", 1 + rng.below(20), 6);
    const auto ranking = rank_corpus(cand, lms, rng.below(2) == 0);
    const double f1 = 0.05 + 0.9 * rng.uniform01();
    const double f2 = f1 + (1.0 - f1) * rng.uniform01();
    auto small = select_fraction(cand, ranking, f1).pairs;
    auto large = select_fraction(cand, ranking, f2).pairs;
    std::sort(small.begin(), small.end());
    std::sort(large.begin(), large.end());
    if (!std::includes(large.begin(), large.end(), small.begin(), small.end())) ++nest_fail;
  }

  std::size_t norm_fail = 0;
  for (std::size_t i = 0; i < kPropertyCases; ++i) {
    const auto c = testing::random_tiny_config(rng);
    auto params = init_model(c).params;
    testing::randomize(params, rng, 1.0);
    const auto batch = testing::random_batch(c, rng, 1, 5);
    const auto fw = forward_loss(c, params, batch);
    const auto& a = fw.cache.attention(0);
    const auto& p = fw.cache.output_probs(0);
    bool ok = true;
    for (Eigen::Index t = 0; t < a.cols(); ++t) {
      ok = ok && std::fabs(a.col(t).sum() - 1.0) < kNormTolerance && std::fabs(p.col(t).sum() - 1.0) < kNormTolerance;
      ok = ok && a.col(t).minCoeff() >= 0.0 && p.col(t).minCoeff() >= 0.0;
    }
    if (!ok) ++norm_fail;
  }

  std::size_t perm_fail = 0;
  for (std::size_t i = 0; i < kPropertyCases; ++i) perm_fail += bleu_permutation_case(rng) ? 0 : 1;

  o.require(bpe_fail == 0, fmt("BPE roundtrip failed %g times", bpe_fail));
  o.require(lm_fail == 0, fmt("LM normalization failed %g times", lm_fail));
  o.require(nest_fail == 0, fmt("selection nesting failed %g times", nest_fail));
  o.require(norm_fail == 0, fmt("attention/softmax normalization failed %g times", norm_fail));
  o.require(perm_fail == 0, fmt("BLEU permutation failed %g times", perm_fail));
  o.detail = fmt("5 properties x %g cases", kPropertyCases) + (o.detail.empty() ? "" : " [" + o.detail + "]");
  return o;
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"gradient correctness", gradients},
      {"oracle equivalences", oracles},
      {"determinism and continuity", continuity},
      {"ensemble identities", ensembles},
      {"finding reproduction", findings},
      {"invariant suites", invariants},
  };
  std::size_t only = 0;
  if (argc > 1) {
    only = static_cast<std::size_t>(std::atoi(argv[1]));
    if (only < 1 || only > criteria.size()) {
      std::cerr << "usage: acceptance [1-" << criteria.size() << "]\n";
      return 2;
    }
  }
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && only != i + 1) continue;
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << i + 1 << " " << criteria[i].name << ": " << o.detail << "\n"
              << std::flush;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
