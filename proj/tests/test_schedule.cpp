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
#include <map>
#include <sstream>

#include "doctest.h"
#include "mdnmt/error.hpp"
#include "mdnmt/schedule.hpp"
#include "test_util.hpp"

using namespace mdnmt;

namespace {

DomainId D(const std::string& s) { return DomainId(s); }

struct Fixture {
  testing::TinyTask task;
  TrainingData data;
  std::vector<EvalSet> dev;
  ModelConfig config;
};

// dom0 is the in-domain corpus; its first 20 pairs form the dev set.
Fixture make_fixture(std::uint64_t seed, std::vector<std::size_t> counts) {
  Fixture f;
  f.task = testing::make_tiny_task(seed, std::move(counts));
  for (auto& e : f.task.encoded) f.data[e.domain] = e;
  auto& in = f.data.at("dom0").pairs;
  ParallelCorpus dev_words{D("dom0"), {}};
  dev_words.pairs.assign(f.task.domains[0].pairs.begin(), f.task.domains[0].pairs.begin() + 20);
  in.erase(in.begin(), in.begin() + 20);
  f.dev.push_back(make_eval_set("dom0", dev_words, f.task.source_vocab, f.task.target_vocab));
  f.config.source_vocab = f.task.source_vocab.size();
  f.config.target_vocab = f.task.target_vocab.size();
  f.config.embedding_dim = 8;
  f.config.hidden_dim = 16;
  f.config.seed = seed;
  return f;
}

RunOptions adam_options() {
  RunOptions o;
  o.hyper.optimizer = OptimizerType::kAdam;
  o.hyper.learning_rate = 0.01;
  o.hyper.batch_size = 8;
  o.dev_beam = 2;
  return o;
}

std::vector<EncodedPair> sorted(std::vector<EncodedPair> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_CASE("plan builders produce the documented shapes") {
  const auto single = concat_plan({D("dom1")}, 4);
  REQUIRE(single.stages.size() == 1);
  CHECK(single.stages[0].domains == std::vector<DomainId>{D("dom1")});
  CHECK(single.stages[0].epochs == 4);

  const auto od_in = finetune_plan(concat_plan({D("UN"), D("OPUS")}, 10), D("TED"));
  REQUIRE(od_in.stages.size() == 2);
  CHECK(od_in.stages[0].domains == std::vector<DomainId>{D("UN"), D("OPUS")});
  CHECK(od_in.stages[1].domains == std::vector<DomainId>{D("TED")});
  CHECK(od_in.stages[1].epochs == kDefaultFinetuneEpochs);
  CHECK(od_in.domains() == std::vector<DomainId>{D("UN"), D("OPUS"), D("TED")});

  const auto stack = stacking_plan({D("UN"), D("OPUS"), D("TED")}, 2);
  REQUIRE(stack.stages.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(stack.stages[i].epochs == 2);
  CHECK(stack.stages[2].domains == std::vector<DomainId>{D("TED")});
  CHECK_NOTHROW(stacking_plan({D("OPUS"), D("UN")}, 1));
}

TEST_CASE("plan builders reject malformed plans") {
  CHECK_THROWS_AS(concat_plan({}, 1), ConfigError);
  CHECK_THROWS_AS(concat_plan({D("a")}, 0), ConfigError);
  CHECK_THROWS_AS(finetune_plan(concat_plan({D("a")}, 1), D("b"), 0), ConfigError);
  CHECK_THROWS_AS(stacking_plan({D("a")}, 1), ConfigError);
  CHECK_THROWS_AS(stacking_plan({D("a"), D("b"), D("a")}, 1), ConfigError);
  CHECK_THROWS_AS(TrainingPlan{}.validate(), ConfigError);
  CHECK_THROWS_AS(concat_plan({D("a")}, 1).validate({D("b")}), UnknownDomainError);
  CHECK_NOTHROW(concat_plan({D("a")}, 1).validate({D("a"), D("b")}));
  CHECK_THROWS_AS(DomainId(""), ConfigError);
}

TEST_CASE("run_plan rejects unregistered domains") {
  auto f = make_fixture(1, {40, 40});
  CHECK_THROWS_AS(run_plan(concat_plan({D("dom9")}, 1), init_model(f.config), f.data, f.dev, f.task.target_vocab),
                  UnknownDomainError);
}

TEST_CASE("a one-stage one-epoch plan yields one record") {
  auto f = make_fixture(2, {40, 40});
  const auto r = run_plan(concat_plan({D("dom1")}, 1), init_model(f.config), f.data, f.dev, f.task.target_vocab,
                          adam_options());
  REQUIRE(r.report.records.size() == 1);
  CHECK(r.report.records[0].stage == 1);
  CHECK(r.report.records[0].epoch == 1);
  CHECK(r.report.best_record == std::optional<std::size_t>(0));
  CHECK(r.best == r.final);
}

TEST_CASE("concatenated stage data equals the union of its corpora") {
  auto f = make_fixture(3, {40, 50, 60});
  auto o = adam_options();
  std::map<std::size_t, std::vector<EncodedPair>> fed;
  o.feed_observer = [&](std::size_t stage, const EncodedPair& p) { fed[stage].push_back(p); };
  run_plan(concat_plan({D("dom1"), D("dom2"), D("dom0")}, 1), init_model(f.config), f.data, {}, f.task.target_vocab, o);
  std::vector<EncodedPair> want;
  for (const char* d : {"dom0", "dom1", "dom2"}) {
    want.insert(want.end(), f.data.at(d).pairs.begin(), f.data.at(d).pairs.end());
  }
  REQUIRE(fed.size() == 1);
  CHECK(sorted(fed[0]) == sorted(want));
}

TEST_CASE("stacking exposes the same per-domain multisets as separate concat stages") {
  auto f = make_fixture(4, {30, 40, 50});
  const std::size_t epochs = 2;
  auto audit = [&](const TrainingPlan& plan) {
    auto o = adam_options();
    o.hyper.optimizer = OptimizerType::kSgd;
    std::map<std::size_t, std::vector<EncodedPair>> fed;
    o.feed_observer = [&](std::size_t stage, const EncodedPair& p) { fed[stage].push_back(p); };
    run_plan(plan, init_model(f.config), f.data, {}, f.task.target_vocab, o);
    return fed;
  };
  const std::vector<DomainId> order{D("dom2"), D("dom1"), D("dom0")};
  const auto stacked = audit(stacking_plan(order, epochs));
  TrainingPlan separate;
  for (const auto& d : order) separate.stages.push_back(concat_plan({d}, epochs).stages[0]);
  const auto concatenated = audit(separate);
  REQUIRE(stacked.size() == 3);
  for (std::size_t s = 0; s < 3; ++s) {
    std::vector<EncodedPair> want;
    for (std::size_t e = 0; e < epochs; ++e) {
      const auto& part = f.data.at(order[s].name()).pairs;
      want.insert(want.end(), part.begin(), part.end());
    }
    CHECK(sorted(stacked.at(s)) == sorted(want));
    CHECK(sorted(concatenated.at(s)) == sorted(want));
  }
}

TEST_CASE("fine-tuning from a saved checkpoint equals the uninterrupted plan") {
  auto f = make_fixture(5, {40, 60});
  auto o = adam_options();
  const auto base = concat_plan({D("dom1")}, 2);
  const auto whole = run_plan(finetune_plan(base, D("dom0"), 2), init_model(f.config), f.data, {}, f.task.target_vocab, o);

  const auto first = run_plan(base, init_model(f.config), f.data, {}, f.task.target_vocab, o);
  const auto path = testing::scratch_dir("schedule_resume") / "od.ckpt";
  save_checkpoint(first.final, path);
  const auto second = run_plan(concat_plan({D("dom0")}, 2), load_checkpoint(path), f.data, {}, f.task.target_vocab, o);
  CHECK(second.final == whole.final);
  CHECK(serialize_checkpoint(second.final) == serialize_checkpoint(whole.final));
  REQUIRE(whole.final.provenance.size() == 2);
  CHECK(whole.final.provenance[0] == ProvenanceRecord{"dom1", 2, whole.final.provenance[0].steps});
  CHECK(whole.final.provenance[1].domain == "dom0");
}

TEST_CASE("record count, best record and dev metrics are consistent") {
  auto f = make_fixture(6, {60, 80});
  for (auto by : {SelectBy::kBleu, SelectBy::kPerplexity}) {
    auto o = adam_options();
    o.select_by = by;
    const auto plan = finetune_plan(concat_plan({D("dom1")}, 3), D("dom0"), 2);
    const auto r = run_plan(plan, init_model(f.config), f.data, f.dev, f.task.target_vocab, o);
    REQUIRE(r.report.records.size() == 5);
    REQUIRE(r.report.best_record.has_value());
    const auto& best = r.report.records[*r.report.best_record];
    for (const auto& rec : r.report.records) {
      if (by == SelectBy::kBleu) {
        CHECK(best.dev_bleu >= rec.dev_bleu);
      } else {
        CHECK(best.dev_ppl <= rec.dev_ppl);
      }
    }
    const auto m = evaluate_dev(r.best, f.dev, f.task.target_vocab, o.dev_beam);
    CHECK(m.bleu == best.dev_bleu);
    CHECK(m.ppl == best.dev_ppl);
    CHECK(r.report.records[3].stage == 2);
    CHECK(r.report.records[3].epoch == 1);
    CHECK(r.report.plan == plan);
  }
}

TEST_CASE("eval_every skips epochs but always scores the last one") {
  auto f = make_fixture(7, {40, 40});
  auto o = adam_options();
  o.eval_every = 2;
  std::vector<EpochRecord> streamed;
  o.on_epoch = [&](const EpochRecord& r) { streamed.push_back(r); };
  const auto r = run_plan(concat_plan({D("dom1")}, 5), init_model(f.config), f.data, f.dev, f.task.target_vocab, o);
  REQUIRE(r.report.records.size() == 5);
  CHECK(streamed.size() == 5);
  const std::vector<bool> evaluated{false, true, false, true, true};
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::isfinite(r.report.records[i].dev_ppl) == evaluated[i]);

  std::ostringstream csv;
  write_report_csv(csv, r.report);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line == "stage,epoch,train_loss,dev_ppl,dev_bleu");
  std::getline(lines, line);
  CHECK(line.substr(0, 4) == "1,1,");
  CHECK(line.substr(line.size() - 2) == ",,");
  std::size_t rows = 1;
  while (std::getline(lines, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 4);
  }
  CHECK(rows == 5);

  o.eval_every = 0;
  CHECK_THROWS_AS(run_plan(concat_plan({D("dom1")}, 1), init_model(f.config), f.data, f.dev, f.task.target_vocab, o),
                  ConfigError);
}

TEST_CASE("without dev sets best equals final") {
  auto f = make_fixture(8, {40, 40});
  const auto r = run_plan(concat_plan({D("dom1")}, 2), init_model(f.config), f.data, {}, f.task.target_vocab,
                          adam_options());
  CHECK_FALSE(r.report.best_record.has_value());
  CHECK(r.best == r.final);
}

TEST_CASE("runs are deterministic") {
  auto f = make_fixture(9, {40, 50});
  auto go = [&] {
    return run_plan(stacking_plan({D("dom1"), D("dom0")}, 2), init_model(f.config), f.data, f.dev,
                    f.task.target_vocab, adam_options());
  };
  const auto a = go(), b = go();
  std::ostringstream ca, cb;
  write_report_csv(ca, a.report);
  write_report_csv(cb, b.report);
  CHECK(ca.str() == cb.str());
  CHECK(a.best == b.best);
  CHECK(a.final == b.final);
}

TEST_CASE("per-stage overrides change the learning rate and reset accumulators") {
  auto f = make_fixture(10, {40, 40});
  auto plan = finetune_plan(concat_plan({D("dom1")}, 1), D("dom0"), 1);
  const auto plain = run_plan(plan, init_model(f.config), f.data, {}, f.task.target_vocab, adam_options());
  plan.stages[1].overrides.reset_optimizer = true;
  const auto reset = run_plan(plan, init_model(f.config), f.data, {}, f.task.target_vocab, adam_options());
  CHECK(reset.final.optimizer.steps < plain.final.optimizer.steps);
  CHECK_FALSE(reset.final.params == plain.final.params);
  plan.stages[1].overrides.learning_rate = -1.0;
  CHECK_THROWS_AS(plan.validate(), ConfigError);
}

TEST_CASE("fine-tuning on in-domain data lowers in-domain dev perplexity") {
  auto f = make_fixture(11, {80, 400});
  auto o = adam_options();
  o.select_by = SelectBy::kPerplexity;
  const auto r = run_plan(finetune_plan(concat_plan({D("dom1")}, 4), D("dom0"), 3), init_model(f.config), f.data,
                          f.dev, f.task.target_vocab, o);
  double od_best = INFINITY;
  for (const auto& rec : r.report.records) {
    if (rec.stage == 1) od_best = std::min(od_best, rec.dev_ppl);
  }
  CHECK(r.report.records.back().dev_ppl < od_best);
}

TEST_CASE("stacking order changes the result") {
  auto f = make_fixture(12, {40, 80, 80});
  auto o = adam_options();
  const auto ab = run_plan(stacking_plan({D("dom1"), D("dom2"), D("dom0")}, 1), init_model(f.config), f.data, f.dev,
                           f.task.target_vocab, o);
  const auto ba = run_plan(stacking_plan({D("dom2"), D("dom1"), D("dom0")}, 1), init_model(f.config), f.data, f.dev,
                           f.task.target_vocab, o);
  CHECK(ab.report.records.back().dev_ppl != ba.report.records.back().dev_ppl);
}

TEST_CASE("divergence carries stage and epoch context") {
  auto f = make_fixture(13, {40, 40});
  auto ck = init_model(f.config);
  ck.params.tensors.back()(0, 0) = std::nan("");
  try {
    run_plan(concat_plan({D("dom1")}, 2), ck, f.data, {}, f.task.target_vocab, adam_options());
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("stage 1 epoch 1") != std::string::npos);
    CHECK(e.step() == 1);
  }
}
