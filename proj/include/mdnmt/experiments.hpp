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
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "mdnmt/corpus.hpp"
#include "mdnmt/nmt.hpp"
#include "mdnmt/schedule.hpp"

namespace mdnmt {

// Desk-scale reproduction of the qualitative multi-domain findings.
//
// Domains of the synthetic task: dom0 is the in-domain, the next ones are
// out-of-domain ordered from near (largest in-domain-style share) to far,
// and the last one is held out as an unseen test domain.
struct FindingSuiteConfig {
  SyntheticTaskSpec task;     // pair_counts are train sizes; seed is replaced per run
  std::size_t dev_size = 100;  // per domain, drawn on top of the train size
  std::size_t test_size = 100;
  ModelConfig model;          // vocabulary sizes and seed are filled per run
  TrainHyper hyper;
  std::size_t epochs = 10;          // individual, concatenated and stacked stages
  std::size_t finetune_epochs = 3;  // final in-domain stage
  double selection_fraction = 0.1;  // per out-of-domain corpus
  // Fresh optimizer accumulators whenever training moves to a new stage.
  bool reset_optimizer_between_stages = true;
  // Learning rate of a continued in-domain stage, as a multiple of hyper's.
  double finetune_lr_scale = 0.2;
  SelectBy select_by = SelectBy::kPerplexity;
  double grid_step = 1.0 / 6.0;
  std::size_t beam = 4;

  void validate() const;
};

FindingSuiteConfig default_finding_suite_config();

// Metrics of one trained system (best dev checkpoint under select_by).
struct StrategyResult {
  std::string strategy;
  std::uint64_t seed = 0;
  double in_dev_bleu = 0;
  double in_dev_ppl = 0;
  double in_test_bleu = 0;
  double unseen_test_bleu = 0;
  double unseen_test_ppl = 0;
};

struct Finding {
  std::string id;
  std::string description;
  std::vector<bool> per_seed;
  std::size_t required = 0;  // seeds that must satisfy the predicate

  std::size_t passes() const;
  bool holds() const { return passes() >= required; }
};

struct FindingReport {
  std::vector<std::uint64_t> seeds;
  std::vector<StrategyResult> rows;  // one per strategy per seed
  std::vector<Finding> findings;

  const StrategyResult& row(const std::string& strategy, std::uint64_t seed) const;
};

// Strategy names used in reports.
std::vector<std::string> finding_strategies(const FindingSuiteConfig& config);

// Runs every strategy for every seed. `progress` receives one line per
// finished system.
FindingReport run_finding_suite(const FindingSuiteConfig& config, const std::vector<std::uint64_t>& seeds,
                                const std::function<void(const std::string&)>& progress = {});

// "STRATEGY<TAB>SEED<TAB>IN_DEV_BLEU<TAB>IN_DEV_PPL<TAB>IN_TEST_BLEU<TAB>UNSEEN_BLEU<TAB>UNSEEN_PPL"
void write_findings_tsv(std::ostream& out, const FindingReport& report);
// One line per finding with its per-seed outcomes and PASS/FAIL.
void write_findings_summary(std::ostream& out, const FindingReport& report);

}  // namespace mdnmt
