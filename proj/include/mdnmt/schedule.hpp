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
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mdnmt/corpus.hpp"
#include "mdnmt/eval.hpp"
#include "mdnmt/nmt.hpp"

namespace mdnmt {

struct StageOverrides {
  std::optional<double> learning_rate;  // inherited when unset
  bool reset_optimizer = false;         // accumulators carry over by default
  friend bool operator==(const StageOverrides&, const StageOverrides&) = default;
};

// One training stage: the concatenation of `domains`, reshuffled every
// epoch.
struct Stage {
  std::vector<DomainId> domains;
  std::size_t epochs = 1;
  StageOverrides overrides;
  friend bool operator==(const Stage&, const Stage&) = default;
};

struct TrainingPlan {
  std::vector<Stage> stages;

  // Throws ConfigError for an empty plan, a stage without domains or with 0
  // epochs.
  void validate() const;
  // Also throws UnknownDomainError for names outside `registered`.
  void validate(const std::vector<DomainId>& registered) const;
  std::vector<DomainId> domains() const;  // first-use order, no repeats
  friend bool operator==(const TrainingPlan&, const TrainingPlan&) = default;
};

// Epochs of the final in-domain stage ("a few epochs").
inline constexpr std::size_t kDefaultFinetuneEpochs = 3;

// Single stage over all listed domains: an individual system for one
// domain, OD for the out-of-domain set, ALL when the in-domain is included.
TrainingPlan concat_plan(const std::vector<DomainId>& domains, std::size_t epochs);
// Appends a stage on `domain` alone (OD->IN, ALL->IN).
TrainingPlan finetune_plan(TrainingPlan base, const DomainId& domain,
                           std::size_t epochs = kDefaultFinetuneEpochs);
// One stage per domain in order, in-domain last by convention. Needs >= 2
// distinct domains.
TrainingPlan stacking_plan(const std::vector<DomainId>& order, std::size_t epochs_per_stage);

// Encoded training corpora by domain name.
using TrainingData = std::map<std::string, EncodedCorpus>;

struct EpochRecord {
  std::size_t stage = 0;  // 1-based
  std::size_t epoch = 0;  // 1-based within the stage
  double train_loss = 0;
  double dev_ppl = 0;     // pooled over dev sets; NaN when not evaluated
  double dev_bleu = 0;    // mean corpus BLEU over dev sets; NaN when not evaluated
};

struct RunReport {
  TrainingPlan plan;
  std::vector<EpochRecord> records;
  std::optional<std::size_t> best_record;  // index into records
  std::string best_checkpoint_path;        // filled by callers that save it
};

// Ordering used to pick the best checkpoint of a run.
enum class SelectBy { kBleu, kPerplexity };

struct RunOptions {
  TrainHyper hyper;
  SelectBy select_by = SelectBy::kBleu;
  std::size_t eval_every = 1;
  std::size_t dev_beam = 4;
  // Receives (stage index, pair) for every training example fed.
  std::function<void(std::size_t, const EncodedPair&)> feed_observer;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct RunResult {
  RunReport report;
  ModelCheckpoint best;   // by options.select_by; the other metric, then earlier, breaks ties
  ModelCheckpoint final;  // state after the last epoch
};

// Runs every stage on one evolving checkpoint, evaluating the dev sets
// after each eval_every-th epoch and after the last one. Without dev sets
// no epoch is evaluated and `best` equals `final`. A DivergenceError is
// rethrown with stage and epoch context.
RunResult run_plan(const TrainingPlan& plan, ModelCheckpoint initial, const TrainingData& data,
                   const std::vector<EvalSet>& dev_sets, const Vocabulary& target_vocab,
                   const RunOptions& options = {});

struct DevMetrics {
  double ppl = 0;
  double bleu = 0;
};
DevMetrics evaluate_dev(const ModelCheckpoint& checkpoint, const std::vector<EvalSet>& dev_sets,
                        const Vocabulary& target_vocab, std::size_t beam);

// "stage,epoch,train_loss,dev_ppl,dev_bleu" with BLEU x100; unevaluated
// cells are empty.
void write_report_csv(std::ostream& out, const RunReport& report);

}  // namespace mdnmt
