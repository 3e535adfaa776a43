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

#include "mdnmt/schedule.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include "mdnmt/error.hpp"

namespace mdnmt {

void TrainingPlan::validate() const {
  if (stages.empty()) throw ConfigError("a training plan needs at least one stage");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].domains.empty()) throw ConfigError("stage " + std::to_string(i + 1) + " lists no domains");
    if (stages[i].epochs < 1) throw ConfigError("stage " + std::to_string(i + 1) + " needs epochs >= 1");
    if (stages[i].overrides.learning_rate && !(*stages[i].overrides.learning_rate > 0)) {
      throw ConfigError("stage " + std::to_string(i + 1) + " learning rate must be > 0");
    }
  }
}

void TrainingPlan::validate(const std::vector<DomainId>& registered) const {
  validate();
  const std::set<DomainId> known(registered.begin(), registered.end());
  for (const auto& stage : stages) {
    for (const auto& d : stage.domains) {
      if (!known.count(d)) throw UnknownDomainError(d.name());
    }
  }
}

std::vector<DomainId> TrainingPlan::domains() const {
  std::vector<DomainId> out;
  std::set<DomainId> seen;
  for (const auto& stage : stages) {
    for (const auto& d : stage.domains) {
      if (seen.insert(d).second) out.push_back(d);
    }
  }
  return out;
}

TrainingPlan concat_plan(const std::vector<DomainId>& domains, std::size_t epochs) {
  TrainingPlan plan{{Stage{domains, epochs, {}}}};
  plan.validate();
  return plan;
}

TrainingPlan finetune_plan(TrainingPlan base, const DomainId& domain, std::size_t epochs) {
  base.stages.push_back(Stage{{domain}, epochs, {}});
  base.validate();
  return base;
}

TrainingPlan stacking_plan(const std::vector<DomainId>& order, std::size_t epochs_per_stage) {
  if (order.size() < 2) throw ConfigError("stacking needs at least two domains");
  std::set<DomainId> seen;
  TrainingPlan plan;
  for (const auto& d : order) {
    if (!seen.insert(d).second) throw ConfigError("domain " + d.name() + " appears twice in the stacking order");
    plan.stages.push_back(Stage{{d}, epochs_per_stage, {}});
  }
  plan.validate();
  return plan;
}

DevMetrics evaluate_dev(const ModelCheckpoint& checkpoint, const std::vector<EvalSet>& dev_sets,
                        const Vocabulary& target_vocab, std::size_t beam) {
  DevMetrics m;
  double nll = 0;
  std::size_t tokens = 0;
  double bleu_sum = 0;
  for (const auto& set : dev_sets) {
    const CorpusLoss loss = corpus_loss(checkpoint, set.pairs);
    nll += loss.total_nll;
    tokens += loss.tokens;
    bleu_sum += decode_bleu(set, target_vocab, [&](const std::vector<std::int32_t>& src) {
                  return decode_beam(checkpoint, src, beam, default_max_len(src.size()));
                }).bleu;
  }
  m.ppl = tokens ? std::exp(nll / static_cast<double>(tokens)) : std::numeric_limits<double>::quiet_NaN();
  if (!std::isfinite(m.ppl) && tokens) throw DivergenceError("non-finite dev perplexity", 0);
  m.bleu = dev_sets.empty() ? std::numeric_limits<double>::quiet_NaN()
                            : bleu_sum / static_cast<double>(dev_sets.size());
  return m;
}

namespace {

std::string stage_label(const Stage& stage) {
  std::string out;
  for (const auto& d : stage.domains) out += (out.empty() ? "" : "+") + d.name();
  return out;
}

bool better_record(const EpochRecord& a, const EpochRecord& b, SelectBy by) {
  if (by == SelectBy::kPerplexity) {
    if (a.dev_ppl != b.dev_ppl) return a.dev_ppl < b.dev_ppl;
    return a.dev_bleu > b.dev_bleu;
  }
  if (a.dev_bleu != b.dev_bleu) return a.dev_bleu > b.dev_bleu;
  return a.dev_ppl < b.dev_ppl;
}

}  // namespace

RunResult run_plan(const TrainingPlan& plan, ModelCheckpoint initial, const TrainingData& data,
                   const std::vector<EvalSet>& dev_sets, const Vocabulary& target_vocab,
                   const RunOptions& options) {
  std::vector<DomainId> registered;
  for (const auto& [name, corpus] : data) registered.emplace_back(name);
  plan.validate(registered);
  if (options.eval_every < 1) throw ConfigError("eval_every must be >= 1");

  RunResult result;
  result.report.plan = plan;
  ModelCheckpoint ckpt = std::move(initial);
  std::size_t total_epochs = 0;
  for (const auto& s : plan.stages) total_epochs += s.epochs;
  std::size_t global_epoch = 0;
  bool have_best = false;

  for (std::size_t si = 0; si < plan.stages.size(); ++si) {
    const Stage& stage = plan.stages[si];
    EncodedCorpus corpus;
    corpus.domain = stage_label(stage);
    for (const auto& d : stage.domains) {
      const auto& part = data.at(d.name()).pairs;
      corpus.pairs.insert(corpus.pairs.end(), part.begin(), part.end());
    }
    TrainHyper hyper = options.hyper;
    if (stage.overrides.learning_rate) hyper.learning_rate = *stage.overrides.learning_rate;
    if (stage.overrides.reset_optimizer) ckpt.optimizer = OptimizerState{hyper.optimizer, 0, {}};
    FeedObserver observer;
    if (options.feed_observer) {
      observer = [&, si](const EncodedPair& p) { options.feed_observer(si, p); };
    }

    for (std::size_t e = 1; e <= stage.epochs; ++e) {
      ++global_epoch;
      EpochStats stats;
      try {
        ckpt = train_epoch(std::move(ckpt), corpus, hyper, &stats, observer);
      } catch (const DivergenceError& err) {
        throw DivergenceError("stage " + std::to_string(si + 1) + " epoch " + std::to_string(e) + ": " + err.what(),
                              err.step());
      }
      EpochRecord rec;
      rec.stage = si + 1;
      rec.epoch = e;
      rec.train_loss = stats.mean_loss;
      rec.dev_ppl = rec.dev_bleu = std::numeric_limits<double>::quiet_NaN();
      const bool evaluate = !dev_sets.empty() && (global_epoch % options.eval_every == 0 || global_epoch == total_epochs);
      if (evaluate) {
        const DevMetrics m = evaluate_dev(ckpt, dev_sets, target_vocab, options.dev_beam);
        rec.dev_ppl = m.ppl;
        rec.dev_bleu = m.bleu;
        if (!have_best || better_record(rec, result.report.records[*result.report.best_record], options.select_by)) {
          result.report.best_record = result.report.records.size();
          result.best = ckpt;
          have_best = true;
        }
      }
      result.report.records.push_back(rec);
      if (options.on_epoch) options.on_epoch(rec);
    }
  }
  result.final = std::move(ckpt);
  if (!have_best) result.best = result.final;
  return result;
}

void write_report_csv(std::ostream& out, const RunReport& report) {
  out << "stage,epoch,train_loss,dev_ppl,dev_bleu\n";
  char buf[160];
  for (const auto& r : report.records) {
    std::string ppl, bleu;
    if (std::isfinite(r.dev_ppl)) {
      std::snprintf(buf, sizeof buf, "%.6f", r.dev_ppl);
      ppl = buf;
    }
    if (std::isfinite(r.dev_bleu)) {
      std::snprintf(buf, sizeof buf, "%.4f", r.dev_bleu * 100.0);
      bleu = buf;
    }
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f,", r.stage, r.epoch, r.train_loss);
    out << buf << ppl << "," << bleu << "\n";
  }
}

}  // namespace mdnmt
