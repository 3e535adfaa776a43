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

#include "mdnmt/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>

#include "mdnmt/ensemble.hpp"
#include "mdnmt/error.hpp"
#include "mdnmt/eval.hpp"
#include "mdnmt/rng.hpp"
#include "mdnmt/schedule.hpp"
#include "mdnmt/selection.hpp"

namespace mdnmt {

void FindingSuiteConfig::validate() const {
  if (task.domain_count < 4 || task.held_out_count != 1) {
    throw ConfigError("finding suite needs an in-domain, >= 2 out-of-domain and exactly 1 held-out domain");
  }
  task.validate();
  if (dev_size < 1 || test_size < 1) throw ConfigError("dev and test sets must be non-empty");
  if (epochs < 1 || finetune_epochs < 1) throw ConfigError("epochs must be >= 1");
  SelectionConfig{selection_fraction, true}.validate();
  weight_lattice(task.domain_count - 1, grid_step);
}

FindingSuiteConfig default_finding_suite_config() {
  FindingSuiteConfig c;
  c.task.shared_vocab_size = 60;
  c.task.per_domain_lexicon_size = 8;
  c.task.domain_count = 4;
  c.task.held_out_count = 1;
  c.task.sentence_length_range = {4, 10};
  c.task.pair_counts = {200, 800, 800, 1};
  c.task.near_share = 0.3;
  c.model.embedding_dim = 16;
  c.model.hidden_dim = 32;
  c.hyper.optimizer = OptimizerType::kAdagrad;
  c.hyper.learning_rate = 0.05;
  c.hyper.batch_size = 8;
  c.hyper.clip_norm = 1.0;
  c.epochs = 10;
  c.finetune_epochs = 3;
  return c;
}

std::size_t Finding::passes() const {
  return static_cast<std::size_t>(std::count(per_seed.begin(), per_seed.end(), true));
}

const StrategyResult& FindingReport::row(const std::string& strategy, std::uint64_t seed) const {
  for (const auto& r : rows) {
    if (r.strategy == strategy && r.seed == seed) return r;
  }
  throw ConfigError("no result for strategy " + strategy);
}

namespace {

std::string name_of(std::size_t d) { return "dom" + std::to_string(d); }

struct Split {
  ParallelCorpus train, dev, test;
};

Split split_domain(const ParallelCorpus& c, std::size_t dev, std::size_t test) {
  Split s;
  s.dev.domain = s.test.domain = s.train.domain = c.domain;
  for (std::size_t i = 0; i < c.pairs.size(); ++i) {
    (i < dev ? s.dev : i < dev + test ? s.test : s.train).pairs.push_back(c.pairs[i]);
  }
  return s;
}

std::vector<Sentence> sources(const ParallelCorpus& c) {
  std::vector<Sentence> out;
  for (const auto& p : c.pairs) out.push_back(p.source);
  return out;
}

std::vector<Sentence> targets(const ParallelCorpus& c) {
  std::vector<Sentence> out;
  for (const auto& p : c.pairs) out.push_back(p.target);
  return out;
}

EncodedCorpus encode(const ParallelCorpus& c, const Vocabulary& sv, const Vocabulary& tv) {
  EncodedCorpus e;
  e.domain = c.domain.name();
  for (const auto& p : c.pairs) e.pairs.push_back({sv.encode(p.source), tv.encode(p.target)});
  return e;
}

// Random subset of `count` pairs, re-emitted in corpus order.
ParallelCorpus random_subset(const ParallelCorpus& c, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(c.pairs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  SplitMix64 rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  idx.resize(std::min(count, idx.size()));
  std::sort(idx.begin(), idx.end());
  ParallelCorpus out{c.domain, {}};
  for (auto i : idx) out.pairs.push_back(c.pairs[i]);
  return out;
}

struct System {
  ModelCheckpoint best;
  ModelCheckpoint final;
  EpochRecord best_record;
};

bool better(const EpochRecord& a, const EpochRecord& b, SelectBy by) {
  if (by == SelectBy::kPerplexity && a.dev_ppl != b.dev_ppl) return a.dev_ppl < b.dev_ppl;
  if (a.dev_bleu != b.dev_bleu) return a.dev_bleu > b.dev_bleu;
  return a.dev_ppl < b.dev_ppl;
}

class SeedRun {
 public:
  SeedRun(const FindingSuiteConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
    SyntheticTaskSpec task = config.task;
    task.seed = seed;
    for (auto& n : task.pair_counts) n += config.dev_size + config.test_size;
    const auto domains = generate_synthetic_domains(task);
    trained_ = task.domain_count - task.held_out_count;
    for (std::size_t d = 0; d < domains.size(); ++d) splits_.push_back(split_domain(domains[d], config.dev_size, config.test_size));

    std::vector<Sentence> src, tgt;
    for (std::size_t d = 0; d < trained_; ++d) {
      for (auto& s : sources(splits_[d].train)) src.push_back(std::move(s));
      for (auto& s : targets(splits_[d].train)) tgt.push_back(std::move(s));
    }
    source_vocab_ = build_vocab(src, 1u << 20);
    target_vocab_ = build_vocab(tgt, 1u << 20);
    for (std::size_t d = 0; d < trained_; ++d) {
      data_[name_of(d)] = encode(splits_[d].train, source_vocab_, target_vocab_);
    }
    in_dev_ = make_eval_set("dom0.dev", splits_[0].dev, source_vocab_, target_vocab_);
    in_test_ = make_eval_set("dom0.test", splits_[0].test, source_vocab_, target_vocab_);
    unseen_test_ = make_eval_set(name_of(trained_) + ".test", splits_[trained_].test, source_vocab_, target_vocab_);

    model_ = config.model;
    model_.source_vocab = source_vocab_.size();
    model_.target_vocab = target_vocab_.size();
    model_.seed = seed;
    options_.hyper = config.hyper;
    options_.hyper.seed = seed;
    options_.dev_beam = config.beam;
    options_.select_by = config.select_by;
  }

  System run(TrainingPlan plan, std::optional<System> start = {}) {
    for (std::size_t i = 0; i < plan.stages.size(); ++i) {
      if (i > 0 || start) {
        plan.stages[i].overrides.reset_optimizer = config_.reset_optimizer_between_stages;
        if (plan.stages[i].domains == std::vector<DomainId>{DomainId(name_of(0))}) {
          plan.stages[i].overrides.learning_rate = config_.hyper.learning_rate * config_.finetune_lr_scale;
        }
      }
    }
    ModelCheckpoint init = start ? start->final : init_model(model_);
    RunResult r = run_plan(plan, std::move(init), data_, {in_dev_}, target_vocab_, options_);
    System s{std::move(r.best), std::move(r.final), r.report.records[*r.report.best_record]};
    if (start && !better(s.best_record, start->best_record, config_.select_by)) {
      s.best = start->best;
      s.best_record = start->best_record;
    }
    return s;
  }

  StrategyResult evaluate(const std::string& strategy, const System& s, const Decoder& decoder) const {
    StrategyResult r;
    r.strategy = strategy;
    r.seed = seed_;
    r.in_dev_bleu = s.best_record.dev_bleu;
    r.in_dev_ppl = s.best_record.dev_ppl;
    r.in_test_bleu = decode_bleu(in_test_, target_vocab_, decoder).bleu;
    r.unseen_test_bleu = decode_bleu(unseen_test_, target_vocab_, decoder).bleu;
    r.unseen_test_ppl = perplexity(s.best, unseen_test_.pairs);
    return r;
  }

  Decoder single(const ModelCheckpoint& ckpt) const {
    return [&ckpt, beam = config_.beam](const std::vector<std::int32_t>& src) {
      return decode_beam(ckpt, src, beam, default_max_len(src.size()));
    };
  }

  std::size_t trained() const { return trained_; }
  const Split& split(std::size_t d) const { return splits_[d]; }
  const EvalSet& in_dev() const { return in_dev_; }
  const Vocabulary& target_vocab() const { return target_vocab_; }
  std::uint64_t seed() const { return seed_; }

  // Registers an extra training corpus (selected or random data).
  void add_domain(const std::string& name, const ParallelCorpus& c) {
    data_[name] = encode(c, source_vocab_, target_vocab_);
    data_[name].domain = name;
  }

 private:
  const FindingSuiteConfig& config_;
  std::uint64_t seed_;
  std::size_t trained_ = 0;
  std::vector<Split> splits_;
  Vocabulary source_vocab_, target_vocab_;
  TrainingData data_;
  EvalSet in_dev_, in_test_, unseen_test_;
  ModelConfig model_;
  RunOptions options_;
};

std::vector<DomainId> ids(std::initializer_list<std::size_t> ds) {
  std::vector<DomainId> out;
  for (auto d : ds) out.emplace_back(name_of(d));
  return out;
}

std::string chain(const std::vector<std::size_t>& order) {
  std::string s;
  for (auto d : order) s += (s.empty() ? "" : "->") + (d == 0 ? std::string("IN") : name_of(d));
  return s;
}

}  // namespace

std::vector<std::string> finding_strategies(const FindingSuiteConfig& config) {
  const std::size_t trained = config.task.domain_count - config.task.held_out_count;
  std::vector<std::size_t> far_to_near, near_to_far;
  for (std::size_t d = trained - 1; d >= 1; --d) far_to_near.push_back(d);
  for (std::size_t d = 1; d < trained; ++d) near_to_far.push_back(d);
  far_to_near.push_back(0);
  near_to_far.push_back(0);
  std::vector<std::string> out = {"IN"};
  for (std::size_t d = 1; d < trained; ++d) out.push_back(name_of(d));
  for (const char* s : {"ALL", "OD", "OD->IN", "ALL->IN"}) out.push_back(s);
  out.push_back(chain(far_to_near));
  out.push_back(chain(near_to_far));
  for (const char* s : {"SEL+IN", "RAND+IN", "ENS_b", "ENS_w"}) out.push_back(s);
  return out;
}

FindingReport run_finding_suite(const FindingSuiteConfig& config, const std::vector<std::uint64_t>& seeds,
                                const std::function<void(const std::string&)>& progress) {
  config.validate();
  if (seeds.empty()) throw ConfigError("finding suite needs at least one seed");
  FindingReport report;
  report.seeds = seeds;

  for (const auto seed : seeds) {
    SeedRun run(config, seed);
    const std::size_t T = run.trained();
    std::map<std::string, System> systems;
    auto record = [&](const std::string& name, System s) {
      report.rows.push_back(run.evaluate(name, s, run.single(s.best)));
      if (progress) {
        const auto& r = report.rows.back();
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "seed %llu %-16s in_dev_bleu %.4f in_dev_ppl %.4f unseen_bleu %.4f unseen_ppl %.4f",
                      static_cast<unsigned long long>(seed), name.c_str(), r.in_dev_bleu, r.in_dev_ppl,
                      r.unseen_test_bleu, r.unseen_test_ppl);
        progress(buf);
      }
      systems.emplace(name, std::move(s));
    };

    std::vector<DomainId> od, all;
    for (std::size_t d = 0; d < T; ++d) {
      record(d == 0 ? "IN" : name_of(d), run.run(concat_plan(ids({d}), config.epochs)));
      all.emplace_back(name_of(d));
      if (d > 0) od.emplace_back(name_of(d));
    }
    record("ALL", run.run(concat_plan(all, config.epochs)));
    record("OD", run.run(concat_plan(od, config.epochs)));
    const TrainingPlan to_in = concat_plan(ids({0}), config.finetune_epochs);
    record("OD->IN", run.run(to_in, systems.at("OD")));
    record("ALL->IN", run.run(to_in, systems.at("ALL")));

    // Stacking continues from the individual system of the first domain.
    for (const bool far_first : {true, false}) {
      std::vector<std::size_t> order;
      for (std::size_t k = 1; k < T; ++k) order.push_back(far_first ? T - k : k);
      order.push_back(0);
      TrainingPlan rest;
      for (std::size_t k = 1; k < order.size(); ++k) {
        const bool last = k + 1 == order.size();
        rest.stages.push_back(Stage{ids({order[k]}), last ? config.finetune_epochs : config.epochs, {}});
      }
      record(chain(order), run.run(rest, systems.at(name_of(order[0]))));
    }

    // Data selection, per out-of-domain corpus, against an equal-size
    // random sample.
    std::vector<DomainId> sel_domains = ids({0}), rand_domains = ids({0});
    for (std::size_t d = 1; d < T; ++d) {
      const ParallelCorpus& out_corpus = run.split(d).train;
      const SelectionLms lms = train_selection_lms(run.split(0).train, out_corpus);
      const ParallelCorpus selected = select_fraction(out_corpus, lms, SelectionConfig{config.selection_fraction, true});
      const ParallelCorpus sampled = random_subset(out_corpus, selected.size(), mix_seed(seed, 0x5a3d + d));
      run.add_domain(name_of(d) + "_selected", selected);
      run.add_domain(name_of(d) + "_random", sampled);
      sel_domains.emplace_back(name_of(d) + "_selected");
      rand_domains.emplace_back(name_of(d) + "_random");
    }
    record("SEL+IN", run.run(concat_plan(sel_domains, config.epochs)));
    record("RAND+IN", run.run(concat_plan(rand_domains, config.epochs)));

    // Ensembles of the individual systems' best checkpoints.
    std::vector<const ModelCheckpoint*> members;
    members.push_back(&systems.at("IN").best);
    for (std::size_t d = 1; d < T; ++d) members.push_back(&systems.at(name_of(d)).best);
    const GridResult grid = grid_search_weights(members, run.in_dev(), run.target_vocab(), config.grid_step,
                                                config.beam);
    for (const bool weighted : {false, true}) {
      const EnsembleConfig ec = weighted ? weighted_ensemble(members, grid.weights) : balanced_ensemble(members);
      const Ensemble ensemble(ec);
      const Decoder decoder = [&](const std::vector<std::int32_t>& src) {
        return ensemble.decode(src, config.beam, default_max_len(src.size()));
      };
      StrategyResult r;
      r.strategy = weighted ? "ENS_w" : "ENS_b";
      r.seed = seed;
      r.in_dev_bleu = decode_bleu(run.in_dev(), run.target_vocab(), decoder).bleu;
      r.in_dev_ppl = std::numeric_limits<double>::quiet_NaN();
      StrategyResult t = run.evaluate(r.strategy, systems.at("IN"), decoder);
      r.in_test_bleu = t.in_test_bleu;
      r.unseen_test_bleu = t.unseen_test_bleu;
      r.unseen_test_ppl = std::numeric_limits<double>::quiet_NaN();
      report.rows.push_back(r);
      if (progress) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "seed %llu %-16s in_dev_bleu %.4f", static_cast<unsigned long long>(seed),
                      r.strategy.c_str(), r.in_dev_bleu);
        progress(buf);
      }
    }
  }

  std::vector<std::size_t> far_to_near, near_to_far;
  const std::size_t T = config.task.domain_count - config.task.held_out_count;
  for (std::size_t k = 1; k < T; ++k) {
    far_to_near.push_back(T - k);
    near_to_far.push_back(k);
  }
  far_to_near.push_back(0);
  near_to_far.push_back(0);
  const std::string f2n = chain(far_to_near), n2f = chain(near_to_far);

  const std::size_t required = (4 * seeds.size() + 4) / 5;
  Finding a{"a", "OD->IN beats ALL on in-domain dev perplexity", {}, required};
  Finding b{"b", "ALL beats the best stacked model on unseen-domain test perplexity", {}, required};
  Finding c{"c", f2n + " beats " + n2f + " on in-domain dev perplexity", {}, required};
  Finding d{"d", "SEL+IN beats RAND+IN, and ALL beats SEL+IN, on in-domain dev perplexity", {}, required};
  Finding e{"e", "ENS_w >= ENS_b on in-domain dev BLEU", {}, seeds.size()};
  for (const auto seed : seeds) {
    const auto& R = [&](const std::string& s) -> const StrategyResult& { return report.row(s, seed); };
    a.per_seed.push_back(R("OD->IN").in_dev_ppl < R("ALL").in_dev_ppl);
    // The better stacking order under the dev selection rule.
    const auto record = [&](const StrategyResult& x) {
      EpochRecord rec;
      rec.dev_bleu = x.in_dev_bleu;
      rec.dev_ppl = x.in_dev_ppl;
      return rec;
    };
    const auto& best_stack = better(record(R(n2f)), record(R(f2n)), config.select_by) ? R(n2f) : R(f2n);
    b.per_seed.push_back(R("ALL").unseen_test_ppl < best_stack.unseen_test_ppl);
    c.per_seed.push_back(R(f2n).in_dev_ppl < R(n2f).in_dev_ppl);
    d.per_seed.push_back(R("SEL+IN").in_dev_ppl < R("RAND+IN").in_dev_ppl &&
                         R("ALL").in_dev_ppl < R("SEL+IN").in_dev_ppl);
    e.per_seed.push_back(R("ENS_w").in_dev_bleu >= R("ENS_b").in_dev_bleu);
  }
  report.findings = {a, b, c, d, e};
  return report;
}

void write_findings_tsv(std::ostream& out, const FindingReport& report) {
  out << "STRATEGY\tSEED\tIN_DEV_BLEU\tIN_DEV_PPL\tIN_TEST_BLEU\tUNSEEN_BLEU\tUNSEEN_PPL\n";
  char buf[256];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%s\t%llu\t%.2f\t%.4f\t%.2f\t%.2f\t%.4f\n", r.strategy.c_str(),
                  static_cast<unsigned long long>(r.seed), 100 * r.in_dev_bleu, r.in_dev_ppl, 100 * r.in_test_bleu,
                  100 * r.unseen_test_bleu, r.unseen_test_ppl);
    out << buf;
  }
}

void write_findings_summary(std::ostream& out, const FindingReport& report) {
  for (const auto& f : report.findings) {
    out << "(" << f.id << ") " << f.description << ": ";
    for (bool p : f.per_seed) out << (p ? '+' : '-');
    out << " " << f.passes() << "/" << f.per_seed.size() << " (need " << f.required << ") "
        << (f.holds() ? "PASS" : "FAIL") << "\n";
  }
}

}  // namespace mdnmt
