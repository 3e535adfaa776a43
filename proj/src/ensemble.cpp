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

#include "mdnmt/ensemble.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "mdnmt/beam.hpp"
#include "mdnmt/error.hpp"

namespace mdnmt {

void EnsembleConfig::validate() const {
  if (members.empty()) throw ConfigError("an ensemble needs at least one member");
  for (const auto* m : members) {
    if (m == nullptr) throw ConfigError("null ensemble member");
    if (m->config.target_vocab != members.front()->config.target_vocab) {
      throw IncompatibleModelsError("ensemble members have target vocabularies of size " +
                                    std::to_string(members.front()->config.target_vocab) + " and " +
                                    std::to_string(m->config.target_vocab));
    }
  }
  if (mode == EnsembleMode::kBalanced) return;
  if (weights.size() != members.size()) {
    throw ConfigError("ensemble has " + std::to_string(members.size()) + " members but " +
                      std::to_string(weights.size()) + " weights");
  }
  double sum = 0;
  for (double w : weights) {
    if (!(w >= 0)) throw ConfigError("ensemble weights must be >= 0");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("ensemble weights must sum to 1");
}

std::vector<double> EnsembleConfig::effective_weights() const {
  if (mode == EnsembleMode::kBalanced) {
    return std::vector<double>(members.size(), 1.0 / static_cast<double>(members.size()));
  }
  return weights;
}

EnsembleConfig balanced_ensemble(std::vector<const ModelCheckpoint*> members) {
  EnsembleConfig c;
  c.members = std::move(members);
  c.mode = EnsembleMode::kBalanced;
  return c;
}

EnsembleConfig weighted_ensemble(std::vector<const ModelCheckpoint*> members, std::vector<double> weights) {
  EnsembleConfig c;
  c.members = std::move(members);
  c.weights = std::move(weights);
  c.mode = EnsembleMode::kWeighted;
  return c;
}

void check_shared_vocabulary(const std::vector<const Vocabulary*>& vocabularies) {
  if (vocabularies.empty()) return;
  const auto& first = vocabularies.front()->tokens();
  for (std::size_t k = 1; k < vocabularies.size(); ++k) {
    const auto& other = vocabularies[k]->tokens();
    const std::size_t n = std::min(first.size(), other.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (first[i] != other[i]) {
        throw IncompatibleModelsError("member " + std::to_string(k) + " vocabulary differs at id " +
                                      std::to_string(i) + ": \"" + first[i] + "\" vs \"" + other[i] + "\"");
      }
    }
    if (first.size() != other.size()) {
      const std::string& tok = first.size() > other.size() ? first[n] : other[n];
      throw IncompatibleModelsError("member " + std::to_string(k) + " vocabulary differs at id " +
                                    std::to_string(n) + ": \"" + tok + "\" present in only one model");
    }
  }
}

Eigen::VectorXd combine_distributions(const std::vector<Eigen::VectorXd>& distributions,
                                      const std::vector<double>& weights, Combination combination) {
  if (distributions.empty() || distributions.size() != weights.size()) {
    throw ConfigError("need one weight per distribution");
  }
  if (combination == Combination::kProbability) {
    Eigen::VectorXd out = weights[0] * distributions[0];
    for (std::size_t k = 1; k < distributions.size(); ++k) out.noalias() += weights[k] * distributions[k];
    return out;
  }
  Eigen::VectorXd logits = weights[0] * distributions[0].array().log().matrix();
  for (std::size_t k = 1; k < distributions.size(); ++k) {
    logits.noalias() += weights[k] * distributions[k].array().log().matrix();
  }
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

Ensemble::Ensemble(const EnsembleConfig& config) : combination_(config.combination) {
  config.validate();
  for (const auto* m : config.members) translators_.emplace_back(*m);
  weights_ = config.effective_weights();
}

std::vector<EncodedSource> Ensemble::encode(const std::vector<std::int32_t>& source) const {
  std::vector<EncodedSource> out;
  for (const auto& t : translators_) out.push_back(t.encode(source));
  return out;
}

EnsembleState Ensemble::initial_state(const std::vector<EncodedSource>& sources) const {
  EnsembleState st;
  for (std::size_t k = 0; k < translators_.size(); ++k) st.push_back(translators_[k].initial_state(sources[k]));
  return st;
}

Eigen::VectorXd Ensemble::step(const std::vector<EncodedSource>& sources, EnsembleState& state,
                               std::int32_t prev_token) const {
  std::vector<Eigen::VectorXd> dists;
  dists.reserve(translators_.size());
  for (std::size_t k = 0; k < translators_.size(); ++k) {
    dists.push_back(translators_[k].step(sources[k], state[k], prev_token));
  }
  return combine_distributions(dists, weights_, combination_);
}

namespace {

struct EnsembleScorer {
  using State = EnsembleState;
  const Ensemble& ensemble;
  const std::vector<EncodedSource>& sources;

  State initial() { return ensemble.initial_state(sources); }
  Eigen::VectorXd advance(State& s, std::int32_t prev) {
    return ensemble.step(sources, s, prev).array().log().matrix();
  }
};

}  // namespace

Hypothesis Ensemble::decode(const std::vector<std::int32_t>& source, std::size_t beam, std::size_t max_len) const {
  if (beam < 1) throw ConfigError("beam must be >= 1");
  const auto sources = encode(source);
  EnsembleScorer scorer{*this, sources};
  return beam_search(scorer, beam, max_len);
}

Eigen::VectorXd ensemble_step(const Ensemble& ensemble, const std::vector<EncodedSource>& sources,
                              EnsembleState& state, std::int32_t prev_token) {
  return ensemble.step(sources, state, prev_token);
}

Hypothesis decode_ensemble(const EnsembleConfig& config, const std::vector<std::int32_t>& source,
                           std::size_t beam, std::size_t max_len) {
  return Ensemble(config).decode(source, beam, max_len);
}

std::vector<std::vector<double>> weight_lattice(std::size_t members, double step) {
  if (members < 1) throw ConfigError("weight lattice needs at least one member");
  if (!(step > 0) || step > 1) throw ConfigError("grid step must be in (0, 1]");
  const double inv = 1.0 / step;
  const auto M = static_cast<std::size_t>(std::llround(inv));
  if (M == 0 || std::abs(inv - static_cast<double>(M)) > 1e-9 * inv) {
    throw ConfigError("grid step must divide 1 evenly");
  }
  std::vector<std::vector<double>> out;
  std::vector<std::size_t> k(members, 0);
  // Odometer over the first members-1 coordinates; the last takes the rest.
  auto emit = [&](std::size_t used) {
    std::vector<double> w(members);
    for (std::size_t i = 0; i + 1 < members; ++i) w[i] = static_cast<double>(k[i]) / static_cast<double>(M);
    w[members - 1] = static_cast<double>(M - used) / static_cast<double>(M);
    out.push_back(std::move(w));
  };
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t used) {
    if (i + 1 == members) {
      emit(used);
      return;
    }
    for (std::size_t v = 0; v + used <= M; ++v) {
      k[i] = v;
      rec(i + 1, used + v);
    }
  };
  rec(0, 0);
  return out;
}

GridResult grid_search_weights(const std::vector<const ModelCheckpoint*>& members, const EvalSet& dev,
                               const Vocabulary& target_vocab, double step, std::size_t beam,
                               Combination combination) {
  if (dev.pairs.empty()) throw ConfigError("grid search needs at least one dev pair");
  GridResult result;
  bool first = true;
  for (auto& w : weight_lattice(members.size(), step)) {
    EnsembleConfig config = weighted_ensemble(members, w);
    config.combination = combination;
    const Ensemble ensemble(config);
    const double b = decode_bleu(dev, target_vocab, [&](const std::vector<std::int32_t>& src) {
                       return ensemble.decode(src, beam, default_max_len(src.size()));
                     }).bleu;
    if (first || b > result.bleu) {
      result.weights = w;
      result.bleu = b;
      first = false;
    }
    result.evaluated.push_back({std::move(w), b});
  }
  return result;
}

void write_grid_audit(std::ostream& out, const GridResult& result) {
  char buf[64];
  for (const auto& p : result.evaluated) {
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.10g", i ? "," : "", p.weights[i]);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "\t%.6f\n", p.bleu * 100.0);
    out << buf;
  }
}

}  // namespace mdnmt
