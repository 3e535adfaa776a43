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

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <vector>

#include "mdnmt/eval.hpp"
#include "mdnmt/nmt.hpp"
#include "mdnmt/subword.hpp"

namespace mdnmt {

enum class EnsembleMode { kBalanced, kWeighted };

// kProbability: sum_k w_k p_k. kLogLinear: softmax(sum_k w_k log p_k).
enum class Combination { kProbability, kLogLinear };

struct EnsembleConfig {
  std::vector<const ModelCheckpoint*> members;  // not owned
  std::vector<double> weights;                  // ignored in balanced mode
  EnsembleMode mode = EnsembleMode::kBalanced;
  Combination combination = Combination::kProbability;

  // Throws ConfigError for no members, a weight count mismatch, negative
  // weights or weights not summing to 1 within 1e-12 (weighted mode), and
  // IncompatibleModelsError when target vocabulary sizes differ.
  void validate() const;
  // Uniform in balanced mode, `weights` otherwise.
  std::vector<double> effective_weights() const;
};

EnsembleConfig balanced_ensemble(std::vector<const ModelCheckpoint*> members);
EnsembleConfig weighted_ensemble(std::vector<const ModelCheckpoint*> members, std::vector<double> weights);

// Members must use one id<->token map. Throws IncompatibleModelsError naming
// the first token where two vocabularies differ.
void check_shared_vocabulary(const std::vector<const Vocabulary*>& vocabularies);

// Per-member decoder states for one hypothesis.
using EnsembleState = std::vector<DecoderState>;

class Ensemble {
 public:
  explicit Ensemble(const EnsembleConfig& config);

  std::size_t size() const { return translators_.size(); }
  const std::vector<double>& weights() const { return weights_; }

  std::vector<EncodedSource> encode(const std::vector<std::int32_t>& source) const;
  EnsembleState initial_state(const std::vector<EncodedSource>& sources) const;
  // Feeds prev_token to every member and returns the combined next-token
  // distribution. The probability-space sum starts from the first member's
  // term, so a single member with weight 1 reproduces it bit for bit.
  Eigen::VectorXd step(const std::vector<EncodedSource>& sources, EnsembleState& state,
                       std::int32_t prev_token) const;

  Hypothesis decode(const std::vector<std::int32_t>& source, std::size_t beam, std::size_t max_len) const;

 private:
  std::vector<Translator> translators_;
  std::vector<double> weights_;
  Combination combination_;
};

// Fixed-order convex combination of member distributions.
Eigen::VectorXd combine_distributions(const std::vector<Eigen::VectorXd>& distributions,
                                      const std::vector<double>& weights,
                                      Combination combination = Combination::kProbability);

Eigen::VectorXd ensemble_step(const Ensemble& ensemble, const std::vector<EncodedSource>& sources,
                              EnsembleState& state, std::int32_t prev_token);

Hypothesis decode_ensemble(const EnsembleConfig& config, const std::vector<std::int32_t>& source,
                           std::size_t beam, std::size_t max_len);

inline constexpr double kDefaultGridStep = 0.1;

// Every weight vector k / M on the simplex, M = 1 / step, in ascending
// lexicographic order. Throws ConfigError unless step divides 1.
std::vector<std::vector<double>> weight_lattice(std::size_t members, double step);

struct GridPoint {
  std::vector<double> weights;
  double bleu = 0;
};

struct GridResult {
  std::vector<double> weights;
  double bleu = 0;
  std::vector<GridPoint> evaluated;  // lattice order
};

// Dev BLEU at every lattice point; returns the arg-max, ties to the
// lexicographically smallest weight vector.
GridResult grid_search_weights(const std::vector<const ModelCheckpoint*>& members, const EvalSet& dev,
                               const Vocabulary& target_vocab, double step = kDefaultGridStep,
                               std::size_t beam = 4, Combination combination = Combination::kProbability);

// "w1,...,wN<TAB>devBLEU" lines, BLEU x100.
void write_grid_audit(std::ostream& out, const GridResult& result);

}  // namespace mdnmt
