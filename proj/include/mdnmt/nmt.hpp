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
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mdnmt {

enum class CellType : std::uint32_t { kGru = 0, kLstm = 1 };

// Production sizes: 2-layer LSTM, embeddings 512, hidden 1000, 50k
// vocabularies. Desk-scale defaults are far smaller.
struct ModelConfig {
  std::size_t source_vocab = 0;
  std::size_t target_vocab = 0;
  std::size_t embedding_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t encoder_layers = 1;
  std::size_t decoder_layers = 1;
  CellType cell = CellType::kGru;
  std::uint64_t seed = 1;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

ModelConfig production_model_config(std::size_t source_vocab, std::size_t target_vocab);

struct TensorSpec {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

// Shape table in storage order. With G = 3 (GRU) or 4 (LSTM), E the
// embedding size, H the hidden size:
//   src.embedding        E x Vs        (one column per token)
//   tgt.embedding        E x Vt
//   enc.L.{fwd,bwd}.W    GH x In       In = E for L = 0, else 2H
//   enc.L.{fwd,bwd}.U    GH x H
//   enc.L.{fwd,bwd}.b    GH x 1
//   dec.L.W              GH x In       In = E for L = 0, else H
//   dec.L.U              GH x H
//   dec.L.b              GH x 1
//   dec.L.init.W         H x 2H        initial state from mean annotation
//   dec.L.init.b         H x 1
//   att.W                H x H         query projection
//   att.U                H x 2H        annotation projection
//   att.b                H x 1
//   att.v                H x 1
//   out.W                H x 3H        readout over [query; context]
//   out.b                H x 1
//   proj.W               Vt x H
//   proj.b               Vt x 1
std::vector<TensorSpec> parameter_layout(const ModelConfig& config);
std::size_t parameter_count(const ModelConfig& config);

// Named dense tensors in parameter_layout order. Gradients share the type.
struct ModelParams {
  std::vector<Eigen::MatrixXd> tensors;

  static ModelParams zeros_like(const ModelConfig& config);
  bool all_finite() const;
  friend bool operator==(const ModelParams& a, const ModelParams& b);
};
using Gradients = ModelParams;

enum class OptimizerType : std::uint32_t { kSgd = 0, kAdagrad = 1, kAdam = 2 };

struct OptimizerState {
  OptimizerType type = OptimizerType::kSgd;
  std::uint64_t steps = 0;
  // Adagrad: slots[0] = squared-gradient sum. Adam: first and second moments.
  std::vector<std::vector<Eigen::MatrixXd>> slots;

  friend bool operator==(const OptimizerState& a, const OptimizerState& b);
};

struct ProvenanceRecord {
  std::string domain;
  std::uint64_t epochs = 0;
  std::uint64_t steps = 0;
  friend bool operator==(const ProvenanceRecord&, const ProvenanceRecord&) = default;
};

// The resumable training unit. Between epochs every value is exactly
// representable in fp32, which is what the checkpoint file stores, so
// saving and loading never changes a trained model.
struct ModelCheckpoint {
  ModelConfig config;
  ModelParams params;
  OptimizerState optimizer;
  std::vector<ProvenanceRecord> provenance;
  std::uint64_t rng_state = 0;

  friend bool operator==(const ModelCheckpoint& a, const ModelCheckpoint& b);
};

// Uniform(-0.08, 0.08) from SplitMix64(config.seed), rounded to fp32.
ModelCheckpoint init_model(const ModelConfig& config);

// Token ids without <s> or </s>; the model adds them.
struct EncodedPair {
  std::vector<std::int32_t> source;
  std::vector<std::int32_t> target;
  friend bool operator==(const EncodedPair&, const EncodedPair&) = default;
  friend auto operator<=>(const EncodedPair&, const EncodedPair&) = default;
};

struct EncodedCorpus {
  std::string domain;
  std::vector<EncodedPair> pairs;
};

// Activations kept by forward_loss for one pair.
struct PairCache;

struct BatchCache {
  const ModelConfig* config = nullptr;
  const ModelParams* params = nullptr;
  std::vector<PairCache> pairs;
  std::size_t target_tokens = 0;

  BatchCache();
  BatchCache(BatchCache&&) noexcept;
  BatchCache& operator=(BatchCache&&) noexcept;
  ~BatchCache();

  // Attention distribution (source positions x target steps) of pair i.
  const Eigen::MatrixXd& attention(std::size_t i) const;
  // Output softmax (target vocab x target steps) of pair i.
  const Eigen::MatrixXd& output_probs(std::size_t i) const;
};

struct ForwardResult {
  double loss = 0;  // mean cross-entropy over target tokens (including </s>)
  std::size_t target_tokens = 0;
  BatchCache cache;
};

// Teacher-forced forward pass. The cache points at config and params, which
// must outlive it. Throws VocabularyError for out-of-range ids.
ForwardResult forward_loss(const ModelConfig& config, const ModelParams& params,
                           std::span<const EncodedPair> batch);
// Exact gradients of the mean loss with respect to every parameter.
Gradients backward(const BatchCache& cache);

struct TrainHyper {
  OptimizerType optimizer = OptimizerType::kSgd;
  double learning_rate = 0.1;
  std::size_t batch_size = 16;
  double clip_norm = 5.0;  // global gradient norm; <= 0 disables clipping
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;  // mixed into the per-epoch shuffle seed
};

struct EpochStats {
  double mean_loss = 0;
  std::size_t steps = 0;
  std::size_t target_tokens = 0;
};

// Receives every training pair in feed order.
using FeedObserver = std::function<void(const EncodedPair&)>;

// One shuffled pass (shuffle-then-slice batches). The shuffle seed comes
// from the checkpoint's rng_state, so a reloaded checkpoint continues the
// exact same stream. Appends provenance; rounds the state to fp32 at the
// end. Throws DivergenceError on a non-finite loss.
ModelCheckpoint train_epoch(ModelCheckpoint checkpoint, const EncodedCorpus& corpus,
                            const TrainHyper& hyper, EpochStats* stats = nullptr,
                            const FeedObserver& observer = {});

void validate_ids(const ModelConfig& config, const EncodedPair& pair);

// Inference-time view of one model.
struct EncodedSource {
  Eigen::MatrixXd annotations;   // 2H x n
  Eigen::MatrixXd projected;     // att.U * annotations + att.b
};

struct DecoderState {
  std::vector<Eigen::VectorXd> h;
  std::vector<Eigen::VectorXd> c;  // LSTM only
};

class Translator {
 public:
  explicit Translator(const ModelCheckpoint& checkpoint);

  const ModelConfig& config() const { return *config_; }

  EncodedSource encode(const std::vector<std::int32_t>& source) const;
  DecoderState initial_state(const EncodedSource& src) const;
  // Advances by feeding prev_token; returns the next-token distribution.
  Eigen::VectorXd step(const EncodedSource& src, DecoderState& state, std::int32_t prev_token,
                       Eigen::VectorXd* attention = nullptr) const;

 private:
  const ModelConfig* config_;
  const ModelParams* params_;
};

struct Hypothesis {
  std::vector<std::int32_t> tokens;  // after <s>; ends with </s> unless cut at max length
  double score = 0;                  // sum of log-probabilities
  double normalized_score = 0;       // score / tokens.size()
};

// Beam search; finished hypotheses are ranked by normalized score, ties by
// token ids. beam must be >= 1. `all`, when given, receives every finished
// hypothesis best first.
Hypothesis decode_beam(const ModelCheckpoint& checkpoint, const std::vector<std::int32_t>& source,
                       std::size_t beam, std::size_t max_len, std::vector<Hypothesis>* all = nullptr);

// Mean per-token cross-entropy and token count over a corpus, no gradients.
struct CorpusLoss {
  double total_nll = 0;
  std::size_t tokens = 0;
};
CorpusLoss corpus_loss(const ModelCheckpoint& checkpoint, std::span<const EncodedPair> pairs);

// Rounds every parameter and optimizer accumulator to the nearest float.
void round_to_fp32(ModelCheckpoint& checkpoint);

// Little-endian binary: magic, version, config, shape table, fp32 tensors,
// optimizer slots, provenance, rng state.
std::vector<std::uint8_t> serialize_checkpoint(const ModelCheckpoint& checkpoint);
ModelCheckpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace mdnmt
