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

#include "mdnmt/nmt.hpp"

#include <cmath>

#include "mdnmt/beam.hpp"
#include "mdnmt/error.hpp"
#include "mdnmt/rng.hpp"
#include "mdnmt/subword.hpp"

namespace mdnmt {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Configuration and layout

void ModelConfig::validate() const {
  if (source_vocab < Vocabulary::base_reserved().size() || target_vocab < Vocabulary::base_reserved().size()) {
    throw ConfigError("model vocabularies must hold at least the reserved tokens");
  }
  if (embedding_dim < 1 || hidden_dim < 1 || encoder_layers < 1 || decoder_layers < 1) {
    throw ConfigError("model dimensions and layer counts must be >= 1");
  }
  if (cell != CellType::kGru && cell != CellType::kLstm) throw ConfigError("unknown recurrent cell type");
}

ModelConfig production_model_config(std::size_t source_vocab, std::size_t target_vocab) {
  ModelConfig c;
  c.source_vocab = source_vocab;
  c.target_vocab = target_vocab;
  c.embedding_dim = 512;
  c.hidden_dim = 1000;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.cell = CellType::kLstm;
  return c;
}

namespace {

struct RnnIndex {
  std::size_t W, U, b;
};

// Positions of each named tensor inside ModelParams::tensors.
struct LayoutIndex {
  std::size_t src_emb = 0, tgt_emb = 0;
  std::vector<RnnIndex> enc_fwd, enc_bwd, dec;
  std::vector<std::size_t> init_W, init_b;
  std::size_t att_W = 0, att_U = 0, att_b = 0, att_v = 0;
  std::size_t out_W = 0, out_b = 0, proj_W = 0, proj_b = 0;
  std::vector<TensorSpec> specs;
};

LayoutIndex make_layout(const ModelConfig& c) {
  c.validate();
  LayoutIndex ix;
  const auto E = static_cast<Index>(c.embedding_dim);
  const auto H = static_cast<Index>(c.hidden_dim);
  const Index G = (c.cell == CellType::kGru ? 3 : 4) * H;
  auto add = [&](std::string name, Index rows, Index cols) {
    ix.specs.push_back({std::move(name), rows, cols});
    return ix.specs.size() - 1;
  };
  ix.src_emb = add("src.embedding", E, static_cast<Index>(c.source_vocab));
  ix.tgt_emb = add("tgt.embedding", E, static_cast<Index>(c.target_vocab));
  for (std::size_t l = 0; l < c.encoder_layers; ++l) {
    const Index in = l == 0 ? E : 2 * H;
    const std::string p = "enc." + std::to_string(l) + ".";
    for (const char* dir : {"fwd", "bwd"}) {
      RnnIndex r{add(p + dir + ".W", G, in), add(p + dir + ".U", G, H), add(p + dir + ".b", G, 1)};
      (std::string(dir) == "fwd" ? ix.enc_fwd : ix.enc_bwd).push_back(r);
    }
  }
  for (std::size_t l = 0; l < c.decoder_layers; ++l) {
    const Index in = l == 0 ? E : H;
    const std::string p = "dec." + std::to_string(l) + ".";
    ix.dec.push_back({add(p + "W", G, in), add(p + "U", G, H), add(p + "b", G, 1)});
    ix.init_W.push_back(add(p + "init.W", H, 2 * H));
    ix.init_b.push_back(add(p + "init.b", H, 1));
  }
  ix.att_W = add("att.W", H, H);
  ix.att_U = add("att.U", H, 2 * H);
  ix.att_b = add("att.b", H, 1);
  ix.att_v = add("att.v", H, 1);
  ix.out_W = add("out.W", H, 3 * H);
  ix.out_b = add("out.b", H, 1);
  ix.proj_W = add("proj.W", static_cast<Index>(c.target_vocab), H);
  ix.proj_b = add("proj.b", static_cast<Index>(c.target_vocab), 1);
  return ix;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

VectorXd softmax(const VectorXd& logits) {
  const double m = logits.maxCoeff();
  VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

}  // namespace

std::vector<TensorSpec> parameter_layout(const ModelConfig& config) { return make_layout(config).specs; }

std::size_t parameter_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& s : parameter_layout(config)) n += static_cast<std::size_t>(s.rows * s.cols);
  return n;
}

ModelParams ModelParams::zeros_like(const ModelConfig& config) {
  ModelParams p;
  for (const auto& s : parameter_layout(config)) p.tensors.push_back(MatrixXd::Zero(s.rows, s.cols));
  return p;
}

bool ModelParams::all_finite() const {
  for (const auto& t : tensors) {
    if (!t.allFinite()) return false;
  }
  return true;
}

namespace {

bool same_tensors(const std::vector<MatrixXd>& a, const std::vector<MatrixXd>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) return false;
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace

bool operator==(const ModelParams& a, const ModelParams& b) { return same_tensors(a.tensors, b.tensors); }

bool operator==(const OptimizerState& a, const OptimizerState& b) {
  if (a.type != b.type || a.steps != b.steps || a.slots.size() != b.slots.size()) return false;
  for (std::size_t i = 0; i < a.slots.size(); ++i) {
    if (!same_tensors(a.slots[i], b.slots[i])) return false;
  }
  return true;
}

bool operator==(const ModelCheckpoint& a, const ModelCheckpoint& b) {
  return a.config == b.config && a.params == b.params && a.optimizer == b.optimizer &&
         a.provenance == b.provenance && a.rng_state == b.rng_state;
}

void round_to_fp32(ModelCheckpoint& checkpoint) {
  auto round = [](MatrixXd& m) {
    m = m.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
  };
  for (auto& t : checkpoint.params.tensors) round(t);
  for (auto& slot : checkpoint.optimizer.slots) {
    for (auto& t : slot) round(t);
  }
}

ModelCheckpoint init_model(const ModelConfig& config) {
  ModelCheckpoint ckpt;
  ckpt.config = config;
  SplitMix64 rng(config.seed);
  for (const auto& s : make_layout(config).specs) {
    MatrixXd m(s.rows, s.cols);
    // Column-major fill, the same order the checkpoint file uses.
    for (Index j = 0; j < m.cols(); ++j) {
      for (Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-0.08, 0.08);
    }
    ckpt.params.tensors.push_back(std::move(m));
  }
  ckpt.rng_state = mix_seed(config.seed, 0x7a11);
  round_to_fp32(ckpt);
  return ckpt;
}

// ---------------------------------------------------------------------------
// Recurrent layers

namespace {

struct RnnWeights {
  const MatrixXd& W;
  const MatrixXd& U;
  const MatrixXd& b;
};

struct RnnGrads {
  MatrixXd& W;
  MatrixXd& U;
  MatrixXd& b;
};

// One cell step. wx = W x + b. For GRU, gates holds [r; z; n] and rh the
// reset-gated state; for LSTM gates holds [i; f; g; o] and c the new cell.
void cell_step(CellType cell, const MatrixXd& U, const VectorXd& wx, const VectorXd& h_prev,
               const VectorXd& c_prev, VectorXd& gates, VectorXd& rh, VectorXd& h, VectorXd& c) {
  const Index H = h_prev.size();
  if (cell == CellType::kGru) {
    gates.resize(3 * H);
    const VectorXd urz = U.topRows(2 * H) * h_prev;
    for (Index k = 0; k < 2 * H; ++k) gates[k] = sigmoid(wx[k] + urz[k]);
    rh = gates.head(H).cwiseProduct(h_prev);
    const VectorXd un = U.bottomRows(H) * rh;
    for (Index k = 0; k < H; ++k) gates[2 * H + k] = std::tanh(wx[2 * H + k] + un[k]);
    h.resize(H);
    for (Index k = 0; k < H; ++k) {
      const double z = gates[H + k];
      h[k] = (1.0 - z) * h_prev[k] + z * gates[2 * H + k];
    }
  } else {
    const VectorXd a = wx + U * h_prev;
    gates.resize(4 * H);
    c.resize(H);
    h.resize(H);
    for (Index k = 0; k < H; ++k) {
      const double i = sigmoid(a[k]);
      const double f = sigmoid(a[H + k]);
      const double g = std::tanh(a[2 * H + k]);
      const double o = sigmoid(a[3 * H + k]);
      gates[k] = i;
      gates[H + k] = f;
      gates[2 * H + k] = g;
      gates[3 * H + k] = o;
      c[k] = f * c_prev[k] + i * g;
      h[k] = o * std::tanh(c[k]);
    }
  }
}

struct SeqCache {
  MatrixXd x;       // In x n
  MatrixXd h_prev;  // H x n, state entering the step at each position
  MatrixXd c_prev;  // LSTM
  MatrixXd gates;   // GH x n
  MatrixXd rh;      // GRU
  MatrixXd c;       // LSTM cell after each step
  MatrixXd h;       // H x n outputs
  bool reverse = false;
};

SeqCache run_sequence(CellType cell, const RnnWeights& w, MatrixXd x, const VectorXd& h0,
                      const VectorXd& c0, bool reverse) {
  const Index n = x.cols();
  const Index H = w.U.cols();
  SeqCache sc;
  sc.reverse = reverse;
  MatrixXd wx = w.W * x;
  wx.colwise() += w.b.col(0);
  sc.h_prev.resize(H, n);
  sc.h.resize(H, n);
  sc.gates.resize(w.W.rows(), n);
  if (cell == CellType::kGru) {
    sc.rh.resize(H, n);
  } else {
    sc.c_prev.resize(H, n);
    sc.c.resize(H, n);
  }
  VectorXd h = h0;
  VectorXd c = c0;
  VectorXd gates, rh, h_new, c_new;
  for (Index s = 0; s < n; ++s) {
    const Index t = reverse ? n - 1 - s : s;
    sc.h_prev.col(t) = h;
    if (cell == CellType::kLstm) sc.c_prev.col(t) = c;
    cell_step(cell, w.U, wx.col(t), h, c, gates, rh, h_new, c_new);
    sc.gates.col(t) = gates;
    if (cell == CellType::kGru) {
      sc.rh.col(t) = rh;
    } else {
      sc.c.col(t) = c_new;
      c = c_new;
    }
    sc.h.col(t) = h_new;
    h = h_new;
  }
  sc.x = std::move(x);
  return sc;
}

// Backpropagation through time. dh_out holds the loss gradient for every
// output column. Returns the input gradient; writes the initial-state
// gradients.
MatrixXd backward_sequence(CellType cell, const RnnWeights& w, const SeqCache& sc, const MatrixXd& dh_out,
                           RnnGrads g, VectorXd& dh0, VectorXd& dc0) {
  const Index n = sc.x.cols();
  const Index H = w.U.cols();
  MatrixXd da(w.W.rows(), n);
  VectorXd dh_next = VectorXd::Zero(H);
  VectorXd dc_next = VectorXd::Zero(H);
  for (Index s = n - 1; s >= 0; --s) {
    const Index t = sc.reverse ? n - 1 - s : s;
    const VectorXd dh = dh_out.col(t) + dh_next;
    const auto hp = sc.h_prev.col(t);
    const auto gt = sc.gates.col(t);
    if (cell == CellType::kGru) {
      VectorXd dar(H), daz(H), dan(H);
      VectorXd dh_prev(H);
      for (Index k = 0; k < H; ++k) {
        const double r = gt[k], z = gt[H + k], nn = gt[2 * H + k];
        const double dz = dh[k] * (nn - hp[k]);
        const double dn = dh[k] * z;
        dh_prev[k] = dh[k] * (1.0 - z);
        dan[k] = dn * (1.0 - nn * nn);
        daz[k] = dz * z * (1.0 - z);
        (void)r;
      }
      const VectorXd drh = w.U.bottomRows(H).transpose() * dan;
      for (Index k = 0; k < H; ++k) {
        const double r = gt[k];
        dar[k] = drh[k] * hp[k] * r * (1.0 - r);
        dh_prev[k] += drh[k] * r;
      }
      da.col(t).segment(0, H) = dar;
      da.col(t).segment(H, H) = daz;
      da.col(t).segment(2 * H, H) = dan;
      dh_prev.noalias() += w.U.topRows(2 * H).transpose() * da.col(t).head(2 * H);
      dh_next = dh_prev;
    } else {
      const auto cp = sc.c_prev.col(t);
      const auto cc = sc.c.col(t);
      VectorXd dc_prev(H);
      for (Index k = 0; k < H; ++k) {
        const double i = gt[k], f = gt[H + k], gg = gt[2 * H + k], o = gt[3 * H + k];
        const double tc = std::tanh(cc[k]);
        const double dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
        const double d_o = dh[k] * tc;
        da(k, t) = dc * gg * i * (1.0 - i);
        da(H + k, t) = dc * cp[k] * f * (1.0 - f);
        da(2 * H + k, t) = dc * i * (1.0 - gg * gg);
        da(3 * H + k, t) = d_o * o * (1.0 - o);
        dc_prev[k] = dc * f;
      }
      dh_next = w.U.transpose() * da.col(t);
      dc_next = dc_prev;
    }
  }
  if (cell == CellType::kGru) {
    g.U.topRows(2 * H).noalias() += da.topRows(2 * H) * sc.h_prev.transpose();
    g.U.bottomRows(H).noalias() += da.bottomRows(H) * sc.rh.transpose();
  } else {
    g.U.noalias() += da * sc.h_prev.transpose();
  }
  g.W.noalias() += da * sc.x.transpose();
  g.b.col(0) += da.rowwise().sum();
  dh0 = dh_next;
  dc0 = dc_next;
  return w.W.transpose() * da;
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward / backward over a batch

struct PairCache {
  std::vector<std::int32_t> source;  // with </s>
  std::vector<std::int32_t> dec_in;  // <s> y1 .. ym
  std::vector<std::int32_t> dec_out; // y1 .. ym </s>
  std::vector<SeqCache> enc_fwd, enc_bwd;
  MatrixXd annotations;  // 2H x n
  VectorXd mean_annotation;
  std::vector<VectorXd> init_state;
  std::vector<SeqCache> dec;
  MatrixXd projected;               // H x n
  std::vector<MatrixXd> att_tanh;   // per step, H x n
  MatrixXd alpha;                   // n x T
  MatrixXd context;                 // 2H x T
  MatrixXd readout;                 // H x T
  MatrixXd probs;                   // Vt x T
  double nll = 0;
};

BatchCache::BatchCache() = default;
BatchCache::BatchCache(BatchCache&&) noexcept = default;
BatchCache& BatchCache::operator=(BatchCache&&) noexcept = default;
BatchCache::~BatchCache() = default;

const MatrixXd& BatchCache::attention(std::size_t i) const { return pairs.at(i).alpha; }
const MatrixXd& BatchCache::output_probs(std::size_t i) const { return pairs.at(i).probs; }

void validate_ids(const ModelConfig& config, const EncodedPair& pair) {
  for (auto id : pair.source) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.source_vocab) {
      throw VocabularyError("source id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(config.source_vocab));
    }
  }
  for (auto id : pair.target) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.target_vocab) {
      throw VocabularyError("target id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(config.target_vocab));
    }
  }
}

namespace {

RnnWeights rnn_weights(const ModelParams& p, const RnnIndex& r) {
  return {p.tensors[r.W], p.tensors[r.U], p.tensors[r.b]};
}

RnnGrads rnn_grads(ModelParams& g, const RnnIndex& r) { return {g.tensors[r.W], g.tensors[r.U], g.tensors[r.b]}; }

MatrixXd gather_columns(const MatrixXd& table, const std::vector<std::int32_t>& ids) {
  MatrixXd out(table.rows(), static_cast<Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) out.col(static_cast<Index>(i)) = table.col(ids[i]);
  return out;
}

// Runs the (possibly multi-layer) bidirectional encoder.
MatrixXd run_encoder(const ModelConfig& config, const LayoutIndex& ix, const ModelParams& p,
                     const std::vector<std::int32_t>& source, std::vector<SeqCache>* fwd_cache,
                     std::vector<SeqCache>* bwd_cache) {
  const Index H = static_cast<Index>(config.hidden_dim);
  const VectorXd zero = VectorXd::Zero(H);
  MatrixXd input = gather_columns(p.tensors[ix.src_emb], source);
  for (std::size_t l = 0; l < config.encoder_layers; ++l) {
    SeqCache f = run_sequence(config.cell, rnn_weights(p, ix.enc_fwd[l]), input, zero, zero, false);
    SeqCache b = run_sequence(config.cell, rnn_weights(p, ix.enc_bwd[l]), std::move(input), zero, zero, true);
    input.resize(2 * H, f.h.cols());
    input.topRows(H) = f.h;
    input.bottomRows(H) = b.h;
    if (fwd_cache) {
      fwd_cache->push_back(std::move(f));
      bwd_cache->push_back(std::move(b));
    }
  }
  return input;
}

VectorXd init_decoder_state(const ModelParams& p, const LayoutIndex& ix, std::size_t layer,
                            const VectorXd& mean_annotation) {
  return (p.tensors[ix.init_W[layer]] * mean_annotation + p.tensors[ix.init_b[layer]].col(0))
      .array()
      .tanh()
      .matrix();
}

// Additive attention for one query. Writes the tanh activations.
VectorXd attend(const ModelParams& p, const LayoutIndex& ix, const MatrixXd& projected, const VectorXd& query,
                MatrixXd& tanh_out) {
  tanh_out = projected;
  tanh_out.colwise() += p.tensors[ix.att_W] * query;
  tanh_out = tanh_out.array().tanh().matrix();
  const VectorXd scores = tanh_out.transpose() * p.tensors[ix.att_v].col(0);
  return softmax(scores);
}

VectorXd readout(const ModelParams& p, const LayoutIndex& ix, const VectorXd& query, const VectorXd& context) {
  const Index H = query.size();
  const MatrixXd& W = p.tensors[ix.out_W];
  VectorXd a = W.leftCols(H) * query + W.rightCols(2 * H) * context + p.tensors[ix.out_b].col(0);
  return a.array().tanh().matrix();
}

PairCache forward_pair(const ModelConfig& config, const LayoutIndex& ix, const ModelParams& p,
                       const EncodedPair& pair) {
  const Index H = static_cast<Index>(config.hidden_dim);
  PairCache pc;
  pc.source = pair.source;
  pc.source.push_back(Vocabulary::kEos);
  pc.dec_in.push_back(Vocabulary::kBos);
  pc.dec_in.insert(pc.dec_in.end(), pair.target.begin(), pair.target.end());
  pc.dec_out = pair.target;
  pc.dec_out.push_back(Vocabulary::kEos);

  pc.annotations = run_encoder(config, ix, p, pc.source, &pc.enc_fwd, &pc.enc_bwd);
  const Index n = pc.annotations.cols();
  const Index T = static_cast<Index>(pc.dec_in.size());
  pc.mean_annotation = pc.annotations.rowwise().mean();

  MatrixXd input = gather_columns(p.tensors[ix.tgt_emb], pc.dec_in);
  const VectorXd zero = VectorXd::Zero(H);
  for (std::size_t l = 0; l < config.decoder_layers; ++l) {
    pc.init_state.push_back(init_decoder_state(p, ix, l, pc.mean_annotation));
    pc.dec.push_back(run_sequence(config.cell, rnn_weights(p, ix.dec[l]), std::move(input), pc.init_state[l],
                                  zero, false));
    input = pc.dec.back().h;
  }
  const MatrixXd& Q = pc.dec.back().h;

  pc.projected = p.tensors[ix.att_U] * pc.annotations;
  pc.projected.colwise() += p.tensors[ix.att_b].col(0);
  pc.alpha.resize(n, T);
  pc.context.resize(2 * H, T);
  pc.readout.resize(H, T);
  pc.att_tanh.resize(static_cast<std::size_t>(T));
  for (Index t = 0; t < T; ++t) {
    pc.alpha.col(t) = attend(p, ix, pc.projected, Q.col(t), pc.att_tanh[static_cast<std::size_t>(t)]);
    pc.context.col(t) = pc.annotations * pc.alpha.col(t);
    pc.readout.col(t) = readout(p, ix, Q.col(t), pc.context.col(t));
  }
  MatrixXd logits = p.tensors[ix.proj_W] * pc.readout;
  logits.colwise() += p.tensors[ix.proj_b].col(0);
  pc.probs.resize(logits.rows(), T);
  pc.nll = 0;
  for (Index t = 0; t < T; ++t) {
    pc.probs.col(t) = softmax(logits.col(t));
    pc.nll -= std::log(pc.probs(pc.dec_out[static_cast<std::size_t>(t)], t));
  }
  return pc;
}

void backward_pair(const ModelConfig& config, const LayoutIndex& ix, const ModelParams& p, const PairCache& pc,
                   double scale, ModelParams& g) {
  const Index H = static_cast<Index>(config.hidden_dim);
  const Index n = pc.annotations.cols();
  const Index T = pc.probs.cols();
  const MatrixXd& Q = pc.dec.back().h;

  MatrixXd dlogits = pc.probs;
  for (Index t = 0; t < T; ++t) dlogits(pc.dec_out[static_cast<std::size_t>(t)], t) -= 1.0;
  dlogits *= scale;
  g.tensors[ix.proj_W].noalias() += dlogits * pc.readout.transpose();
  g.tensors[ix.proj_b].col(0) += dlogits.rowwise().sum();
  const MatrixXd dz = p.tensors[ix.proj_W].transpose() * dlogits;

  const MatrixXd dpre = dz.cwiseProduct((1.0 - pc.readout.array().square()).matrix());
  MatrixXd qc(3 * H, T);
  qc.topRows(H) = Q;
  qc.bottomRows(2 * H) = pc.context;
  g.tensors[ix.out_W].noalias() += dpre * qc.transpose();
  g.tensors[ix.out_b].col(0) += dpre.rowwise().sum();
  const MatrixXd dqc = p.tensors[ix.out_W].transpose() * dpre;
  MatrixXd dq = dqc.topRows(H);
  const MatrixXd dctx = dqc.bottomRows(2 * H);

  MatrixXd dann = MatrixXd::Zero(2 * H, n);
  MatrixXd dproj = MatrixXd::Zero(H, n);
  const VectorXd& v = p.tensors[ix.att_v].col(0);
  for (Index t = 0; t < T; ++t) {
    const auto alpha = pc.alpha.col(t);
    const MatrixXd& K = pc.att_tanh[static_cast<std::size_t>(t)];
    const VectorXd dalpha = pc.annotations.transpose() * dctx.col(t);
    const double mean = alpha.dot(dalpha);
    const VectorXd de = alpha.cwiseProduct((dalpha.array() - mean).matrix());
    g.tensors[ix.att_v].col(0).noalias() += K * de;
    const MatrixXd dk = (v * de.transpose()).cwiseProduct((1.0 - K.array().square()).matrix());
    const VectorXd dquery = dk.rowwise().sum();
    g.tensors[ix.att_W].noalias() += dquery * Q.col(t).transpose();
    g.tensors[ix.att_b].col(0) += dquery;
    dq.col(t).noalias() += p.tensors[ix.att_W].transpose() * dquery;
    dproj += dk;
    dann.noalias() += dctx.col(t) * alpha.transpose();
  }
  g.tensors[ix.att_U].noalias() += dproj * pc.annotations.transpose();
  dann.noalias() += p.tensors[ix.att_U].transpose() * dproj;

  VectorXd dmean = VectorXd::Zero(2 * H);
  MatrixXd dh = std::move(dq);
  for (std::size_t l = config.decoder_layers; l-- > 0;) {
    VectorXd dh0, dc0;
    MatrixXd dx = backward_sequence(config.cell, rnn_weights(p, ix.dec[l]), pc.dec[l], dh,
                                    rnn_grads(g, ix.dec[l]), dh0, dc0);
    const VectorXd& s0 = pc.init_state[l];
    const VectorXd da = dh0.cwiseProduct((1.0 - s0.array().square()).matrix());
    g.tensors[ix.init_W[l]].noalias() += da * pc.mean_annotation.transpose();
    g.tensors[ix.init_b[l]].col(0) += da;
    dmean.noalias() += p.tensors[ix.init_W[l]].transpose() * da;
    if (l > 0) {
      dh = std::move(dx);
    } else {
      auto& emb = g.tensors[ix.tgt_emb];
      for (Index t = 0; t < T; ++t) emb.col(pc.dec_in[static_cast<std::size_t>(t)]) += dx.col(t);
    }
  }
  dann.colwise() += dmean / static_cast<double>(n);

  MatrixXd dout = std::move(dann);
  for (std::size_t l = config.encoder_layers; l-- > 0;) {
    VectorXd dh0, dc0;
    MatrixXd dxf = backward_sequence(config.cell, rnn_weights(p, ix.enc_fwd[l]), pc.enc_fwd[l], dout.topRows(H),
                                     rnn_grads(g, ix.enc_fwd[l]), dh0, dc0);
    MatrixXd dxb = backward_sequence(config.cell, rnn_weights(p, ix.enc_bwd[l]), pc.enc_bwd[l],
                                     dout.bottomRows(H), rnn_grads(g, ix.enc_bwd[l]), dh0, dc0);
    dxf += dxb;
    if (l > 0) {
      dout = std::move(dxf);
    } else {
      auto& emb = g.tensors[ix.src_emb];
      for (Index j = 0; j < n; ++j) emb.col(pc.source[static_cast<std::size_t>(j)]) += dxf.col(j);
    }
  }
}

}  // namespace

ForwardResult forward_loss(const ModelConfig& config, const ModelParams& params,
                           std::span<const EncodedPair> batch) {
  const LayoutIndex ix = make_layout(config);
  ForwardResult result;
  result.cache.config = &config;
  result.cache.params = &params;
  double total = 0;
  for (const auto& pair : batch) {
    validate_ids(config, pair);
    result.cache.pairs.push_back(forward_pair(config, ix, params, pair));
    total += result.cache.pairs.back().nll;
    result.target_tokens += pair.target.size() + 1;
  }
  result.cache.target_tokens = result.target_tokens;
  result.loss = result.target_tokens ? total / static_cast<double>(result.target_tokens) : 0.0;
  return result;
}

Gradients backward(const BatchCache& cache) {
  const ModelConfig& config = *cache.config;
  const LayoutIndex ix = make_layout(config);
  Gradients g = ModelParams::zeros_like(config);
  if (cache.target_tokens == 0) return g;
  const double scale = 1.0 / static_cast<double>(cache.target_tokens);
  for (const auto& pc : cache.pairs) backward_pair(config, ix, *cache.params, pc, scale, g);
  return g;
}

CorpusLoss corpus_loss(const ModelCheckpoint& checkpoint, std::span<const EncodedPair> pairs) {
  const LayoutIndex ix = make_layout(checkpoint.config);
  CorpusLoss out;
  for (const auto& pair : pairs) {
    validate_ids(checkpoint.config, pair);
    out.total_nll += forward_pair(checkpoint.config, ix, checkpoint.params, pair).nll;
    out.tokens += pair.target.size() + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimization

namespace {

void ensure_optimizer(OptimizerState& state, OptimizerType type, const ModelParams& params) {
  const std::size_t slot_count = type == OptimizerType::kSgd ? 0 : type == OptimizerType::kAdagrad ? 1 : 2;
  bool fresh = state.type != type || state.slots.size() != slot_count;
  for (const auto& slot : state.slots) fresh = fresh || slot.size() != params.tensors.size();
  if (!fresh) return;
  state = OptimizerState{type, 0, {}};
  for (std::size_t s = 0; s < slot_count; ++s) {
    std::vector<MatrixXd> slot;
    for (const auto& t : params.tensors) slot.push_back(MatrixXd::Zero(t.rows(), t.cols()));
    state.slots.push_back(std::move(slot));
  }
}

void apply_update(ModelCheckpoint& ckpt, Gradients& g, const TrainHyper& hyper) {
  if (hyper.clip_norm > 0) {
    double sq = 0;
    for (const auto& t : g.tensors) sq += t.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > hyper.clip_norm) {
      const double f = hyper.clip_norm / norm;
      for (auto& t : g.tensors) t *= f;
    }
  }
  auto& opt = ckpt.optimizer;
  ++opt.steps;
  auto& params = ckpt.params.tensors;
  const double lr = hyper.learning_rate;
  switch (opt.type) {
    case OptimizerType::kSgd:
      for (std::size_t i = 0; i < params.size(); ++i) params[i].noalias() -= lr * g.tensors[i];
      break;
    case OptimizerType::kAdagrad:
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& acc = opt.slots[0][i];
        acc.array() += g.tensors[i].array().square();
        params[i].array() -= lr * g.tensors[i].array() / (acc.array().sqrt() + hyper.epsilon);
      }
      break;
    case OptimizerType::kAdam: {
      const double b1 = hyper.adam_beta1, b2 = hyper.adam_beta2;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(opt.steps));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(opt.steps));
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = opt.slots[0][i];
        auto& v = opt.slots[1][i];
        m = b1 * m + (1.0 - b1) * g.tensors[i];
        v.array() = b2 * v.array() + (1.0 - b2) * g.tensors[i].array().square();
        params[i].array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + hyper.epsilon);
      }
      break;
    }
  }
}

void append_provenance(ModelCheckpoint& ckpt, const std::string& domain, std::size_t steps) {
  if (!ckpt.provenance.empty() && ckpt.provenance.back().domain == domain) {
    ckpt.provenance.back().epochs += 1;
    ckpt.provenance.back().steps += steps;
  } else {
    ckpt.provenance.push_back({domain, 1, steps});
  }
}

}  // namespace

ModelCheckpoint train_epoch(ModelCheckpoint ckpt, const EncodedCorpus& corpus, const TrainHyper& hyper,
                            EpochStats* stats, const FeedObserver& observer) {
  if (hyper.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(hyper.learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  for (const auto& p : corpus.pairs) validate_ids(ckpt.config, p);
  ensure_optimizer(ckpt.optimizer, hyper.optimizer, ckpt.params);

  SplitMix64 stream(ckpt.rng_state);
  const std::uint64_t shuffle_seed = mix_seed(stream.next(), hyper.seed);
  ckpt.rng_state = stream.state();

  std::vector<std::size_t> order(corpus.pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  SplitMix64 shuffler(shuffle_seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffler.below(i)]);

  EpochStats local;
  double total_nll = 0;
  std::vector<EncodedPair> batch;
  for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
    batch.clear();
    for (std::size_t k = start; k < std::min(order.size(), start + hyper.batch_size); ++k) {
      batch.push_back(corpus.pairs[order[k]]);
      if (observer) observer(batch.back());
    }
    ForwardResult fr = forward_loss(ckpt.config, ckpt.params, batch);
    if (!std::isfinite(fr.loss)) {
      throw DivergenceError("non-finite training loss on domain " + corpus.domain,
                            static_cast<std::size_t>(ckpt.optimizer.steps) + 1);
    }
    Gradients g = backward(fr.cache);
    apply_update(ckpt, g, hyper);
    total_nll += fr.loss * static_cast<double>(fr.target_tokens);
    local.target_tokens += fr.target_tokens;
    ++local.steps;
  }
  if (!ckpt.params.all_finite()) {
    throw DivergenceError("non-finite parameters on domain " + corpus.domain,
                          static_cast<std::size_t>(ckpt.optimizer.steps));
  }
  local.mean_loss = local.target_tokens ? total_nll / static_cast<double>(local.target_tokens) : 0.0;
  append_provenance(ckpt, corpus.domain, local.steps);
  round_to_fp32(ckpt);
  if (stats) *stats = local;
  return ckpt;
}

// ---------------------------------------------------------------------------
// Inference

Translator::Translator(const ModelCheckpoint& checkpoint)
    : config_(&checkpoint.config), params_(&checkpoint.params) {}

EncodedSource Translator::encode(const std::vector<std::int32_t>& source) const {
  const LayoutIndex ix = make_layout(*config_);
  std::vector<std::int32_t> ids = source;
  ids.push_back(Vocabulary::kEos);
  validate_ids(*config_, EncodedPair{ids, {}});
  EncodedSource src;
  src.annotations = run_encoder(*config_, ix, *params_, ids, nullptr, nullptr);
  src.projected = params_->tensors[ix.att_U] * src.annotations;
  src.projected.colwise() += params_->tensors[ix.att_b].col(0);
  return src;
}

DecoderState Translator::initial_state(const EncodedSource& src) const {
  const LayoutIndex ix = make_layout(*config_);
  const VectorXd mean = src.annotations.rowwise().mean();
  DecoderState st;
  for (std::size_t l = 0; l < config_->decoder_layers; ++l) {
    st.h.push_back(init_decoder_state(*params_, ix, l, mean));
    if (config_->cell == CellType::kLstm) st.c.push_back(VectorXd::Zero(static_cast<Index>(config_->hidden_dim)));
  }
  return st;
}

VectorXd Translator::step(const EncodedSource& src, DecoderState& state, std::int32_t prev_token,
                          VectorXd* attention) const {
  const LayoutIndex ix = make_layout(*config_);
  const auto& p = *params_;
  if (prev_token < 0 || static_cast<std::size_t>(prev_token) >= config_->target_vocab) {
    throw VocabularyError("target id " + std::to_string(prev_token) + " outside vocabulary");
  }
  VectorXd x = p.tensors[ix.tgt_emb].col(prev_token);
  VectorXd gates, rh, h, c;
  const VectorXd none;
  for (std::size_t l = 0; l < config_->decoder_layers; ++l) {
    const auto w = rnn_weights(p, ix.dec[l]);
    const VectorXd wx = w.W * x + w.b.col(0);
    const bool lstm = config_->cell == CellType::kLstm;
    cell_step(config_->cell, w.U, wx, state.h[l], lstm ? state.c[l] : none, gates, rh, h, c);
    state.h[l] = h;
    if (lstm) state.c[l] = c;
    x = h;
  }
  MatrixXd k;
  const VectorXd alpha = attend(p, ix, src.projected, x, k);
  if (attention) *attention = alpha;
  const VectorXd context = src.annotations * alpha;
  const VectorXd z = readout(p, ix, x, context);
  VectorXd logits = p.tensors[ix.proj_W] * z + p.tensors[ix.proj_b].col(0);
  return softmax(logits);
}

namespace {

struct SingleModelScorer {
  struct State {
    DecoderState decoder;
  };
  const Translator& translator;
  const EncodedSource& source;

  State initial() { return State{translator.initial_state(source)}; }
  VectorXd advance(State& s, std::int32_t prev) {
    return translator.step(source, s.decoder, prev).array().log().matrix();
  }
};

}  // namespace

Hypothesis decode_beam(const ModelCheckpoint& checkpoint, const std::vector<std::int32_t>& source,
                       std::size_t beam, std::size_t max_len, std::vector<Hypothesis>* all) {
  if (beam < 1) throw ConfigError("beam must be >= 1");
  Translator translator(checkpoint);
  const EncodedSource src = translator.encode(source);
  SingleModelScorer scorer{translator, src};
  return beam_search(scorer, beam, max_len, all);
}

}  // namespace mdnmt
