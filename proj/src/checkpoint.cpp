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

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mdnmt/error.hpp"
#include "mdnmt/nmt.hpp"

namespace mdnmt {

namespace {

constexpr char kMagic[8] = {'M', 'D', 'N', 'M', 'T', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void put_tensor(const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) put(static_cast<float>(m.data()[i]));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Eigen::MatrixXd get_tensor(Eigen::Index rows, Eigen::Index cols) {
    need(static_cast<std::size_t>(rows * cols) * sizeof(float));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(get<float>());
    return m;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointTruncatedError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelCheckpoint& ckpt) {
  const auto layout = parameter_layout(ckpt.config);
  if (ckpt.params.tensors.size() != layout.size()) throw CheckpointShapeError("parameter count does not match config");
  Writer w;
  for (char c : kMagic) w.put(c);
  w.put(kCheckpointVersion);
  const auto& c = ckpt.config;
  w.put(static_cast<std::uint32_t>(c.cell));
  for (std::size_t v : {c.source_vocab, c.target_vocab, c.embedding_dim, c.hidden_dim, c.encoder_layers,
                        c.decoder_layers}) {
    w.put(static_cast<std::uint64_t>(v));
  }
  w.put(static_cast<std::uint64_t>(c.seed));
  w.put(static_cast<std::uint32_t>(ckpt.optimizer.type));
  w.put(static_cast<std::uint64_t>(ckpt.optimizer.steps));
  w.put(static_cast<std::uint32_t>(ckpt.optimizer.slots.size()));
  w.put(static_cast<std::uint32_t>(layout.size()));
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& t = ckpt.params.tensors[i];
    if (t.rows() != layout[i].rows || t.cols() != layout[i].cols) {
      throw CheckpointShapeError("tensor " + layout[i].name + " has the wrong shape");
    }
    w.put_string(layout[i].name);
    w.put(static_cast<std::uint64_t>(t.rows()));
    w.put(static_cast<std::uint64_t>(t.cols()));
  }
  for (const auto& t : ckpt.params.tensors) w.put_tensor(t);
  for (const auto& slot : ckpt.optimizer.slots) {
    if (slot.size() != layout.size()) throw CheckpointShapeError("optimizer slot does not match parameters");
    for (std::size_t i = 0; i < slot.size(); ++i) {
      if (slot[i].rows() != layout[i].rows || slot[i].cols() != layout[i].cols) {
        throw CheckpointShapeError("optimizer slot for " + layout[i].name + " has the wrong shape");
      }
      w.put_tensor(slot[i]);
    }
  }
  w.put(static_cast<std::uint32_t>(ckpt.provenance.size()));
  for (const auto& rec : ckpt.provenance) {
    w.put_string(rec.domain);
    w.put(rec.epochs);
    w.put(rec.steps);
  }
  w.put(ckpt.rng_state);
  return w.take();
}

ModelCheckpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint32_t) ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointVersionError("not an mdnmt checkpoint (bad magic)");
  }
  for (std::size_t i = 0; i < sizeof(kMagic); ++i) r.get<char>();
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version));
  }
  ModelCheckpoint ckpt;
  auto& c = ckpt.config;
  const auto cell = r.get<std::uint32_t>();
  if (cell > 1) throw CheckpointVersionError("unknown cell type " + std::to_string(cell));
  c.cell = static_cast<CellType>(cell);
  c.source_vocab = r.get<std::uint64_t>();
  c.target_vocab = r.get<std::uint64_t>();
  c.embedding_dim = r.get<std::uint64_t>();
  c.hidden_dim = r.get<std::uint64_t>();
  c.encoder_layers = r.get<std::uint64_t>();
  c.decoder_layers = r.get<std::uint64_t>();
  c.seed = r.get<std::uint64_t>();
  std::vector<TensorSpec> layout;
  try {
    layout = parameter_layout(c);
  } catch (const ConfigError& e) {
    throw CheckpointShapeError(std::string("invalid model config in checkpoint: ") + e.what());
  }
  const auto opt_type = r.get<std::uint32_t>();
  if (opt_type > 2) throw CheckpointVersionError("unknown optimizer type " + std::to_string(opt_type));
  ckpt.optimizer.type = static_cast<OptimizerType>(opt_type);
  ckpt.optimizer.steps = r.get<std::uint64_t>();
  const auto slot_count = r.get<std::uint32_t>();
  const std::uint32_t expected_slots = opt_type == 0 ? 0 : opt_type == 1 ? 1 : 2;
  if (slot_count != expected_slots && slot_count != 0) {
    throw CheckpointShapeError("optimizer slot count " + std::to_string(slot_count) + " does not match optimizer");
  }
  const auto tensor_count = r.get<std::uint32_t>();
  if (tensor_count != layout.size()) {
    throw CheckpointShapeError("checkpoint has " + std::to_string(tensor_count) + " tensors, config implies " +
                               std::to_string(layout.size()));
  }
  for (const auto& spec : layout) {
    const std::string name = r.get_string();
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (name != spec.name || rows != static_cast<std::uint64_t>(spec.rows) ||
        cols != static_cast<std::uint64_t>(spec.cols)) {
      throw CheckpointShapeError("tensor " + name + " (" + std::to_string(rows) + "x" + std::to_string(cols) +
                                 ") does not match expected " + spec.name);
    }
  }
  for (const auto& spec : layout) ckpt.params.tensors.push_back(r.get_tensor(spec.rows, spec.cols));
  for (std::uint32_t s = 0; s < slot_count; ++s) {
    std::vector<Eigen::MatrixXd> slot;
    for (const auto& spec : layout) slot.push_back(r.get_tensor(spec.rows, spec.cols));
    ckpt.optimizer.slots.push_back(std::move(slot));
  }
  const auto records = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < records; ++i) {
    ProvenanceRecord rec;
    rec.domain = r.get_string();
    rec.epochs = r.get<std::uint64_t>();
    rec.steps = r.get<std::uint64_t>();
    ckpt.provenance.push_back(std::move(rec));
  }
  ckpt.rng_state = r.get<std::uint64_t>();
  if (!r.done()) throw CheckpointShapeError("trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace mdnmt
