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

#include "mdnmt/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <iostream>
#include <sstream>
#include <string_view>

#include "CLI11.hpp"
#include "json.hpp"
#include "mdnmt/error.hpp"
#include "mdnmt/eval.hpp"
#include "mdnmt/selection.hpp"
#include "mdnmt/subword.hpp"
#include "mdnmt/text.hpp"
#include "mdnmt/workspace.hpp"

namespace mdnmt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kSelectedSuffix = "_selected";
const char* const kSplits[] = {"train", "dev", "test"};

[[noreturn]] void bad(const std::string& where, const std::string& msg) { throw ConfigError(where + ": " + msg); }

void check_keys(const json& j, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) bad(where, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      bad(where, "unknown key \"" + it.key() + "\"");
    }
  }
}

std::uint64_t as_uint(const json& j, const std::string& where) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return j.get<std::uint64_t>();
  bad(where, "expected a non-negative integer");
}

double as_double(const json& j, const std::string& where) {
  if (!j.is_number()) bad(where, "expected a number");
  return j.get<double>();
}

bool as_bool(const json& j, const std::string& where) {
  if (!j.is_boolean()) bad(where, "expected true or false");
  return j.get<bool>();
}

std::string as_string(const json& j, const std::string& where) {
  if (!j.is_string()) bad(where, "expected a string");
  return j.get<std::string>();
}

const json& as_array(const json& j, const std::string& where) {
  if (!j.is_array()) bad(where, "expected an array");
  return j;
}

// Calls f(value, "section.key") when the key is present.
template <class F>
void with(const json& obj, const std::string& section, const char* key, F&& f) {
  if (auto it = obj.find(key); it != obj.end()) f(*it, section + "." + key);
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  return (p.is_absolute() ? p : base / p).lexically_normal();
}

bool valid_domain_name(const std::string& name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
}

SplitFiles parse_split(const json& j, const std::string& where, const fs::path& base) {
  check_keys(j, where, {"source", "target"});
  if (!j.contains("source") || !j.contains("target")) bad(where, "needs \"source\" and \"target\"");
  return {resolve(base, as_string(j["source"], where + ".source")), resolve(base, as_string(j["target"], where + ".target"))};
}

OptimizerType parse_optimizer(const std::string& s, const std::string& where) {
  if (s == "sgd") return OptimizerType::kSgd;
  if (s == "adagrad") return OptimizerType::kAdagrad;
  if (s == "adam") return OptimizerType::kAdam;
  bad(where, "expected sgd, adagrad or adam");
}

WeightMode parse_mode(const std::string& s, const std::string& where) {
  if (s == "balanced") return WeightMode::kBalanced;
  if (s == "weighted") return WeightMode::kWeighted;
  if (s == "grid") return WeightMode::kGrid;
  bad(where, "expected balanced, weighted or grid");
}

void parse_synthetic(const json& j, RunConfig& c) {
  const std::string w = "synthetic";
  check_keys(j, w, {"names", "dev_size", "test_size", "shared_vocab_size", "per_domain_lexicon_size",
                    "sentence_length_range", "pair_counts", "lexicon_rate", "foreign_rate", "in_domain_share",
                    "near_share", "held_out_count", "held_out_mix"});
  SyntheticDomains s;
  if (!j.contains("pair_counts")) bad(w, "missing \"pair_counts\"");
  for (const auto& v : as_array(j["pair_counts"], w + ".pair_counts")) {
    s.spec.pair_counts.push_back(as_uint(v, w + ".pair_counts"));
  }
  s.spec.domain_count = s.spec.pair_counts.size();
  with(j, w, "names", [&](const json& v, const std::string& k) {
    for (const auto& n : as_array(v, k)) s.names.push_back(as_string(n, k));
  });
  if (s.names.empty()) {
    for (std::size_t d = 0; d < s.spec.domain_count; ++d) s.names.push_back("dom" + std::to_string(d));
  }
  if (s.names.size() != s.spec.domain_count) bad(w, "names and pair_counts differ in length");
  with(j, w, "dev_size", [&](const json& v, const std::string& k) { s.dev_size = as_uint(v, k); });
  with(j, w, "test_size", [&](const json& v, const std::string& k) { s.test_size = as_uint(v, k); });
  with(j, w, "shared_vocab_size", [&](const json& v, const std::string& k) { s.spec.shared_vocab_size = as_uint(v, k); });
  with(j, w, "per_domain_lexicon_size",
       [&](const json& v, const std::string& k) { s.spec.per_domain_lexicon_size = as_uint(v, k); });
  with(j, w, "sentence_length_range", [&](const json& v, const std::string& k) {
    if (!v.is_array() || v.size() != 2) bad(k, "expected [min, max]");
    s.spec.sentence_length_range = {as_uint(v[0], k), as_uint(v[1], k)};
  });
  with(j, w, "lexicon_rate", [&](const json& v, const std::string& k) { s.spec.lexicon_rate = as_double(v, k); });
  with(j, w, "foreign_rate", [&](const json& v, const std::string& k) { s.spec.foreign_rate = as_double(v, k); });
  with(j, w, "in_domain_share", [&](const json& v, const std::string& k) {
    for (const auto& x : as_array(v, k)) s.spec.in_domain_share.push_back(as_double(x, k));
  });
  with(j, w, "near_share", [&](const json& v, const std::string& k) { s.spec.near_share = as_double(v, k); });
  with(j, w, "held_out_count", [&](const json& v, const std::string& k) { s.spec.held_out_count = as_uint(v, k); });
  with(j, w, "held_out_mix", [&](const json& v, const std::string& k) { s.spec.held_out_mix = as_double(v, k); });
  s.spec.seed = c.seed;
  s.spec.validate();
  c.synthetic = std::move(s);
}

Stage parse_stage(const json& j, const std::string& w) {
  check_keys(j, w, {"domains", "epochs", "learning_rate", "reset_optimizer"});
  Stage st;
  if (!j.contains("domains")) bad(w, "missing \"domains\"");
  for (const auto& d : as_array(j["domains"], w + ".domains")) st.domains.emplace_back(as_string(d, w + ".domains"));
  with(j, w, "epochs", [&](const json& v, const std::string& k) { st.epochs = as_uint(v, k); });
  with(j, w, "learning_rate", [&](const json& v, const std::string& k) { st.overrides.learning_rate = as_double(v, k); });
  with(j, w, "reset_optimizer",
       [&](const json& v, const std::string& k) { st.overrides.reset_optimizer = as_bool(v, k); });
  return st;
}

void parse_train(const json& j, RunConfig& c) {
  const std::string w = "train";
  check_keys(j, w, {"name", "optimizer", "learning_rate", "batch_size", "clip_norm", "adam_beta1", "adam_beta2",
                    "epsilon", "eval_every", "dev_beam", "select_by", "dev_domains", "plan"});
  TrainConfig& t = c.train;
  with(j, w, "name", [&](const json& v, const std::string& k) {
    t.name = as_string(v, k);
    if (!valid_domain_name(t.name)) bad(k, "use letters, digits, '_' and '-' only");
  });
  with(j, w, "optimizer", [&](const json& v, const std::string& k) { t.hyper.optimizer = parse_optimizer(as_string(v, k), k); });
  with(j, w, "learning_rate", [&](const json& v, const std::string& k) { t.hyper.learning_rate = as_double(v, k); });
  with(j, w, "batch_size", [&](const json& v, const std::string& k) { t.hyper.batch_size = as_uint(v, k); });
  with(j, w, "clip_norm", [&](const json& v, const std::string& k) { t.hyper.clip_norm = as_double(v, k); });
  with(j, w, "adam_beta1", [&](const json& v, const std::string& k) { t.hyper.adam_beta1 = as_double(v, k); });
  with(j, w, "adam_beta2", [&](const json& v, const std::string& k) { t.hyper.adam_beta2 = as_double(v, k); });
  with(j, w, "epsilon", [&](const json& v, const std::string& k) { t.hyper.epsilon = as_double(v, k); });
  with(j, w, "eval_every", [&](const json& v, const std::string& k) { t.eval_every = as_uint(v, k); });
  with(j, w, "dev_beam", [&](const json& v, const std::string& k) { t.dev_beam = as_uint(v, k); });
  with(j, w, "select_by", [&](const json& v, const std::string& k) {
    const auto s = as_string(v, k);
    if (s == "bleu") t.select_by = SelectBy::kBleu;
    else if (s == "perplexity") t.select_by = SelectBy::kPerplexity;
    else bad(k, "expected bleu or perplexity");
  });
  with(j, w, "dev_domains", [&](const json& v, const std::string& k) {
    for (const auto& d : as_array(v, k)) t.dev_domains.push_back(as_string(d, k));
  });
  with(j, w, "plan", [&](const json& v, const std::string& k) {
    const auto& stages = as_array(v, k);
    for (std::size_t i = 0; i < stages.size(); ++i) {
      t.plan.stages.push_back(parse_stage(stages[i], k + "[" + std::to_string(i) + "]"));
    }
  });
  t.hyper.seed = c.seed;
  if (t.hyper.learning_rate <= 0) bad(w + ".learning_rate", "must be positive");
  if (t.hyper.batch_size < 1) bad(w + ".batch_size", "must be >= 1");
  if (t.eval_every < 1) bad(w + ".eval_every", "must be >= 1");
  if (t.dev_beam < 1) bad(w + ".dev_beam", "must be >= 1");
  if (!t.plan.stages.empty()) t.plan.validate();
}

void parse_model(const json& j, RunConfig& c) {
  const std::string w = "model";
  check_keys(j, w, {"cell", "embedding_dim", "hidden_dim", "encoder_layers", "decoder_layers"});
  ModelConfig& m = c.model;
  with(j, w, "cell", [&](const json& v, const std::string& k) {
    const auto s = as_string(v, k);
    if (s == "gru") m.cell = CellType::kGru;
    else if (s == "lstm") m.cell = CellType::kLstm;
    else bad(k, "expected gru or lstm");
  });
  with(j, w, "embedding_dim", [&](const json& v, const std::string& k) { m.embedding_dim = as_uint(v, k); });
  with(j, w, "hidden_dim", [&](const json& v, const std::string& k) { m.hidden_dim = as_uint(v, k); });
  with(j, w, "encoder_layers", [&](const json& v, const std::string& k) { m.encoder_layers = as_uint(v, k); });
  with(j, w, "decoder_layers", [&](const json& v, const std::string& k) { m.decoder_layers = as_uint(v, k); });
  m.seed = c.seed;
}

void parse_ensemble(const json& j, RunConfig& c, const fs::path& base) {
  const std::string w = "ensemble";
  check_keys(j, w, {"members", "mode", "weights", "grid_step", "combination", "dev_domain"});
  EnsembleSpec& e = c.ensemble;
  with(j, w, "members", [&](const json& v, const std::string& k) {
    for (const auto& m : as_array(v, k)) {
      EnsembleMember member;
      if (m.is_string()) {
        member.checkpoint = m.get<std::string>();
      } else {
        check_keys(m, k, {"checkpoint", "target_vocab"});
        if (!m.contains("checkpoint")) bad(k, "member needs \"checkpoint\"");
        member.checkpoint = as_string(m["checkpoint"], k + ".checkpoint");
        with(m, k, "target_vocab",
             [&](const json& x, const std::string& kk) { member.target_vocab = resolve(base, as_string(x, kk)); });
      }
      e.members.push_back(std::move(member));
    }
  });
  with(j, w, "mode", [&](const json& v, const std::string& k) { e.mode = parse_mode(as_string(v, k), k); });
  with(j, w, "weights", [&](const json& v, const std::string& k) {
    for (const auto& x : as_array(v, k)) e.weights.push_back(as_double(x, k));
  });
  with(j, w, "grid_step", [&](const json& v, const std::string& k) { e.grid_step = as_double(v, k); });
  with(j, w, "combination", [&](const json& v, const std::string& k) {
    const auto s = as_string(v, k);
    if (s == "probability") e.combination = Combination::kProbability;
    else if (s == "log_linear") e.combination = Combination::kLogLinear;
    else bad(k, "expected probability or log_linear");
  });
  with(j, w, "dev_domain", [&](const json& v, const std::string& k) { e.dev_domain = as_string(v, k); });
}

// A plan may name "<domain>_selected" once selection is configured for <domain>.
bool plan_domain_resolvable(const RunConfig& c, const std::string& name) {
  if (c.has_domain(name)) return true;
  if (name.size() > kSelectedSuffix.size() && name.ends_with(kSelectedSuffix)) {
    const std::string base = name.substr(0, name.size() - kSelectedSuffix.size());
    return c.select.fractions.count(base) != 0;
  }
  return false;
}

void check_references(const RunConfig& c) {
  if (!c.in_domain.empty() && !c.has_domain(c.in_domain)) bad("in_domain", "unknown domain " + c.in_domain);
  for (const auto& d : c.train.dev_domains) {
    if (!c.has_domain(d)) bad("train.dev_domains", "unknown domain " + d);
  }
  for (const auto& st : c.train.plan.stages) {
    for (const auto& d : st.domains) {
      if (!plan_domain_resolvable(c, d.name())) bad("train.plan", "unknown domain " + d.name());
    }
  }
  if (!c.select.fractions.empty() && c.in_domain.empty()) bad("selection", "needs in_domain");
  for (const auto& [d, f] : c.select.fractions) {
    if (!c.has_domain(d)) bad("selection.fractions", "unknown domain " + d);
    if (d == c.in_domain) bad("selection.fractions", "cannot select from the in-domain corpus");
    SelectionConfig{f, c.select.bilingual}.validate();
  }
  if (!c.ensemble.dev_domain.empty() && !c.has_domain(c.ensemble.dev_domain)) {
    bad("ensemble.dev_domain", "unknown domain " + c.ensemble.dev_domain);
  }
}

std::vector<std::string> read_text_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!text::is_valid_utf8(line)) throw DecodeError(path.string(), lines.size() + 1);
    lines.push_back(std::move(line));
  }
  return lines;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::string corpus_side_text(const ParallelCorpus& c, bool source) {
  std::string out;
  for (const auto& p : c.pairs) out += text::join(source ? p.source : p.target) + "\n";
  return out;
}

// Checksums of everything prepare consumes, keyed by absolute path or by
// a pseudo-key for in-config inputs.
std::map<std::string, std::string> input_checksums(const RunConfig& c) {
  std::map<std::string, std::string> out;
  for (const auto& [name, fd] : c.files) {
    for (const auto* s : {&fd.train, &fd.dev, &fd.test}) {
      if (!*s) continue;
      for (const auto& p : {(*s)->source, (*s)->target}) {
        if (!fs::exists(p)) throw DataError("missing input file " + p.string());
        out[fs::absolute(p).lexically_normal().string()] = sha256_file(p);
      }
    }
  }
  json prep = {{"seed", c.seed},
               {"tokenize", c.prepare.tokenize},
               {"bpe_merges", c.prepare.bpe_merges},
               {"vocab_limit", c.prepare.vocab_limit},
               {"max_len", c.prepare.max_len},
               {"domain_tags", c.prepare.domain_tags}};
  out["config:prepare"] = sha256_string(prep.dump());
  if (c.synthetic) {
    const auto& s = *c.synthetic;
    json syn = {{"names", s.names},
                {"dev_size", s.dev_size},
                {"test_size", s.test_size},
                {"shared_vocab_size", s.spec.shared_vocab_size},
                {"per_domain_lexicon_size", s.spec.per_domain_lexicon_size},
                {"sentence_length_range", {s.spec.sentence_length_range.first, s.spec.sentence_length_range.second}},
                {"pair_counts", s.spec.pair_counts},
                {"lexicon_rate", s.spec.lexicon_rate},
                {"foreign_rate", s.spec.foreign_rate},
                {"in_domain_share", s.spec.in_domain_share},
                {"near_share", s.spec.near_share},
                {"held_out_count", s.spec.held_out_count},
                {"held_out_mix", s.spec.held_out_mix},
                {"seed", s.spec.seed}};
    out["config:synthetic"] = sha256_string(syn.dump());
  }
  return out;
}

Manifest load_manifest_or_empty(const RunConfig& c) {
  return fs::exists(manifest_path(c)) ? Manifest::load(manifest_path(c)) : Manifest{};
}

// Throws DataError unless prepare ran against the current inputs.
Manifest require_fresh(const RunConfig& c) {
  if (!fs::exists(manifest_path(c))) {
    throw DataError("workspace " + c.workspace.string() + " is not prepared; run prepare first");
  }
  Manifest m = Manifest::load(manifest_path(c));
  const auto now = input_checksums(c);
  for (const auto& [key, sum] : now) {
    auto it = m.inputs.find(key);
    if (it == m.inputs.end() || it->second != sum) {
      throw DataError("workspace is stale: " + key + " changed since prepare; run prepare again");
    }
  }
  for (const auto& [key, sum] : m.inputs) {
    if (!now.count(key)) throw DataError("workspace is stale: " + key + " is no longer an input; run prepare again");
  }
  return m;
}

void record(const RunConfig& c, Manifest& m, const std::vector<fs::path>& files) {
  for (const auto& f : files) m.artifacts[fs::relative(f, c.workspace).generic_string()] = sha256_file(f);
}

void write_checkpoint(const ModelCheckpoint& ckpt, const fs::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  write_if_changed(path, std::string(bytes.begin(), bytes.end()));
}

struct Prepared {
  BpeModel bpe;
  Vocabulary source_vocab;
  Vocabulary target_vocab;
};

Prepared load_prepared(const RunConfig& c) {
  return {BpeModel::load(c.workspace / "bpe.codes"), Vocabulary::load(c.workspace / "vocab.src"),
          Vocabulary::load(c.workspace / "vocab.tgt")};
}

ParallelCorpus load_split(const RunConfig& c, const std::string& domain, const std::string& split) {
  const auto src = data_path(c, domain, split, "src");
  const auto tgt = data_path(c, domain, split, "tgt");
  if (!fs::exists(src) || !fs::exists(tgt)) {
    throw DataError("no prepared " + split + " split for domain " + domain + " in " + c.workspace.string());
  }
  return load_corpus(src, tgt, DomainId(domain));
}

EncodedCorpus encode_corpus(const ParallelCorpus& corpus, const Prepared& p) {
  EncodedCorpus e;
  e.domain = corpus.domain.name();
  for (const auto& pair : corpus.pairs) e.pairs.push_back({p.source_vocab.encode(pair.source), p.target_vocab.encode(pair.target)});
  return e;
}

// The word-level view that selection scores: no tag, no BPE.
ParallelCorpus word_level(const ParallelCorpus& c) {
  ParallelCorpus out{c.domain, {}};
  for (const auto& p : c.pairs) {
    Sentence src = p.source;
    if (!src.empty() && is_domain_tag(src.front())) src.erase(src.begin());
    out.pairs.push_back({undo_bpe(src), undo_bpe(p.target)});
  }
  return out;
}

void check_model_fits(const ModelCheckpoint& ckpt, const Prepared& p, const fs::path& path) {
  if (ckpt.config.source_vocab != p.source_vocab.size() || ckpt.config.target_vocab != p.target_vocab.size()) {
    throw IncompatibleModelsError("checkpoint " + path.string() + " was trained with different vocabularies");
  }
}

// Raw line to source ids: tokenize, segment, tag.
std::vector<std::int32_t> source_ids(const RunConfig& c, const Prepared& p, const std::string& line,
                                     const std::string& domain) {
  Sentence s = c.prepare.tokenize ? tokenize(line) : text::split_whitespace(line);
  if (s.empty()) return {};
  s = p.bpe.apply(s);
  if (c.prepare.domain_tags) s.insert(s.begin(), domain_tag(DomainId(domain)));
  return p.source_vocab.encode(s);
}

std::vector<std::string> translate_lines(const RunConfig& c, const Prepared& p, const std::vector<std::string>& lines,
                                         const std::string& domain, const Decoder& decode) {
  std::vector<std::string> out;
  out.reserve(lines.size());
  for (const auto& line : lines) {
    const auto ids = source_ids(c, p, line, domain);
    out.push_back(ids.empty() ? std::string() : text::join(postprocess(p.target_vocab, decode(ids).tokens)));
  }
  return out;
}

std::string format_weights(const std::vector<double>& w) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < w.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.10g", w[i]);
    out += (i ? "," : "") + std::string(buf);
  }
  return out;
}

}  // namespace

std::vector<std::string> RunConfig::domain_names() const {
  std::vector<std::string> out;
  for (const auto& [name, fd] : files) out.push_back(name);
  if (synthetic) out.insert(out.end(), synthetic->names.begin(), synthetic->names.end());
  std::sort(out.begin(), out.end());
  return out;
}

bool RunConfig::has_domain(const std::string& name) const {
  if (files.count(name)) return true;
  return synthetic && std::find(synthetic->names.begin(), synthetic->names.end(), name) != synthetic->names.end();
}

RunConfig parse_run_config(const std::string& json_text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config", {"workspace", "seed", "in_domain", "domains", "synthetic", "prepare", "model", "train",
                           "selection", "ensemble", "decode"});
  RunConfig c;
  c.config_sha256 = sha256_string(json_text);
  if (!j.contains("workspace")) bad("config", "missing \"workspace\"");
  c.workspace = resolve(base_dir, as_string(j["workspace"], "workspace"));
  if (!j.contains("seed")) bad("config", "missing \"seed\"");
  c.seed = as_uint(j["seed"], "seed");
  with(j, "config", "in_domain", [&](const json& v, const std::string& k) { c.in_domain = as_string(v, k); });

  with(j, "config", "domains", [&](const json& v, const std::string& k) {
    if (!v.is_object()) bad(k, "expected an object");
    for (auto it = v.begin(); it != v.end(); ++it) {
      const std::string w = k + "." + it.key();
      check_keys(*it, w, {"train", "dev", "test"});
      FileDomain fd;
      with(*it, w, "train", [&](const json& s, const std::string& kk) { fd.train = parse_split(s, kk, base_dir); });
      with(*it, w, "dev", [&](const json& s, const std::string& kk) { fd.dev = parse_split(s, kk, base_dir); });
      with(*it, w, "test", [&](const json& s, const std::string& kk) { fd.test = parse_split(s, kk, base_dir); });
      if (!fd.train && !fd.dev && !fd.test) bad(w, "needs at least one of train, dev, test");
      c.files[it.key()] = std::move(fd);
    }
  });
  with(j, "config", "synthetic", [&](const json& v, const std::string&) { parse_synthetic(v, c); });
  std::vector<std::string> names = c.domain_names();
  if (names.empty()) bad("config", "no domains registered");
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!valid_domain_name(names[i])) bad("domains", "bad domain name \"" + names[i] + "\"");
    if (i > 0 && names[i] == names[i - 1]) bad("domains", "domain " + names[i] + " is registered twice");
    if (names[i].ends_with(kSelectedSuffix)) bad("domains", "the suffix _selected is reserved");
  }

  with(j, "config", "prepare", [&](const json& v, const std::string& k) {
    check_keys(v, k, {"tokenize", "bpe_merges", "vocab_limit", "max_len", "domain_tags"});
    with(v, k, "tokenize", [&](const json& x, const std::string& kk) { c.prepare.tokenize = as_bool(x, kk); });
    with(v, k, "bpe_merges", [&](const json& x, const std::string& kk) { c.prepare.bpe_merges = as_uint(x, kk); });
    with(v, k, "vocab_limit", [&](const json& x, const std::string& kk) { c.prepare.vocab_limit = as_uint(x, kk); });
    with(v, k, "max_len", [&](const json& x, const std::string& kk) { c.prepare.max_len = as_uint(x, kk); });
    with(v, k, "domain_tags", [&](const json& x, const std::string& kk) { c.prepare.domain_tags = as_bool(x, kk); });
  });
  c.model.seed = c.seed;
  with(j, "config", "model", [&](const json& v, const std::string&) { parse_model(v, c); });
  c.train.hyper.seed = c.seed;
  with(j, "config", "train", [&](const json& v, const std::string&) { parse_train(v, c); });
  with(j, "config", "selection", [&](const json& v, const std::string& k) {
    check_keys(v, k, {"fractions", "bilingual", "order"});
    with(v, k, "fractions", [&](const json& x, const std::string& kk) {
      if (!x.is_object()) bad(kk, "expected an object");
      for (auto it = x.begin(); it != x.end(); ++it) c.select.fractions[it.key()] = as_double(*it, kk + "." + it.key());
    });
    with(v, k, "bilingual", [&](const json& x, const std::string& kk) { c.select.bilingual = as_bool(x, kk); });
    with(v, k, "order", [&](const json& x, const std::string& kk) {
      c.select.order = as_uint(x, kk);
      if (c.select.order < 1) bad(kk, "must be >= 1");
    });
  });
  with(j, "config", "ensemble", [&](const json& v, const std::string&) { parse_ensemble(v, c, base_dir); });
  with(j, "config", "decode", [&](const json& v, const std::string& k) {
    check_keys(v, k, {"beam"});
    with(v, k, "beam", [&](const json& x, const std::string& kk) { c.beam = as_uint(x, kk); });
    if (c.beam < 1) bad(k + ".beam", "must be >= 1");
  });
  check_references(c);
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  const fs::path base = fs::absolute(path).parent_path();
  RunConfig c = parse_run_config(read_file(path), base);
  if (const char* ws = std::getenv(kWorkspaceEnv); ws && *ws) c.workspace = resolve(fs::current_path(), ws);
  return c;
}

fs::path data_path(const RunConfig& config, const std::string& domain, const std::string& split,
                   const std::string& side) {
  return config.workspace / "data" / (domain + "." + split + "." + side);
}

fs::path manifest_path(const RunConfig& config) { return config.workspace / "manifest.json"; }

void cmd_prepare(const RunConfig& c) {
  fs::create_directories(c.workspace / "data");
  WorkspaceLock lock(c.workspace);
  const auto inputs = input_checksums(c);

  // domain -> split -> corpus
  std::map<std::string, std::map<std::string, ParallelCorpus>> corpora;
  for (const auto& [name, fd] : c.files) {
    const std::optional<SplitFiles>* splits[] = {&fd.train, &fd.dev, &fd.test};
    for (std::size_t s = 0; s < 3; ++s) {
      if (!*splits[s]) continue;
      ParallelCorpus pc = load_corpus((*splits[s])->source, (*splits[s])->target, DomainId(name));
      if (c.prepare.tokenize) {
        for (auto& p : pc.pairs) {
          p.source = tokenize(text::join(p.source));
          p.target = tokenize(text::join(p.target));
        }
      }
      corpora[name][kSplits[s]] = std::move(pc);
    }
  }
  if (c.synthetic) {
    const auto& syn = *c.synthetic;
    SyntheticTaskSpec spec = syn.spec;
    for (auto& n : spec.pair_counts) n += syn.dev_size + syn.test_size;
    const auto domains = generate_synthetic_domains(spec);
    for (std::size_t d = 0; d < domains.size(); ++d) {
      const std::string& name = syn.names[d];
      auto& slot = corpora[name];
      for (const char* s : kSplits) slot[s].domain = DomainId(name);
      for (std::size_t i = 0; i < domains[d].pairs.size(); ++i) {
        const char* split = i < syn.dev_size ? "dev" : i < syn.dev_size + syn.test_size ? "test" : "train";
        slot[split].pairs.push_back(domains[d].pairs[i]);
      }
      for (const char* s : kSplits) {
        if (slot[s].empty()) slot.erase(s);
      }
    }
  }

  std::vector<Sentence> bpe_input;
  for (auto& [name, splits] : corpora) {
    if (auto it = splits.find("train"); it != splits.end()) {
      it->second = filter_by_length(it->second, c.prepare.max_len);
      for (const auto& p : it->second.pairs) {
        bpe_input.push_back(p.source);
        bpe_input.push_back(p.target);
      }
    }
  }
  const BpeModel bpe = learn_bpe(bpe_input, c.prepare.bpe_merges);

  std::vector<Sentence> src_train, tgt_train;
  std::vector<std::string> tags;
  for (auto& [name, splits] : corpora) {
    if (c.prepare.domain_tags) tags.push_back(domain_tag(DomainId(name)));
    for (auto& [split, corpus] : splits) {
      for (auto& p : corpus.pairs) {
        p.source = bpe.apply(p.source);
        p.target = bpe.apply(p.target);
      }
      if (c.prepare.domain_tags) corpus = augment_with_domain_tag(corpus);
      if (split == "train") {
        for (const auto& p : corpus.pairs) {
          src_train.push_back(p.source);
          tgt_train.push_back(p.target);
        }
      }
    }
  }
  const Vocabulary sv = build_vocab(src_train, c.prepare.vocab_limit, tags);
  const Vocabulary tv = build_vocab(tgt_train, c.prepare.vocab_limit);

  std::vector<fs::path> written;
  for (const auto& [name, splits] : corpora) {
    for (const auto& [split, corpus] : splits) {
      for (const bool source : {true, false}) {
        const auto path = data_path(c, name, split, source ? "src" : "tgt");
        write_if_changed(path, corpus_side_text(corpus, source));
        written.push_back(path);
      }
    }
  }
  bpe.save(c.workspace / "bpe.codes");
  sv.save(c.workspace / "vocab.src");
  tv.save(c.workspace / "vocab.tgt");
  written.push_back(c.workspace / "bpe.codes");
  written.push_back(c.workspace / "vocab.src");
  written.push_back(c.workspace / "vocab.tgt");

  Manifest m = load_manifest_or_empty(c);
  m.config_sha256 = c.config_sha256;
  m.inputs = inputs;
  record(c, m, written);
  m.save(manifest_path(c));
}

void cmd_select(const RunConfig& c) {
  Manifest m = require_fresh(c);
  WorkspaceLock lock(c.workspace);
  if (c.select.fractions.empty()) throw ConfigError("selection.fractions is empty");
  fs::create_directories(c.workspace / "selection");
  const ParallelCorpus in_words = word_level(load_split(c, c.in_domain, "train"));
  std::vector<fs::path> written;
  for (const auto& [name, fraction] : c.select.fractions) {
    const ParallelCorpus od = load_split(c, name, "train");
    const ParallelCorpus od_words = word_level(od);
    LmConfig lm;
    lm.order = c.select.order;
    const SelectionLms lms = train_selection_lms(in_words, od_words, lm);
    const auto ranking = rank_corpus(od_words, lms, c.select.bilingual);
    const ParallelCorpus chosen = select_fraction(od, ranking, fraction);
    const std::string out_name = name + std::string(kSelectedSuffix);
    for (const bool source : {true, false}) {
      const auto path = data_path(c, out_name, "train", source ? "src" : "tgt");
      write_if_changed(path, corpus_side_text(chosen, source));
      written.push_back(path);
    }
    std::ostringstream scores;
    write_scores(scores, ranking);
    const auto score_path = c.workspace / "selection" / (name + ".scores");
    write_if_changed(score_path, scores.str());
    written.push_back(score_path);
  }
  record(c, m, written);
  m.save(manifest_path(c));
}

RunReport cmd_train(const RunConfig& c, const TrainArgs& args, std::ostream* log) {
  Manifest m = require_fresh(c);
  WorkspaceLock lock(c.workspace);
  if (c.train.plan.stages.empty()) throw ConfigError("train.plan is empty");
  const Prepared p = load_prepared(c);

  TrainingData data;
  for (const auto& entry : fs::directory_iterator(c.workspace / "data")) {
    const std::string file = entry.path().filename().string();
    const std::string suffix = ".train.src";
    if (!file.ends_with(suffix)) continue;
    const std::string name = file.substr(0, file.size() - suffix.size());
    data[name] = encode_corpus(load_split(c, name, "train"), p);
  }
  std::vector<std::string> dev_names = c.train.dev_domains;
  if (dev_names.empty() && !c.in_domain.empty()) dev_names.push_back(c.in_domain);
  std::vector<EvalSet> dev;
  for (const auto& d : dev_names) {
    dev.push_back(make_eval_set(d + ".dev", load_split(c, d, "dev"), p.source_vocab, p.target_vocab));
  }

  ModelCheckpoint init;
  if (args.from_checkpoint) {
    init = load_checkpoint(*args.from_checkpoint);
    check_model_fits(init, p, *args.from_checkpoint);
  } else {
    ModelConfig mc = c.model;
    mc.source_vocab = p.source_vocab.size();
    mc.target_vocab = p.target_vocab.size();
    init = init_model(mc);
  }

  RunOptions options;
  options.hyper = c.train.hyper;
  options.eval_every = c.train.eval_every;
  options.dev_beam = c.train.dev_beam;
  options.select_by = c.train.select_by;
  if (log) {
    options.on_epoch = [log](const EpochRecord& r) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "stage %zu epoch %zu train_loss %.4f dev_ppl %.4f dev_bleu %.2f\n", r.stage,
                    r.epoch, r.train_loss, r.dev_ppl, 100 * r.dev_bleu);
      *log << buf << std::flush;
    };
  }
  RunResult result = run_plan(c.train.plan, std::move(init), data, dev, p.target_vocab, options);

  const std::string name = args.name.value_or(c.train.name);
  const fs::path dir = c.workspace / "models" / name;
  fs::create_directories(dir);
  write_checkpoint(result.best, dir / "best.ckpt");
  write_checkpoint(result.final, dir / "final.ckpt");
  result.report.best_checkpoint_path = fs::relative(dir / "best.ckpt", c.workspace).generic_string();
  std::ostringstream csv;
  write_report_csv(csv, result.report);
  write_if_changed(dir / "report.csv", csv.str());
  record(c, m, {dir / "best.ckpt", dir / "final.ckpt", dir / "report.csv"});
  m.save(manifest_path(c));
  return result.report;
}

std::vector<std::string> cmd_translate(const RunConfig& c, const TranslateArgs& args) {
  require_fresh(c);
  const Prepared p = load_prepared(c);
  const ModelCheckpoint ckpt = load_checkpoint(args.checkpoint);
  check_model_fits(ckpt, p, args.checkpoint);
  const std::size_t beam = args.beam.value_or(c.beam);
  const Decoder decode = [&](const std::vector<std::int32_t>& src) {
    return decode_beam(ckpt, src, beam, default_max_len(src.size()));
  };
  return translate_lines(c, p, read_text_lines(args.input), args.domain.value_or(c.in_domain), decode);
}

EnsembleOutput cmd_ensemble(const RunConfig& c, const EnsembleArgs& args) {
  Manifest m = require_fresh(c);
  WorkspaceLock lock(c.workspace);
  const Prepared p = load_prepared(c);

  std::vector<EnsembleMember> members = c.ensemble.members;
  if (!args.checkpoints.empty()) {
    members.clear();
    for (const auto& path : args.checkpoints) members.push_back({fs::absolute(path), std::nullopt});
  }
  if (members.empty()) throw ConfigError("ensemble has no members");
  std::vector<ModelCheckpoint> models;
  for (const auto& mem : members) {
    const fs::path path = resolve(c.workspace, mem.checkpoint);
    models.push_back(load_checkpoint(path));
    check_model_fits(models.back(), p, path);
    if (mem.target_vocab) {
      const Vocabulary v = Vocabulary::load(*mem.target_vocab);
      check_shared_vocabulary({&p.target_vocab, &v});
    }
  }
  std::vector<const ModelCheckpoint*> ptrs;
  for (const auto& model : models) ptrs.push_back(&model);

  const WeightMode mode = args.mode.value_or(c.ensemble.mode);
  const std::string dev_domain = c.ensemble.dev_domain.empty() ? c.in_domain : c.ensemble.dev_domain;
  const std::size_t beam = args.beam.value_or(c.beam);
  std::vector<fs::path> written;
  fs::create_directories(c.workspace / "ensemble");

  EnsembleConfig config;
  if (mode == WeightMode::kBalanced) {
    config = balanced_ensemble(ptrs);
  } else if (mode == WeightMode::kWeighted) {
    config = weighted_ensemble(ptrs, args.weights.empty() ? c.ensemble.weights : args.weights);
  } else {
    if (dev_domain.empty()) throw ConfigError("grid search needs ensemble.dev_domain or in_domain");
    const EvalSet dev = make_eval_set(dev_domain + ".dev", load_split(c, dev_domain, "dev"), p.source_vocab,
                                      p.target_vocab);
    const GridResult grid = grid_search_weights(ptrs, dev, p.target_vocab, c.ensemble.grid_step, beam,
                                                c.ensemble.combination);
    std::ostringstream audit;
    write_grid_audit(audit, grid);
    write_if_changed(c.workspace / "ensemble" / "grid.tsv", audit.str());
    json w = {{"weights", grid.weights}, {"dev_bleu", grid.bleu}};
    write_if_changed(c.workspace / "ensemble" / "weights.json", w.dump(2) + "\n");
    written.push_back(c.workspace / "ensemble" / "grid.tsv");
    written.push_back(c.workspace / "ensemble" / "weights.json");
    config = weighted_ensemble(ptrs, grid.weights);
  }
  config.combination = c.ensemble.combination;
  const Ensemble ensemble(config);
  const Decoder decode = [&](const std::vector<std::int32_t>& src) {
    return ensemble.decode(src, beam, default_max_len(src.size()));
  };

  EnsembleOutput out;
  out.weights = ensemble.weights();
  if (args.input) {
    out.translations = translate_lines(c, p, read_text_lines(*args.input), args.domain.value_or(dev_domain), decode);
  } else {
    if (dev_domain.empty()) throw ConfigError("ensemble needs --input, ensemble.dev_domain or in_domain");
    const EvalSet test = make_eval_set(dev_domain + ".test", load_split(c, dev_domain, "test"), p.source_vocab,
                                       p.target_vocab);
    const auto hyps = translate_set(test, p.target_vocab, decode);
    for (const auto& h : hyps) out.translations.push_back(text::join(h));
    const char* label = mode == WeightMode::kBalanced ? "ENS_b" : "ENS_w";
    const fs::path hyp_path = c.workspace / "ensemble" / (std::string(label) + "." + test.name + ".hyp");
    write_if_changed(hyp_path, join_lines(out.translations));
    written.push_back(hyp_path);
    out.row = ReportRow{label, test.name, bleu(hyps, test.references).bleu, 0};
  }
  record(c, m, written);
  m.save(manifest_path(c));
  return out;
}

std::vector<ReportRow> cmd_evaluate(const EvaluateArgs& args) {
  if (args.hypotheses.empty()) throw ConfigError("evaluate needs at least one hypothesis file");
  if (!args.systems.empty() && args.systems.size() != args.hypotheses.size()) {
    throw ConfigError("--system must be given once per --hyp");
  }
  std::vector<Sentence> refs;
  for (const auto& l : read_text_lines(args.reference)) refs.push_back(text::split_whitespace(l));
  BleuOptions options;
  options.lowercase = args.lowercase;
  std::vector<ReportRow> rows;
  for (std::size_t i = 0; i < args.hypotheses.size(); ++i) {
    std::vector<Sentence> hyps;
    for (const auto& l : read_text_lines(args.hypotheses[i])) hyps.push_back(text::split_whitespace(l));
    const std::string system = args.systems.empty() ? args.hypotheses[i].stem().string() : args.systems[i];
    rows.push_back({system, args.testset, bleu(hyps, refs, options).bleu, 0});
  }
  return rows;
}

std::vector<ReportRow> cmd_evaluate_models(const RunConfig& c, const EvaluateModelArgs& args) {
  require_fresh(c);
  if (args.checkpoints.empty()) throw ConfigError("evaluate needs at least one checkpoint");
  const Prepared p = load_prepared(c);
  const EvalSet set = make_eval_set(args.domain + "." + args.split, load_split(c, args.domain, args.split),
                                    p.source_vocab, p.target_vocab);
  const std::size_t beam = args.beam.value_or(c.beam);
  std::vector<ReportRow> rows;
  for (const auto& path : args.checkpoints) {
    const ModelCheckpoint ckpt = load_checkpoint(path);
    check_model_fits(ckpt, p, path);
    const Decoder decode = [&](const std::vector<std::int32_t>& src) {
      return decode_beam(ckpt, src, beam, default_max_len(src.size()));
    };
    const std::string system = (path.parent_path().filename() / path.stem()).generic_string();
    rows.push_back({system, set.name, decode_bleu(set, p.target_vocab, decode).bleu, perplexity(ckpt, set.pairs)});
  }
  return rows;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const DivergenceError*>(&e)) return kExitDivergence;
  if (dynamic_cast<const ConfigError*>(&e)) return kExitUsage;
  return kExitData;
}

namespace {

void emit(const std::vector<std::string>& lines, const std::string& output, std::ostream& out) {
  if (output.empty()) {
    for (const auto& l : lines) out << l << '\n';
  } else {
    write_if_changed(output, join_lines(lines));
  }
}

std::vector<std::string> format_rows(const std::vector<ReportRow>& rows) {
  std::vector<std::string> out;
  for (const auto& r : rows) out.push_back(format_report_row(r));
  return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-domain neural machine translation pipeline", "mdnmt"};
  app.require_subcommand(1);
  std::string config_path, output, input, domain, checkpoint, name, from_checkpoint, mode, reference, testset = "test",
                                                                                         split = "test";
  std::vector<std::string> checkpoints, hyps, systems;
  std::vector<double> weights;
  std::size_t beam = 0;
  bool lowercase = false;

  auto* prepare = app.add_subcommand("prepare", "Tokenize, learn and apply BPE, build vocabularies");
  prepare->add_option("-c,--config", config_path, "Run config (JSON)")->required();
  auto* select = app.add_subcommand("select", "Moore-Lewis selection per out-of-domain corpus");
  select->add_option("-c,--config", config_path, "Run config (JSON)")->required();
  auto* train = app.add_subcommand("train", "Run the configured training plan");
  train->add_option("-c,--config", config_path, "Run config (JSON)")->required();
  train->add_option("--name", name, "Model directory name (default: train.name)");
  train->add_option("--from-checkpoint", from_checkpoint, "Continue from this checkpoint");
  auto* translate = app.add_subcommand("translate", "Translate raw text with one checkpoint");
  translate->add_option("-c,--config", config_path, "Run config (JSON)")->required();
  translate->add_option("--checkpoint", checkpoint)->required();
  translate->add_option("-i,--input", input)->required();
  translate->add_option("-o,--output", output, "Default: stdout");
  translate->add_option("--domain", domain, "Domain tag to prepend (default: in_domain)");
  translate->add_option("--beam", beam);
  auto* ensemble = app.add_subcommand("ensemble", "Balanced, weighted or grid-tuned ensemble decoding");
  ensemble->add_option("-c,--config", config_path, "Run config (JSON)")->required();
  ensemble->add_option("--checkpoint", checkpoints, "Members (replaces ensemble.members)");
  ensemble->add_option("--mode", mode)->check(CLI::IsMember({"balanced", "weighted", "grid"}));
  ensemble->add_option("--weights", weights)->delimiter(',');
  ensemble->add_option("-i,--input", input, "Raw text (default: test split of the dev domain)");
  ensemble->add_option("-o,--output", output, "Default: stdout");
  ensemble->add_option("--domain", domain);
  ensemble->add_option("--beam", beam);
  auto* evaluate = app.add_subcommand("evaluate", "BLEU report rows");
  evaluate->add_option("-c,--config", config_path, "Run config (JSON); needed with --checkpoint");
  evaluate->add_option("--ref", reference, "Reference file");
  evaluate->add_option("--hyp", hyps, "Hypothesis file (repeatable)");
  evaluate->add_option("--system", systems, "System name per --hyp");
  evaluate->add_option("--testset", testset);
  evaluate->add_flag("--lowercase", lowercase);
  evaluate->add_option("--checkpoint", checkpoints, "Decode a prepared split instead (repeatable)");
  evaluate->add_option("--domain", domain);
  evaluate->add_option("--split", split)->check(CLI::IsMember({"train", "dev", "test"}));
  evaluate->add_option("--beam", beam);
  evaluate->add_option("-o,--output", output, "Default: stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    const auto opt_beam = beam ? std::optional<std::size_t>(beam) : std::nullopt;
    const auto opt_domain = domain.empty() ? std::nullopt : std::optional<std::string>(domain);
    if (*prepare) {
      cmd_prepare(load_run_config(config_path));
    } else if (*select) {
      cmd_select(load_run_config(config_path));
    } else if (*train) {
      TrainArgs a;
      if (!name.empty()) a.name = name;
      if (!from_checkpoint.empty()) a.from_checkpoint = from_checkpoint;
      cmd_train(load_run_config(config_path), a, &out);
    } else if (*translate) {
      emit(cmd_translate(load_run_config(config_path), {checkpoint, input, opt_domain, opt_beam}), output, out);
    } else if (*ensemble) {
      EnsembleArgs a;
      a.checkpoints.assign(checkpoints.begin(), checkpoints.end());
      if (!mode.empty()) a.mode = parse_mode(mode, "--mode");
      a.weights = weights;
      if (!input.empty()) a.input = input;
      a.domain = opt_domain;
      a.beam = opt_beam;
      const EnsembleOutput res = cmd_ensemble(load_run_config(config_path), a);
      err << "weights " << format_weights(res.weights) << '\n';
      if (res.row) {
        emit({format_report_row(*res.row)}, output, out);
      } else {
        emit(res.translations, output, out);
      }
    } else if (*evaluate) {
      std::vector<ReportRow> rows;
      if (!reference.empty()) {
        EvaluateArgs a;
        a.reference = reference;
        a.hypotheses.assign(hyps.begin(), hyps.end());
        a.systems = systems;
        a.testset = testset;
        a.lowercase = lowercase;
        rows = cmd_evaluate(a);
      } else if (!checkpoints.empty()) {
        if (config_path.empty() || domain.empty()) throw ConfigError("--checkpoint needs --config and --domain");
        EvaluateModelArgs a;
        a.checkpoints.assign(checkpoints.begin(), checkpoints.end());
        a.domain = domain;
        a.split = split;
        a.beam = opt_beam;
        rows = cmd_evaluate_models(load_run_config(config_path), a);
      } else {
        throw ConfigError("evaluate needs --ref with --hyp, or --checkpoint");
      }
      emit(format_rows(rows), output, out);
    }
  } catch (const std::exception& e) {
    err << "mdnmt: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitOk;
}

}  // namespace mdnmt
