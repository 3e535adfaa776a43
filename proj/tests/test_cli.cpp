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

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <map>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mdnmt/commands.hpp"
#include "mdnmt/error.hpp"
#include "mdnmt/eval.hpp"
#include "mdnmt/selection.hpp"
#include "mdnmt/text.hpp"
#include "mdnmt/workspace.hpp"
#include "test_util.hpp"

using namespace mdnmt;
using nlohmann::json;
namespace fs = std::filesystem;
using mdnmt::testing::slurp;
using mdnmt::testing::write_text;

namespace {

json base_config(const fs::path& ws) {
  return json{
      {"workspace", ws.string()},
      {"seed", 7},
      {"in_domain", "in"},
      {"synthetic",
       {{"names", {"in", "od1", "od2"}},
        {"pair_counts", {60, 120, 120}},
        {"dev_size", 12},
        {"test_size", 12},
        {"shared_vocab_size", 30},
        {"per_domain_lexicon_size", 4},
        {"sentence_length_range", {2, 6}}}},
      {"prepare", {{"bpe_merges", 40}}},
      {"model", {{"embedding_dim", 8}, {"hidden_dim", 12}}},
      {"train",
       {{"optimizer", "adagrad"},
        {"learning_rate", 0.1},
        {"batch_size", 8},
        {"dev_beam", 2},
        {"plan", json::array({{{"domains", {"od1", "od2"}}, {"epochs", 1}}, {{"domains", {"in"}}, {"epochs", 1}}})}}},
      {"selection", {{"fractions", {{"od1", 0.5}, {"od2", 1.0}}}}},
      {"decode", {{"beam", 2}}}};
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "run.json") {
  const auto path = dir / name;
  write_text(path, j.dump(2));
  return path;
}

// Every regular file under the workspace except the lock, with its bytes.
std::map<std::string, std::string> snapshot(const fs::path& ws) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(ws)) {
    if (!e.is_regular_file()) continue;
    out[fs::relative(e.path(), ws).generic_string()] = slurp(e.path());
  }
  return out;
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::vector<std::string> out;
  std::istringstream in(slurp(p));
  std::string l;
  while (std::getline(in, l)) out.push_back(l);
  return out;
}

int cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  args.insert(args.begin(), "mdnmt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int rc = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return rc;
}

// Exit status of the real binary.
int process(const std::string& args) {
  const std::string cmd = std::string(MDNMT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Independent SHA-256 via coreutils.
std::string coreutils_sha256(const fs::path& p) {
  const auto tmp = p.parent_path() / ".sha_out";
  const std::string cmd = "sha256sum '" + p.string() + "' > '" + tmp.string() + "'";
  REQUIRE(std::system(cmd.c_str()) == 0);
  const std::string line = slurp(tmp);
  fs::remove(tmp);
  return line.substr(0, 64);
}

}  // namespace

TEST_CASE("prepare is idempotent and reproducible from the seed") {
  const auto dir = testing::scratch_dir("cli_prepare");
  const auto cfg = load_run_config(write_config(dir, base_config(dir / "ws")));
  cmd_prepare(cfg);
  const auto first = snapshot(cfg.workspace);
  cmd_prepare(cfg);
  CHECK(snapshot(cfg.workspace) == first);

  auto other_json = base_config(dir / "ws2");
  const auto other = load_run_config(write_config(dir, other_json, "other.json"));
  cmd_prepare(other);
  auto second = snapshot(other.workspace);
  for (const auto& [name, bytes] : first) {
    if (name == "manifest.json") continue;
    CHECK_MESSAGE(second[name] == bytes, name);
  }

  other_json["seed"] = 8;
  const auto reseeded = load_run_config(write_config(dir, other_json, "other.json"));
  cmd_prepare(reseeded);
  CHECK(slurp(data_path(reseeded, "in", "train", "src")) != slurp(data_path(cfg, "in", "train", "src")));
}

TEST_CASE("the manifest lists every corpus with its checksum") {
  const auto dir = testing::scratch_dir("cli_manifest");
  const auto cfg = load_run_config(write_config(dir, base_config(dir / "ws")));
  cmd_prepare(cfg);
  const Manifest m = Manifest::load(manifest_path(cfg));
  std::size_t corpora = 0;
  for (const auto& e : fs::directory_iterator(cfg.workspace / "data")) {
    const auto rel = fs::relative(e.path(), cfg.workspace).generic_string();
    REQUIRE(m.artifacts.count(rel) == 1);
    CHECK(m.artifacts.at(rel) == coreutils_sha256(e.path()));
    ++corpora;
  }
  CHECK(corpora == 3 * 3 * 2);
  for (const char* f : {"bpe.codes", "vocab.src", "vocab.tgt"}) CHECK(m.artifacts.count(f) == 1);
  CHECK(m.config_sha256 == cfg.config_sha256);
  CHECK(lines_of(data_path(cfg, "in", "dev", "src")).size() == 12);
  CHECK(lines_of(data_path(cfg, "in", "test", "tgt")).size() == 12);
}

TEST_CASE("file domains are tokenized and line counts must agree") {
  const auto dir = testing::scratch_dir("cli_files");
  write_text(dir / "raw/a.src", "Hello, world!\nThe cat sat.\n");
  write_text(dir / "raw/a.tgt", "Hallo, Welt!\nDie Katze sass.\n");
  write_text(dir / "raw/b.src", "one\ntwo\n");
  write_text(dir / "raw/b.tgt", "eins\n");
  json j = {{"workspace", "ws"},
            {"seed", 1},
            {"in_domain", "a"},
            {"domains", {{"a", {{"train", {{"source", "raw/a.src"}, {"target", "raw/a.tgt"}}}}}}}};
  const auto ok = load_run_config(write_config(dir, j));
  CHECK(ok.workspace == dir / "ws");
  cmd_prepare(ok);
  const auto first = lines_of(data_path(ok, "a", "train", "src"))[0];
  CHECK(text::join(undo_bpe(text::split_whitespace(first))) == "Hello , world !");

  j["domains"]["b"] = {{"train", {{"source", "raw/b.src"}, {"target", "raw/b.tgt"}}}};
  const auto bad = load_run_config(write_config(dir, j));
  CHECK_THROWS_AS(cmd_prepare(bad), AlignmentError);
  CHECK(process("prepare -c " + (dir / "run.json").string()) == kExitData);
}

TEST_CASE("selection files: fraction one is the input, the dump re-sorts to the selection") {
  const auto dir = testing::scratch_dir("cli_select");
  auto j = base_config(dir / "ws");
  const auto cfg = load_run_config(write_config(dir, j));
  cmd_prepare(cfg);
  cmd_select(cfg);
  CHECK(slurp(data_path(cfg, "od2_selected", "train", "src")) == slurp(data_path(cfg, "od2", "train", "src")));
  CHECK(slurp(data_path(cfg, "od2_selected", "train", "tgt")) == slurp(data_path(cfg, "od2", "train", "tgt")));

  const auto od1 = lines_of(data_path(cfg, "od1", "train", "src"));
  const auto chosen = lines_of(data_path(cfg, "od1_selected", "train", "src"));
  CHECK(chosen.size() == selected_count(0.5, od1.size()));
  std::vector<std::pair<double, std::size_t>> rows;
  std::istringstream dump(slurp(cfg.workspace / "selection" / "od1.scores"));
  std::size_t idx;
  double score;
  while (dump >> idx >> score) rows.emplace_back(score, idx);
  REQUIRE(rows.size() == od1.size());
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < chosen.size(); ++i) keep.push_back(rows[i].second);
  std::sort(keep.begin(), keep.end());
  for (std::size_t i = 0; i < chosen.size(); ++i) CHECK(chosen[i] == od1[keep[i]]);

  // Fractions act per corpus.
  const auto od1_before = slurp(data_path(cfg, "od1_selected", "train", "src"));
  j["selection"]["fractions"]["od2"] = 0.25;
  const auto cfg2 = load_run_config(write_config(dir, j));
  cmd_select(cfg2);
  CHECK(slurp(data_path(cfg2, "od1_selected", "train", "src")) == od1_before);
  CHECK(lines_of(data_path(cfg2, "od2_selected", "train", "src")).size() ==
        selected_count(0.25, lines_of(data_path(cfg, "od2", "train", "src")).size()));
}

TEST_CASE("train writes checkpoints and a learning curve, and resumes from a checkpoint") {
  const auto dir = testing::scratch_dir("cli_train");
  auto j = base_config(dir / "ws");
  const auto whole = load_run_config(write_config(dir, j));
  cmd_prepare(whole);
  const auto report = cmd_train(whole, {"whole", std::nullopt});
  CHECK(report.records.size() == 2);
  const auto mdir = whole.workspace / "models" / "whole";
  for (const char* f : {"best.ckpt", "final.ckpt", "report.csv"}) CHECK(fs::exists(mdir / f));
  CHECK(lines_of(mdir / "report.csv").size() == 3);
  CHECK(lines_of(mdir / "report.csv")[0] == "stage,epoch,train_loss,dev_ppl,dev_bleu");

  j["train"]["plan"] = json::array({{{"domains", {"od1", "od2"}}, {"epochs", 1}}});
  const auto first = load_run_config(write_config(dir, j));
  cmd_train(first, {"first", std::nullopt});
  j["train"]["plan"] = json::array({{{"domains", {"in"}}, {"epochs", 1}}});
  const auto second = load_run_config(write_config(dir, j));
  cmd_train(second, {"second", whole.workspace / "models/first/final.ckpt"});
  CHECK(slurp(whole.workspace / "models/second/final.ckpt") == slurp(mdir / "final.ckpt"));

  // Re-running is byte-identical.
  const auto before = slurp(mdir / "final.ckpt");
  cmd_train(whole, {"whole", std::nullopt});
  CHECK(slurp(mdir / "final.ckpt") == before);
}

TEST_CASE("train diverges with exit code 3") {
  const auto dir = testing::scratch_dir("cli_diverge");
  auto j = base_config(dir / "ws");
  j["train"]["optimizer"] = "sgd";
  j["train"]["learning_rate"] = 1e30;
  j["train"]["clip_norm"] = 0;
  const auto path = write_config(dir, j);
  cmd_prepare(load_run_config(path));
  CHECK(process("train -c " + path.string()) == kExitDivergence);
}

TEST_CASE("single-member ensemble matches translate; grid output covers the lattice") {
  const auto dir = testing::scratch_dir("cli_ensemble");
  auto j = base_config(dir / "ws");
  const auto path = write_config(dir, j);
  const auto cfg = load_run_config(path);
  cmd_prepare(cfg);
  cmd_train(cfg, {"a", std::nullopt});
  j["model"]["hidden_dim"] = 10;
  j["train"]["plan"] = json::array({{{"domains", {"od1"}}, {"epochs", 1}}});
  cmd_train(load_run_config(write_config(dir, j, "b.json")), {"b", std::nullopt});

  write_text(dir / "input.txt", "w1 w2 w3\nw4 w5\n\nw9\n");
  const auto a_ckpt = cfg.workspace / "models/a/best.ckpt";
  const auto b_ckpt = cfg.workspace / "models/b/best.ckpt";
  const auto translated = cmd_translate(cfg, {a_ckpt, dir / "input.txt", std::nullopt, std::nullopt});
  CHECK(translated.size() == 4);
  CHECK(translated[2].empty());
  EnsembleArgs ea;
  ea.checkpoints = {a_ckpt};
  ea.input = dir / "input.txt";
  CHECK(cmd_ensemble(cfg, ea).translations == translated);

  EnsembleArgs grid;
  grid.checkpoints = {a_ckpt, b_ckpt};
  grid.mode = WeightMode::kGrid;
  const auto g = cmd_ensemble(cfg, grid);
  REQUIRE(g.row.has_value());
  CHECK(g.row->system == "ENS_w");
  const auto audit = lines_of(cfg.workspace / "ensemble" / "grid.tsv");
  CHECK(audit.size() == weight_lattice(2, kDefaultGridStep).size());
  double best = -1, uniform = -1;
  for (const auto& line : audit) {
    const double b = std::stod(line.substr(line.find('\t') + 1));
    best = std::max(best, b);
    if (line.rfind("0.5,0.5\t", 0) == 0) uniform = b;
  }
  CHECK(uniform >= 0);
  CHECK(best >= uniform);
  const auto w = json::parse(slurp(cfg.workspace / "ensemble" / "weights.json"));
  CHECK(std::fabs(w["dev_bleu"].get<double>() * 100 - best) < 1e-4);
  CHECK(g.weights == w["weights"].get<std::vector<double>>());
  CHECK(fs::exists(cfg.workspace / "ensemble" / "ENS_w.in.test.hyp"));

  EnsembleArgs balanced;
  balanced.checkpoints = {a_ckpt, b_ckpt};
  balanced.mode = WeightMode::kBalanced;
  CHECK(cmd_ensemble(cfg, balanced).weights == std::vector<double>{0.5, 0.5});

  std::string out, err;
  CHECK(cli({"ensemble", "-c", path.string(), "--checkpoint", a_ckpt.string(), "--checkpoint", b_ckpt.string(),
             "--mode", "weighted", "--weights", "0.25,0.75"},
            &out, &err) == kExitOk);
  CHECK(err.find("weights 0.25,0.75") != std::string::npos);
  CHECK(out.rfind("ENS_w\tin.test\t", 0) == 0);

  const auto rows = cmd_evaluate_models(cfg, {{a_ckpt, b_ckpt}, "in", "test", std::nullopt});
  CHECK(rows.size() == 2);
  CHECK(rows[0].system == "a/best");
  CHECK(rows[0].ppl > 1.0);
}

TEST_CASE("evaluate: identical files score 100 and N systems give N rows") {
  const auto dir = testing::scratch_dir("cli_evaluate");
  write_text(dir / "ref.txt", "the cat sat on the mat\na b c d e\n");
  write_text(dir / "same.txt", "the cat sat on the mat\na b c d e\n");
  write_text(dir / "other.txt", "the cat sat on a mat\na b c d\n");
  std::string out;
  CHECK(cli({"evaluate", "--ref", (dir / "ref.txt").string(), "--hyp", (dir / "same.txt").string()}, &out) == kExitOk);
  CHECK(out == "same\ttest\t100.00\t-\n");

  const auto rows = cmd_evaluate({dir / "ref.txt", {dir / "same.txt", dir / "other.txt", dir / "same.txt"}, {}, "tst"});
  REQUIRE(rows.size() == 3);
  const auto direct = bleu({{"the", "cat", "sat", "on", "a", "mat"}, {"a", "b", "c", "d"}},
                           {{"the", "cat", "sat", "on", "the", "mat"}, {"a", "b", "c", "d", "e"}});
  CHECK(rows[1].bleu == direct.bleu);
  CHECK(rows[1].testset == "tst");

  CHECK(cli({"evaluate", "--ref", (dir / "ref.txt").string(), "--hyp", (dir / "same.txt").string(), "--hyp",
             (dir / "other.txt").string(), "--system", "A", "--system", "B"},
            &out) == kExitOk);
  CHECK(std::count(out.begin(), out.end(), '\n') == 2);
  CHECK(out.rfind("A\t", 0) == 0);

  write_text(dir / "short.txt", "one line\n");
  CHECK(cli({"evaluate", "--ref", (dir / "ref.txt").string(), "--hyp", (dir / "short.txt").string()}) == kExitData);
}

TEST_CASE("exit codes") {
  const auto dir = testing::scratch_dir("cli_exit");
  CHECK(process("") == kExitUsage);
  CHECK(process("frobnicate") == kExitUsage);
  CHECK(process("--help") == kExitOk);
  CHECK(process("prepare") == kExitUsage);
  CHECK(process("prepare -c " + (dir / "missing.json").string()) == kExitUsage);
  const auto path = write_config(dir, base_config(dir / "ws"));
  CHECK(process("train -c " + path.string()) == kExitData);
  CHECK(process("prepare -c " + path.string()) == kExitOk);
  CHECK(process("evaluate --ref " + (dir / "nothing.txt").string() + " --hyp " + (dir / "nothing.txt").string()) ==
        kExitData);
}

TEST_CASE("a changed input makes the workspace stale") {
  const auto dir = testing::scratch_dir("cli_stale");
  auto j = base_config(dir / "ws");
  const auto cfg = load_run_config(write_config(dir, j));
  cmd_prepare(cfg);
  CHECK_NOTHROW(cmd_select(cfg));
  j["prepare"]["bpe_merges"] = 41;
  CHECK_THROWS_AS(cmd_select(load_run_config(write_config(dir, j))), DataError);
  j["prepare"]["bpe_merges"] = 40;
  j["synthetic"]["pair_counts"] = {60, 120, 121};
  CHECK_THROWS_AS(cmd_train(load_run_config(write_config(dir, j))), DataError);

  // Training settings are not prepare inputs.
  j["synthetic"]["pair_counts"] = {60, 120, 120};
  j["train"]["learning_rate"] = 0.2;
  CHECK_NOTHROW(cmd_select(load_run_config(write_config(dir, j))));
}

TEST_CASE("a held lock blocks a second command") {
  const auto dir = testing::scratch_dir("cli_lock");
  const auto cfg = load_run_config(write_config(dir, base_config(dir / "ws")));
  cmd_prepare(cfg);
  {
    WorkspaceLock held(cfg.workspace);
    CHECK_THROWS_AS(cmd_prepare(cfg), DataError);
    CHECK_THROWS_AS(cmd_select(cfg), DataError);
  }
  CHECK_NOTHROW(cmd_select(cfg));
}

TEST_CASE("config parsing is strict") {
  const auto dir = testing::scratch_dir("cli_config");
  auto parse = [&](const json& j) { return parse_run_config(j.dump(), dir); };
  const auto good = base_config(dir / "ws");
  CHECK_NOTHROW(parse(good));

  auto j = good;
  j["extra"] = 1;
  CHECK_THROWS_AS(parse(j), ConfigError);
  j = good;
  j.erase("seed");
  CHECK_THROWS_AS(parse(j), ConfigError);
  j = good;
  j["train"]["learning_rate"] = "fast";
  CHECK_THROWS_AS(parse(j), ConfigError);
  j = good;
  j["train"]["plan"] = json::array({{{"domains", {"nowhere"}}, {"epochs", 1}}});
  CHECK_THROWS_AS(parse(j), ConfigError);
  j = good;
  j["train"]["plan"] = json::array({{{"domains", {"od1_selected"}}, {"epochs", 1}}});
  CHECK_NOTHROW(parse(j));
  j["selection"]["fractions"].erase("od1");
  CHECK_THROWS_AS(parse(j), ConfigError);
  j = good;
  j["synthetic"]["names"] = {"in", "o d", "od2"};
  CHECK_THROWS_AS(parse(j), ConfigError);
  j = good;
  j["synthetic"]["names"] = {"in", "x_selected", "od2"};
  CHECK_THROWS_AS(parse(j), ConfigError);
  j = good;
  j["in_domain"] = "elsewhere";
  CHECK_THROWS_AS(parse(j), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{not json", dir), ConfigError);

  const auto cfg = parse(good);
  CHECK(cfg.train.plan.stages.size() == 2);
  CHECK(cfg.train.hyper.optimizer == OptimizerType::kAdagrad);
  CHECK(cfg.synthetic->spec.seed == 7);
  CHECK(cfg.domain_names() == std::vector<std::string>{"in", "od1", "od2"});
}

TEST_CASE("the workspace path may come from the environment") {
  const auto dir = testing::scratch_dir("cli_env");
  const auto path = write_config(dir, base_config(dir / "ws"));
  ::setenv(kWorkspaceEnv, (dir / "elsewhere").c_str(), 1);
  const auto cfg = load_run_config(path);
  ::unsetenv(kWorkspaceEnv);
  CHECK(cfg.workspace == dir / "elsewhere");
  CHECK(load_run_config(path).workspace == dir / "ws");
}
