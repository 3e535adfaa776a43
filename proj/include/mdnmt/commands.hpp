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
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mdnmt/corpus.hpp"
#include "mdnmt/ensemble.hpp"
#include "mdnmt/nmt.hpp"
#include "mdnmt/schedule.hpp"

namespace mdnmt {

// Environment variable that replaces RunConfig::workspace. No other
// setting can be overridden from the environment.
inline constexpr const char* kWorkspaceEnv = "MDNMT_WORKSPACE";

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitDivergence = 3 };

struct SplitFiles {
  std::filesystem::path source;
  std::filesystem::path target;
};

// A corpus on disk. Splits are optional individually but at least one is set.
struct FileDomain {
  std::optional<SplitFiles> train, dev, test;
};

struct SyntheticDomains {
  std::vector<std::string> names;  // one per generated domain
  SyntheticTaskSpec spec;          // spec.seed is RunConfig::seed
  std::size_t dev_size = 0;        // taken from the front of each domain
  std::size_t test_size = 0;       // taken next; the rest is train
};

struct PrepareConfig {
  bool tokenize = true;  // file domains only
  std::size_t bpe_merges = 500;
  std::size_t vocab_limit = 50000;
  std::size_t max_len = kDefaultMaxLength;  // train split only
  bool domain_tags = false;
};

struct TrainConfig {
  std::string name = "model";
  TrainHyper hyper;
  std::size_t eval_every = 1;
  std::size_t dev_beam = 4;
  SelectBy select_by = SelectBy::kBleu;
  std::vector<std::string> dev_domains;  // empty means {in_domain}
  TrainingPlan plan;
};

struct SelectConfig {
  std::map<std::string, double> fractions;  // out-of-domain name -> fraction
  bool bilingual = true;
  std::size_t order = 3;
};

struct EnsembleMember {
  std::filesystem::path checkpoint;               // relative paths resolve in the workspace
  std::optional<std::filesystem::path> target_vocab;  // checked against the workspace vocabulary
};

enum class WeightMode { kBalanced, kWeighted, kGrid };

struct EnsembleSpec {
  std::vector<EnsembleMember> members;
  WeightMode mode = WeightMode::kBalanced;
  std::vector<double> weights;  // kWeighted only
  double grid_step = kDefaultGridStep;
  Combination combination = Combination::kProbability;
  std::string dev_domain;  // empty means in_domain
};

struct RunConfig {
  std::filesystem::path workspace;
  std::uint64_t seed = 0;
  std::string in_domain;
  std::map<std::string, FileDomain> files;
  std::optional<SyntheticDomains> synthetic;
  PrepareConfig prepare;
  ModelConfig model;  // vocabulary sizes come from the workspace
  TrainConfig train;
  SelectConfig select;
  EnsembleSpec ensemble;
  std::size_t beam = 4;
  std::string config_sha256;  // of the config file bytes

  std::vector<std::string> domain_names() const;  // sorted
  bool has_domain(const std::string& name) const;
};

// Strict parse: unknown keys, wrong types and unresolvable domain references
// raise ConfigError. Relative input paths resolve against base_dir.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir);
// Reads the file and applies the MDNMT_WORKSPACE override.
RunConfig load_run_config(const std::filesystem::path& path);

// Workspace layout.
std::filesystem::path data_path(const RunConfig& config, const std::string& domain, const std::string& split,
                                const std::string& side);
std::filesystem::path manifest_path(const RunConfig& config);

void cmd_prepare(const RunConfig& config);
void cmd_select(const RunConfig& config);

struct TrainArgs {
  std::optional<std::string> name;
  std::optional<std::filesystem::path> from_checkpoint;
};
RunReport cmd_train(const RunConfig& config, const TrainArgs& args = {}, std::ostream* log = nullptr);

struct TranslateArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path input;
  std::optional<std::string> domain;  // tag to prepend when domain tags are on
  std::optional<std::size_t> beam;
};
std::vector<std::string> cmd_translate(const RunConfig& config, const TranslateArgs& args);

struct EnsembleArgs {
  std::vector<std::filesystem::path> checkpoints;  // replaces the configured members
  std::optional<WeightMode> mode;
  std::vector<double> weights;
  std::optional<std::filesystem::path> input;  // raw text; default is the dev domain's test split
  std::optional<std::string> domain;
  std::optional<std::size_t> beam;
};
struct EnsembleOutput {
  std::vector<double> weights;
  std::vector<std::string> translations;
  std::optional<ReportRow> row;  // when the test split was translated
};
EnsembleOutput cmd_ensemble(const RunConfig& config, const EnsembleArgs& args);

struct EvaluateArgs {
  std::filesystem::path reference;
  std::vector<std::filesystem::path> hypotheses;
  std::vector<std::string> systems;  // default: hypothesis file stems
  std::string testset = "test";
  bool lowercase = false;
};
// One row per hypothesis file, BLEU against a whitespace-tokenized reference.
std::vector<ReportRow> cmd_evaluate(const EvaluateArgs& args);

struct EvaluateModelArgs {
  std::vector<std::filesystem::path> checkpoints;
  std::string domain;
  std::string split = "test";
  std::optional<std::size_t> beam;
};
// Decodes a prepared split with each checkpoint; rows carry BLEU and perplexity.
std::vector<ReportRow> cmd_evaluate_models(const RunConfig& config, const EvaluateModelArgs& args);

// Maps an exception to the process exit code.
int exit_code_for(const std::exception& e);

// Full command line front-end. argv[0] is the program name.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mdnmt
