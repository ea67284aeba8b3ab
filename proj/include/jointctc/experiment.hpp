#pragma once

#include "jointctc/corpus.hpp"
#include "jointctc/decoding.hpp"
#include "jointctc/metrics.hpp"
#include "jointctc/model.hpp"
#include "jointctc/oracle_suite.hpp"
#include "jointctc/training.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace jointctc {

/// A configuration problem; `what()` carries "<source>:<line>:<col>: ..."
/// when a position is known.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SweepAxes {
  std::vector<double> length_penalty{0.0};
  std::vector<Index> beam{5};
  std::vector<double> ctc_weight{0.3};
  std::vector<DecodeMode> modes{DecodeMode::joint_osync};
  /// Train the {src on/off} x {tgt on/off} grid and report validation accuracy.
  bool ablation = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "runs";
  Index workers = 1;
  SyntheticTaskSpec task;
  ModelConfig model;
  TrainConfig train;
  std::vector<DecodeConfig> decode{DecodeConfig{}};
  SweepAxes sweep;
  /// Split decoded by decode and sweep: train, valid or test.
  std::string eval_split = "test";
  /// Examples decoded from the split (0: all).
  std::size_t eval_limit = 0;
};

/// Parses the YAML experiment format. `overrides` are "dotted.key=value"
/// assignments applied before validation.
ExperimentConfig parse_experiment_config(const std::string& text, const std::string& source,
                                         const std::vector<std::string>& overrides = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides = {});

/// Fully resolved YAML; parsing it yields an identical configuration.
std::string to_yaml(const ExperimentConfig& config);

/// 64-bit FNV-1a as 16 lowercase hex digits.
std::string content_hash(const std::string& text);

/// Paths of one run: <output_dir>/<task>-<hash of data, model and training
/// settings>.
struct RunLayout {
  std::filesystem::path root;
  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path checkpoint() const { return root / "model.ckpt"; }
  std::filesystem::path train_log() const { return root / "train.jsonl"; }
  std::filesystem::path decode_dir() const { return root / "decode"; }
  std::filesystem::path snapshot() const { return root / "config.yaml"; }
};

RunLayout run_layout(const ExperimentConfig& config);

/// Progress messages go here; null silences them.
struct CommandContext {
  std::ostream* info = nullptr;
};

/// Writes the corpus unless an identical one is already in place.
/// Returns false when the stage was skipped.
bool cmd_gen_data(const ExperimentConfig& config, const CommandContext& ctx);
/// Trains and stores the best checkpoint unless already done for this config.
bool cmd_train(const ExperimentConfig& config, const CommandContext& ctx);
/// Decodes the evaluation split with every decode entry; returns summaries.
std::vector<CorpusSummary> cmd_decode(const ExperimentConfig& config, const CommandContext& ctx);
/// Scores a results file against a reference corpus. With a model, also
/// the search-error rate (at `ctc_weight`) and per-layer monotonicity.
EvalReport cmd_evaluate(const std::filesystem::path& results,
                        const std::filesystem::path& references, const Model* model = nullptr,
                        double ctc_weight = 0.3);
/// Runs the decode grid (modes x beams x penalties x weights) and, when
/// enabled, the ablation grid.
std::vector<CorpusSummary> cmd_sweep(const ExperimentConfig& config, const CommandContext& ctx);
/// True when every check passed.
bool cmd_oracle_check(const OracleSuiteConfig& suite, std::ostream& report);

/// File name stem of a decode cell.
std::string cell_name(const DecodeConfig& config);

}  // namespace jointctc
