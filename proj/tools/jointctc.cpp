// Experiment runner: gen-data, train, decode, evaluate, sweep, oracle-check.

#include "jointctc/checkpoint.hpp"
#include "jointctc/experiment.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

enum Exit { kOk = 0, kConfigError = 1, kRuntimeError = 2, kCheckFailed = 3 };

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
  std::string output_dir;
  long long seed = -1;
  int workers = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", path, "Experiment YAML file")->required()->check(CLI::ExistingFile);
    cmd->add_option("-s,--set", overrides, "Override a config key, e.g. train.max_steps=100");
    cmd->add_option("--output-dir", output_dir, "Override output_dir");
    cmd->add_option("--seed", seed, "Override seed");
    cmd->add_option("--workers", workers, "Override workers");
  }

  jointctc::ExperimentConfig load() const {
    auto o = overrides;
    if (!output_dir.empty()) o.push_back("output_dir=" + output_dir);
    if (seed >= 0) o.push_back("seed=" + std::to_string(seed));
    if (workers > 0) o.push_back("workers=" + std::to_string(workers));
    return jointctc::load_experiment_config(path, o);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint CTC/attention translation experiments"};
  app.require_subcommand(1);

  ConfigArgs gen_args, train_args, decode_args, sweep_args;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
  gen_args.attach(gen);
  gen->add_option("--out", gen_out, "Write train/valid/test.tsv here instead of the run directory");

  auto* train_cmd = app.add_subcommand("train", "Train and keep the best checkpoint");
  train_args.attach(train_cmd);

  auto* decode_cmd = app.add_subcommand("decode", "Decode the evaluation split with each decode entry");
  decode_args.attach(decode_cmd);

  std::string results, refs, checkpoint, csv_out, jsonl_out;
  double eval_weight = 0.3;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a results file against references");
  eval_cmd->add_option("--results", results, "Results file (JSON lines)")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--refs", refs, "Reference corpus file (TSV)")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--checkpoint", checkpoint, "Model for search error and monotonicity")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--ctc-weight", eval_weight, "Weight of the exact likelihood for search error")
      ->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_option("--csv", csv_out, "Also write the report as CSV");
  eval_cmd->add_option("--jsonl", jsonl_out, "Also write the report as JSON lines");

  auto* sweep_cmd = app.add_subcommand("sweep", "Run the decode grid and optional ablation grid");
  sweep_args.attach(sweep_cmd);

  jointctc::OracleSuiteConfig suite;
  auto* oracle_cmd = app.add_subcommand("oracle-check", "Compare fast paths against brute force");
  oracle_cmd->add_option("--seed", suite.seed, "Seed of the random instances");
  oracle_cmd->add_option("--ctc-instances", suite.ctc_instances);
  oracle_cmd->add_option("--gradient-instances", suite.gradient_instances);
  oracle_cmd->add_option("--prefix-instances", suite.prefix_instances);
  oracle_cmd->add_option("--search-instances", suite.search_instances);
  oracle_cmd->add_option("--max-frames", suite.budget.max_frames);
  oracle_cmd->add_option("--max-length", suite.budget.max_length);
  oracle_cmd->add_option("--max-vocab", suite.budget.max_vocab);
  oracle_cmd->add_option("--max-nodes", suite.budget.max_nodes);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  const jointctc::CommandContext ctx{&std::cerr};
  try {
    if (*gen) {
      const auto config = gen_args.load();
      if (!gen_out.empty()) {
        jointctc::write_corpus(gen_out, jointctc::generate_corpus(config.task));
        std::cerr << "gen-data: wrote corpus to " << gen_out << '\n';
      } else {
        jointctc::cmd_gen_data(config, ctx);
      }
      std::cout << jointctc::run_layout(config).root.string() << '\n';
    } else if (*train_cmd) {
      const auto config = train_args.load();
      jointctc::cmd_train(config, ctx);
      std::cout << jointctc::run_layout(config).checkpoint().string() << '\n';
    } else if (*decode_cmd) {
      const auto config = decode_args.load();
      const auto rows = jointctc::cmd_decode(config, ctx);
      jointctc::write_summary_csv(std::cout, rows);
    } else if (*eval_cmd) {
      std::optional<jointctc::Model> model;
      if (!checkpoint.empty()) model = jointctc::load_checkpoint(checkpoint);
      const auto report =
          jointctc::cmd_evaluate(results, refs, model ? &*model : nullptr, eval_weight);
      jointctc::write_eval_csv(std::cout, {report});
      if (!csv_out.empty()) {
        std::ofstream out(csv_out);
        jointctc::write_eval_csv(out, {report});
      }
      if (!jsonl_out.empty()) {
        std::ofstream out(jsonl_out);
        jointctc::write_eval_jsonl(out, {report});
      }
    } else if (*sweep_cmd) {
      const auto config = sweep_args.load();
      const auto rows = jointctc::cmd_sweep(config, ctx);
      jointctc::write_summary_csv(std::cout, rows);
    } else if (*oracle_cmd) {
      return jointctc::cmd_oracle_check(suite, std::cout) ? kOk : kCheckFailed;
    }
  } catch (const jointctc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
