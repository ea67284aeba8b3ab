#include "jointctc/checkpoint.hpp"
#include "jointctc/experiment.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

using namespace jointctc;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(seed: 5
output_dir: OUT
workers: 2
task:
  name: reverse
  vocab: 5
  min_length: 2
  max_length: 4
  train_size: 40
  valid_size: 6
  test_size: 6
model:
  d_model: 16
  n_heads: 2
  d_ff: 32
  n_src_layers: 1
  n_adjust_layers: 1
  n_tgt_layers: 1
  n_dec_layers: 1
  upsample_rate: 2
  dropout: 0.0
train:
  batch_size: 8
  max_steps: 3
  valid_every: 0
decode:
  - mode: joint-osync
    beam_size: 2
  - mode: attn-only
    beam_size: 2
sweep:
  length_penalty: [0.0, 0.5]
  beam: [2]
  modes: [joint-isync, attn-only]
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("jointctc_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string tiny_yaml(const fs::path& out) {
  std::string text = kTinyConfig;
  text.replace(text.find("OUT"), 3, out.string());
  return text;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(JOINTCTC_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("corpus tasks") {
  SyntheticTaskSpec spec;
  spec.task = SyntheticTask::copy;
  CHECK(transduce(spec, std::vector<TokenId>{3, 1, 2}) == std::vector<TokenId>{3, 1, 2});
  spec.task = SyntheticTask::expand;
  CHECK(transduce(spec, std::vector<TokenId>{3}) == std::vector<TokenId>{6, 7});
  CHECK(spec.target_vocab() == 2 * spec.vocab + 1);
  spec.task = SyntheticTask::map;
  const auto perm = task_permutation(spec);
  auto sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == static_cast<TokenId>(i + 1));
  spec.task = SyntheticTask::reverse;
  CHECK(transduce(spec, std::vector<TokenId>{1, 2}) == std::vector<TokenId>{perm[1], perm[0]});
}

TEST_CASE("frames render each token for a bounded run") {
  std::mt19937_64 rng(3);
  const std::vector<TokenId> transcript{4, 4, 2};
  const auto frames = render_frames(transcript, 2, 3, 0.0, 5, rng);
  CHECK(frames.size() >= 6);
  CHECK(frames.size() <= 9);
  CHECK(frames.front() == 4);
  CHECK(frames.back() == 2);
  SyntheticTaskSpec spec;
  spec.task = SyntheticTask::frames;
  spec.train_size = 20;
  spec.valid_size = 5;
  spec.test_size = 5;
  const auto corpus = generate_corpus(spec);
  for (const auto& ex : corpus.train) {
    CHECK(ex.source.ids.size() >= 2 * ex.transcript.ids.size());
    CHECK(ex.target.ids.size() == ex.transcript.ids.size());
  }
}

TEST_CASE("corpus generation is seeded, disjoint and round-trips through files") {
  SyntheticTaskSpec spec;
  spec.task = SyntheticTask::reverse;
  spec.train_size = 50;
  spec.valid_size = 10;
  spec.test_size = 10;
  const auto a = generate_corpus(spec);
  const auto b = generate_corpus(spec);
  std::set<std::vector<TokenId>> train_sources;
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].source.ids == b.train[i].source.ids);
    train_sources.insert(a.train[i].source.ids);
  }
  for (const auto& ex : a.test) CHECK(train_sources.count(ex.source.ids) == 0);
  const auto dir = scratch("corpus");
  write_corpus(dir, a);
  const auto back = read_corpus(dir);
  REQUIRE(back.test.size() == a.test.size());
  for (std::size_t i = 0; i < a.test.size(); ++i) CHECK(back.test[i].target.ids == a.test[i].target.ids);
  std::istringstream bad("1 2\t\tx\n");
  CHECK_THROWS_AS(read_examples(bad), std::invalid_argument);
}

TEST_CASE("config defaults and inheritance") {
  const auto c = parse_experiment_config(tiny_yaml("/tmp/x"), "tiny.yaml");
  CHECK(c.seed == 5);
  CHECK(c.task.seed == 5);
  CHECK(c.train.seed == 5);
  CHECK(c.model.src_vocab == 5);
  CHECK(c.model.tgt_vocab == 5);
  CHECK(c.model.task == TaskKind::mt);
  CHECK(c.model.src_ctc_layer_index == 2);
  CHECK(c.decode.size() == 2);
  CHECK(c.decode[1].mode == DecodeMode::attn_only);
  CHECK(c.sweep.length_penalty == std::vector<double>{0.0, 0.5});
  CHECK(c.eval_split == "test");
}

TEST_CASE("config errors carry source positions") {
  const std::string unknown = message_of([] {
    parse_experiment_config("seed: 1\ntask:\n  name: copy\n  vocabb: 4\n", "a.yaml");
  });
  CHECK(unknown.find("a.yaml:4:") == 0);
  CHECK(unknown.find("task.vocabb") != std::string::npos);

  const std::string bad_type = message_of([] { parse_experiment_config("seed: 1\nworkers: many\n", "b.yaml"); });
  CHECK(bad_type.find("b.yaml:2:") == 0);

  const std::string bad_mode = message_of([] {
    parse_experiment_config("decode:\n  mode: sideways\n", "c.yaml");
  });
  CHECK(bad_mode.find("c.yaml:2:") == 0);

  const std::string syntax = message_of([] { parse_experiment_config("seed: [1\n", "d.yaml"); });
  CHECK(syntax.find("d.yaml:") == 0);

  CHECK_FALSE(message_of([] { parse_experiment_config("task:\n  name: frames\nmodel:\n  task: mt\n", "e.yaml"); }).empty());
  CHECK_FALSE(message_of([] { parse_experiment_config("sweep:\n  beam: []\n", "f.yaml"); }).empty());
  CHECK_FALSE(message_of([] { parse_experiment_config("model:\n  src_ctc_layer_index: 1\n", "g.yaml"); }).empty());
}

TEST_CASE("overrides") {
  const auto c = parse_experiment_config(tiny_yaml("/tmp/x"), "tiny.yaml",
                                         {"train.max_steps=9", "seed=11", "sweep.beam=[1, 3]"});
  CHECK(c.train.max_steps == 9);
  CHECK(c.seed == 11);
  CHECK(c.sweep.beam == std::vector<Index>{1, 3});
  CHECK_THROWS_AS(parse_experiment_config("", "x", {"nonsense"}), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("", "x", {"train.bogus=1"}), ConfigError);
}

TEST_CASE("resolved YAML round trips and hashes are stable") {
  const auto c = parse_experiment_config(tiny_yaml("/tmp/x"), "tiny.yaml");
  const std::string y = to_yaml(c);
  CHECK(to_yaml(parse_experiment_config(y, "resolved.yaml")) == y);
  CHECK(content_hash("") == "cbf29ce484222325");
  CHECK(content_hash("a") == "af63dc4c8601ec8c");
  auto d = c;
  d.decode.front().beam_size = 9;
  CHECK(run_layout(d).root == run_layout(c).root);
  d.train.max_steps = 4;
  CHECK(run_layout(d).root != run_layout(c).root);
  CHECK(run_layout(c).root.filename().string().rfind("reverse-", 0) == 0);
}

TEST_CASE("pipeline stages are idempotent") {
  const auto out = scratch("pipeline");
  const auto c = parse_experiment_config(tiny_yaml(out), "tiny.yaml");
  const auto layout = run_layout(c);
  CHECK(cmd_gen_data(c, {}));
  CHECK_FALSE(cmd_gen_data(c, {}));
  CHECK(cmd_train(c, {}));
  CHECK_FALSE(cmd_train(c, {}));
  CHECK(fs::exists(layout.checkpoint()));
  CHECK(fs::exists(layout.snapshot()));
  const auto first = cmd_decode(c, {});
  REQUIRE(first.size() == 2);
  CHECK(first[0].examples == 6);
  const auto second = cmd_decode(c, {});
  std::ostringstream a, b;
  write_summary_csv(a, first);
  write_summary_csv(b, second);
  CHECK(a.str() == b.str());

  const auto rows = cmd_sweep(c, {});
  CHECK(rows.size() == 4);
  bool found = false;
  for (const auto& entry : fs::directory_iterator(layout.root)) {
    if (entry.path().filename().string().rfind("sweep-", 0) != 0) continue;
    found = true;
    CHECK(fs::exists(entry.path() / "summary.csv"));
    CHECK(fs::exists(entry.path() / "timing.csv"));
    CHECK(fs::exists(entry.path() / "series.jsonl"));
  }
  CHECK(found);

  const auto results = layout.decode_dir() / "test-0" / (cell_name(c.decode[0]) + ".jsonl");
  REQUIRE(fs::exists(results));
  const Model model = load_checkpoint(layout.checkpoint());
  const auto report = cmd_evaluate(results, layout.data_dir() / "test.tsv", &model);
  CHECK(report.examples == 6);
  CHECK(report.accuracy == doctest::Approx(first[0].accuracy));
  CHECK(report.layer_monotonicity.size() == 1);
}

TEST_CASE("shipped configs parse") {
  for (const auto& entry : fs::directory_iterator(JOINTCTC_CONFIG_DIR)) {
    INFO(entry.path().string());
    CHECK_NOTHROW(load_experiment_config(entry.path()));
  }
}

TEST_CASE("cli exit codes") {
  const auto dir = scratch("cli");
  const auto good = dir / "good.yaml";
  std::ofstream(good) << tiny_yaml(dir / "runs");
  const auto bad = dir / "bad.yaml";
  std::ofstream(bad) << "seed: 1\nbogus: 2\n";
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 1);
  CHECK(run_cli("train -c " + (dir / "missing.yaml").string()) == 1);
  CHECK(run_cli("train -c " + bad.string()) == 1);
  CHECK(run_cli("decode -c " + good.string()) == 2);
  CHECK(run_cli("gen-data -c " + good.string()) == 0);
  CHECK(run_cli("oracle-check --ctc-instances 5 --gradient-instances 2 --prefix-instances 3 --search-instances 1") == 0);
  CHECK(run_cli("oracle-check --search-instances 1 --max-nodes 3") == 3);
  const auto empty_results = dir / "r.jsonl";
  std::ofstream(empty_results) << "{not json\n";
  const auto refs = run_layout(load_experiment_config(good)).data_dir() / "test.tsv";
  CHECK(run_cli("evaluate --results " + empty_results.string() + " --refs " + refs.string()) == 2);
}
