#include "jointctc/experiment.hpp"

#include "jointctc/checkpoint.hpp"

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace jointctc {

namespace {

// --- YAML reading -------------------------------------------------------------

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& at, const std::string& message) const {
    const YAML::Mark mark = at.Mark();
    if (mark.line >= 0)
      throw ConfigError(source_ + ":" + std::to_string(mark.line + 1) + ":" +
                        std::to_string(mark.column + 1) + ": " + message);
    throw ConfigError(source_ + ": " + message);
  }

  void require_map(const YAML::Node& node, const std::string& what) const {
    if (!node.IsMap()) fail(node, what + " must be a mapping");
  }

  void check_keys(const YAML::Node& map, const std::set<std::string>& allowed,
                  const std::string& section) const {
    require_map(map, section.empty() ? "the document" : "'" + section + "'");
    for (auto it = map.begin(); it != map.end(); ++it) {
      const auto key = it->first.as<std::string>();
      if (!allowed.count(key)) {
        std::string known;
        for (const auto& k : allowed) known += (known.empty() ? "" : ", ") + k;
        fail(it->first, "unknown key '" + (section.empty() ? key : section + "." + key) +
                            "' (expected one of: " + known + ")");
      }
    }
  }

  template <typename T>
  T as(const YAML::Node& node, const std::string& key, const char* expected) const {
    if (!node.IsScalar()) fail(node, key + ": expected " + expected);
    try {
      return node.as<T>();
    } catch (const YAML::Exception&) {
      fail(node, key + ": expected " + expected + ", got '" + node.Scalar() + "'");
    }
  }

  template <typename T>
  void read(const YAML::Node& map, const char* key, T& out, const std::string& section) const {
    const YAML::Node n = map[key];
    if (!n) return;
    const std::string name = section.empty() ? key : section + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      out = as<bool>(n, name, "true or false");
    } else if constexpr (std::is_floating_point_v<T>) {
      out = as<T>(n, name, "a number");
    } else if constexpr (std::is_unsigned_v<T>) {
      const auto v = as<long long>(n, name, "a non-negative integer");
      if (v < 0) fail(n, name + ": must be non-negative");
      out = static_cast<T>(v);
    } else if constexpr (std::is_integral_v<T>) {
      out = static_cast<T>(as<long long>(n, name, "an integer"));
    } else {
      out = as<std::string>(n, name, "a string");
    }
  }

  template <typename T>
  std::vector<T> list(const YAML::Node& n, const std::string& name, const char* expected) const {
    std::vector<T> out;
    if (n.IsScalar()) {
      out.push_back(as<T>(n, name, expected));
      return out;
    }
    if (!n.IsSequence()) fail(n, name + ": expected a list");
    for (const auto& item : n) out.push_back(as<T>(item, name, expected));
    if (out.empty()) fail(n, name + ": must not be empty");
    return out;
  }

  template <typename F>
  void guard(const YAML::Node& at, F&& body) const {
    try {
      body();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      fail(at, e.what());
    }
  }

 private:
  std::string source_;
};

void apply_override(YAML::Node& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "': expected key=value");
  const std::string path = assignment.substr(0, eq);
  YAML::Node value;
  try {
    value = YAML::Load(assignment.substr(eq + 1));
  } catch (const YAML::Exception& e) {
    throw ConfigError("override '" + assignment + "': " + e.msg);
  }
  std::vector<std::string> keys;
  std::stringstream ss(path);
  for (std::string k; std::getline(ss, k, '.');) keys.push_back(k);
  std::vector<YAML::Node> chain{root};
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    YAML::Node next = chain.back()[keys[i]];
    if (!next || next.IsNull()) {
      next = YAML::Node(YAML::NodeType::Map);
      chain.back()[keys[i]] = next;
    }
    if (!next.IsMap()) throw ConfigError("override '" + assignment + "': '" + keys[i] + "' is not a section");
    chain.push_back(next);
  }
  chain.back()[keys.back()] = value;
}

DecodeConfig parse_decode(const Reader& r, const YAML::Node& n, const std::string& section) {
  r.check_keys(n, {"mode", "beam_size", "prebeam", "ctc_weight", "length_penalty", "blank_penalty",
                   "max_len_ratio"},
               section);
  DecodeConfig d;
  std::string mode = to_string(d.mode);
  r.read(n, "mode", mode, section);
  r.guard(n["mode"] ? n["mode"] : n, [&] { d.mode = decode_mode_from_string(mode); });
  r.read(n, "beam_size", d.beam_size, section);
  r.read(n, "prebeam", d.prebeam, section);
  r.read(n, "ctc_weight", d.ctc_weight, section);
  r.read(n, "length_penalty", d.length_penalty, section);
  r.read(n, "blank_penalty", d.blank_penalty, section);
  r.read(n, "max_len_ratio", d.max_len_ratio, section);
  r.guard(n, [&] { d.validate(); });
  return d;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text, const std::string& source,
                                         const std::vector<std::string>& overrides) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ":" +
                      std::to_string(e.mark.column + 1) + ": " + e.msg);
  }
  if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  for (const auto& o : overrides) apply_override(root, o);

  const Reader r(source);
  r.check_keys(root, {"seed", "output_dir", "workers", "task", "model", "train", "decode", "sweep", "eval"}, "");
  ExperimentConfig c;
  r.read(root, "seed", c.seed, "");
  std::string out_dir = c.output_dir.string();
  r.read(root, "output_dir", out_dir, "");
  c.output_dir = out_dir;
  r.read(root, "workers", c.workers, "");
  if (c.workers < 1) r.fail(root["workers"], "workers must be >= 1");

  // task
  c.task.seed = c.seed;
  if (const YAML::Node t = root["task"]) {
    r.check_keys(t, {"name", "vocab", "min_length", "max_length", "repeat_min", "repeat_max",
                     "noise_rate", "train_size", "valid_size", "test_size", "seed"},
                 "task");
    std::string name = to_string(c.task.task);
    r.read(t, "name", name, "task");
    r.guard(t["name"] ? t["name"] : t, [&] { c.task.task = synthetic_task_from_string(name); });
    r.read(t, "vocab", c.task.vocab, "task");
    r.read(t, "min_length", c.task.min_length, "task");
    r.read(t, "max_length", c.task.max_length, "task");
    r.read(t, "repeat_min", c.task.repeat_min, "task");
    r.read(t, "repeat_max", c.task.repeat_max, "task");
    r.read(t, "noise_rate", c.task.noise_rate, "task");
    r.read(t, "train_size", c.task.train_size, "task");
    r.read(t, "valid_size", c.task.valid_size, "task");
    r.read(t, "test_size", c.task.test_size, "task");
    r.read(t, "seed", c.task.seed, "task");
    r.guard(t, [&] { c.task.validate(); });
  } else {
    r.guard(root, [&] { c.task.validate(); });
  }

  // model
  c.model.task = c.task.is_speech_analog() ? TaskKind::st : TaskKind::mt;
  c.model.src_vocab = c.task.source_vocab();
  c.model.tgt_vocab = c.task.target_vocab();
  const YAML::Node m = root["model"];
  if (m) {
    r.check_keys(m, {"preset", "task", "d_model", "n_heads", "d_ff", "n_src_layers", "n_adjust_layers",
                     "n_tgt_layers", "n_dec_layers", "upsample_rate", "downsample_rate", "dropout",
                     "src_ctc_layer_index"},
                 "model");
    std::string preset = "none";
    r.read(m, "preset", preset, "model");
    if (preset == "full_mt")
      c.model = ModelConfig::full_mt(c.model.src_vocab, c.model.tgt_vocab);
    else if (preset == "full_st")
      c.model = ModelConfig::full_st(c.model.src_vocab, c.model.tgt_vocab);
    else if (preset != "none")
      r.fail(m["preset"], "model.preset must be none, full_mt or full_st");
    std::string kind = to_string(c.model.task);
    r.read(m, "task", kind, "model");
    r.guard(m["task"] ? m["task"] : m, [&] { c.model.task = task_kind_from_string(kind); });
    r.read(m, "d_model", c.model.d_model, "model");
    r.read(m, "n_heads", c.model.n_heads, "model");
    r.read(m, "d_ff", c.model.d_ff, "model");
    r.read(m, "n_src_layers", c.model.n_src_layers, "model");
    r.read(m, "n_adjust_layers", c.model.n_adjust_layers, "model");
    r.read(m, "n_tgt_layers", c.model.n_tgt_layers, "model");
    r.read(m, "n_dec_layers", c.model.n_dec_layers, "model");
    r.read(m, "upsample_rate", c.model.upsample_rate, "model");
    r.read(m, "downsample_rate", c.model.downsample_rate, "model");
    r.read(m, "dropout", c.model.dropout, "model");
  }
  c.model.src_ctc_layer_index = c.model.n_src_layers + c.model.n_adjust_layers;
  if (m) r.read(m, "src_ctc_layer_index", c.model.src_ctc_layer_index, "model");
  r.guard(m ? m : root, [&] { c.model.validate(); });
  if ((c.model.task == TaskKind::st) != c.task.is_speech_analog())
    r.fail(m ? m : root, "model.task must be st exactly when task.name is frames");

  // train
  c.train.seed = c.seed;
  if (const YAML::Node t = root["train"]) {
    r.check_keys(t, {"lambda1", "lambda2", "peak_lr", "warmup_steps", "beta1", "beta2", "adam_eps",
                     "weight_decay", "epochs", "batch_size", "seed", "use_src_ctc", "use_tgt_ctc",
                     "label_smoothing", "clip_norm", "max_steps", "valid_every", "valid_limit"},
                 "train");
    r.read(t, "lambda1", c.train.lambda1, "train");
    r.read(t, "lambda2", c.train.lambda2, "train");
    r.read(t, "peak_lr", c.train.peak_lr, "train");
    r.read(t, "warmup_steps", c.train.warmup_steps, "train");
    r.read(t, "beta1", c.train.beta1, "train");
    r.read(t, "beta2", c.train.beta2, "train");
    r.read(t, "adam_eps", c.train.adam_eps, "train");
    r.read(t, "weight_decay", c.train.weight_decay, "train");
    r.read(t, "epochs", c.train.epochs, "train");
    r.read(t, "batch_size", c.train.batch_size, "train");
    r.read(t, "seed", c.train.seed, "train");
    r.read(t, "use_src_ctc", c.train.use_src_ctc, "train");
    r.read(t, "use_tgt_ctc", c.train.use_tgt_ctc, "train");
    r.read(t, "label_smoothing", c.train.label_smoothing, "train");
    r.read(t, "clip_norm", c.train.clip_norm, "train");
    r.read(t, "max_steps", c.train.max_steps, "train");
    r.read(t, "valid_every", c.train.valid_every, "train");
    r.read(t, "valid_limit", c.train.valid_limit, "train");
    r.guard(t, [&] { c.train.validate(); });
  }

  // decode
  if (const YAML::Node d = root["decode"]) {
    c.decode.clear();
    if (d.IsSequence()) {
      if (d.size() == 0) r.fail(d, "decode: must not be empty");
      for (std::size_t i = 0; i < d.size(); ++i)
        c.decode.push_back(parse_decode(r, d[i], "decode[" + std::to_string(i) + "]"));
    } else {
      c.decode.push_back(parse_decode(r, d, "decode"));
    }
  }

  // sweep
  if (const YAML::Node s = root["sweep"]) {
    r.check_keys(s, {"length_penalty", "beam", "ctc_weight", "modes", "ablation"}, "sweep");
    if (s["length_penalty"]) c.sweep.length_penalty = r.list<double>(s["length_penalty"], "sweep.length_penalty", "a number");
    if (s["beam"]) c.sweep.beam = r.list<Index>(s["beam"], "sweep.beam", "an integer");
    if (s["ctc_weight"]) c.sweep.ctc_weight = r.list<double>(s["ctc_weight"], "sweep.ctc_weight", "a number");
    if (s["modes"]) {
      c.sweep.modes.clear();
      const auto names = r.list<std::string>(s["modes"], "sweep.modes", "a mode name");
      for (const auto& name : names)
        r.guard(s["modes"], [&] { c.sweep.modes.push_back(decode_mode_from_string(name)); });
    }
    r.read(s, "ablation", c.sweep.ablation, "sweep");
    for (Index b : c.sweep.beam)
      if (b < 1) r.fail(s["beam"], "sweep.beam entries must be >= 1");
    for (double w : c.sweep.ctc_weight)
      if (!(w >= 0.0 && w <= 1.0)) r.fail(s["ctc_weight"], "sweep.ctc_weight entries must lie in [0, 1]");
  }

  // eval
  if (const YAML::Node e = root["eval"]) {
    r.check_keys(e, {"split", "limit"}, "eval");
    r.read(e, "split", c.eval_split, "eval");
    r.read(e, "limit", c.eval_limit, "eval");
    if (c.eval_split != "train" && c.eval_split != "valid" && c.eval_split != "test")
      r.fail(e["split"], "eval.split must be train, valid or test");
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str(), path.string(), overrides);
}

namespace {

void emit_decode(YAML::Emitter& e, const DecodeConfig& d) {
  e << YAML::BeginMap;
  e << YAML::Key << "mode" << YAML::Value << to_string(d.mode);
  e << YAML::Key << "beam_size" << YAML::Value << d.beam_size;
  e << YAML::Key << "prebeam" << YAML::Value << d.prebeam;
  e << YAML::Key << "ctc_weight" << YAML::Value << d.ctc_weight;
  e << YAML::Key << "length_penalty" << YAML::Value << d.length_penalty;
  e << YAML::Key << "blank_penalty" << YAML::Value << d.blank_penalty;
  e << YAML::Key << "max_len_ratio" << YAML::Value << d.max_len_ratio;
  e << YAML::EndMap;
}

void emit_task(YAML::Emitter& e, const SyntheticTaskSpec& t) {
  e << YAML::BeginMap;
  e << YAML::Key << "name" << YAML::Value << to_string(t.task);
  e << YAML::Key << "vocab" << YAML::Value << t.vocab;
  e << YAML::Key << "min_length" << YAML::Value << t.min_length;
  e << YAML::Key << "max_length" << YAML::Value << t.max_length;
  e << YAML::Key << "repeat_min" << YAML::Value << t.repeat_min;
  e << YAML::Key << "repeat_max" << YAML::Value << t.repeat_max;
  e << YAML::Key << "noise_rate" << YAML::Value << t.noise_rate;
  e << YAML::Key << "train_size" << YAML::Value << t.train_size;
  e << YAML::Key << "valid_size" << YAML::Value << t.valid_size;
  e << YAML::Key << "test_size" << YAML::Value << t.test_size;
  e << YAML::Key << "seed" << YAML::Value << t.seed;
  e << YAML::EndMap;
}

void emit_model(YAML::Emitter& e, const ModelConfig& m) {
  e << YAML::BeginMap;
  e << YAML::Key << "task" << YAML::Value << to_string(m.task);
  e << YAML::Key << "d_model" << YAML::Value << m.d_model;
  e << YAML::Key << "n_heads" << YAML::Value << m.n_heads;
  e << YAML::Key << "d_ff" << YAML::Value << m.d_ff;
  e << YAML::Key << "n_src_layers" << YAML::Value << m.n_src_layers;
  e << YAML::Key << "n_adjust_layers" << YAML::Value << m.n_adjust_layers;
  e << YAML::Key << "n_tgt_layers" << YAML::Value << m.n_tgt_layers;
  e << YAML::Key << "n_dec_layers" << YAML::Value << m.n_dec_layers;
  e << YAML::Key << "upsample_rate" << YAML::Value << m.upsample_rate;
  e << YAML::Key << "downsample_rate" << YAML::Value << m.downsample_rate;
  e << YAML::Key << "dropout" << YAML::Value << m.dropout;
  e << YAML::Key << "src_ctc_layer_index" << YAML::Value << m.src_ctc_layer_index;
  e << YAML::EndMap;
}

void emit_train(YAML::Emitter& e, const TrainConfig& t) {
  e << YAML::BeginMap;
  e << YAML::Key << "lambda1" << YAML::Value << t.lambda1;
  e << YAML::Key << "lambda2" << YAML::Value << t.lambda2;
  e << YAML::Key << "peak_lr" << YAML::Value << t.peak_lr;
  e << YAML::Key << "warmup_steps" << YAML::Value << t.warmup_steps;
  e << YAML::Key << "beta1" << YAML::Value << t.beta1;
  e << YAML::Key << "beta2" << YAML::Value << t.beta2;
  e << YAML::Key << "adam_eps" << YAML::Value << t.adam_eps;
  e << YAML::Key << "weight_decay" << YAML::Value << t.weight_decay;
  e << YAML::Key << "epochs" << YAML::Value << t.epochs;
  e << YAML::Key << "batch_size" << YAML::Value << t.batch_size;
  e << YAML::Key << "seed" << YAML::Value << t.seed;
  e << YAML::Key << "use_src_ctc" << YAML::Value << t.use_src_ctc;
  e << YAML::Key << "use_tgt_ctc" << YAML::Value << t.use_tgt_ctc;
  e << YAML::Key << "label_smoothing" << YAML::Value << t.label_smoothing;
  e << YAML::Key << "clip_norm" << YAML::Value << t.clip_norm;
  e << YAML::Key << "max_steps" << YAML::Value << t.max_steps;
  e << YAML::Key << "valid_every" << YAML::Value << t.valid_every;
  e << YAML::Key << "valid_limit" << YAML::Value << t.valid_limit;
  e << YAML::EndMap;
}

template <typename F>
std::string emit(F&& body) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e.SetBoolFormat(YAML::TrueFalseBool);
  body(e);
  return e.c_str();
}

std::string task_yaml(const ExperimentConfig& c) {
  return emit([&](YAML::Emitter& e) { emit_task(e, c.task); });
}

std::string training_yaml(const ExperimentConfig& c) {
  return emit([&](YAML::Emitter& e) {
    e << YAML::BeginMap;
    e << YAML::Key << "seed" << YAML::Value << c.seed;
    e << YAML::Key << "task" << YAML::Value;
    emit_task(e, c.task);
    e << YAML::Key << "model" << YAML::Value;
    emit_model(e, c.model);
    e << YAML::Key << "train" << YAML::Value;
    emit_train(e, c.train);
    e << YAML::EndMap;
  });
}

}  // namespace

std::string to_yaml(const ExperimentConfig& c) {
  return emit([&](YAML::Emitter& e) {
    e << YAML::BeginMap;
    e << YAML::Key << "seed" << YAML::Value << c.seed;
    e << YAML::Key << "output_dir" << YAML::Value << c.output_dir.string();
    e << YAML::Key << "workers" << YAML::Value << c.workers;
    e << YAML::Key << "task" << YAML::Value;
    emit_task(e, c.task);
    e << YAML::Key << "model" << YAML::Value;
    emit_model(e, c.model);
    e << YAML::Key << "train" << YAML::Value;
    emit_train(e, c.train);
    e << YAML::Key << "decode" << YAML::Value << YAML::BeginSeq;
    for (const auto& d : c.decode) emit_decode(e, d);
    e << YAML::EndSeq;
    e << YAML::Key << "sweep" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "length_penalty" << YAML::Value << YAML::Flow << c.sweep.length_penalty;
    e << YAML::Key << "beam" << YAML::Value << YAML::Flow << c.sweep.beam;
    e << YAML::Key << "ctc_weight" << YAML::Value << YAML::Flow << c.sweep.ctc_weight;
    e << YAML::Key << "modes" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (auto m : c.sweep.modes) e << to_string(m);
    e << YAML::EndSeq;
    e << YAML::Key << "ablation" << YAML::Value << c.sweep.ablation;
    e << YAML::EndMap;
    e << YAML::Key << "eval" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "split" << YAML::Value << c.eval_split;
    e << YAML::Key << "limit" << YAML::Value << c.eval_limit;
    e << YAML::EndMap;
    e << YAML::EndMap;
  });
}

std::string content_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunLayout run_layout(const ExperimentConfig& config) {
  return RunLayout{config.output_dir /
                   (to_string(config.task.task) + "-" + content_hash(training_yaml(config)).substr(0, 12))};
}

namespace {

void say(const CommandContext& ctx, const std::string& msg) {
  if (ctx.info) *ctx.info << msg << '\n';
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + p.string());
  }
  std::filesystem::rename(tmp, p);
}

void write_snapshot(const ExperimentConfig& config) {
  write_file(run_layout(config).snapshot(), to_yaml(config));
}

const std::vector<Example>& eval_split(const Corpus& corpus, const std::string& split) {
  if (split == "train") return corpus.train;
  if (split == "valid") return corpus.valid;
  return corpus.test;
}

std::vector<Example> limited(const std::vector<Example>& v, std::size_t limit) {
  if (limit == 0 || limit >= v.size()) return v;
  return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(limit)};
}

std::string format_number(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

nlohmann::ordered_json summary_json(const CorpusSummary& s) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(s.mode);
  j["beam_size"] = s.beam_size;
  j["length_penalty"] = s.length_penalty;
  j["ctc_weight"] = s.ctc_weight;
  j["examples"] = s.examples;
  j["accuracy"] = s.accuracy;
  j["bleu"] = s.bleu;
  j["length_ratio"] = s.length_ratio;
  j["search_error_rate"] = s.search_error_rate;
  j["logadds"] = s.logadds;
  j["nanos"] = s.nanos;
  j["nanos_per_input_token"] = s.nanos_per_input_token;
  return j;
}

CorpusSummary summary_from_json(const nlohmann::json& j) {
  CorpusSummary s;
  s.mode = decode_mode_from_string(j.at("mode").get<std::string>());
  s.beam_size = j.at("beam_size").get<Index>();
  s.length_penalty = j.at("length_penalty").get<double>();
  s.ctc_weight = j.at("ctc_weight").get<double>();
  s.examples = j.at("examples").get<std::size_t>();
  s.accuracy = j.at("accuracy").get<double>();
  s.bleu = j.at("bleu").get<double>();
  s.length_ratio = j.at("length_ratio").get<double>();
  s.search_error_rate = j.at("search_error_rate").get<double>();
  s.logadds = j.at("logadds").get<std::uint64_t>();
  s.nanos = j.at("nanos").get<std::int64_t>();
  s.nanos_per_input_token = j.at("nanos_per_input_token").get<double>();
  return s;
}

/// Decodes one cell, reusing a completed result when present.
CorpusSummary run_cell(const Model& model, const std::vector<Example>& examples,
                       const DecodeConfig& dc, const std::filesystem::path& dir) {
  const auto stem = cell_name(dc);
  const auto summary_path = dir / (stem + ".summary.json");
  if (std::filesystem::exists(summary_path)) return summary_from_json(nlohmann::json::parse(read_file(summary_path)));
  const auto out = decode_corpus(model, examples, dc);
  std::ostringstream results;
  write_results(results, out.results);
  write_file(dir / (stem + ".jsonl"), results.str());
  write_file(summary_path, summary_json(out.summary).dump(2) + "\n");
  return out.summary;
}

template <typename Job>
void run_parallel(std::size_t jobs, Index workers, Job&& job) {
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next++;
      if (i >= jobs) return;
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = jobs;
      }
    }
  };
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(std::max<Index>(1, workers)), jobs);
  std::vector<std::thread> threads;
  for (std::size_t k = 1; k < n; ++k) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

void write_summaries(const std::filesystem::path& dir, const std::vector<CorpusSummary>& rows) {
  std::ostringstream summary, timing;
  write_summary_csv(summary, rows);
  write_timing_csv(timing, rows);
  write_file(dir / "summary.csv", summary.str());
  write_file(dir / "timing.csv", timing.str());
}

Model load_trained(const ExperimentConfig& config) {
  const auto layout = run_layout(config);
  if (!std::filesystem::exists(layout.checkpoint()))
    throw std::runtime_error("no trained model at " + layout.checkpoint().string() + "; run train first");
  return load_checkpoint(layout.checkpoint());
}

Corpus load_data(const ExperimentConfig& config) {
  const auto layout = run_layout(config);
  if (!std::filesystem::exists(layout.data_dir() / "stamp"))
    throw std::runtime_error("no corpus at " + layout.data_dir().string() + "; run gen-data first");
  return read_corpus(layout.data_dir());
}

}  // namespace

std::string cell_name(const DecodeConfig& d) {
  return to_string(d.mode) + "_b" + std::to_string(d.beam_size) + "_p" + std::to_string(d.prebeam) +
         "_w" + format_number(d.mode_ctc_weight()) + "_lp" + format_number(d.length_penalty) + "_bp" +
         format_number(d.blank_penalty) + "_r" + format_number(d.max_len_ratio);
}

bool cmd_gen_data(const ExperimentConfig& config, const CommandContext& ctx) {
  const auto layout = run_layout(config);
  write_snapshot(config);
  const auto stamp = layout.data_dir() / "stamp";
  const std::string want = content_hash(task_yaml(config));
  if (read_file(stamp) == want) {
    say(ctx, "gen-data: corpus up to date in " + layout.data_dir().string());
    return false;
  }
  const Corpus corpus = generate_corpus(config.task);
  write_corpus(layout.data_dir(), corpus);
  write_file(stamp, want);
  say(ctx, "gen-data: wrote " + std::to_string(corpus.train.size()) + "/" +
               std::to_string(corpus.valid.size()) + "/" + std::to_string(corpus.test.size()) +
               " examples to " + layout.data_dir().string());
  return true;
}

bool cmd_train(const ExperimentConfig& config, const CommandContext& ctx) {
  const auto layout = run_layout(config);
  write_snapshot(config);
  const auto stamp = layout.root / "train.stamp";
  const std::string want = content_hash(training_yaml(config));
  if (read_file(stamp) == want && std::filesystem::exists(layout.checkpoint())) {
    say(ctx, "train: checkpoint up to date at " + layout.checkpoint().string());
    return false;
  }
  cmd_gen_data(config, ctx);
  const Corpus corpus = read_corpus(layout.data_dir());
  const Model init = Model::initialize(config.model, config.seed);
  say(ctx, "train: " + std::to_string(init.params().scalar_count()) + " parameters, " +
               std::to_string(corpus.train.size()) + " training examples");
  std::ofstream log(layout.train_log(), std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + layout.train_log().string());
  const TrainResult result = train(init, corpus.train, corpus.valid, config.train, &log);
  save_checkpoint(layout.checkpoint(), result.best);
  write_file(stamp, want);
  say(ctx, "train: " + std::to_string(result.steps) + " steps, best validation loss " +
               format_number(result.best_report.loss) + " (attention greedy accuracy " +
               format_number(result.best_report.attn_greedy_accuracy) + ")");
  return true;
}

std::vector<CorpusSummary> cmd_decode(const ExperimentConfig& config, const CommandContext& ctx) {
  const auto layout = run_layout(config);
  write_snapshot(config);
  const Model model = load_trained(config);
  const Corpus corpus = load_data(config);
  const auto examples = limited(eval_split(corpus, config.eval_split), config.eval_limit);
  const auto dir = layout.decode_dir() / (config.eval_split + "-" + std::to_string(config.eval_limit));
  std::vector<CorpusSummary> rows(config.decode.size());
  run_parallel(config.decode.size(), config.workers, [&](std::size_t i) {
    rows[i] = run_cell(model, examples, config.decode[i], dir);
  });
  write_summaries(dir, rows);
  for (const auto& r : rows)
    say(ctx, "decode: " + to_string(r.mode) + " b=" + std::to_string(r.beam_size) + " accuracy " +
                 format_number(r.accuracy) + " BLEU " + format_number(r.bleu));
  return rows;
}

EvalReport cmd_evaluate(const std::filesystem::path& results_path,
                        const std::filesystem::path& references, const Model* model,
                        double ctc_weight) {
  std::ifstream in(results_path);
  if (!in) throw std::runtime_error("cannot open results file " + results_path.string());
  const auto results = read_results(in);
  const auto refs = read_examples_file(references);
  TokenCorpus hyp_tokens, ref_tokens;
  std::vector<double> hyp_scores, ref_scores;
  EvalReport report;
  Index input_tokens = 0;
  for (const auto& r : results) {
    if (r.id >= refs.size())
      throw std::runtime_error("result id " + std::to_string(r.id) + " has no reference in " +
                               references.string());
    const Example& ex = refs[r.id];
    hyp_tokens.push_back(r.tokens);
    ref_tokens.push_back(ex.target.ids);
    report.logadds += r.logadds;
    report.nanos += r.nanos;
    input_tokens += static_cast<Index>(ex.source.ids.size());
    if (model) {
      const EncodeResult enc = model->encode(ex.source.ids);
      hyp_scores.push_back(exact_joint_logp(*model, enc, r.tokens, ctc_weight));
      ref_scores.push_back(exact_joint_logp(*model, enc, ex.target.ids, ctc_weight));
    }
  }
  const EvalReport base = evaluate_tokens(hyp_tokens, ref_tokens);
  report.label = results_path.stem().string();
  report.examples = base.examples;
  report.accuracy = base.accuracy;
  report.bleu = base.bleu;
  report.length_ratio = base.length_ratio;
  report.nanos_per_input_token =
      static_cast<double>(report.nanos) / static_cast<double>(std::max<Index>(1, input_tokens));
  if (model) {
    report.search_error_rate = search_error_rate(hyp_scores, ref_scores);
    report.layer_monotonicity = layer_monotonicity(*model, refs);
  }
  return report;
}

std::vector<CorpusSummary> cmd_sweep(const ExperimentConfig& config, const CommandContext& ctx) {
  const auto layout = run_layout(config);
  cmd_train(config, ctx);
  const Model model = load_trained(config);
  const Corpus corpus = load_data(config);
  const auto examples = limited(eval_split(corpus, config.eval_split), config.eval_limit);

  std::vector<DecodeConfig> cells;
  const DecodeConfig base = config.decode.empty() ? DecodeConfig{} : config.decode.front();
  for (DecodeMode mode : config.sweep.modes)
    for (Index beam : config.sweep.beam)
      for (double lp : config.sweep.length_penalty)
        for (double w : config.sweep.ctc_weight) {
          DecodeConfig d = base;
          d.mode = mode;
          d.beam_size = beam;
          d.length_penalty = lp;
          d.ctc_weight = w;
          const bool weightless = mode == DecodeMode::attn_only || mode == DecodeMode::ctc_only;
          if (weightless && w != config.sweep.ctc_weight.front()) continue;
          d.validate();
          cells.push_back(d);
        }
  const auto sweep_dir = layout.root / ("sweep-" + content_hash(to_yaml(config)).substr(0, 8));
  write_file(sweep_dir / "config.yaml", to_yaml(config));
  std::vector<CorpusSummary> rows(cells.size());
  run_parallel(cells.size(), config.workers, [&](std::size_t i) {
    rows[i] = run_cell(model, examples, cells[i], sweep_dir / "cells");
  });
  write_summaries(sweep_dir, rows);

  // (penalty, BLEU, length ratio) series per mode and weight
  {
    std::ostringstream series;
    for (const auto& r : rows) {
      nlohmann::ordered_json j;
      j["series"] = to_string(r.mode) + "/w" + format_number(r.ctc_weight) + "/b" + std::to_string(r.beam_size);
      j["length_penalty"] = r.length_penalty;
      j["bleu"] = r.bleu;
      j["length_ratio"] = r.length_ratio;
      j["accuracy"] = r.accuracy;
      j["search_error_rate"] = r.search_error_rate;
      series << j.dump() << '\n';
    }
    write_file(sweep_dir / "series.jsonl", series.str());
  }
  say(ctx, "sweep: " + std::to_string(rows.size()) + " cells written to " + sweep_dir.string());

  if (config.sweep.ablation) {
    struct Variant {
      bool src, tgt;
    };
    const std::vector<Variant> variants{{true, true}, {true, false}, {false, true}, {false, false}};
    std::vector<ValidationReport> reports(variants.size());
    std::vector<std::string> roots(variants.size());
    run_parallel(variants.size(), config.workers, [&](std::size_t i) {
      ExperimentConfig v = config;
      v.train.use_src_ctc = variants[i].src;
      v.train.use_tgt_ctc = variants[i].tgt;
      cmd_train(v, CommandContext{});
      const Model m = load_trained(v);
      const Corpus data = load_data(v);
      reports[i] = validate_model(m, data.valid, v.train);
      roots[i] = run_layout(v).root.string();
    });
    std::ostringstream csv;
    csv << "use_src_ctc,use_tgt_ctc,valid_loss,attn_greedy_accuracy,ctc_greedy_accuracy,run\n";
    csv << std::setprecision(17);
    for (std::size_t i = 0; i < variants.size(); ++i)
      csv << variants[i].src << ',' << variants[i].tgt << ',' << reports[i].loss << ','
          << reports[i].attn_greedy_accuracy << ',' << reports[i].ctc_greedy_accuracy << ','
          << roots[i] << '\n';
    write_file(sweep_dir / "ablation.csv", csv.str());
    say(ctx, "sweep: ablation grid written to " + (sweep_dir / "ablation.csv").string());
  }
  return rows;
}

bool cmd_oracle_check(const OracleSuiteConfig& suite, std::ostream& report) {
  bool ok = true;
  for (const auto& outcome : run_oracle_suite(suite)) {
    ok = ok && outcome.passed;
    report << (outcome.passed ? "PASS" : "FAIL") << "  " << outcome.name << "  instances="
           << outcome.instances << " worst=" << std::setprecision(3) << outcome.worst
           << " tol=" << outcome.tolerance << " time=" << std::fixed << std::setprecision(2)
           << outcome.seconds << "s" << std::defaultfloat;
    if (!outcome.detail.empty()) report << "  [" << outcome.detail << "]";
    report << '\n';
  }
  return ok;
}

}  // namespace jointctc
