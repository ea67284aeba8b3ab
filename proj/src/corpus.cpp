#include "jointctc/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace jointctc {

std::string to_string(SyntheticTask task) {
  switch (task) {
    case SyntheticTask::copy: return "copy";
    case SyntheticTask::map: return "map";
    case SyntheticTask::expand: return "expand";
    case SyntheticTask::reverse: return "reverse";
    case SyntheticTask::frames: return "frames";
  }
  return "?";
}

SyntheticTask synthetic_task_from_string(const std::string& s) {
  if (s == "copy") return SyntheticTask::copy;
  if (s == "map") return SyntheticTask::map;
  if (s == "expand") return SyntheticTask::expand;
  if (s == "reverse") return SyntheticTask::reverse;
  if (s == "frames") return SyntheticTask::frames;
  throw std::invalid_argument("unknown synthetic task '" + s + "'");
}

void SyntheticTaskSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("SyntheticTaskSpec: " + m); };
  if (vocab < 2) fail("vocab must be at least 2");
  if (min_length < 1 || max_length < min_length) fail("need 1 <= min_length <= max_length");
  if (repeat_min < 1 || repeat_max < repeat_min) fail("need 1 <= repeat_min <= repeat_max");
  if (noise_rate < 0.0 || noise_rate >= 1.0) fail("noise_rate must lie in [0, 1)");
  // count distinct latent sequences available
  double space = 0.0;
  for (Index len = min_length; len <= max_length; ++len)
    space += std::pow(static_cast<double>(vocab), static_cast<double>(len));
  const double needed = static_cast<double>(train_size + valid_size + test_size);
  if (needed > 0.5 * space)
    fail("requested " + std::to_string(train_size + valid_size + test_size) +
         " distinct examples from a space of only " + std::to_string(static_cast<long long>(space)));
}

Index SyntheticTaskSpec::target_vocab() const {
  return task == SyntheticTask::expand ? 2 * vocab + 1 : vocab;
}

std::vector<TokenId> task_permutation(const SyntheticTaskSpec& spec) {
  std::vector<TokenId> perm(static_cast<std::size_t>(spec.vocab));
  std::iota(perm.begin(), perm.end(), 1);
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

namespace {

std::vector<TokenId> apply_permutation(const std::vector<TokenId>& perm,
                                       std::span<const TokenId> seq) {
  std::vector<TokenId> out;
  out.reserve(seq.size());
  for (TokenId id : seq) out.push_back(perm[static_cast<std::size_t>(id - 1)]);
  return out;
}

}  // namespace

std::vector<TokenId> transduce(const SyntheticTaskSpec& spec, std::span<const TokenId> source) {
  switch (spec.task) {
    case SyntheticTask::copy:
      return {source.begin(), source.end()};
    case SyntheticTask::map:
      return apply_permutation(task_permutation(spec), source);
    case SyntheticTask::expand: {
      std::vector<TokenId> out;
      for (TokenId c : source) {
        out.push_back(2 * c);
        out.push_back(2 * c + 1);
      }
      return out;
    }
    case SyntheticTask::reverse: {
      auto out = apply_permutation(task_permutation(spec), source);
      std::reverse(out.begin(), out.end());
      return out;
    }
    case SyntheticTask::frames: {
      auto out = apply_permutation(task_permutation(spec), source);
      for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
      return out;
    }
  }
  return {};
}

std::vector<TokenId> render_frames(std::span<const TokenId> transcript, Index repeat_min,
                                   Index repeat_max, double noise_rate, Index vocab,
                                   std::mt19937_64& rng) {
  std::uniform_int_distribution<Index> repeat(repeat_min, repeat_max);
  std::uniform_int_distribution<TokenId> token(1, static_cast<TokenId>(vocab));
  std::bernoulli_distribution jitter(noise_rate);
  std::vector<TokenId> frames;
  for (TokenId c : transcript) {
    const Index r = repeat(rng);
    for (Index k = 0; k < r; ++k) frames.push_back(noise_rate > 0.0 && jitter(rng) ? token(rng) : c);
  }
  return frames;
}

Corpus generate_corpus(const SyntheticTaskSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<Index> length(spec.min_length, spec.max_length);
  std::uniform_int_distribution<TokenId> token(1, static_cast<TokenId>(spec.vocab));
  const std::size_t total = spec.train_size + spec.valid_size + spec.test_size;

  std::set<std::vector<TokenId>> seen;
  std::vector<std::vector<TokenId>> latent;
  latent.reserve(total);
  std::size_t attempts = 0;
  while (latent.size() < total) {
    if (++attempts > 100 * total + 1000)
      throw std::invalid_argument("generate_corpus: could not draw enough distinct sequences");
    std::vector<TokenId> seq(static_cast<std::size_t>(length(rng)));
    for (auto& id : seq) id = token(rng);
    if (seen.insert(seq).second) latent.push_back(std::move(seq));
  }

  Corpus corpus;
  for (std::size_t i = 0; i < total; ++i) {
    Example ex;
    ex.id = i;
    if (spec.task == SyntheticTask::frames) {
      ex.transcript.ids = latent[i];
      ex.source.ids = render_frames(latent[i], spec.repeat_min, spec.repeat_max, spec.noise_rate,
                                    spec.vocab, rng);
      ex.target.ids = transduce(spec, latent[i]);
    } else {
      ex.source.ids = latent[i];
      ex.target.ids = transduce(spec, latent[i]);
    }
    auto& split = i < spec.train_size                     ? corpus.train
                  : i < spec.train_size + spec.valid_size ? corpus.valid
                                                          : corpus.test;
    split.push_back(std::move(ex));
  }
  return corpus;
}

namespace {

void write_ids(std::ostream& out, const std::vector<TokenId>& ids) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out << ' ';
    out << ids[i];
  }
}

std::vector<TokenId> parse_ids(const std::string& field, std::size_t line_no) {
  std::vector<TokenId> ids;
  std::istringstream in(field);
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || v < 1 || v > (1l << 30))
      throw std::invalid_argument("line " + std::to_string(line_no) + ": bad token id '" + tok + "'");
    ids.push_back(static_cast<TokenId>(v));
  }
  return ids;
}

}  // namespace

void write_examples(std::ostream& out, const std::vector<Example>& examples) {
  for (const auto& ex : examples) {
    write_ids(out, ex.source.ids);
    out << '\t';
    write_ids(out, ex.transcript.ids);
    out << '\t';
    write_ids(out, ex.target.ids);
    out << '\n';
  }
}

std::vector<Example> read_examples(std::istream& in) {
  std::vector<Example> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3)
      throw std::invalid_argument("line " + std::to_string(line_no) + ": expected 3 TAB-separated fields, found " +
                                  std::to_string(fields.size()));
    Example ex;
    ex.id = examples.size();
    ex.source.ids = parse_ids(fields[0], line_no);
    ex.transcript.ids = parse_ids(fields[1], line_no);
    ex.target.ids = parse_ids(fields[2], line_no);
    if (ex.source.ids.empty())
      throw std::invalid_argument("line " + std::to_string(line_no) + ": empty source");
    examples.push_back(std::move(ex));
  }
  return examples;
}

std::vector<Example> read_examples_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file " + path.string());
  try {
    return read_examples(in);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, split] :
       {std::pair{"train.tsv", &corpus.train}, std::pair{"valid.tsv", &corpus.valid},
        std::pair{"test.tsv", &corpus.test}}) {
    std::ofstream out(dir / name);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    write_examples(out, *split);
  }
}

Corpus read_corpus(const std::filesystem::path& dir) {
  Corpus c;
  c.train = read_examples_file(dir / "train.tsv");
  c.valid = read_examples_file(dir / "valid.tsv");
  c.test = read_examples_file(dir / "test.tsv");
  return c;
}

}  // namespace jointctc
