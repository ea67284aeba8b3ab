#pragma once

#include "jointctc/ctc.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace jointctc {

enum class SyntheticTask { copy, map, expand, reverse, frames };

std::string to_string(SyntheticTask task);
SyntheticTask synthetic_task_from_string(const std::string& s);

/// Parameters of a synthetic transduction corpus.
///
///   copy     target = source
///   map      target_i = perm(source_i), a fixed seeded bijection
///   expand   each source token c becomes (2c, 2c + 1)
///   reverse  target = perm(source) reversed
///   frames   a latent transcript is rendered as frames (each token held
///            for repeat_min..repeat_max frames, frames replaced by random
///            tokens at noise_rate); target = perm(transcript) with
///            adjacent pairs swapped
struct SyntheticTaskSpec {
  SyntheticTask task = SyntheticTask::copy;
  Index vocab = 10;
  Index min_length = 3;
  Index max_length = 8;
  Index repeat_min = 2;
  Index repeat_max = 4;
  double noise_rate = 0.0;
  std::size_t train_size = 20000;
  std::size_t valid_size = 1000;
  std::size_t test_size = 1000;
  std::uint64_t seed = 1;

  void validate() const;
  Index source_vocab() const { return vocab; }
  Index target_vocab() const;
  bool is_speech_analog() const { return task == SyntheticTask::frames; }
};

struct Example {
  std::size_t id = 0;
  TokenSeq source{{}, SeqKind::source};
  TokenSeq transcript{{}, SeqKind::transcript};
  TokenSeq target{{}, SeqKind::target};
};

struct Corpus {
  std::vector<Example> train;
  std::vector<Example> valid;
  std::vector<Example> test;
};

/// The seeded permutation of 1..vocab used by map, reverse and frames.
std::vector<TokenId> task_permutation(const SyntheticTaskSpec& spec);

/// Target (and transcript) for a given source under the deterministic
/// part of the task. Not meaningful for frames, whose source is sampled
/// from the transcript instead.
std::vector<TokenId> transduce(const SyntheticTaskSpec& spec, std::span<const TokenId> source);

/// Renders a transcript as frames; `noise_rate` random substitutions.
std::vector<TokenId> render_frames(std::span<const TokenId> transcript, Index repeat_min,
                                   Index repeat_max, double noise_rate, Index vocab,
                                   std::mt19937_64& rng);

/// Deterministic corpus; splits are disjoint in their latent sequence.
Corpus generate_corpus(const SyntheticTaskSpec& spec);

// Corpus files: one example per line, three TAB-separated fields
// (source, transcript, target), each a space-separated list of decimal
// ids. The transcript field is empty for MT tasks.

void write_examples(std::ostream& out, const std::vector<Example>& examples);
std::vector<Example> read_examples(std::istream& in);
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus read_corpus(const std::filesystem::path& dir);
std::vector<Example> read_examples_file(const std::filesystem::path& path);

}  // namespace jointctc
