#pragma once

#include "jointctc/model.hpp"
#include "jointctc/oracle.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace jointctc {

/// Outcome of one family of oracle comparisons.
struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::size_t instances = 0;
  /// Largest observed discrepancy (meaning depends on the check).
  double worst = 0.0;
  double tolerance = 0.0;
  double seconds = 0.0;
  std::string detail;
};

/// T x V grid of row-normalized log-probabilities from N(0, spread) logits.
PosteriorGrid<double> random_grid(Index frames, Index vocab, std::mt19937_64& rng,
                                  double spread = 2.0);

/// Uniformly random labels in 1..vocab-1 of the given length.
std::vector<TokenId> random_labels(Index length, Index vocab, std::mt19937_64& rng);

/// A randomly initialized MT model small enough for exhaustive search.
Model random_tiny_model(Index tgt_vocab, Index upsample, std::uint64_t seed, Index d_model = 16);

struct OracleSuiteConfig {
  std::uint64_t seed = 20240611;
  std::size_t ctc_instances = 200;
  std::size_t gradient_instances = 50;
  std::size_t prefix_instances = 100;
  std::size_t search_instances = 20;
  oracle::EnumerationBudget budget{};
};

/// ctc_logprob against path enumeration (T <= 8, |y| <= 4, V <= 4).
CheckOutcome check_ctc_against_enumeration(const OracleSuiteConfig& config);
/// ctc_loss tape gradients against central differences (T <= 6, V <= 4).
CheckOutcome check_ctc_gradient(const OracleSuiteConfig& config);
/// Out-sync eos score against ctc_logprob, out-sync prefix scores and
/// unpruned in-sync masses against enumeration (T <= 6).
CheckOutcome check_prefix_scoring(const OracleSuiteConfig& config);
/// viterbi_align and greedy_decode against enumeration and a row scan.
CheckOutcome check_alignment(const OracleSuiteConfig& config);
/// Both joint searches with a beam covering the whole space against
/// exhaustive_joint_argmax on random tiny models (V <= 4, length <= 4).
CheckOutcome check_exhaustive_search(const OracleSuiteConfig& config);

std::vector<CheckOutcome> run_oracle_suite(const OracleSuiteConfig& config);

}  // namespace jointctc
