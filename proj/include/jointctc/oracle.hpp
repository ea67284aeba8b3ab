#pragma once

#include "jointctc/ctc.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

namespace jointctc::oracle {

// Brute-force references. Nothing here reuses the lattice recursions in
// ctc.hpp or prefix_score.hpp: every quantity comes from enumerating paths
// or sequences directly.

struct EnumerationBudget {
  Index max_frames = 10;
  Index max_length = 6;
  Index max_vocab = 6;
  std::uint64_t max_nodes = 5'000'000;
};

class BudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Calls visit(z, logp) for every length-T path over the grid vocabulary.
void enumerate_paths(const PosteriorGrid<double>& grid, const EnumerationBudget& budget,
                     const std::function<void(std::span<const TokenId>, double)>& visit);

/// Log-probability of every collapsed label sequence reachable on the grid.
std::map<std::vector<TokenId>, double> collapsed_masses(const PosteriorGrid<double>& grid,
                                                        const EnumerationBudget& budget = {});

double brute_ctc(const PosteriorGrid<double>& grid, std::span<const TokenId> y,
                 const EnumerationBudget& budget = {});

/// Best single path logp among those collapsing to y.
double brute_best_path(const PosteriorGrid<double>& grid, std::span<const TokenId> y,
                       const EnumerationBudget& budget = {});

/// Log-mass of all paths whose collapse starts with `prefix`.
double brute_prefix_mass(const PosteriorGrid<double>& grid, std::span<const TokenId> prefix,
                         const EnumerationBudget& budget = {});

/// Best-path decoding by direct row scan.
std::vector<TokenId> brute_greedy(const PosteriorGrid<double>& grid);

struct JointObjective {
  double ctc_weight = 0.3;
  double length_penalty = 0.0;
  Index max_length = 4;
};

struct ExhaustiveResult {
  std::vector<TokenId> tokens;
  double score = kLogZero<double>;
  double ctc_logp = kLogZero<double>;
  double attn_logp = kLogZero<double>;
  std::uint64_t sequences_scored = 0;
};

/// Scores a complete token sequence (eos included) under the attention model.
using SequenceScorer = std::function<double(std::span<const TokenId>)>;

/// Global maximum of
///   w * logP_ctc(y) + (1 - w) * logP_attn(y, eos) + penalty * |y|
/// over every sequence of tokens 1..n_tokens with |y| <= max_length.
/// Ties go to the shorter, then lexicographically smaller sequence.
ExhaustiveResult exhaustive_joint_argmax(const PosteriorGrid<double>& grid,
                                         const SequenceScorer& attention, Index n_tokens,
                                         const JointObjective& objective,
                                         const EnumerationBudget& budget = {});

}  // namespace jointctc::oracle
