#include "jointctc/oracle.hpp"

#include <cmath>
#include <string>

namespace jointctc::oracle {

namespace {

double naive_log_add(double a, double b) {
  if (a == kLogZero<double>) return b;
  if (b == kLogZero<double>) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

std::uint64_t checked_power(Index base, Index exp, std::uint64_t limit) {
  std::uint64_t n = 1;
  for (Index i = 0; i < exp; ++i) {
    n *= static_cast<std::uint64_t>(base);
    if (n > limit) throw BudgetExceeded("enumeration exceeds node budget");
  }
  return n;
}

std::vector<TokenId> collapse_naive(std::span<const TokenId> z, TokenId blank) {
  std::vector<TokenId> merged;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (i == 0 || z[i] != z[i - 1]) merged.push_back(z[i]);
  std::vector<TokenId> out;
  for (TokenId id : merged)
    if (id != blank) out.push_back(id);
  return out;
}

}  // namespace

void enumerate_paths(const PosteriorGrid<double>& grid, const EnumerationBudget& budget,
                     const std::function<void(std::span<const TokenId>, double)>& visit) {
  const Index T = grid.frames();
  const Index V = grid.vocab();
  if (T > budget.max_frames)
    throw BudgetExceeded("grid has " + std::to_string(T) + " frames, budget allows " +
                         std::to_string(budget.max_frames));
  if (V > budget.max_vocab)
    throw BudgetExceeded("grid has " + std::to_string(V) + " symbols, budget allows " +
                         std::to_string(budget.max_vocab));
  const std::uint64_t total = checked_power(V, T, budget.max_nodes);
  std::vector<TokenId> z(static_cast<std::size_t>(T));
  for (std::uint64_t code = 0; code < total; ++code) {
    std::uint64_t rest = code;
    double lp = 0.0;
    for (Index t = 0; t < T; ++t) {
      z[static_cast<std::size_t>(t)] = static_cast<TokenId>(rest % static_cast<std::uint64_t>(V));
      rest /= static_cast<std::uint64_t>(V);
      lp += grid.logp(t, z[static_cast<std::size_t>(t)]);
    }
    visit(z, lp);
  }
}

std::map<std::vector<TokenId>, double> collapsed_masses(const PosteriorGrid<double>& grid,
                                                        const EnumerationBudget& budget) {
  std::map<std::vector<TokenId>, double> masses;
  enumerate_paths(grid, budget, [&](std::span<const TokenId> z, double lp) {
    auto key = collapse_naive(z, grid.blank_id);
    auto [it, inserted] = masses.try_emplace(std::move(key), lp);
    if (!inserted) it->second = naive_log_add(it->second, lp);
  });
  return masses;
}

double brute_ctc(const PosteriorGrid<double>& grid, std::span<const TokenId> y,
                 const EnumerationBudget& budget) {
  if (static_cast<Index>(y.size()) > budget.max_length)
    throw BudgetExceeded("label sequence longer than budget");
  double total = kLogZero<double>;
  enumerate_paths(grid, budget, [&](std::span<const TokenId> z, double lp) {
    const auto c = collapse_naive(z, grid.blank_id);
    if (std::equal(c.begin(), c.end(), y.begin(), y.end())) total = naive_log_add(total, lp);
  });
  return total;
}

double brute_best_path(const PosteriorGrid<double>& grid, std::span<const TokenId> y,
                       const EnumerationBudget& budget) {
  double best = kLogZero<double>;
  enumerate_paths(grid, budget, [&](std::span<const TokenId> z, double lp) {
    const auto c = collapse_naive(z, grid.blank_id);
    if (std::equal(c.begin(), c.end(), y.begin(), y.end())) best = std::max(best, lp);
  });
  return best;
}

double brute_prefix_mass(const PosteriorGrid<double>& grid, std::span<const TokenId> prefix,
                         const EnumerationBudget& budget) {
  double total = kLogZero<double>;
  enumerate_paths(grid, budget, [&](std::span<const TokenId> z, double lp) {
    const auto c = collapse_naive(z, grid.blank_id);
    if (c.size() >= prefix.size() && std::equal(prefix.begin(), prefix.end(), c.begin()))
      total = naive_log_add(total, lp);
  });
  return total;
}

std::vector<TokenId> brute_greedy(const PosteriorGrid<double>& grid) {
  std::vector<TokenId> z;
  for (Index t = 0; t < grid.frames(); ++t) {
    TokenId best = 0;
    for (Index v = 1; v < grid.vocab(); ++v)
      if (grid.logp(t, v) > grid.logp(t, best)) best = static_cast<TokenId>(v);
    z.push_back(best);
  }
  return collapse_naive(z, grid.blank_id);
}

ExhaustiveResult exhaustive_joint_argmax(const PosteriorGrid<double>& grid,
                                         const SequenceScorer& attention, Index n_tokens,
                                         const JointObjective& objective,
                                         const EnumerationBudget& budget) {
  if (objective.max_length > budget.max_length)
    throw BudgetExceeded("length cap exceeds budget");
  if (n_tokens + 1 > budget.max_vocab) throw BudgetExceeded("vocabulary exceeds budget");
  const double w = objective.ctc_weight;
  const auto ctc_masses =
      w > 0.0 ? collapsed_masses(grid, budget) : std::map<std::vector<TokenId>, double>{};
  const TokenId eos = static_cast<TokenId>(n_tokens + 1);

  ExhaustiveResult best;
  std::vector<TokenId> y;
  auto score_one = [&](const std::vector<TokenId>& seq) {
    double ctc = kLogZero<double>;
    if (w > 0.0) {
      auto it = ctc_masses.find(seq);
      if (it != ctc_masses.end()) ctc = it->second;
    }
    double attn = 0.0;
    if (w < 1.0) {
      std::vector<TokenId> full = seq;
      full.push_back(eos);
      attn = attention(full);
    }
    double s = objective.length_penalty * static_cast<double>(seq.size());
    if (w > 0.0) s += w * ctc;
    if (w < 1.0) s += (1.0 - w) * attn;
    ++best.sequences_scored;
    if (std::isnan(s) || s == kLogZero<double>) return;
    // strict improvement keeps the earlier (shorter, then lexicographically
    // smaller) sequence on ties, given the enumeration order below
    if (s > best.score) {
      best.score = s;
      best.tokens = seq;
      best.ctc_logp = ctc;
      best.attn_logp = attn;
    }
  };

  std::uint64_t visited = 0;
  for (Index len = 0; len <= objective.max_length; ++len) {
    const std::uint64_t count = checked_power(n_tokens, len, budget.max_nodes);
    for (std::uint64_t code = 0; code < count; ++code) {
      if (++visited > budget.max_nodes) throw BudgetExceeded("exhaustive search over budget");
      y.assign(static_cast<std::size_t>(len), 0);
      std::uint64_t rest = code;
      // most significant digit first so codes enumerate lexicographically
      for (Index i = len - 1; i >= 0; --i) {
        y[static_cast<std::size_t>(i)] =
            static_cast<TokenId>(1 + rest % static_cast<std::uint64_t>(n_tokens));
        rest /= static_cast<std::uint64_t>(n_tokens);
      }
      score_one(y);
    }
  }
  return best;
}

}  // namespace jointctc::oracle
