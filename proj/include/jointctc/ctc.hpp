#pragma once

#include "jointctc/numerics.hpp"

#include <algorithm>
#include <compare>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace jointctc {

using TokenId = int;

/// Id 0 is the CTC blank; real tokens are 1..n; eos is n + 1 and exists
/// only on the attention side.
inline constexpr TokenId kBlank = 0;

enum class SeqKind { source, transcript, target };

struct TokenSeq {
  std::vector<TokenId> ids;
  SeqKind kind = SeqKind::target;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  friend bool operator==(const TokenSeq& a, const TokenSeq& b) { return a.ids == b.ids; }
};

/// Per-frame log-distributions over {blank} and the token vocabulary.
template <typename Scalar = double>
struct PosteriorGrid {
  MatrixX<Scalar> logp;  // T x V
  TokenId blank_id = kBlank;

  Index frames() const { return logp.rows(); }
  Index vocab() const { return logp.cols(); }

  /// Checks shape and per-row normalization.
  void validate(Scalar tol = Scalar(1e-9)) const {
    if (frames() < 1) throw std::invalid_argument("PosteriorGrid: needs at least one frame");
    if (blank_id < 0 || blank_id >= vocab())
      throw std::invalid_argument("PosteriorGrid: blank id outside vocabulary");
    for (Index t = 0; t < frames(); ++t) {
      const Scalar lse = log_sum_exp(logp.row(t).transpose());
      if (!(std::abs(lse) <= tol))
        throw std::invalid_argument("PosteriorGrid: row " + std::to_string(t) +
                                    " is not normalized");
    }
  }

  static PosteriorGrid from_logits(const MatrixX<Scalar>& logits, TokenId blank = kBlank) {
    PosteriorGrid g;
    g.logp.resize(logits.rows(), logits.cols());
    for (Index t = 0; t < logits.rows(); ++t)
      g.logp.row(t) = logits.row(t).array() - log_sum_exp(logits.row(t).transpose());
    g.blank_id = blank;
    return g;
  }
};

struct AlignmentPath {
  std::vector<TokenId> z;
  double logp = kLogZero<double>;
};

template <typename Scalar>
struct CtcScore {
  Scalar logp = kLogZero<Scalar>;
  bool feasible = false;
};

class InfeasibleAlignment : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Merge adjacent duplicates, then drop blanks.
inline std::vector<TokenId> collapse(std::span<const TokenId> z, TokenId blank = kBlank) {
  std::vector<TokenId> out;
  TokenId prev = -1;
  for (TokenId id : z) {
    if (id != prev && id != blank) out.push_back(id);
    prev = id;
  }
  return out;
}

/// Minimum number of frames any alignment of y needs.
inline Index min_frames(std::span<const TokenId> y) {
  Index n = static_cast<Index>(y.size());
  for (std::size_t i = 1; i < y.size(); ++i)
    if (y[i] == y[i - 1]) ++n;
  return n;
}

namespace detail {

inline TokenId lattice_label(std::span<const TokenId> y, Index s, TokenId blank) {
  return (s % 2 == 0) ? blank : y[static_cast<std::size_t>(s / 2)];
}

inline bool can_skip(std::span<const TokenId> y, Index s, TokenId blank) {
  if (s < 2 || s % 2 == 0) return false;
  return lattice_label(y, s, blank) != lattice_label(y, s - 2, blank);
}

inline void check_labels(std::span<const TokenId> y, Index vocab, TokenId blank) {
  for (TokenId id : y)
    if (id < 0 || id >= vocab || id == blank)
      throw std::invalid_argument("CTC label " + std::to_string(id) +
                                  " is blank or outside the grid vocabulary");
}

}  // namespace detail

/// Forward variables over the 2|y|+1 blank-interleaved lattice (T x S).
template <typename Scalar>
MatrixX<Scalar> ctc_forward(const PosteriorGrid<Scalar>& grid, std::span<const TokenId> y) {
  detail::check_labels(y, grid.vocab(), grid.blank_id);
  const Index T = grid.frames();
  const Index S = 2 * static_cast<Index>(y.size()) + 1;
  MatrixX<Scalar> alpha = MatrixX<Scalar>::Constant(T, S, kLogZero<Scalar>);
  alpha(0, 0) = grid.logp(0, grid.blank_id);
  if (S > 1) alpha(0, 1) = grid.logp(0, y[0]);
  for (Index t = 1; t < T; ++t) {
    for (Index s = 0; s < S; ++s) {
      Scalar a = alpha(t - 1, s);
      if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
      if (detail::can_skip(y, s, grid.blank_id)) a = log_add(a, alpha(t - 1, s - 2));
      if (a != kLogZero<Scalar>) a += grid.logp(t, detail::lattice_label(y, s, grid.blank_id));
      alpha(t, s) = a;
    }
  }
  return alpha;
}

template <typename Scalar>
MatrixX<Scalar> ctc_backward(const PosteriorGrid<Scalar>& grid, std::span<const TokenId> y) {
  detail::check_labels(y, grid.vocab(), grid.blank_id);
  const Index T = grid.frames();
  const Index S = 2 * static_cast<Index>(y.size()) + 1;
  MatrixX<Scalar> beta = MatrixX<Scalar>::Constant(T, S, kLogZero<Scalar>);
  beta(T - 1, S - 1) = grid.logp(T - 1, grid.blank_id);
  if (S > 1) beta(T - 1, S - 2) = grid.logp(T - 1, y.back());
  for (Index t = T - 2; t >= 0; --t) {
    for (Index s = 0; s < S; ++s) {
      Scalar b = beta(t + 1, s);
      if (s + 1 < S) b = log_add(b, beta(t + 1, s + 1));
      if (s + 2 < S && detail::can_skip(y, s + 2, grid.blank_id)) b = log_add(b, beta(t + 1, s + 2));
      if (b != kLogZero<Scalar>) b += grid.logp(t, detail::lattice_label(y, s, grid.blank_id));
      beta(t, s) = b;
    }
  }
  return beta;
}

/// log P(y | grid), summed over every alignment that collapses to y.
template <typename Scalar>
CtcScore<Scalar> ctc_logprob(const PosteriorGrid<Scalar>& grid, std::span<const TokenId> y) {
  if (min_frames(y) > grid.frames()) {
    detail::check_labels(y, grid.vocab(), grid.blank_id);
    return {kLogZero<Scalar>, false};
  }
  const MatrixX<Scalar> alpha = ctc_forward(grid, y);
  const Index T = grid.frames();
  const Index S = alpha.cols();
  Scalar ll = alpha(T - 1, S - 1);
  if (S > 1) ll = log_add(ll, alpha(T - 1, S - 2));
  return {ll, true};
}

/// Per-frame label occupancy gamma (T x V, probability domain) and the
/// log-likelihood it was normalized by.
template <typename Scalar>
struct CtcOccupancy {
  MatrixX<Scalar> gamma;
  Scalar logp = kLogZero<Scalar>;
};

template <typename Scalar>
CtcOccupancy<Scalar> ctc_occupancy(const PosteriorGrid<Scalar>& grid, std::span<const TokenId> y) {
  CtcOccupancy<Scalar> occ;
  occ.logp = ctc_logprob(grid, y).logp;
  if (occ.logp == kLogZero<Scalar>)
    throw InfeasibleAlignment("CTC target needs " + std::to_string(min_frames(y)) +
                              " frames but the grid has " + std::to_string(grid.frames()));
  const MatrixX<Scalar> alpha = ctc_forward(grid, y);
  const MatrixX<Scalar> beta = ctc_backward(grid, y);
  const Index T = grid.frames();
  const Index S = alpha.cols();
  MatrixX<Scalar> log_gamma = MatrixX<Scalar>::Constant(T, grid.vocab(), kLogZero<Scalar>);
  for (Index t = 0; t < T; ++t) {
    for (Index s = 0; s < S; ++s) {
      const TokenId k = detail::lattice_label(y, s, grid.blank_id);
      // alpha and beta both include the emission at t
      const Scalar v = alpha(t, s) + beta(t, s) - grid.logp(t, k);
      if (v != kLogZero<Scalar> && !std::isnan(v)) log_gamma(t, k) = log_add(log_gamma(t, k), v);
    }
  }
  occ.gamma = (log_gamma.array() - occ.logp).exp().matrix();
  return occ;
}

/// Loss and gradient with respect to unnormalized logits: the gradient is
/// softmax(logits) - gamma.
template <typename Scalar>
std::pair<Scalar, MatrixX<Scalar>> ctc_loss_grad(const MatrixX<Scalar>& logits,
                                                 std::span<const TokenId> y,
                                                 TokenId blank = kBlank) {
  const auto grid = PosteriorGrid<Scalar>::from_logits(logits, blank);
  const auto occ = ctc_occupancy(grid, y);
  MatrixX<Scalar> grad = grid.logp.array().exp().matrix() - occ.gamma;
  return {-occ.logp, std::move(grad)};
}

/// Best-path decoding: row argmax (lowest id on ties), then collapse.
template <typename Scalar>
std::vector<TokenId> greedy_decode(const PosteriorGrid<Scalar>& grid) {
  std::vector<TokenId> z(static_cast<std::size_t>(grid.frames()));
  for (Index t = 0; t < grid.frames(); ++t) {
    Index best = 0;
    grid.logp.row(t).maxCoeff(&best);
    z[static_cast<std::size_t>(t)] = static_cast<TokenId>(best);
  }
  return collapse(z, grid.blank_id);
}

/// Highest-scoring single alignment of y. Ties prefer the blank state,
/// then the lower token id.
template <typename Scalar>
AlignmentPath viterbi_align(const PosteriorGrid<Scalar>& grid, std::span<const TokenId> y) {
  detail::check_labels(y, grid.vocab(), grid.blank_id);
  const Index T = grid.frames();
  if (min_frames(y) > T)
    throw InfeasibleAlignment("viterbi_align: target needs " + std::to_string(min_frames(y)) +
                              " frames but the grid has " + std::to_string(T));
  const Index S = 2 * static_cast<Index>(y.size()) + 1;
  const TokenId blank = grid.blank_id;
  MatrixX<Scalar> score = MatrixX<Scalar>::Constant(T, S, kLogZero<Scalar>);
  Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> back(T, S);
  back.setConstant(-1);

  // true when state a should win a tie against state b
  auto prefer = [&](Index a, Index b) {
    const TokenId la = detail::lattice_label(y, a, blank);
    const TokenId lb = detail::lattice_label(y, b, blank);
    if ((la == blank) != (lb == blank)) return la == blank;
    if (la != lb) return la < lb;
    return a < b;
  };

  score(0, 0) = grid.logp(0, blank);
  if (S > 1) score(0, 1) = grid.logp(0, y[0]);
  for (Index t = 1; t < T; ++t) {
    for (Index s = 0; s < S; ++s) {
      Index best = s;
      Scalar best_score = score(t - 1, s);
      auto consider = [&](Index from) {
        const Scalar v = score(t - 1, from);
        if (v > best_score || (v == best_score && v != kLogZero<Scalar> && prefer(from, best))) {
          best = from;
          best_score = v;
        }
      };
      if (s >= 1) consider(s - 1);
      if (detail::can_skip(y, s, blank)) consider(s - 2);
      if (best_score != kLogZero<Scalar>) {
        score(t, s) = best_score + grid.logp(t, detail::lattice_label(y, s, blank));
        back(t, s) = best;
      }
    }
  }

  Index state = S - 1;
  if (S > 1) {
    const Scalar a = score(T - 1, S - 1), b = score(T - 1, S - 2);
    if (b > a || (b == a && !prefer(S - 1, S - 2))) state = S - 2;
  }
  AlignmentPath path;
  path.logp = static_cast<double>(score(T - 1, state));
  path.z.resize(static_cast<std::size_t>(T));
  for (Index t = T - 1; t >= 0; --t) {
    path.z[static_cast<std::size_t>(t)] = detail::lattice_label(y, state, blank);
    if (t > 0) state = back(t, state);
  }
  return path;
}

// --- tape integration ----------------------------------------------------

enum class InfeasiblePolicy { error, skip };

/// CTC negative log-likelihood of y given raw logits (T x V), recorded on
/// the tape. Under InfeasiblePolicy::skip an impossible target yields a
/// zero loss with no gradient instead of throwing.
Tensor ctc_loss(const Tensor& logits, std::span<const TokenId> y, TokenId blank = kBlank,
                InfeasiblePolicy policy = InfeasiblePolicy::error);

}  // namespace jointctc
