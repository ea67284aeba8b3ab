#pragma once

#include "jointctc/ctc.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace jointctc {

/// Counts log-semiring additions so search cost can be compared without
/// wall-clock noise.
struct LogAddCounter {
  std::uint64_t count = 0;
};

namespace detail {
template <typename Scalar>
inline Scalar counted_log_add(Scalar a, Scalar b, LogAddCounter* counter) {
  if (counter) ++counter->count;
  return log_add(a, b);
}
}  // namespace detail

// --- full-input prefix scoring (output-synchronous search) ----------------

/// CTC prefix state over the whole input. gamma_n[t] / gamma_b[t] hold the
/// log-mass of frames 0..t collapsing exactly to `prefix` and ending in a
/// non-blank / blank emission.
template <typename Scalar = double>
struct OutSyncPrefixState {
  std::vector<TokenId> prefix;
  VectorX<Scalar> gamma_n;
  VectorX<Scalar> gamma_b;
  Scalar pscore = 0;
  /// Set once eos was scored; pscore is then the full-sequence likelihood.
  bool ended = false;
};

template <typename Scalar>
OutSyncPrefixState<Scalar> outsync_initial(const PosteriorGrid<Scalar>& grid) {
  OutSyncPrefixState<Scalar> s;
  const Index T = grid.frames();
  s.gamma_n = VectorX<Scalar>::Constant(T, kLogZero<Scalar>);
  s.gamma_b.resize(T);
  Scalar acc = 0;
  for (Index t = 0; t < T; ++t) {
    acc += grid.logp(t, grid.blank_id);
    s.gamma_b(t) = acc;
  }
  s.pscore = 0;
  return s;
}

/// Extends a prefix by one token (or scores eos) against the full grid.
/// Costs O(T) log-additions.
template <typename Scalar>
OutSyncPrefixState<Scalar> outsync_extend(const OutSyncPrefixState<Scalar>& g, TokenId c,
                                          TokenId eos, const PosteriorGrid<Scalar>& grid,
                                          LogAddCounter* counter = nullptr) {
  if (c == grid.blank_id) throw std::invalid_argument("outsync_extend: cannot extend with blank");
  if (g.ended) throw std::invalid_argument("outsync_extend: prefix already ended");
  const Index T = grid.frames();
  OutSyncPrefixState<Scalar> h;
  h.prefix = g.prefix;
  if (c == eos) {
    h.gamma_n = g.gamma_n;
    h.gamma_b = g.gamma_b;
    h.pscore = detail::counted_log_add(g.gamma_n(T - 1), g.gamma_b(T - 1), counter);
    h.ended = true;
    return h;
  }
  if (c < 0 || c >= grid.vocab())
    throw std::invalid_argument("outsync_extend: token outside the grid vocabulary");
  h.prefix.push_back(c);
  const bool repeat = !g.prefix.empty() && g.prefix.back() == c;
  h.gamma_n.resize(T);
  h.gamma_b.resize(T);
  h.gamma_n(0) = g.prefix.empty() ? grid.logp(0, c) : kLogZero<Scalar>;
  h.gamma_b(0) = kLogZero<Scalar>;
  Scalar psi = h.gamma_n(0);
  for (Index t = 1; t < T; ++t) {
    const Scalar phi = repeat ? g.gamma_b(t - 1)
                              : detail::counted_log_add(g.gamma_b(t - 1), g.gamma_n(t - 1), counter);
    const Scalar emit_c = grid.logp(t, c);
    h.gamma_n(t) = detail::counted_log_add(h.gamma_n(t - 1), phi, counter) + emit_c;
    h.gamma_b(t) = detail::counted_log_add(h.gamma_b(t - 1), h.gamma_n(t - 1), counter) +
                   grid.logp(t, grid.blank_id);
    psi = detail::counted_log_add(psi, phi + emit_c, counter);
  }
  h.pscore = psi;
  return h;
}

// --- partial-input prefix beam (input-synchronous search) -----------------

template <typename Scalar = double>
struct InSyncPrefixState {
  std::vector<TokenId> prefix;
  Scalar p_b = kLogZero<Scalar>;
  Scalar p_nb = kLogZero<Scalar>;

  Scalar total() const { return log_add(p_b, p_nb); }
};

/// All live prefixes after consuming frames [0, next_frame).
template <typename Scalar = double>
struct InSyncPrefixSet {
  Index next_frame = 0;
  std::map<std::vector<TokenId>, InSyncPrefixState<Scalar>> states;
};

template <typename Scalar>
InSyncPrefixSet<Scalar> insync_initial() {
  InSyncPrefixSet<Scalar> set;
  InSyncPrefixState<Scalar> empty;
  empty.p_b = 0;
  set.states.emplace(std::vector<TokenId>{}, std::move(empty));
  return set;
}

/// Consumes frame t. Blank and repeat-of-last emissions keep a prefix;
/// each non-blank non-repeat candidate spawns prefix + c. Prefixes that
/// coincide are merged by log-adding their masses. `blank_penalty` is
/// subtracted from log p_t(blank).
template <typename Scalar>
InSyncPrefixSet<Scalar> insync_advance(const InSyncPrefixSet<Scalar>& in, Index t,
                                       const PosteriorGrid<Scalar>& grid,
                                       std::span<const TokenId> candidates,
                                       Scalar blank_penalty = 0,
                                       LogAddCounter* counter = nullptr) {
  if (t != in.next_frame)
    throw std::invalid_argument("insync_advance: expected frame " + std::to_string(in.next_frame) +
                                ", got " + std::to_string(t));
  if (t >= grid.frames()) throw std::invalid_argument("insync_advance: frame past end of grid");
  InSyncPrefixSet<Scalar> out;
  out.next_frame = t + 1;
  const Scalar log_blank = grid.logp(t, grid.blank_id) - blank_penalty;

  // unreachable prefixes get no entry
  auto accrue = [&](const std::vector<TokenId>& prefix, Scalar InSyncPrefixState<Scalar>::*field, Scalar v) {
    if (v == kLogZero<Scalar>) return;
    auto [it, inserted] = out.states.try_emplace(prefix);
    if (inserted) it->second.prefix = prefix;
    Scalar& dst = it->second.*field;
    dst = (dst == kLogZero<Scalar>) ? v : detail::counted_log_add(dst, v, counter);
  };

  for (const auto& [prefix, st] : in.states) {
    const Scalar total = detail::counted_log_add(st.p_b, st.p_nb, counter);
    accrue(prefix, &InSyncPrefixState<Scalar>::p_b, total + log_blank);
    if (!prefix.empty()) accrue(prefix, &InSyncPrefixState<Scalar>::p_nb, st.p_nb + grid.logp(t, prefix.back()));
    for (TokenId c : candidates) {
      if (c == grid.blank_id) continue;
      if (c < 0 || c >= grid.vocab())
        throw std::invalid_argument("insync_advance: candidate outside the grid vocabulary");
      std::vector<TokenId> ext = prefix;
      ext.push_back(c);
      const bool repeat = !prefix.empty() && prefix.back() == c;
      // a repeat only starts a new token after an intervening blank
      accrue(ext, &InSyncPrefixState<Scalar>::p_nb, (repeat ? st.p_b : total) + grid.logp(t, c));
    }
  }
  return out;
}

}  // namespace jointctc
