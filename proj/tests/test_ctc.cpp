#include "jointctc/ctc.hpp"
#include "jointctc/oracle.hpp"
#include "jointctc/oracle_suite.hpp"

#include <doctest.h>

#include <cmath>

using namespace jointctc;

namespace {

PosteriorGrid<double> grid_from_probs(const Matrix& p) {
  return PosteriorGrid<double>{p.array().log().matrix(), kBlank};
}

// rows over {blank, 1, 2}
PosteriorGrid<double> fixture_grid() {
  Matrix p(3, 3);
  p << 0.5, 0.3, 0.2,
       0.2, 0.5, 0.3,
       0.4, 0.1, 0.5;
  return grid_from_probs(p);
}

double logp(const PosteriorGrid<double>& g, std::vector<TokenId> y) {
  return ctc_logprob(g, std::span<const TokenId>(y)).logp;
}

}  // namespace

TEST_CASE("collapse merges repeats before dropping blanks") {
  const std::vector<TokenId> z{1, 1, 0, 1, 2, 2, 0, 0, 2};
  CHECK(collapse(z) == std::vector<TokenId>{1, 1, 2, 2});
  CHECK(collapse(std::vector<TokenId>{0, 0}).empty());
  CHECK(min_frames(std::vector<TokenId>{1, 1, 2}) == 4);
  CHECK(min_frames(std::vector<TokenId>{}) == 0);
}

TEST_CASE("uniform two-frame grid") {
  const auto g = grid_from_probs(Matrix::Constant(2, 3, 1.0 / 3.0));
  CHECK(logp(g, {1}) == doctest::Approx(std::log(1.0 / 3.0)).epsilon(1e-15));
  CHECK(logp(g, {}) == doctest::Approx(std::log(1.0 / 9.0)).epsilon(1e-15));
  CHECK(logp(g, {1, 2}) == doctest::Approx(std::log(1.0 / 9.0)).epsilon(1e-15));
}

TEST_CASE("fixed grid against frozen enumeration values") {
  const auto g = fixture_grid();
  CHECK(logp(g, {1, 2}) == doctest::Approx(-1.167962366802903).epsilon(1e-13));
  CHECK(logp(g, {1}) == doctest::Approx(-1.4524341636244358).epsilon(1e-13));
  CHECK(logp(g, {1, 1}) == doctest::Approx(-5.115995809754082).epsilon(1e-13));
  CHECK(logp(g, {}) == doctest::Approx(-3.2188758248682006).epsilon(1e-13));
  CHECK(logp(g, {2, 1}) == doctest::Approx(-2.5902671654458262).epsilon(1e-13));
}

TEST_CASE("infeasible targets score -inf") {
  const auto g = fixture_grid();
  const std::vector<TokenId> y{2, 2, 2};
  const auto s = ctc_logprob(g, std::span<const TokenId>(y));
  CHECK_FALSE(s.feasible);
  CHECK(s.logp == kLogZero<double>);
  CHECK_THROWS_AS(viterbi_align(g, std::span<const TokenId>(y)), InfeasibleAlignment);
}

TEST_CASE("labels outside the grid are rejected") {
  const auto g = fixture_grid();
  CHECK_THROWS_AS(logp(g, {3}), std::invalid_argument);
  CHECK_THROWS_AS(logp(g, {0}), std::invalid_argument);
}

TEST_CASE("forward and backward agree") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto g = random_grid(6, 4, rng);
    const auto y = random_labels(3, 4, rng);
    const auto alpha = ctc_forward(g, std::span<const TokenId>(y));
    const auto beta = ctc_backward(g, std::span<const TokenId>(y));
    const double total = logp(g, y);
    // every frame's occupancy sums to the total
    for (Index t = 0; t < g.frames(); ++t) {
      double acc = kLogZero<double>;
      for (Index s = 0; s < alpha.cols(); ++s)
        acc = log_add(acc, alpha(t, s) + beta(t, s) - g.logp(t, detail::lattice_label(y, s, kBlank)));
      CHECK(acc == doctest::Approx(total).epsilon(1e-12));
    }
  }
}

TEST_CASE("occupancy rows sum to one") {
  std::mt19937_64 rng(4);
  const auto g = random_grid(7, 4, rng);
  const std::vector<TokenId> y{1, 3, 3};
  const auto occ = ctc_occupancy(g, std::span<const TokenId>(y));
  for (Index t = 0; t < g.frames(); ++t) CHECK(occ.gamma.row(t).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ctc_logprob matches enumeration on random instances") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 60; ++i) {
    const Index T = 1 + static_cast<Index>(rng() % 7);
    const Index V = 2 + static_cast<Index>(rng() % 3);
    const auto g = random_grid(T, V, rng);
    const auto y = random_labels(static_cast<Index>(rng() % 4), V, rng);
    const double fast = logp(g, y);
    const double slow = oracle::brute_ctc(g, y);
    if (slow == kLogZero<double>)
      CHECK(fast == kLogZero<double>);
    else
      CHECK(std::abs(fast - slow) <= 1e-9);
  }
}

TEST_CASE("loss gradient is softmax minus occupancy") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix logits(5, 4);
  for (Index i = 0; i < logits.size(); ++i) logits.data()[i] = n(rng);
  const std::vector<TokenId> y{2, 2, 1};
  const auto report = grad_check([&](const Tensor& x) { return ctc_loss(x, y); }, logits, 1e-5, 1e-6);
  CHECK(report.passed);
  const auto [loss, grad] = ctc_loss_grad<double>(logits, y, kBlank);
  CHECK(loss == doctest::Approx(-logp(PosteriorGrid<double>::from_logits(logits), y)).epsilon(1e-13));
  // rows of softmax - gamma sum to zero
  for (Index t = 0; t < grad.rows(); ++t) CHECK(std::abs(grad.row(t).sum()) < 1e-12);
}

TEST_CASE("ctc_loss infeasibility policies") {
  const Tensor logits = Tensor::parameter(Matrix::Zero(2, 3));
  const std::vector<TokenId> y{1, 1};
  CHECK_THROWS_AS(ctc_loss(logits, y), InfeasibleAlignment);
  const Tensor skipped = ctc_loss(logits, y, kBlank, InfeasiblePolicy::skip);
  CHECK(skipped.item() == 0.0);
  CHECK_FALSE(skipped.requires_grad());
}

TEST_CASE("greedy decoding collapses the row argmax") {
  Matrix p(5, 3);
  p << 0.1, 0.8, 0.1,
       0.1, 0.8, 0.1,
       0.8, 0.1, 0.1,
       0.1, 0.8, 0.1,
       0.2, 0.2, 0.6;
  const auto g = grid_from_probs(p);
  CHECK(greedy_decode(g) == std::vector<TokenId>{1, 1, 2});
  CHECK(greedy_decode(g) == oracle::brute_greedy(g));
}

TEST_CASE("viterbi path on the fixed grid") {
  const auto g = fixture_grid();
  const std::vector<TokenId> y{1, 2};
  const auto path = viterbi_align(g, std::span<const TokenId>(y));
  CHECK(path.z == std::vector<TokenId>{0, 1, 2});
  CHECK(path.logp == doctest::Approx(-2.0794415416798357).epsilon(1e-13));
}

TEST_CASE("viterbi ties prefer blank states on the way back") {
  const auto g = grid_from_probs(Matrix::Constant(3, 3, 1.0 / 3.0));
  const std::vector<TokenId> y{1};
  CHECK(viterbi_align(g, std::span<const TokenId>(y)).z == std::vector<TokenId>{1, 0, 0});
}

TEST_CASE("viterbi matches enumeration") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 40; ++i) {
    const Index T = 1 + static_cast<Index>(rng() % 7);
    const auto g = random_grid(T, 4, rng);
    const auto y = random_labels(static_cast<Index>(rng() % 3), 4, rng);
    if (min_frames(y) > T) continue;
    const auto path = viterbi_align(g, std::span<const TokenId>(y));
    CHECK(std::abs(path.logp - oracle::brute_best_path(g, y)) <= 1e-9);
    CHECK(collapse(path.z) == y);
  }
}

TEST_CASE("grid validation") {
  PosteriorGrid<double> g = fixture_grid();
  CHECK_NOTHROW(g.validate());
  g.logp(0, 0) += 0.1;
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  PosteriorGrid<double> empty;
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
}

TEST_CASE("single precision instantiation") {
  const auto g = fixture_grid();
  PosteriorGrid<float> gf{g.logp.cast<float>(), kBlank};
  const std::vector<TokenId> y{1, 2};
  CHECK(ctc_logprob(gf, std::span<const TokenId>(y)).logp ==
        doctest::Approx(-1.167962366802903).epsilon(1e-5));
}
