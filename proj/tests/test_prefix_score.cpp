#include "jointctc/oracle.hpp"
#include "jointctc/oracle_suite.hpp"
#include "jointctc/prefix_score.hpp"

#include <doctest.h>

#include <cmath>

using namespace jointctc;

namespace {

PosteriorGrid<double> fixture_grid() {
  Matrix p(3, 3);
  p << 0.5, 0.3, 0.2,
       0.2, 0.5, 0.3,
       0.4, 0.1, 0.5;
  return PosteriorGrid<double>{p.array().log().matrix(), kBlank};
}

OutSyncPrefixState<double> extend_all(const PosteriorGrid<double>& g, const std::vector<TokenId>& y,
                                      LogAddCounter* counter = nullptr) {
  auto s = outsync_initial(g);
  const TokenId eos = static_cast<TokenId>(g.vocab());
  for (TokenId c : y) s = outsync_extend(s, c, eos, g, counter);
  return s;
}

InSyncPrefixSet<double> run_insync(const PosteriorGrid<double>& g, Index frames) {
  std::vector<TokenId> all;
  for (TokenId c = 1; c < g.vocab(); ++c) all.push_back(c);
  auto set = insync_initial<double>();
  for (Index t = 0; t < frames; ++t) set = insync_advance(set, t, g, std::span<const TokenId>(all));
  return set;
}

}  // namespace

TEST_CASE("out-sync prefix scores on the fixed grid") {
  const auto g = fixture_grid();
  CHECK(extend_all(g, {1}).pscore == doctest::Approx(-0.5798184952529423).epsilon(1e-13));
  CHECK(extend_all(g, {2}).pscore == doctest::Approx(-0.916290731874155).epsilon(1e-13));
  CHECK(extend_all(g, {1, 2}).pscore == doctest::Approx(-1.139434283188365).epsilon(1e-13));
  CHECK(extend_all(g, {2, 1}).pscore == doctest::Approx(-2.0794415416798357).epsilon(1e-13));
}

TEST_CASE("eos turns the prefix score into the sequence likelihood") {
  const auto g = fixture_grid();
  const TokenId eos = 3;
  for (const auto& y : std::vector<std::vector<TokenId>>{{}, {1}, {1, 2}, {2, 1}, {1, 1}}) {
    const auto s = outsync_extend(extend_all(g, y), eos, eos, g);
    CHECK(s.ended);
    CHECK(s.pscore == doctest::Approx(ctc_logprob(g, std::span<const TokenId>(y)).logp).epsilon(1e-12));
  }
  CHECK(outsync_extend(extend_all(g, {1, 2}), eos, eos, g).pscore ==
        doctest::Approx(-1.167962366802903).epsilon(1e-13));
}

TEST_CASE("prefix scores never exceed their parent") {
  std::mt19937_64 rng(21);
  const auto g = random_grid(6, 4, rng);
  const std::vector<TokenId> y{3, 1, 1, 2};
  auto s = outsync_initial(g);
  for (TokenId c : y) {
    const auto next = outsync_extend(s, c, 4, g);
    CHECK(next.pscore <= s.pscore + 1e-12);
    s = next;
  }
}

TEST_CASE("out-sync prefix scores against enumeration") {
  std::mt19937_64 rng(22);
  for (int i = 0; i < 30; ++i) {
    const Index T = 1 + static_cast<Index>(rng() % 6);
    const auto g = random_grid(T, 3 + static_cast<Index>(rng() % 2), rng);
    const auto y = random_labels(1 + static_cast<Index>(rng() % 3), g.vocab(), rng);
    const double fast = extend_all(g, y).pscore;
    const double slow = oracle::brute_prefix_mass(g, y);
    if (slow == kLogZero<double>)
      CHECK(fast == kLogZero<double>);
    else
      CHECK(std::abs(fast - slow) <= 1e-9);
  }
}

TEST_CASE("out-sync extension costs linear log-additions") {
  std::mt19937_64 rng(23);
  for (Index T : {8, 16, 32}) {
    const auto g = random_grid(T, 5, rng);
    LogAddCounter non_repeat, repeat;
    const auto s = extend_all(g, {2});
    outsync_extend(s, 3, 5, g, &non_repeat);
    outsync_extend(s, 2, 5, g, &repeat);
    CHECK(non_repeat.count == static_cast<std::uint64_t>(4 * (T - 1)));
    CHECK(repeat.count == static_cast<std::uint64_t>(3 * (T - 1)));
  }
}

TEST_CASE("out-sync rejects blank and extension after eos") {
  const auto g = fixture_grid();
  const auto s = outsync_initial(g);
  CHECK_THROWS_AS(outsync_extend(s, kBlank, 3, g), std::invalid_argument);
  const auto ended = outsync_extend(s, 3, 3, g);
  CHECK_THROWS_AS(outsync_extend(ended, 1, 3, g), std::invalid_argument);
  CHECK_THROWS_AS(outsync_extend(s, 7, 3, g), std::invalid_argument);
}

TEST_CASE("unpruned in-sync masses sum to one at every frame") {
  std::mt19937_64 rng(24);
  const auto g = random_grid(5, 3, rng);
  for (Index t = 1; t <= 5; ++t) {
    const auto set = run_insync(g, t);
    double acc = kLogZero<double>;
    for (const auto& [prefix, st] : set.states) acc = log_add(acc, st.total());
    CHECK(std::abs(acc) < 1e-12);
  }
}

TEST_CASE("final in-sync masses equal the collapsed-sequence likelihoods") {
  std::mt19937_64 rng(25);
  for (int i = 0; i < 10; ++i) {
    const Index T = 1 + static_cast<Index>(rng() % 5);
    const auto g = random_grid(T, 3, rng);
    const auto set = run_insync(g, T);
    const auto masses = oracle::collapsed_masses(g);
    CHECK(set.states.size() == masses.size());
    for (const auto& [y, mass] : masses) {
      REQUIRE(set.states.count(y) == 1);
      CHECK(std::abs(set.states.at(y).total() - mass) <= 1e-10);
    }
  }
}

TEST_CASE("in-sync masses on the fixed grid") {
  const auto g = fixture_grid();
  const auto set = run_insync(g, 3);
  CHECK(set.states.at({1, 2}).total() == doctest::Approx(-1.167962366802903).epsilon(1e-13));
  CHECK(set.states.at({}).total() == doctest::Approx(-3.2188758248682006).epsilon(1e-13));
}

TEST_CASE("in-sync repeats need an intervening blank") {
  Matrix p(2, 2);
  p << 0.5, 0.5,
       0.5, 0.5;
  const PosteriorGrid<double> g{p.array().log().matrix(), kBlank};
  const auto set = run_insync(g, 2);
  // paths: bb, b1, 1b, 11 -> {}, {1} x3
  CHECK(set.states.at({}).total() == doctest::Approx(std::log(0.25)));
  CHECK(set.states.at({1}).total() == doctest::Approx(std::log(0.75)));
  CHECK(set.states.count({1, 1}) == 0);
}

TEST_CASE("in-sync frame order is enforced") {
  const auto g = fixture_grid();
  const std::vector<TokenId> c{1};
  auto set = insync_initial<double>();
  CHECK_THROWS_AS(insync_advance(set, 1, g, std::span<const TokenId>(c)), std::invalid_argument);
  set = insync_advance(set, 0, g, std::span<const TokenId>(c));
  set = insync_advance(set, 1, g, std::span<const TokenId>(c));
  set = insync_advance(set, 2, g, std::span<const TokenId>(c));
  CHECK_THROWS_AS(insync_advance(set, 3, g, std::span<const TokenId>(c)), std::invalid_argument);
}

TEST_CASE("blank penalty discounts each blank frame") {
  const auto g = fixture_grid();
  const std::vector<TokenId> all{1, 2};
  auto plain = insync_initial<double>();
  auto penalized = insync_initial<double>();
  for (Index t = 0; t < 3; ++t) {
    plain = insync_advance(plain, t, g, std::span<const TokenId>(all));
    penalized = insync_advance(penalized, t, g, std::span<const TokenId>(all), 1.0);
  }
  CHECK(penalized.states.at({}).total() == doctest::Approx(plain.states.at({}).total() - 3.0));
  // z = (1, 2, 2) uses no blank and is untouched
  CHECK(penalized.states.at({1, 2}).p_nb > plain.states.at({1, 2}).p_nb - 1.0);
  CHECK(penalized.states.at({1, 2}).total() < plain.states.at({1, 2}).total());
}
