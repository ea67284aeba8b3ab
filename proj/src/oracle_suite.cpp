#include "jointctc/oracle_suite.hpp"

#include "jointctc/decoding.hpp"
#include "jointctc/prefix_score.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace jointctc {

PosteriorGrid<double> random_grid(Index frames, Index vocab, std::mt19937_64& rng, double spread) {
  std::normal_distribution<double> n(0.0, spread);
  Matrix logits(frames, vocab);
  for (Index i = 0; i < logits.size(); ++i) logits.data()[i] = n(rng);
  return PosteriorGrid<double>::from_logits(logits);
}

std::vector<TokenId> random_labels(Index length, Index vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<TokenId> token(1, static_cast<TokenId>(vocab - 1));
  std::vector<TokenId> y(static_cast<std::size_t>(length));
  for (auto& id : y) id = token(rng);
  return y;
}

Model random_tiny_model(Index tgt_vocab, Index upsample, std::uint64_t seed, Index d_model) {
  ModelConfig c;
  c.task = TaskKind::mt;
  c.d_model = d_model;
  c.n_heads = 2;
  c.d_ff = 2 * d_model;
  c.n_src_layers = 1;
  c.n_adjust_layers = 1;
  c.n_tgt_layers = 1;
  c.n_dec_layers = 1;
  c.upsample_rate = upsample;
  c.src_vocab = tgt_vocab;
  c.tgt_vocab = tgt_vocab;
  c.dropout = 0.0;
  c.src_ctc_layer_index = 2;
  return Model::initialize(c, seed);
}

namespace {

using Clock = std::chrono::steady_clock;

struct Timer {
  Clock::time_point t0 = Clock::now();
  double seconds() const { return std::chrono::duration<double>(Clock::now() - t0).count(); }
};

void track(CheckOutcome& out, double diff, const std::string& what) {
  if (!(diff <= out.worst) || std::isnan(diff)) {
    out.worst = std::isnan(diff) ? INFINITY : diff;
    out.detail = what;
  }
}

double log_diff(double a, double b) {
  if (a == kLogZero<double> && b == kLogZero<double>) return 0.0;
  return std::abs(a - b);
}

std::string describe(const std::vector<TokenId>& y) {
  std::ostringstream s;
  s << '(';
  for (std::size_t i = 0; i < y.size(); ++i) s << (i ? "," : "") << y[i];
  s << ')';
  return s.str();
}

}  // namespace

CheckOutcome check_ctc_against_enumeration(const OracleSuiteConfig& config) {
  Timer timer;
  CheckOutcome out;
  out.name = "ctc_logprob vs enumeration";
  out.tolerance = 1e-9;
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<Index> frames(1, 8), vocab(2, 4), length(0, 4);
  for (std::size_t i = 0; i < config.ctc_instances; ++i) {
    const Index T = frames(rng);
    const Index V = vocab(rng);
    const auto grid = random_grid(T, V, rng);
    const auto y = random_labels(length(rng), V, rng);
    const double fast = ctc_logprob(grid, std::span<const TokenId>(y)).logp;
    const double slow = oracle::brute_ctc(grid, y, config.budget);
    track(out, log_diff(fast, slow),
          "T=" + std::to_string(T) + " V=" + std::to_string(V) + " y=" + describe(y));
    ++out.instances;
  }
  out.passed = out.worst <= out.tolerance;
  out.seconds = timer.seconds();
  return out;
}

CheckOutcome check_ctc_gradient(const OracleSuiteConfig& config) {
  Timer timer;
  CheckOutcome out;
  out.name = "ctc_loss gradient vs central differences";
  out.tolerance = 1e-5;
  std::mt19937_64 rng(config.seed + 1);
  std::uniform_int_distribution<Index> frames(1, 6), vocab(2, 4);
  std::normal_distribution<double> n(0.0, 1.5);
  while (out.instances < config.gradient_instances) {
    const Index T = frames(rng);
    const Index V = vocab(rng);
    std::uniform_int_distribution<Index> length(0, std::min<Index>(T, 4));
    const auto y = random_labels(length(rng), V, rng);
    if (min_frames(y) > T) continue;
    Matrix x(T, V);
    for (Index k = 0; k < x.size(); ++k) x.data()[k] = n(rng);
    const auto report = grad_check([&](const Tensor& logits) { return ctc_loss(logits, y); }, x,
                                   1e-5, out.tolerance);
    track(out, report.max_rel_error,
          "T=" + std::to_string(T) + " V=" + std::to_string(V) + " y=" + describe(y));
    ++out.instances;
  }
  out.passed = out.worst <= out.tolerance;
  out.seconds = timer.seconds();
  return out;
}

CheckOutcome check_prefix_scoring(const OracleSuiteConfig& config) {
  Timer timer;
  CheckOutcome out;
  out.name = "prefix scores vs enumeration";
  out.tolerance = 1e-9;
  std::mt19937_64 rng(config.seed + 2);
  std::uniform_int_distribution<Index> frames(1, 6), vocab(2, 4), length(0, 3);
  bool eos_ok = true;
  for (std::size_t i = 0; i < config.prefix_instances; ++i) {
    const Index T = frames(rng);
    const Index V = vocab(rng);
    const auto grid = random_grid(T, V, rng);
    const auto y = random_labels(length(rng), V, rng);
    const TokenId eos = static_cast<TokenId>(V);
    const std::string tag = "T=" + std::to_string(T) + " V=" + std::to_string(V) + " y=" + describe(y);

    // out-sync: every prefix of y, then eos
    auto st = outsync_initial(grid);
    for (std::size_t k = 0; k < y.size(); ++k) {
      st = outsync_extend(st, y[k], eos, grid);
      const std::vector<TokenId> prefix(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(k) + 1);
      track(out, log_diff(st.pscore, oracle::brute_prefix_mass(grid, prefix, config.budget)),
            "out-sync pscore " + tag);
    }
    const auto ended = outsync_extend(st, eos, eos, grid);
    const double exact = ctc_logprob(grid, std::span<const TokenId>(y)).logp;
    if (log_diff(ended.pscore, exact) > 1e-12) {
      eos_ok = false;
      track(out, INFINITY, "out-sync eos score differs from ctc_logprob beyond 1e-12, " + tag);
    }

    // in-sync without pruning: masses after each frame
    std::vector<TokenId> all;
    for (TokenId c = 1; c < V; ++c) all.push_back(c);
    auto set = insync_initial<double>();
    for (Index t = 0; t < T; ++t) {
      set = insync_advance(set, t, grid, std::span<const TokenId>(all));
      PosteriorGrid<double> head{grid.logp.topRows(t + 1), grid.blank_id};
      for (std::size_t k = 0; k <= y.size(); ++k) {
        const std::vector<TokenId> prefix(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(k));
        double mass = kLogZero<double>;
        for (const auto& [p, s] : set.states)
          if (p.size() >= prefix.size() && std::equal(prefix.begin(), prefix.end(), p.begin()))
            mass = log_add(mass, s.total());
        track(out, log_diff(mass, oracle::brute_prefix_mass(head, prefix, config.budget)),
              "in-sync prefix mass t=" + std::to_string(t) + " " + tag);
      }
    }
    const auto masses = oracle::collapsed_masses(grid, config.budget);
    for (const auto& [p, s] : set.states) {
      auto it = masses.find(p);
      track(out, log_diff(s.total(), it == masses.end() ? kLogZero<double> : it->second),
            "in-sync final mass " + tag);
    }
    ++out.instances;
  }
  out.passed = eos_ok && out.worst <= out.tolerance;
  out.seconds = timer.seconds();
  return out;
}

CheckOutcome check_alignment(const OracleSuiteConfig& config) {
  Timer timer;
  CheckOutcome out;
  out.name = "viterbi and greedy vs enumeration";
  out.tolerance = 1e-9;
  std::mt19937_64 rng(config.seed + 3);
  std::uniform_int_distribution<Index> frames(1, 7), vocab(2, 4), length(0, 3);
  bool greedy_ok = true;
  for (std::size_t i = 0; i < config.ctc_instances; ++i) {
    const Index T = frames(rng);
    const Index V = vocab(rng);
    const auto grid = random_grid(T, V, rng);
    const auto y = random_labels(length(rng), V, rng);
    const std::string tag = "T=" + std::to_string(T) + " V=" + std::to_string(V) + " y=" + describe(y);
    const double best = oracle::brute_best_path(grid, y, config.budget);
    if (min_frames(y) <= T) {
      const auto path = viterbi_align(grid, std::span<const TokenId>(y));
      double recomputed = 0.0;
      for (Index t = 0; t < T; ++t) recomputed += grid.logp(t, path.z[static_cast<std::size_t>(t)]);
      track(out, log_diff(path.logp, best), "viterbi " + tag);
      track(out, log_diff(recomputed, best), "viterbi path " + tag);
      if (collapse(path.z) != y) track(out, INFINITY, "viterbi path does not collapse to y " + tag);
    } else if (best != kLogZero<double>) {
      track(out, INFINITY, "enumeration found a path for an infeasible target " + tag);
    }
    if (greedy_decode(grid) != oracle::brute_greedy(grid)) {
      greedy_ok = false;
      track(out, INFINITY, "greedy " + tag);
    }
    ++out.instances;
  }
  out.passed = greedy_ok && out.worst <= out.tolerance;
  out.seconds = timer.seconds();
  return out;
}

CheckOutcome check_exhaustive_search(const OracleSuiteConfig& config) {
  Timer timer;
  CheckOutcome out;
  out.name = "full-beam joint searches vs exhaustive argmax";
  out.tolerance = 0.0;
  std::mt19937_64 rng(config.seed + 4);
  const Index n_tokens = 3;
  std::size_t mismatches = 0;
  std::size_t search_errors = 0;
  for (std::size_t i = 0; i < config.search_instances; ++i) {
    const Model model = random_tiny_model(n_tokens, 2, config.seed + 100 + i);
    std::uniform_int_distribution<TokenId> token(1, static_cast<TokenId>(n_tokens));
    const std::vector<TokenId> x{token(rng), token(rng)};
    const EncodeResult enc = model.encode(x);

    DecodeConfig dc;
    dc.ctc_weight = std::vector<double>{0.3, 0.5, 0.7}[i % 3];
    dc.length_penalty = (i % 2 == 0) ? 0.0 : 0.5;
    dc.prebeam = n_tokens + 1;
    dc.beam_size = 1 + 3 + 9 + 27 + 81;
    const Index cap = max_output_length(dc, enc.adjusted_length);

    oracle::JointObjective obj{dc.ctc_weight, dc.length_penalty, cap};
    const auto truth = oracle::exhaustive_joint_argmax(
        enc.tgt_grid,
        [&](std::span<const TokenId> full) { return model.sequence_logp(enc.h_tgt, full.first(full.size() - 1)); },
        n_tokens, obj, config.budget);
    const double truth_exact = exact_joint_logp(model, enc, truth.tokens, dc.ctc_weight) +
                               dc.length_penalty * static_cast<double>(truth.tokens.size());

    for (DecodeMode mode : {DecodeMode::joint_osync, DecodeMode::joint_isync}) {
      dc.mode = mode;
      const auto r = decode(model, enc, dc);
      const double hyp_exact = exact_joint_logp(model, enc, r.best.tokens, dc.ctc_weight) +
                               dc.length_penalty * static_cast<double>(r.best.tokens.size());
      if (r.best.tokens != truth.tokens) {
        ++mismatches;
        out.detail = to_string(mode) + " returned " + describe(r.best.tokens) + ", argmax is " +
                     describe(truth.tokens);
      }
      if (truth_exact > hyp_exact + 1e-12) ++search_errors;
    }
    ++out.instances;
  }
  out.worst = static_cast<double>(mismatches + search_errors);
  out.passed = mismatches == 0 && search_errors == 0;
  if (out.passed) out.detail = "search error rate 0";
  out.seconds = timer.seconds();
  return out;
}

std::vector<CheckOutcome> run_oracle_suite(const OracleSuiteConfig& config) {
  using Check = CheckOutcome (*)(const OracleSuiteConfig&);
  const std::vector<std::pair<const char*, Check>> checks{
      {"ctc_logprob vs enumeration", check_ctc_against_enumeration},
      {"ctc_loss gradient vs central differences", check_ctc_gradient},
      {"prefix scores vs enumeration", check_prefix_scoring},
      {"viterbi and greedy vs enumeration", check_alignment},
      {"full-beam joint searches vs exhaustive argmax", check_exhaustive_search},
  };
  std::vector<CheckOutcome> out;
  for (const auto& [name, check] : checks) {
    try {
      out.push_back(check(config));
    } catch (const std::exception& e) {
      CheckOutcome failed;
      failed.name = name;
      failed.detail = e.what();
      out.push_back(failed);
    }
  }
  return out;
}

}  // namespace jointctc
