#include "jointctc/decoding.hpp"

#include "jointctc/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace jointctc {

std::string to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::attn_only: return "attn-only";
    case DecodeMode::ctc_only: return "ctc-only";
    case DecodeMode::joint_osync: return "joint-osync";
    case DecodeMode::joint_isync: return "joint-isync";
    case DecodeMode::attn_then_ctc_rescore: return "attn-then-ctc-rescore";
    case DecodeMode::ctc_then_attn_rescore: return "ctc-then-attn-rescore";
  }
  return "?";
}

DecodeMode decode_mode_from_string(const std::string& s) {
  for (DecodeMode m : {DecodeMode::attn_only, DecodeMode::ctc_only, DecodeMode::joint_osync,
                       DecodeMode::joint_isync, DecodeMode::attn_then_ctc_rescore,
                       DecodeMode::ctc_then_attn_rescore})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown decode mode '" + s + "'");
}

void DecodeConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("DecodeConfig: " + m); };
  if (beam_size < 1) fail("beam_size must be >= 1");
  if (prebeam < 0) fail("prebeam must be >= 0");
  if (!(ctc_weight >= 0.0 && ctc_weight <= 1.0)) fail("ctc_weight must lie in [0, 1]");
  if (!(max_len_ratio > 0.0)) fail("max_len_ratio must be positive");
  if (!std::isfinite(length_penalty) || !std::isfinite(blank_penalty))
    fail("penalties must be finite");
}

Index DecodeConfig::effective_prebeam(Index vocab) const {
  if (prebeam > 0) return std::min(prebeam, vocab);
  const auto p = static_cast<Index>(std::ceil(1.5 * static_cast<double>(beam_size)));
  return std::min(vocab, p);
}

double DecodeConfig::mode_ctc_weight() const {
  switch (mode) {
    case DecodeMode::attn_only: return 0.0;
    case DecodeMode::ctc_only: return 1.0;
    default: return ctc_weight;
  }
}

double JointScorer::operator()(double ctc, double attn, std::size_t length) const {
  double s = length_penalty * static_cast<double>(length);
  if (ctc_weight > 0.0) s += ctc_weight * ctc;
  if (ctc_weight < 1.0) s += (1.0 - ctc_weight) * attn;
  return s;
}

bool ranks_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.joint_score != b.joint_score) return a.joint_score > b.joint_score;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

Index max_output_length(const DecodeConfig& config, Index adjusted_length) {
  const auto cap = static_cast<Index>(
      std::floor(config.max_len_ratio * static_cast<double>(adjusted_length) + 1e-9));
  return std::max<Index>(1, cap);
}

namespace {

using Clock = std::chrono::steady_clock;

/// Indices of the p largest entries, larger first, lower index on ties.
std::vector<Index> top_entries(const Vector& scores, Index p) {
  std::vector<Index> idx(static_cast<std::size_t>(scores.size()));
  for (Index i = 0; i < scores.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
  const auto k = static_cast<std::size_t>(std::min<Index>(p, scores.size()));
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](Index a, Index b) {
                      if (scores(a) != scores(b)) return scores(a) > scores(b);
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

void keep_best(std::vector<Hypothesis>& hyps, Index n) {
  std::sort(hyps.begin(), hyps.end(), ranks_before);
  if (static_cast<Index>(hyps.size()) > n) hyps.resize(static_cast<std::size_t>(n));
}

const DecoderState& decoder_state_of(const Model& model, const DecoderCache& cache, Hypothesis& h,
                                     std::uint64_t& decoder_calls) {
  // hypotheses created during expansion hold their parent's state until
  // they survive pruning
  if (h.tokens.empty() || h.decoder_state == nullptr) {
    if (!h.decoder_state) {
      h.decoder_state = std::make_shared<const DecoderState>(model.start(cache));
      ++decoder_calls;
    }
    return *h.decoder_state;
  }
  if (h.decoder_state->position < static_cast<Index>(h.tokens.size()) + 1) {
    h.decoder_state = std::make_shared<const DecoderState>(
        model.advance(cache, *h.decoder_state, h.tokens.back()));
    ++decoder_calls;
  }
  return *h.decoder_state;
}

DecodeResult finish_result(std::vector<Hypothesis> finished, Index beam, Clock::time_point t0,
                           DecodeResult r) {
  keep_best(finished, beam);
  r.nbest = std::move(finished);
  if (!r.nbest.empty()) {
    r.best = r.nbest.front();
  } else {
    r.best.joint_score = kLogZero<double>;
    r.best.finished = true;
  }
  for (auto s : r.step_logadds) r.total_logadds += s;
  r.steps = static_cast<Index>(r.step_logadds.size());
  r.nanos = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
  return r;
}

bool can_stop_early(const std::vector<Hypothesis>& active, const std::vector<Hypothesis>& finished,
                    Index beam, Index max_length, double length_penalty) {
  if (static_cast<Index>(finished.size()) < beam || active.empty()) return false;
  const double reward = std::max(0.0, length_penalty);
  double bound = kLogZero<double>;
  for (const auto& h : active)
    bound = std::max(bound, h.joint_score +
                                reward * static_cast<double>(max_length -
                                                             static_cast<Index>(h.tokens.size())));
  return bound < finished.back().joint_score;
}

}  // namespace

// --- output synchrony -----------------------------------------------------

std::vector<Hypothesis> output_step(const std::vector<Hypothesis>& beam, const Model& model,
                                    const DecoderCache& cache, const EncodeResult& enc,
                                    const DecodeConfig& config, Index max_length,
                                    std::vector<Hypothesis>& finished, LogAddCounter& counter,
                                    std::uint64_t& decoder_calls) {
  const double w = config.mode_ctc_weight();
  const JointScorer score{w, config.length_penalty};
  const TokenId eos = model.config().tgt_eos();
  const Index p = config.effective_prebeam(model.config().tgt_vocab + 1);
  const auto& grid = enc.tgt_grid;

  std::vector<Hypothesis> active;
  for (const auto& hyp : beam) {
    // hypothesis expansion
    const Vector& next = hyp.decoder_state->next_logp;
    const bool at_cap = static_cast<Index>(hyp.tokens.size()) >= max_length;
    const auto cols = at_cap ? std::vector<Index>{Model::column_of(eos)} : top_entries(next, p);
    for (Index col : cols) {
      const TokenId id = model.token_of(col);
      Hypothesis h;
      h.tokens = hyp.tokens;
      h.attn_logp = hyp.attn_logp + next(col);
      h.decoder_state = hyp.decoder_state;
      if (id != eos) h.tokens.push_back(id);
      // joint scoring
      if (w > 0.0) {
        const auto& parent = std::get<std::shared_ptr<const OutSyncPrefixState<double>>>(hyp.ctc_state);
        auto st = std::make_shared<const OutSyncPrefixState<double>>(
            outsync_extend(*parent, id, eos, grid, &counter));
        h.ctc_logp = st->pscore;
        h.ctc_state = std::move(st);
      }
      h.length_bonus = config.length_penalty * static_cast<double>(h.tokens.size());
      h.joint_score = score(h.ctc_logp, h.attn_logp, h.tokens.size());
      if (h.joint_score == kLogZero<double> || std::isnan(h.joint_score)) continue;
      // end detection
      if (id == eos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        active.push_back(std::move(h));
      }
    }
  }
  keep_best(active, config.beam_size);
  for (auto& h : active) decoder_state_of(model, cache, h, decoder_calls);
  return active;
}

DecodeResult joint_output_synchronous(const Model& model, const EncodeResult& enc,
                                      const DecodeConfig& config) {
  config.validate();
  const auto t0 = Clock::now();
  DecodeResult r;
  const double w = config.mode_ctc_weight();
  const DecoderCache cache = model.make_cache(enc.h_tgt);
  const Index max_length = max_output_length(config, enc.adjusted_length);

  Hypothesis root;
  decoder_state_of(model, cache, root, r.decoder_calls);
  if (w > 0.0)
    root.ctc_state =
        std::make_shared<const OutSyncPrefixState<double>>(outsync_initial(enc.tgt_grid));
  root.joint_score = 0.0;

  std::vector<Hypothesis> beam{root};
  std::vector<Hypothesis> finished;
  LogAddCounter counter;
  while (!beam.empty()) {
    const auto before = counter.count;
    r.step_active.push_back(beam.size());
    beam = output_step(beam, model, cache, enc, config, max_length, finished, counter,
                       r.decoder_calls);
    r.step_logadds.push_back(counter.count - before);
    keep_best(finished, config.beam_size);
    if (can_stop_early(beam, finished, config.beam_size, max_length, config.length_penalty)) break;
  }
  return finish_result(std::move(finished), config.beam_size, t0, std::move(r));
}

DecodeResult attention_beam_search(const Model& model, const EncodeResult& enc,
                                   const DecodeConfig& config) {
  config.validate();
  const auto t0 = Clock::now();
  DecodeResult r;
  const DecoderCache cache = model.make_cache(enc.h_tgt);
  const Index max_length = max_output_length(config, enc.adjusted_length);
  const TokenId eos = model.config().tgt_eos();
  const Index p = config.effective_prebeam(model.config().tgt_vocab + 1);

  struct Entry {
    Hypothesis hyp;
    std::shared_ptr<const DecoderState> parent;
  };
  Hypothesis root;
  root.decoder_state = std::make_shared<const DecoderState>(model.start(cache));
  ++r.decoder_calls;
  std::vector<Hypothesis> beam{root};
  std::vector<Hypothesis> finished;
  while (!beam.empty()) {
    r.step_active.push_back(beam.size());
    r.step_logadds.push_back(0);
    std::vector<Hypothesis> next_beam;
    for (const auto& hyp : beam) {
      const Vector& next = hyp.decoder_state->next_logp;
      std::vector<Index> cols;
      if (static_cast<Index>(hyp.tokens.size()) >= max_length)
        cols.push_back(Model::column_of(eos));
      else
        cols = top_entries(next, p);
      for (Index col : cols) {
        Hypothesis h;
        h.tokens = hyp.tokens;
        h.attn_logp = hyp.attn_logp + next(col);
        h.decoder_state = hyp.decoder_state;
        const TokenId id = model.token_of(col);
        if (id != eos) h.tokens.push_back(id);
        h.length_bonus = config.length_penalty * static_cast<double>(h.tokens.size());
        h.joint_score = h.attn_logp + h.length_bonus;
        if (id == eos) {
          h.finished = true;
          finished.push_back(std::move(h));
        } else {
          next_beam.push_back(std::move(h));
        }
      }
    }
    keep_best(next_beam, config.beam_size);
    for (auto& h : next_beam) {
      h.decoder_state =
          std::make_shared<const DecoderState>(model.advance(cache, *h.decoder_state, h.tokens.back()));
      ++r.decoder_calls;
    }
    beam = std::move(next_beam);
    keep_best(finished, config.beam_size);
    if (can_stop_early(beam, finished, config.beam_size, max_length, config.length_penalty)) break;
  }
  return finish_result(std::move(finished), config.beam_size, t0, std::move(r));
}

// --- input synchrony --------------------------------------------------------

void input_step(InSyncSearch& search, Index t, const Model& model, const DecoderCache& cache,
                const EncodeResult& enc, const DecodeConfig& config, LogAddCounter& counter,
                std::uint64_t& decoder_calls) {
  const double w = config.mode_ctc_weight();
  const JointScorer score{w, config.length_penalty};
  const auto& grid = enc.tgt_grid;

  // hypothesis expansion: top-p alignment units of frame t
  const Vector row = grid.logp.row(t).transpose();
  std::vector<TokenId> candidates;
  for (Index col : top_entries(row, config.effective_prebeam(grid.vocab())))
    if (col != grid.blank_id) candidates.push_back(static_cast<TokenId>(col));

  if (w < 1.0 && !candidates.empty())
    for (auto& [prefix, hyp] : search.scored) decoder_state_of(model, cache, hyp, decoder_calls);

  search.prefixes =
      insync_advance(search.prefixes, t, grid, candidates, config.blank_penalty, &counter);

  // joint scoring of every unique prefix
  std::vector<Hypothesis> scored;
  scored.reserve(search.prefixes.states.size());
  for (const auto& [prefix, state] : search.prefixes.states) {
    Hypothesis h;
    if (auto it = search.scored.find(prefix); it != search.scored.end()) {
      h = it->second;
    } else {
      const std::vector<TokenId> parent(prefix.begin(), prefix.end() - 1);
      const Hypothesis& ph = search.scored.at(parent);
      h.tokens = prefix;
      h.decoder_state = ph.decoder_state;
      h.attn_logp = w < 1.0 ? ph.attn_logp + ph.decoder_state->next_logp(Model::column_of(prefix.back()))
                            : 0.0;
    }
    h.ctc_logp = state.total();
    h.ctc_state = state;
    h.length_bonus = config.length_penalty * static_cast<double>(h.tokens.size());
    h.joint_score = score(h.ctc_logp, h.attn_logp, h.tokens.size());
    scored.push_back(std::move(h));
  }
  keep_best(scored, config.beam_size);

  std::map<std::vector<TokenId>, Hypothesis> kept;
  for (auto& h : scored) {
    if (h.joint_score == kLogZero<double>) continue;
    kept.emplace(h.tokens, std::move(h));
  }
  for (auto it = search.prefixes.states.begin(); it != search.prefixes.states.end();) {
    if (kept.count(it->first))
      ++it;
    else
      it = search.prefixes.states.erase(it);
  }
  search.scored = std::move(kept);
}

DecodeResult joint_input_synchronous(const Model& model, const EncodeResult& enc,
                                     const DecodeConfig& config) {
  config.validate();
  const auto t0 = Clock::now();
  DecodeResult r;
  const double w = config.mode_ctc_weight();
  const JointScorer score{w, config.length_penalty};
  const DecoderCache cache = model.make_cache(enc.h_tgt);
  const TokenId eos = model.config().tgt_eos();

  InSyncSearch search;
  search.prefixes = insync_initial<double>();
  Hypothesis root;
  if (w < 1.0) decoder_state_of(model, cache, root, r.decoder_calls);
  search.scored.emplace(std::vector<TokenId>{}, root);

  LogAddCounter counter;
  for (Index t = 0; t < enc.tgt_grid.frames(); ++t) {
    const auto before = counter.count;
    r.step_active.push_back(search.scored.size());
    input_step(search, t, model, cache, enc, config, counter, r.decoder_calls);
    r.step_logadds.push_back(counter.count - before);
  }

  // end detection: the input is exhausted, so every survivor ends here
  std::vector<Hypothesis> finished;
  for (auto& [prefix, hyp] : search.scored) {
    Hypothesis h = hyp;
    if (w < 1.0) {
      const DecoderState& st = decoder_state_of(model, cache, h, r.decoder_calls);
      h.attn_logp += st.next_logp(Model::column_of(eos));
    }
    h.joint_score = score(h.ctc_logp, h.attn_logp, h.tokens.size());
    h.finished = true;
    finished.push_back(std::move(h));
  }
  return finish_result(std::move(finished), config.beam_size, t0, std::move(r));
}

DecodeResult ctc_prefix_beam_search(const PosteriorGrid<double>& grid, const DecodeConfig& config) {
  config.validate();
  const auto t0 = Clock::now();
  DecodeResult r;
  auto prefixes = insync_initial<double>();
  LogAddCounter counter;
  const Index p = config.effective_prebeam(grid.vocab());
  auto rank_all = [&](const InSyncPrefixSet<double>& set) {
    std::vector<Hypothesis> hyps;
    for (const auto& [prefix, state] : set.states) {
      Hypothesis h;
      h.tokens = prefix;
      h.ctc_logp = state.total();
      h.ctc_state = state;
      h.length_bonus = config.length_penalty * static_cast<double>(prefix.size());
      h.joint_score = h.ctc_logp + h.length_bonus;
      hyps.push_back(std::move(h));
    }
    keep_best(hyps, config.beam_size);
    return hyps;
  };
  for (Index t = 0; t < grid.frames(); ++t) {
    const auto before = counter.count;
    r.step_active.push_back(prefixes.states.size());
    const Vector row = grid.logp.row(t).transpose();
    std::vector<TokenId> candidates;
    for (Index col : top_entries(row, p))
      if (col != grid.blank_id) candidates.push_back(static_cast<TokenId>(col));
    prefixes = insync_advance(prefixes, t, grid, candidates, config.blank_penalty, &counter);
    std::map<std::vector<TokenId>, InSyncPrefixState<double>> kept;
    for (const auto& h : rank_all(prefixes)) {
      if (h.joint_score == kLogZero<double>) continue;
      kept.emplace(h.tokens, prefixes.states.at(h.tokens));
    }
    prefixes.states = std::move(kept);
    r.step_logadds.push_back(counter.count - before);
  }
  auto finished = rank_all(prefixes);
  for (auto& h : finished) h.finished = true;
  return finish_result(std::move(finished), config.beam_size, t0, std::move(r));
}

// --- rescoring ----------------------------------------------------------------

std::vector<Hypothesis> rescore(std::vector<Hypothesis> nbest, const Model& model,
                                const EncodeResult& enc, const DecodeConfig& config) {
  const JointScorer score{config.ctc_weight, config.length_penalty};
  for (auto& h : nbest) {
    h.ctc_logp = ctc_logprob(enc.tgt_grid, std::span<const TokenId>(h.tokens)).logp;
    h.attn_logp = model.sequence_logp(enc.h_tgt, h.tokens);
    h.length_bonus = config.length_penalty * static_cast<double>(h.tokens.size());
    h.joint_score = score(h.ctc_logp, h.attn_logp, h.tokens.size());
    h.finished = true;
  }
  std::sort(nbest.begin(), nbest.end(), ranks_before);
  return nbest;
}

double exact_joint_logp(const Model& model, const EncodeResult& enc, std::span<const TokenId> y,
                        double ctc_weight) {
  const double ctc = ctc_weight > 0.0 ? ctc_logprob(enc.tgt_grid, y).logp : 0.0;
  const double attn = ctc_weight < 1.0 ? model.sequence_logp(enc.h_tgt, y) : 0.0;
  return JointScorer{ctc_weight, 0.0}(ctc, attn, y.size());
}

std::vector<TokenId> attention_greedy(const Model& model, const EncodeResult& enc,
                                      Index max_length) {
  const DecoderCache cache = model.make_cache(enc.h_tgt);
  const TokenId eos = model.config().tgt_eos();
  DecoderState state = model.start(cache);
  std::vector<TokenId> out;
  while (static_cast<Index>(out.size()) < max_length) {
    Index best = 0;
    state.next_logp.maxCoeff(&best);
    const TokenId id = model.token_of(best);
    if (id == eos) break;
    out.push_back(id);
    state = model.advance(cache, state, id);
  }
  return out;
}

DecodeResult decode(const Model& model, const EncodeResult& enc, const DecodeConfig& config) {
  switch (config.mode) {
    case DecodeMode::attn_only:
      return attention_beam_search(model, enc, config);
    case DecodeMode::ctc_only:
      return ctc_prefix_beam_search(enc.tgt_grid, config);
    case DecodeMode::joint_osync:
      return joint_output_synchronous(model, enc, config);
    case DecodeMode::joint_isync:
      return joint_input_synchronous(model, enc, config);
    case DecodeMode::attn_then_ctc_rescore:
    case DecodeMode::ctc_then_attn_rescore: {
      const auto t0 = Clock::now();
      DecodeResult r = config.mode == DecodeMode::attn_then_ctc_rescore
                           ? attention_beam_search(model, enc, config)
                           : ctc_prefix_beam_search(enc.tgt_grid, config);
      r.nbest = rescore(std::move(r.nbest), model, enc, config);
      if (!r.nbest.empty()) r.best = r.nbest.front();
      r.nanos = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
      return r;
    }
  }
  throw std::logic_error("unhandled decode mode");
}

// --- corpus level -------------------------------------------------------------

CorpusDecodeResult decode_corpus(const Model& model, const std::vector<Example>& examples,
                                 const DecodeConfig& config) {
  config.validate();
  CorpusDecodeResult out;
  out.summary.mode = config.mode;
  out.summary.beam_size = config.beam_size;
  out.summary.length_penalty = config.length_penalty;
  out.summary.ctc_weight = config.mode_ctc_weight();
  const double w = config.mode_ctc_weight();

  std::vector<std::vector<TokenId>> hyps, refs;
  std::vector<double> hyp_scores, ref_scores;
  std::size_t correct = 0;
  Index input_tokens = 0;
  for (const auto& ex : examples) {
    EncodeResult enc;
    DecodeResult dr;
    try {
      enc = model.encode(ex.source.ids);
      dr = decode(model, enc, config);
    } catch (const std::exception& e) {
      throw std::runtime_error("example " + std::to_string(ex.id) + ": " + e.what());
    }
    ExampleResult er;
    er.id = ex.id;
    er.mode = config.mode;
    er.tokens = dr.best.tokens;
    er.attn_logp = dr.best.attn_logp;
    er.ctc_logp = dr.best.ctc_logp;
    er.penalty = dr.best.length_bonus;
    er.joint = dr.best.joint_score;
    er.steps = dr.steps;
    er.logadds = dr.total_logadds;
    er.nanos = dr.nanos;
    er.input_length = static_cast<Index>(ex.source.ids.size());
    er.hyp_exact = exact_joint_logp(model, enc, er.tokens, w);
    er.ref_exact = exact_joint_logp(model, enc, ex.target.ids, w);
    if (er.tokens == ex.target.ids) ++correct;
    hyps.push_back(er.tokens);
    refs.push_back(ex.target.ids);
    hyp_scores.push_back(er.hyp_exact);
    ref_scores.push_back(er.ref_exact);
    out.summary.logadds += er.logadds;
    out.summary.nanos += er.nanos;
    input_tokens += er.input_length;
    out.results.push_back(std::move(er));
  }
  out.summary.examples = examples.size();
  if (!examples.empty()) {
    out.summary.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
    out.summary.bleu = corpus_bleu(hyps, refs);
    out.summary.length_ratio = length_ratio(hyps, refs);
    out.summary.search_error_rate = search_error_rate(hyp_scores, ref_scores);
    out.summary.nanos_per_input_token =
        static_cast<double>(out.summary.nanos) / static_cast<double>(std::max<Index>(1, input_tokens));
  }
  return out;
}

namespace {
nlohmann::json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}
double from_json_number(const nlohmann::json& j) {
  return j.is_null() ? kLogZero<double> : j.get<double>();
}
}  // namespace

void write_results(std::ostream& out, const std::vector<ExampleResult>& results) {
  for (const auto& r : results) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["mode"] = to_string(r.mode);
    j["tokens"] = r.tokens;
    j["attn_logp"] = finite_or_null(r.attn_logp);
    j["ctc_logp"] = finite_or_null(r.ctc_logp);
    j["penalty"] = r.penalty;
    j["joint"] = finite_or_null(r.joint);
    j["steps"] = r.steps;
    j["logadds"] = r.logadds;
    j["nanos"] = r.nanos;
    out << j.dump() << '\n';
  }
}

std::vector<ExampleResult> read_results(std::istream& in) {
  std::vector<ExampleResult> results;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ExampleResult r;
      r.id = j.at("id").get<std::size_t>();
      r.mode = decode_mode_from_string(j.at("mode").get<std::string>());
      r.tokens = j.at("tokens").get<std::vector<TokenId>>();
      r.attn_logp = from_json_number(j.at("attn_logp"));
      r.ctc_logp = from_json_number(j.at("ctc_logp"));
      r.penalty = j.at("penalty").get<double>();
      r.joint = from_json_number(j.at("joint"));
      r.steps = j.at("steps").get<Index>();
      r.logadds = j.at("logadds").get<std::uint64_t>();
      r.nanos = j.at("nanos").get<std::int64_t>();
      results.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::invalid_argument("results line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return results;
}

void write_summary_csv(std::ostream& out, const std::vector<CorpusSummary>& rows) {
  out << "mode,beam,penalty,ctc_weight,examples,accuracy,bleu,bleu_display,length_ratio,"
         "search_error_rate,logadds\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << to_string(r.mode) << ',' << r.beam_size << ',' << r.length_penalty << ','
        << r.ctc_weight << ',' << r.examples << ',' << r.accuracy << ',' << r.bleu << ','
        << std::fixed << std::setprecision(2) << r.bleu << std::defaultfloat
        << std::setprecision(17) << ',' << r.length_ratio << ',' << r.search_error_rate << ','
        << r.logadds << '\n';
  }
}

void write_timing_csv(std::ostream& out, const std::vector<CorpusSummary>& rows) {
  out << "mode,beam,penalty,ctc_weight,examples,nanos,nanos_per_input_token,logadds\n";
  for (const auto& r : rows)
    out << to_string(r.mode) << ',' << r.beam_size << ',' << r.length_penalty << ','
        << r.ctc_weight << ',' << r.examples << ',' << r.nanos << ',' << r.nanos_per_input_token
        << ',' << r.logadds << '\n';
}

}  // namespace jointctc
