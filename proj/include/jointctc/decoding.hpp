#pragma once

#include "jointctc/corpus.hpp"
#include "jointctc/model.hpp"
#include "jointctc/prefix_score.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

namespace jointctc {

enum class DecodeMode {
  attn_only,
  ctc_only,
  joint_osync,
  joint_isync,
  attn_then_ctc_rescore,
  ctc_then_attn_rescore,
};

std::string to_string(DecodeMode mode);
DecodeMode decode_mode_from_string(const std::string& s);

struct DecodeConfig {
  DecodeMode mode = DecodeMode::joint_osync;
  Index beam_size = 5;
  /// 0 selects min(V, ceil(1.5 * beam_size)).
  Index prebeam = 0;
  double ctc_weight = 0.3;
  /// Additive per-token reward in the log domain.
  double length_penalty = 0.0;
  /// Subtracted from log p(blank) before input-synchronous transitions.
  double blank_penalty = 0.0;
  /// Output-synchronous searches stop at floor(max_len_ratio * T').
  double max_len_ratio = 1.0;

  void validate() const;
  Index effective_prebeam(Index vocab) const;
  /// ctc_weight as actually used by the mode (0 for attn-only, 1 for ctc-only).
  double mode_ctc_weight() const;
};

/// The one joint-scoring formula shared by every search and by rescoring:
///   w * ctc + (1 - w) * attn + length_penalty * length
/// A branch with zero weight contributes nothing, even when its score is
/// -inf.
struct JointScorer {
  double ctc_weight = 0.3;
  double length_penalty = 0.0;

  double operator()(double ctc, double attn, std::size_t length) const;
};

struct Hypothesis {
  std::vector<TokenId> tokens;
  double attn_logp = 0.0;
  /// Full-input prefix score (out-sync), partial-input mass (in-sync) or
  /// the full-sequence likelihood once finished.
  double ctc_logp = 0.0;
  double length_bonus = 0.0;
  double joint_score = 0.0;
  bool finished = false;
  std::variant<std::monostate, std::shared_ptr<const OutSyncPrefixState<double>>,
               InSyncPrefixState<double>>
      ctc_state;
  std::shared_ptr<const DecoderState> decoder_state;
};

/// Score descending, then shorter, then lexicographically smaller tokens.
bool ranks_before(const Hypothesis& a, const Hypothesis& b);

struct DecodeResult {
  Hypothesis best;
  std::vector<Hypothesis> nbest;
  /// Log-additions spent in each beam step.
  std::vector<std::uint64_t> step_logadds;
  /// Active hypotheses entering each beam step.
  std::vector<std::size_t> step_active;
  std::uint64_t total_logadds = 0;
  std::uint64_t decoder_calls = 0;
  std::int64_t nanos = 0;
  Index steps = 0;
};

/// Length cap of output-synchronous searches.
Index max_output_length(const DecodeConfig& config, Index adjusted_length);

/// Output-synchronous beam step: expand each active hypothesis with the top
/// decoder candidates, score them jointly with full-input CTC prefix
/// scores, move eos proposals to `finished` and keep the best b active.
std::vector<Hypothesis> output_step(const std::vector<Hypothesis>& beam, const Model& model,
                                    const DecoderCache& cache, const EncodeResult& enc,
                                    const DecodeConfig& config, Index max_length,
                                    std::vector<Hypothesis>& finished, LogAddCounter& counter,
                                    std::uint64_t& decoder_calls);

/// State of an input-synchronous search between frames.
struct InSyncSearch {
  InSyncPrefixSet<double> prefixes;
  std::map<std::vector<TokenId>, Hypothesis> scored;
};

/// Input-synchronous beam step: consume frame t, extend prefixes with the
/// top non-blank CTC candidates, score each unique prefix jointly with its
/// partial-input CTC mass and keep the best b.
void input_step(InSyncSearch& search, Index t, const Model& model, const DecoderCache& cache,
                const EncodeResult& enc, const DecodeConfig& config, LogAddCounter& counter,
                std::uint64_t& decoder_calls);

DecodeResult joint_output_synchronous(const Model& model, const EncodeResult& enc,
                                      const DecodeConfig& config);
DecodeResult joint_input_synchronous(const Model& model, const EncodeResult& enc,
                                     const DecodeConfig& config);

/// Attention-only beam search (score = attn + penalty * length).
DecodeResult attention_beam_search(const Model& model, const EncodeResult& enc,
                                   const DecodeConfig& config);
/// CTC prefix beam search over the target grid (score = mass + penalty * length).
DecodeResult ctc_prefix_beam_search(const PosteriorGrid<double>& grid, const DecodeConfig& config);

/// Recomputes each hypothesis with full-sequence likelihoods from both
/// branches and re-sorts.
std::vector<Hypothesis> rescore(std::vector<Hypothesis> nbest, const Model& model,
                                const EncodeResult& enc, const DecodeConfig& config);

/// Exact penalty-free joint likelihood w * logP_ctc(y) + (1 - w) * logP_attn(y, eos).
double exact_joint_logp(const Model& model, const EncodeResult& enc, std::span<const TokenId> y,
                        double ctc_weight);

/// Greedy attention decoding (beam 1, no penalty).
std::vector<TokenId> attention_greedy(const Model& model, const EncodeResult& enc, Index max_length);

/// Dispatches on config.mode.
DecodeResult decode(const Model& model, const EncodeResult& enc, const DecodeConfig& config);

// --- corpus level ---------------------------------------------------------

struct ExampleResult {
  std::size_t id = 0;
  DecodeMode mode = DecodeMode::joint_osync;
  std::vector<TokenId> tokens;
  double attn_logp = 0.0;
  double ctc_logp = 0.0;
  double penalty = 0.0;
  double joint = 0.0;
  Index steps = 0;
  std::uint64_t logadds = 0;
  std::int64_t nanos = 0;
  /// Penalty-free exact likelihoods of the hypothesis and the reference.
  double hyp_exact = 0.0;
  double ref_exact = 0.0;
  Index input_length = 0;
};

struct CorpusSummary {
  DecodeMode mode = DecodeMode::joint_osync;
  Index beam_size = 0;
  double length_penalty = 0.0;
  double ctc_weight = 0.0;
  std::size_t examples = 0;
  double accuracy = 0.0;
  double bleu = 0.0;
  double length_ratio = 0.0;
  double search_error_rate = 0.0;
  std::uint64_t logadds = 0;
  // wall-clock quantities; not deterministic
  std::int64_t nanos = 0;
  double nanos_per_input_token = 0.0;
};

struct CorpusDecodeResult {
  std::vector<ExampleResult> results;
  CorpusSummary summary;
};

CorpusDecodeResult decode_corpus(const Model& model, const std::vector<Example>& examples,
                                 const DecodeConfig& config);

/// One JSON object per line:
/// {id, mode, tokens, attn_logp, ctc_logp, penalty, joint, steps, logadds, nanos}
void write_results(std::ostream& out, const std::vector<ExampleResult>& results);
std::vector<ExampleResult> read_results(std::istream& in);

/// Deterministic summary columns (no wall-clock fields).
void write_summary_csv(std::ostream& out, const std::vector<CorpusSummary>& rows);
/// Wall-clock companion of the summary.
void write_timing_csv(std::ostream& out, const std::vector<CorpusSummary>& rows);

}  // namespace jointctc
