#pragma once

#include "jointctc/corpus.hpp"
#include "jointctc/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace jointctc {

using TokenCorpus = std::vector<std::vector<TokenId>>;

/// L x T attention weights, one output step per row.
struct AttentionMap {
  Matrix weights;

  Index output_length() const { return weights.rows(); }
  Index input_length() const { return weights.cols(); }
  /// Throws unless every row sums to one within tol.
  void validate(double tol = 1e-9) const;
};

/// m = (sum over 2 < l <= L of [argmax A_l >= argmax A_{l-1}]) / L, with
/// 1-based l and argmax ties going to the smallest column. `normalized`
/// divides by L - 2 instead.
double monotonicity(const AttentionMap& map, bool normalized = false);

/// Corpus BLEU-4 over token ids, in [0, 100]: clipped n-gram precisions,
/// exponential smoothing of zero counts, brevity penalty.
double corpus_bleu(const TokenCorpus& hyps, const TokenCorpus& refs, int max_order = 4);

/// sum |hyp| / sum |ref|
double length_ratio(const TokenCorpus& hyps, const TokenCorpus& refs);

/// Fraction of examples whose reference outscores the hypothesis by more
/// than 1e-12. -inf scores (infeasible under CTC) compare as usual.
double search_error_rate(std::span<const double> hyp_scores, std::span<const double> ref_scores);

template <typename Scorer>
double search_error_rate(const TokenCorpus& hyps, const TokenCorpus& refs, Scorer&& scorer) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("search_error_rate: size mismatch");
  std::vector<double> h, r;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    h.push_back(scorer(i, std::span<const TokenId>(hyps[i])));
    r.push_back(scorer(i, std::span<const TokenId>(refs[i])));
  }
  return search_error_rate(h, r);
}

/// Mean monotonicity of the teacher-forced cross-attention per decoder
/// layer, averaged over heads and examples (targets shorter than three
/// tokens are skipped).
std::vector<double> layer_monotonicity(const Model& model, const std::vector<Example>& examples,
                                       bool normalized = false);

struct EvalReport {
  std::string label;
  std::size_t examples = 0;
  double accuracy = 0.0;
  double bleu = 0.0;
  double length_ratio = 0.0;
  double search_error_rate = 0.0;
  std::vector<double> layer_monotonicity;
  std::uint64_t logadds = 0;
  std::int64_t nanos = 0;
  double nanos_per_input_token = 0.0;
};

/// Sequence accuracy, BLEU and length ratio from token lists.
EvalReport evaluate_tokens(const TokenCorpus& hyps, const TokenCorpus& refs);

void write_eval_csv(std::ostream& out, const std::vector<EvalReport>& reports);
void write_eval_jsonl(std::ostream& out, const std::vector<EvalReport>& reports);

}  // namespace jointctc
