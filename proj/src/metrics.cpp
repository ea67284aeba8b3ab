#include "jointctc/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <stdexcept>

namespace jointctc {

void AttentionMap::validate(double tol) const {
  for (Index l = 0; l < weights.rows(); ++l)
    if (std::abs(weights.row(l).sum() - 1.0) > tol)
      throw std::invalid_argument("AttentionMap: row " + std::to_string(l) + " does not sum to 1");
}

double monotonicity(const AttentionMap& map, bool normalized) {
  const Index L = map.output_length();
  if (L < 3) return 0.0;
  std::vector<Index> peak(static_cast<std::size_t>(L));
  for (Index l = 0; l < L; ++l) {
    Index best = 0;
    for (Index t = 1; t < map.weights.cols(); ++t)
      if (map.weights(l, t) > map.weights(l, best)) best = t;
    peak[static_cast<std::size_t>(l)] = best;
  }
  Index hits = 0;
  // 1-based rows 3..L
  for (Index l = 2; l < L; ++l)
    if (peak[static_cast<std::size_t>(l)] >= peak[static_cast<std::size_t>(l - 1)]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(normalized ? L - 2 : L);
}

double corpus_bleu(const TokenCorpus& hyps, const TokenCorpus& refs, int max_order) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("corpus_bleu: size mismatch");
  if (hyps.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  std::vector<double> correct(static_cast<std::size_t>(max_order), 0.0);
  std::vector<double> total(static_cast<std::size_t>(max_order), 0.0);
  double hyp_len = 0.0, ref_len = 0.0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& h = hyps[s];
    const auto& r = refs[s];
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (int n = 1; n <= max_order; ++n) {
      std::map<std::vector<TokenId>, int> ref_counts;
      for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= r.size(); ++i)
        ++ref_counts[{r.begin() + static_cast<std::ptrdiff_t>(i), r.begin() + static_cast<std::ptrdiff_t>(i) + n}];
      std::map<std::vector<TokenId>, int> hyp_counts;
      for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= h.size(); ++i)
        ++hyp_counts[{h.begin() + static_cast<std::ptrdiff_t>(i), h.begin() + static_cast<std::ptrdiff_t>(i) + n}];
      for (const auto& [gram, c] : hyp_counts) {
        total[static_cast<std::size_t>(n - 1)] += c;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) correct[static_cast<std::size_t>(n - 1)] += std::min(c, it->second);
      }
    }
  }
  if (hyp_len == 0.0) return 0.0;
  double log_sum = 0.0;
  double smooth = 1.0;
  for (int n = 0; n < max_order; ++n) {
    const auto k = static_cast<std::size_t>(n);
    if (total[k] == 0.0) return 0.0;
    double p;
    if (correct[k] == 0.0) {
      smooth *= 2.0;
      p = 1.0 / (smooth * total[k]);
    } else {
      p = correct[k] / total[k];
    }
    log_sum += std::log(p);
  }
  const double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
  return 100.0 * bp * std::exp(log_sum / max_order);
}

double length_ratio(const TokenCorpus& hyps, const TokenCorpus& refs) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("length_ratio: size mismatch");
  double h = 0.0, r = 0.0;
  for (const auto& x : hyps) h += static_cast<double>(x.size());
  for (const auto& x : refs) r += static_cast<double>(x.size());
  if (r == 0.0) throw std::invalid_argument("length_ratio: references have no tokens");
  return h / r;
}

double search_error_rate(std::span<const double> hyp_scores, std::span<const double> ref_scores) {
  if (hyp_scores.size() != ref_scores.size())
    throw std::invalid_argument("search_error_rate: size mismatch");
  if (hyp_scores.empty()) return 0.0;
  std::size_t errors = 0;
  for (std::size_t i = 0; i < hyp_scores.size(); ++i)
    if (ref_scores[i] > hyp_scores[i] + 1e-12) ++errors;
  return static_cast<double>(errors) / static_cast<double>(hyp_scores.size());
}

std::vector<double> layer_monotonicity(const Model& model, const std::vector<Example>& examples,
                                       bool normalized) {
  const auto layers = static_cast<std::size_t>(model.config().n_dec_layers);
  std::vector<double> sum(layers, 0.0);
  std::size_t count = 0;
  for (const auto& ex : examples) {
    if (ex.target.ids.size() < 3) continue;
    const EncodeResult enc = model.encode(ex.source.ids);
    const AttentionMaps maps = model.cross_attention_maps(enc.h_tgt, ex.target.ids);
    for (std::size_t l = 0; l < layers; ++l) {
      double m = 0.0;
      for (const auto& head : maps[l]) m += monotonicity(AttentionMap{head}, normalized);
      sum[l] += m / static_cast<double>(maps[l].size());
    }
    ++count;
  }
  if (count > 0)
    for (auto& s : sum) s /= static_cast<double>(count);
  return sum;
}

EvalReport evaluate_tokens(const TokenCorpus& hyps, const TokenCorpus& refs) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("evaluate: size mismatch");
  EvalReport r;
  r.examples = hyps.size();
  if (hyps.empty()) return r;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) ok += hyps[i] == refs[i];
  r.accuracy = static_cast<double>(ok) / static_cast<double>(hyps.size());
  r.bleu = corpus_bleu(hyps, refs);
  r.length_ratio = length_ratio(hyps, refs);
  return r;
}

void write_eval_csv(std::ostream& out, const std::vector<EvalReport>& reports) {
  out << "label,examples,accuracy,bleu,bleu_display,length_ratio,search_error_rate,"
         "final_layer_m,logadds,nanos_per_input_token\n";
  for (const auto& r : reports) {
    out << r.label << ',' << r.examples << ',' << std::setprecision(17) << r.accuracy << ','
        << r.bleu << ',' << std::fixed << std::setprecision(2) << r.bleu << std::defaultfloat
        << std::setprecision(17) << ',' << r.length_ratio << ',' << r.search_error_rate << ','
        << (r.layer_monotonicity.empty() ? 0.0 : r.layer_monotonicity.back()) << ','
        << r.logadds << ',' << r.nanos_per_input_token << '\n';
  }
}

void write_eval_jsonl(std::ostream& out, const std::vector<EvalReport>& reports) {
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["label"] = r.label;
    j["examples"] = r.examples;
    j["accuracy"] = r.accuracy;
    j["bleu"] = r.bleu;
    j["length_ratio"] = r.length_ratio;
    j["search_error_rate"] = r.search_error_rate;
    j["layer_monotonicity"] = r.layer_monotonicity;
    j["logadds"] = r.logadds;
    j["nanos"] = r.nanos;
    j["nanos_per_input_token"] = r.nanos_per_input_token;
    out << j.dump() << '\n';
  }
}

}  // namespace jointctc
