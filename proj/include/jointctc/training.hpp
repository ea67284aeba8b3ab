#pragma once

#include "jointctc/corpus.hpp"
#include "jointctc/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <vector>

namespace jointctc {

struct TrainConfig {
  double lambda1 = 1.0;
  double lambda2 = 2.0;
  double peak_lr = 1e-3;
  Index warmup_steps = 400;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-9;
  /// Decoupled from the adaptive update.
  double weight_decay = 1e-4;
  Index epochs = 1;
  Index batch_size = 32;
  std::uint64_t seed = 1;
  bool use_src_ctc = true;
  bool use_tgt_ctc = true;
  double label_smoothing = 0.1;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;
  /// Stop after this many updates (0: run all epochs).
  Index max_steps = 0;
  /// Validate every this many updates and at the end (0: only at the end).
  Index valid_every = 200;
  /// Validation examples used (0: all).
  std::size_t valid_limit = 0;

  void validate() const;

  static TrainConfig full_mt();
  static TrainConfig full_st();

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

double lr_schedule(Index step, double peak_lr, Index warmup);

struct LossTerms {
  double total = 0.0;
  double src_ctc = 0.0;
  double tgt_ctc = 0.0;
  double attn = 0.0;
};

struct MultitaskLoss {
  Tensor total;
  LossTerms terms;
};

/// The SrcCTC label: the transcript for ST, the source itself for MT.
const std::vector<TokenId>& src_ctc_label(const ModelConfig& config, const Example& ex);

/// src_ctc + lambda1 * tgt_ctc + lambda2 * attn; disabled terms are absent
/// from the graph and reported as zero.
MultitaskLoss multitask_loss(const Model& model, const EncoderGraph& enc,
                             std::span<const TokenId> src_label, std::span<const TokenId> target,
                             const TrainConfig& config, bool train, std::mt19937_64* rng);

/// Adam with decoupled weight decay on matrices with more than one row.
class AdamW {
 public:
  explicit AdamW(const TrainConfig& config) : config_(config) {}
  /// Applies one update from the accumulated gradients; returns the
  /// pre-clip gradient norm.
  double step(ModelParams& params, double lr);
  Index steps() const { return steps_; }

 private:
  TrainConfig config_;
  Index steps_ = 0;
  std::map<std::string, Matrix> m_;
  std::map<std::string, Matrix> v_;
};

struct ValidationReport {
  Index step = 0;
  double loss = 0.0;
  LossTerms terms;
  double ctc_greedy_accuracy = 0.0;
  double attn_greedy_accuracy = 0.0;
  std::size_t examples = 0;
};

ValidationReport validate_model(const Model& model, const std::vector<Example>& examples,
                                const TrainConfig& config, Index step = 0);

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  Model best;
  Model last;
  Index steps = 0;
  ValidationReport best_report;
  std::vector<ValidationReport> history;
};

/// Trains a copy of `init`. Each line written to `log` is one JSON record.
TrainResult train(const Model& init, const std::vector<Example>& train_set,
                  const std::vector<Example>& valid_set, const TrainConfig& config,
                  std::ostream* log = nullptr);

}  // namespace jointctc
