#pragma once

#include "jointctc/ctc.hpp"
#include "jointctc/numerics.hpp"

#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace jointctc {

enum class TaskKind { mt, st };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

/// Architecture of the hierarchical encoder-decoder.
///
/// Source side: embed -> n_src_layers -> length adjustment (repeat for MT,
/// strided conv for ST) -> n_adjust_layers -> SrcCTC head. Target side:
/// n_tgt_layers -> final norm -> TgtCTC head, and the decoder cross-attends
/// to that normalized output.
///
/// Vocabulary sizes count real tokens only. Ids 1..n are tokens, 0 is the
/// CTC blank and n + 1 is eos, so CTC heads emit n + 1 columns and the
/// decoder emits n + 1 columns (tokens then eos, column = id - 1).
struct ModelConfig {
  TaskKind task = TaskKind::mt;
  Index d_model = 64;
  Index n_heads = 4;
  Index d_ff = 128;
  Index n_src_layers = 2;
  Index n_adjust_layers = 2;
  Index n_tgt_layers = 2;
  Index n_dec_layers = 2;
  Index upsample_rate = 3;
  Index downsample_rate = 4;
  Index src_vocab = 10;
  Index tgt_vocab = 10;
  double dropout = 0.1;
  /// Encoder layer after which SrcCTC reads; must equal n_src + n_adjust.
  Index src_ctc_layer_index = 4;

  void validate() const;
  Index adjusted_length(Index input_length) const;
  TokenId tgt_eos() const { return static_cast<TokenId>(tgt_vocab + 1); }
  Index encoder_layers() const { return n_src_layers + n_adjust_layers + n_tgt_layers; }

  /// 18-layer MT encoder with SrcCTC after layer 6 and 3x up-sampling.
  static ModelConfig full_mt(Index src_vocab, Index tgt_vocab);
  /// 18-layer ST encoder with SrcCTC after layer 12 and 1/4x down-sampling.
  static ModelConfig full_st(Index src_vocab, Index tgt_vocab);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named trainable arrays. Iteration order is by name.
class ModelParams {
 public:
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  void add(const std::string& name, Matrix value);
  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

 private:
  std::map<std::string, Tensor> tensors_;
};

struct EncodeResult {
  Matrix h_src;
  Matrix h_tgt;
  PosteriorGrid<double> src_grid;
  PosteriorGrid<double> tgt_grid;
  Index adjusted_length = 0;
};

/// Tape-level encoder outputs used by training.
struct EncoderGraph {
  Tensor h_src;
  Tensor h_tgt;
  Tensor src_logits;
  Tensor tgt_logits;
};

/// Attention weights of a teacher-forced pass: maps[layer][head] is L x T'.
using AttentionMaps = std::vector<std::vector<Matrix>>;

/// Incremental decoder state for one prefix.
struct DecoderState {
  std::vector<Matrix> self_k;
  std::vector<Matrix> self_v;
  Index position = 0;
  /// log-distribution over decoder columns for the next token
  Vector next_logp;
};

/// Cross-attention keys/values for one encoded input, shared by all
/// hypotheses of a search.
struct DecoderCache {
  std::vector<Matrix> cross_k;
  std::vector<Matrix> cross_v;
};

class Model {
 public:
  Model() = default;
  Model(ModelConfig config, ModelParams params);

  static Model initialize(const ModelConfig& config, std::uint64_t seed);
  /// Every parameter set to zero (layer-norm gains included).
  static Model zeros(const ModelConfig& config);
  /// Deep copy; copies of a Model otherwise share parameter storage.
  Model clone() const;

  const ModelConfig& config() const { return config_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  /// Differentiable encoder pass. `rng` drives dropout when train is set.
  EncoderGraph encode_graph(std::span<const TokenId> x, bool train, std::mt19937_64* rng) const;
  /// Decoder logits for inputs [sos, y...]; one row per input position.
  Tensor decoder_logits(const Tensor& h_tgt, std::span<const TokenId> inputs, bool train,
                        std::mt19937_64* rng, AttentionMaps* maps = nullptr) const;

  /// Evaluation-mode encoding.
  EncodeResult encode(std::span<const TokenId> x) const;

  /// Full recomputation of the next-token log-distribution after prefix.
  Vector decode_step(const Matrix& h_tgt, std::span<const TokenId> prefix) const;
  /// Sum of stepwise log-probs of y followed by eos, by one teacher-forced pass.
  double sequence_logp(const Matrix& h_tgt, std::span<const TokenId> y) const;
  AttentionMaps cross_attention_maps(const Matrix& h_tgt, std::span<const TokenId> y) const;

  DecoderCache make_cache(const Matrix& h_tgt) const;
  DecoderState start(const DecoderCache& cache) const;
  /// Feeds `token` and returns the state whose next_logp follows it.
  DecoderState advance(const DecoderCache& cache, const DecoderState& state, TokenId token) const;

  /// Decoder column holding the probability of token id (eos included).
  static Index column_of(TokenId id) { return static_cast<Index>(id) - 1; }
  TokenId token_of(Index column) const { return static_cast<TokenId>(column + 1); }

 private:
  Tensor encoder_layer(const Tensor& x, Index layer, bool train, std::mt19937_64* rng) const;
  DecoderState step(const DecoderCache& cache, const DecoderState& prev, TokenId input) const;

  ModelConfig config_;
  ModelParams params_;
};

void validate_input(const ModelConfig& config, std::span<const TokenId> x);

}  // namespace jointctc
