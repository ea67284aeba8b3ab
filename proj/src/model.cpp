#include "jointctc/model.hpp"

#include <cmath>
#include <stdexcept>

namespace jointctc {

std::string to_string(TaskKind kind) { return kind == TaskKind::mt ? "mt" : "st"; }

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "mt") return TaskKind::mt;
  if (s == "st" || s == "st-analog") return TaskKind::st;
  throw std::invalid_argument("unknown model task '" + s + "' (expected mt or st)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("ModelConfig: " + msg); };
  if (d_model < 1 || n_heads < 1) fail("d_model and n_heads must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (d_ff < 1) fail("d_ff must be positive");
  if (n_src_layers < 0 || n_adjust_layers < 0 || n_tgt_layers < 0) fail("negative layer count");
  if (n_dec_layers < 1) fail("decoder needs at least one layer");
  if (upsample_rate < 1 || downsample_rate < 1) fail("length rates must be >= 1");
  if (src_vocab < 1 || tgt_vocab < 1) fail("vocabularies must be nonempty");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
  if (src_ctc_layer_index != n_src_layers + n_adjust_layers)
    fail("src_ctc_layer_index must sit between the source and target encoders (" +
         std::to_string(n_src_layers + n_adjust_layers) + ")");
}

Index ModelConfig::adjusted_length(Index input_length) const {
  if (task == TaskKind::mt) return input_length * upsample_rate;
  return (input_length + downsample_rate - 1) / downsample_rate;
}

ModelConfig ModelConfig::full_mt(Index src_vocab, Index tgt_vocab) {
  ModelConfig c;
  c.task = TaskKind::mt;
  c.d_model = 512;
  c.n_heads = 8;
  c.d_ff = 2048;
  c.n_src_layers = 3;
  c.n_adjust_layers = 3;
  c.n_tgt_layers = 12;
  c.n_dec_layers = 6;
  c.upsample_rate = 3;
  c.src_ctc_layer_index = 6;
  c.dropout = 0.3;
  c.src_vocab = src_vocab;
  c.tgt_vocab = tgt_vocab;
  return c;
}

ModelConfig ModelConfig::full_st(Index src_vocab, Index tgt_vocab) {
  ModelConfig c;
  c.task = TaskKind::st;
  c.d_model = 512;
  c.n_heads = 8;
  c.d_ff = 2048;
  c.n_src_layers = 6;
  c.n_adjust_layers = 6;
  c.n_tgt_layers = 6;
  c.n_dec_layers = 6;
  c.downsample_rate = 4;
  c.src_ctc_layer_index = 12;
  c.dropout = 0.1;
  c.src_vocab = src_vocab;
  c.tgt_vocab = tgt_vocab;
  return c;
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

void ModelParams::add(const std::string& name, Matrix value) {
  if (!tensors_.emplace(name, Tensor::parameter(std::move(value))).second)
    throw std::invalid_argument("duplicate parameter " + name);
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += static_cast<std::size_t>(t.value().size());
  return n;
}

void ModelParams::zero_grad() {
  for (auto& [_, t] : tensors_) t.zero_grad();
}

void validate_input(const ModelConfig& config, std::span<const TokenId> x) {
  if (x.empty()) throw std::invalid_argument("encode: empty input");
  for (TokenId id : x)
    if (id < 1 || id > config.src_vocab)
      throw std::invalid_argument("encode: source id " + std::to_string(id) +
                                  " outside 1.." + std::to_string(config.src_vocab));
}

namespace {

struct ParamSpec {
  std::string name;
  Index rows;
  Index cols;
  enum Init { xavier, zero, one, embedding } init;
};

std::vector<ParamSpec> parameter_layout(const ModelConfig& c) {
  const Index d = c.d_model;
  std::vector<ParamSpec> specs;
  auto attention = [&](const std::string& p) {
    for (const char* m : {"q", "k", "v", "o"}) {
      specs.push_back({p + ".w" + m, d, d, ParamSpec::xavier});
      specs.push_back({p + ".b" + m, 1, d, ParamSpec::zero});
    }
  };
  auto norm = [&](const std::string& p) {
    specs.push_back({p + ".g", 1, d, ParamSpec::one});
    specs.push_back({p + ".b", 1, d, ParamSpec::zero});
  };
  auto ffn = [&](const std::string& p) {
    specs.push_back({p + ".w1", d, c.d_ff, ParamSpec::xavier});
    specs.push_back({p + ".b1", 1, c.d_ff, ParamSpec::zero});
    specs.push_back({p + ".w2", c.d_ff, d, ParamSpec::xavier});
    specs.push_back({p + ".b2", 1, d, ParamSpec::zero});
  };

  specs.push_back({"src.embed", c.src_vocab + 1, d, ParamSpec::embedding});
  for (Index i = 0; i < c.encoder_layers(); ++i) {
    const std::string p = "enc." + std::to_string(i);
    norm(p + ".ln1");
    attention(p + ".attn");
    norm(p + ".ln2");
    ffn(p + ".ff");
  }
  if (c.task == TaskKind::mt) {
    specs.push_back({"adjust.subpos", c.upsample_rate, d, ParamSpec::embedding});
  } else {
    specs.push_back({"adjust.conv.w", c.downsample_rate * d, d, ParamSpec::xavier});
    specs.push_back({"adjust.conv.b", 1, d, ParamSpec::zero});
  }
  norm("src_ctc.ln");
  specs.push_back({"src_ctc.w", d, c.src_vocab + 1, ParamSpec::xavier});
  specs.push_back({"src_ctc.b", 1, c.src_vocab + 1, ParamSpec::zero});
  norm("enc.ln");
  specs.push_back({"tgt_ctc.w", d, c.tgt_vocab + 1, ParamSpec::xavier});
  specs.push_back({"tgt_ctc.b", 1, c.tgt_vocab + 1, ParamSpec::zero});

  specs.push_back({"tgt.embed", c.tgt_vocab + 2, d, ParamSpec::embedding});
  for (Index i = 0; i < c.n_dec_layers; ++i) {
    const std::string p = "dec." + std::to_string(i);
    norm(p + ".ln1");
    attention(p + ".self");
    norm(p + ".ln2");
    attention(p + ".cross");
    norm(p + ".ln3");
    ffn(p + ".ff");
  }
  norm("dec.ln");
  specs.push_back({"dec.out.w", d, c.tgt_vocab + 1, ParamSpec::xavier});
  specs.push_back({"dec.out.b", 1, c.tgt_vocab + 1, ParamSpec::zero});
  return specs;
}

// --- plain Eigen helpers for the incremental decoder ----------------------

Matrix ln_rows(const Matrix& x, const Matrix& g, const Matrix& b, double eps = 1e-5) {
  Vector mu = x.rowwise().mean();
  Matrix centered = x.colwise() - mu;
  Vector inv_std = (centered.array().square().rowwise().mean() + eps).rsqrt().matrix();
  Matrix out = (centered.array().colwise() * inv_std.array()).matrix();
  out = (out.array().rowwise() * g.row(0).array()).matrix();
  out.rowwise() += b.row(0);
  return out;
}

Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix out = x * w;
  out.rowwise() += b.row(0);
  return out;
}

}  // namespace

Model::Model(ModelConfig config, ModelParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  for (const auto& spec : parameter_layout(config_)) {
    if (!params_.contains(spec.name)) throw std::invalid_argument("missing parameter " + spec.name);
    const Tensor& t = params_.at(spec.name);
    if (t.rows() != spec.rows || t.cols() != spec.cols)
      throw std::invalid_argument("parameter " + spec.name + " has the wrong shape");
    if (!t.value().allFinite()) throw std::invalid_argument("parameter " + spec.name + " is not finite");
  }
  if (params_.size() != parameter_layout(config_).size())
    throw std::invalid_argument("unexpected extra parameters for this configuration");
}

Model Model::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (const auto& spec : parameter_layout(config)) {
    Matrix m(spec.rows, spec.cols);
    switch (spec.init) {
      case ParamSpec::zero:
        m.setZero();
        break;
      case ParamSpec::one:
        m.setOnes();
        break;
      case ParamSpec::xavier: {
        const double limit = std::sqrt(6.0 / static_cast<double>(spec.rows + spec.cols));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
        break;
      }
      case ParamSpec::embedding: {
        std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(spec.cols)));
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
        break;
      }
    }
    params.add(spec.name, std::move(m));
  }
  return Model(config, std::move(params));
}

Model Model::clone() const {
  ModelParams params;
  for (const auto& [name, t] : params_) params.add(name, t.value());
  return Model(config_, std::move(params));
}

Model Model::zeros(const ModelConfig& config) {
  config.validate();
  ModelParams params;
  for (const auto& spec : parameter_layout(config))
    params.add(spec.name, Matrix::Zero(spec.rows, spec.cols));
  return Model(config, std::move(params));
}

// --- tape-level forward ----------------------------------------------------

namespace {

struct AttentionWeights {
  const Tensor &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo;
};

AttentionWeights attention_weights(const ModelParams& p, const std::string& prefix) {
  return {p.at(prefix + ".wq"), p.at(prefix + ".bq"), p.at(prefix + ".wk"), p.at(prefix + ".bk"),
          p.at(prefix + ".wv"), p.at(prefix + ".bv"), p.at(prefix + ".wo"), p.at(prefix + ".bo")};
}

Tensor multi_head(const Tensor& xq, const Tensor& xkv, const AttentionWeights& w, Index heads,
                  bool causal, std::vector<Matrix>* maps) {
  const Tensor q = add_bias(matmul(xq, w.wq), w.bq);
  const Tensor k = add_bias(matmul(xkv, w.wk), w.bk);
  const Tensor v = add_bias(matmul(xkv, w.wv), w.bv);
  const Index dk = q.cols() / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (Index h = 0; h < heads; ++h) {
    const Tensor scores =
        scale(matmul_nt(slice_cols(q, h * dk, dk), slice_cols(k, h * dk, dk)), inv);
    const Tensor probs = causal ? causal_softmax(scores) : softmax(scores);
    if (maps) maps->push_back(probs.value());
    outs.push_back(matmul(probs, slice_cols(v, h * dk, dk)));
  }
  const Tensor merged = heads == 1 ? outs.front() : concat_cols(outs);
  return add_bias(matmul(merged, w.wo), w.bo);
}

Tensor feed_forward(const Tensor& x, const ModelParams& p, const std::string& prefix) {
  const Tensor hidden = relu(add_bias(matmul(x, p.at(prefix + ".w1")), p.at(prefix + ".b1")));
  return add_bias(matmul(hidden, p.at(prefix + ".w2")), p.at(prefix + ".b2"));
}

Tensor norm(const Tensor& x, const ModelParams& p, const std::string& prefix) {
  return layer_norm(x, p.at(prefix + ".g"), p.at(prefix + ".b"));
}

Tensor maybe_dropout(const Tensor& x, double rate, bool train, std::mt19937_64* rng) {
  if (!train || rate <= 0.0 || rng == nullptr) return x;
  return dropout(x, rate, *rng);
}

Tensor embed_with_positions(const Tensor& table, std::span<const TokenId> ids, Index d) {
  const Tensor e = scale(embed_lookup(table, ids), std::sqrt(static_cast<double>(d)));
  return add(e, Tensor::constant(sinusoidal_positions(static_cast<Index>(ids.size()), d)));
}

}  // namespace

Tensor Model::encoder_layer(const Tensor& x, Index layer, bool train, std::mt19937_64* rng) const {
  const std::string p = "enc." + std::to_string(layer);
  const Tensor a = norm(x, params_, p + ".ln1");
  Tensor y = add(x, maybe_dropout(multi_head(a, a, attention_weights(params_, p + ".attn"),
                                             config_.n_heads, false, nullptr),
                                  config_.dropout, train, rng));
  const Tensor b = norm(y, params_, p + ".ln2");
  return add(y, maybe_dropout(feed_forward(b, params_, p + ".ff"), config_.dropout, train, rng));
}

EncoderGraph Model::encode_graph(std::span<const TokenId> x, bool train,
                                 std::mt19937_64* rng) const {
  validate_input(config_, x);
  const Index d = config_.d_model;
  Tensor h = maybe_dropout(embed_with_positions(params_.at("src.embed"), x, d), config_.dropout,
                           train, rng);
  Index layer = 0;
  for (Index i = 0; i < config_.n_src_layers; ++i) h = encoder_layer(h, layer++, train, rng);

  if (config_.task == TaskKind::mt) {
    const Index r = config_.upsample_rate;
    h = repeat_rows(h, r);
    std::vector<TokenId> sub(static_cast<std::size_t>(h.rows()));
    for (std::size_t i = 0; i < sub.size(); ++i) sub[i] = static_cast<TokenId>(i % r);
    h = add(h, embed_lookup(params_.at("adjust.subpos"), sub));
  } else {
    const Index r = config_.downsample_rate;
    const Index out_len = config_.adjusted_length(static_cast<Index>(x.size()));
    h = reshape(pad_rows(h, out_len * r), out_len, r * d);
    h = relu(add_bias(matmul(h, params_.at("adjust.conv.w")), params_.at("adjust.conv.b")));
    h = add(h, Tensor::constant(sinusoidal_positions(out_len, d)));
  }
  for (Index i = 0; i < config_.n_adjust_layers; ++i) h = encoder_layer(h, layer++, train, rng);

  EncoderGraph g;
  g.h_src = h;
  g.src_logits = add_bias(matmul(norm(h, params_, "src_ctc.ln"), params_.at("src_ctc.w")),
                          params_.at("src_ctc.b"));
  for (Index i = 0; i < config_.n_tgt_layers; ++i) h = encoder_layer(h, layer++, train, rng);
  g.h_tgt = norm(h, params_, "enc.ln");
  g.tgt_logits = add_bias(matmul(g.h_tgt, params_.at("tgt_ctc.w")), params_.at("tgt_ctc.b"));
  return g;
}

Tensor Model::decoder_logits(const Tensor& h_tgt, std::span<const TokenId> inputs, bool train,
                             std::mt19937_64* rng, AttentionMaps* maps) const {
  if (inputs.empty()) throw std::invalid_argument("decoder_logits: no inputs");
  const Index d = config_.d_model;
  Tensor y = maybe_dropout(embed_with_positions(params_.at("tgt.embed"), inputs, d),
                           config_.dropout, train, rng);
  if (maps) maps->assign(static_cast<std::size_t>(config_.n_dec_layers), {});
  for (Index l = 0; l < config_.n_dec_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    const Tensor a = norm(y, params_, p + ".ln1");
    y = add(y, maybe_dropout(multi_head(a, a, attention_weights(params_, p + ".self"),
                                        config_.n_heads, true, nullptr),
                             config_.dropout, train, rng));
    const Tensor b = norm(y, params_, p + ".ln2");
    y = add(y, maybe_dropout(multi_head(b, h_tgt, attention_weights(params_, p + ".cross"),
                                        config_.n_heads, false,
                                        maps ? &(*maps)[static_cast<std::size_t>(l)] : nullptr),
                             config_.dropout, train, rng));
    const Tensor c = norm(y, params_, p + ".ln3");
    y = add(y, maybe_dropout(feed_forward(c, params_, p + ".ff"), config_.dropout, train, rng));
  }
  y = norm(y, params_, "dec.ln");
  return add_bias(matmul(y, params_.at("dec.out.w")), params_.at("dec.out.b"));
}

// --- evaluation ------------------------------------------------------------

EncodeResult Model::encode(std::span<const TokenId> x) const {
  NoGradGuard guard;
  const EncoderGraph g = encode_graph(x, false, nullptr);
  EncodeResult r;
  r.h_src = g.h_src.value();
  r.h_tgt = g.h_tgt.value();
  r.src_grid = PosteriorGrid<double>::from_logits(g.src_logits.value(), kBlank);
  r.tgt_grid = PosteriorGrid<double>::from_logits(g.tgt_logits.value(), kBlank);
  r.adjusted_length = r.h_tgt.rows();
  return r;
}

namespace {
std::vector<TokenId> with_sos(TokenId sos, std::span<const TokenId> y) {
  std::vector<TokenId> in;
  in.reserve(y.size() + 1);
  in.push_back(sos);
  in.insert(in.end(), y.begin(), y.end());
  return in;
}
}  // namespace

Vector Model::decode_step(const Matrix& h_tgt, std::span<const TokenId> prefix) const {
  const TokenId eos = config_.tgt_eos();
  for (TokenId id : prefix)
    if (id == eos) throw std::invalid_argument("decode_step: prefix contains eos");
  NoGradGuard guard;
  const auto inputs = with_sos(eos, prefix);
  const Tensor logits = decoder_logits(Tensor::constant(h_tgt), inputs, false, nullptr);
  Matrix last = logits.value().bottomRows(1);
  return log_softmax_rows(last).row(0).transpose();
}

double Model::sequence_logp(const Matrix& h_tgt, std::span<const TokenId> y) const {
  const TokenId eos = config_.tgt_eos();
  NoGradGuard guard;
  const auto inputs = with_sos(eos, y);
  const Matrix logp =
      log_softmax_rows(decoder_logits(Tensor::constant(h_tgt), inputs, false, nullptr).value());
  double total = 0.0;
  for (std::size_t i = 0; i <= y.size(); ++i) {
    const TokenId next = i < y.size() ? y[i] : eos;
    total += logp(static_cast<Index>(i), column_of(next));
  }
  return total;
}

AttentionMaps Model::cross_attention_maps(const Matrix& h_tgt, std::span<const TokenId> y) const {
  if (y.empty()) return AttentionMaps(static_cast<std::size_t>(config_.n_dec_layers));
  NoGradGuard guard;
  auto inputs = with_sos(config_.tgt_eos(), y);
  inputs.pop_back();
  AttentionMaps maps;
  decoder_logits(Tensor::constant(h_tgt), inputs, false, nullptr, &maps);
  return maps;
}

DecoderCache Model::make_cache(const Matrix& h_tgt) const {
  DecoderCache cache;
  for (Index l = 0; l < config_.n_dec_layers; ++l) {
    const std::string p = "dec." + std::to_string(l) + ".cross";
    cache.cross_k.push_back(
        affine(h_tgt, params_.at(p + ".wk").value(), params_.at(p + ".bk").value()));
    cache.cross_v.push_back(
        affine(h_tgt, params_.at(p + ".wv").value(), params_.at(p + ".bv").value()));
  }
  return cache;
}

DecoderState Model::start(const DecoderCache& cache) const {
  DecoderState empty;
  empty.self_k.resize(static_cast<std::size_t>(config_.n_dec_layers));
  empty.self_v.resize(static_cast<std::size_t>(config_.n_dec_layers));
  for (Index l = 0; l < config_.n_dec_layers; ++l) {
    empty.self_k[static_cast<std::size_t>(l)].resize(0, config_.d_model);
    empty.self_v[static_cast<std::size_t>(l)].resize(0, config_.d_model);
  }
  return step(cache, empty, config_.tgt_eos());
}

DecoderState Model::advance(const DecoderCache& cache, const DecoderState& state,
                            TokenId token) const {
  if (token < 1 || token > config_.tgt_vocab)
    throw std::invalid_argument("advance: token " + std::to_string(token) + " is not a target token");
  return step(cache, state, token);
}

DecoderState Model::step(const DecoderCache& cache, const DecoderState& prev, TokenId input) const {
  const Index d = config_.d_model;
  const Index heads = config_.n_heads;
  const Index dk = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  auto val = [&](const std::string& name) -> const Matrix& { return params_.at(name).value(); };

  DecoderState next;
  next.position = prev.position + 1;
  next.self_k.resize(prev.self_k.size());
  next.self_v.resize(prev.self_v.size());

  Matrix x = val("tgt.embed").row(input) * std::sqrt(static_cast<double>(d));
  x += sinusoidal_positions(1, d, prev.position);

  auto attend = [&](const Matrix& q, const Matrix& k, const Matrix& v) {
    Matrix out(1, d);
    for (Index h = 0; h < heads; ++h) {
      Matrix scores = (q.middleCols(h * dk, dk) * k.middleCols(h * dk, dk).transpose()) * inv;
      Matrix probs = softmax_rows(scores);
      out.middleCols(h * dk, dk) = probs * v.middleCols(h * dk, dk);
    }
    return out;
  };

  for (Index l = 0; l < config_.n_dec_layers; ++l) {
    const auto li = static_cast<std::size_t>(l);
    const std::string p = "dec." + std::to_string(l);
    {
      const Matrix a = ln_rows(x, val(p + ".ln1.g"), val(p + ".ln1.b"));
      const Matrix q = affine(a, val(p + ".self.wq"), val(p + ".self.bq"));
      Matrix& k = next.self_k[li];
      Matrix& v = next.self_v[li];
      k.resize(prev.self_k[li].rows() + 1, d);
      v.resize(prev.self_v[li].rows() + 1, d);
      k.topRows(prev.self_k[li].rows()) = prev.self_k[li];
      v.topRows(prev.self_v[li].rows()) = prev.self_v[li];
      k.bottomRows(1) = affine(a, val(p + ".self.wk"), val(p + ".self.bk"));
      v.bottomRows(1) = affine(a, val(p + ".self.wv"), val(p + ".self.bv"));
      x += affine(attend(q, k, v), val(p + ".self.wo"), val(p + ".self.bo"));
    }
    {
      const Matrix b = ln_rows(x, val(p + ".ln2.g"), val(p + ".ln2.b"));
      const Matrix q = affine(b, val(p + ".cross.wq"), val(p + ".cross.bq"));
      x += affine(attend(q, cache.cross_k[li], cache.cross_v[li]), val(p + ".cross.wo"),
                  val(p + ".cross.bo"));
    }
    {
      const Matrix c = ln_rows(x, val(p + ".ln3.g"), val(p + ".ln3.b"));
      const Matrix hidden = affine(c, val(p + ".ff.w1"), val(p + ".ff.b1")).cwiseMax(0.0);
      x += affine(hidden, val(p + ".ff.w2"), val(p + ".ff.b2"));
    }
  }
  const Matrix y = ln_rows(x, val("dec.ln.g"), val("dec.ln.b"));
  next.next_logp = log_softmax_rows(affine(y, val("dec.out.w"), val("dec.out.b"))).row(0).transpose();
  return next;
}

}  // namespace jointctc
