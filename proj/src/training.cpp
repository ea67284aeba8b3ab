#include "jointctc/training.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace jointctc {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("TrainConfig: " + m); };
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) fail("lambdas must be >= 0");
  if (warmup_steps < 1) fail("warmup_steps must be >= 1");
  if (!(peak_lr > 0.0)) fail("peak_lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) fail("label_smoothing must lie in [0, 1)");
  if (clip_norm < 0.0) fail("clip_norm must be >= 0");
  if (max_steps < 0 || valid_every < 0) fail("step counts must be >= 0");
}

TrainConfig TrainConfig::full_mt() {
  TrainConfig c;
  c.lambda1 = 1.0;
  c.lambda2 = 2.0;
  c.warmup_steps = 10000;
  return c;
}

TrainConfig TrainConfig::full_st() {
  TrainConfig c;
  c.lambda1 = 2.0;
  c.lambda2 = 5.0;
  c.warmup_steps = 10000;
  return c;
}

double lr_schedule(Index step, double peak_lr, Index warmup) {
  if (step < 1) throw std::invalid_argument("lr_schedule: step must be >= 1");
  if (warmup < 1) throw std::invalid_argument("lr_schedule: warmup must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return peak_lr * std::min(s / w, std::sqrt(w / s));
}

const std::vector<TokenId>& src_ctc_label(const ModelConfig& config, const Example& ex) {
  return config.task == TaskKind::st ? ex.transcript.ids : ex.source.ids;
}

MultitaskLoss multitask_loss(const Model& model, const EncoderGraph& enc,
                             std::span<const TokenId> src_label, std::span<const TokenId> target,
                             const TrainConfig& config, bool train, std::mt19937_64* rng) {
  MultitaskLoss out;
  std::vector<Tensor> parts;
  if (config.use_src_ctc) {
    Tensor l = ctc_loss(enc.src_logits, src_label);
    out.terms.src_ctc = l.item();
    parts.push_back(l);
  }
  if (config.use_tgt_ctc && config.lambda1 != 0.0) {
    Tensor l = ctc_loss(enc.tgt_logits, target);
    out.terms.tgt_ctc = l.item();
    parts.push_back(scale(l, config.lambda1));
  }
  if (config.lambda2 != 0.0) {
    const TokenId eos = model.config().tgt_eos();
    std::vector<TokenId> inputs{eos};
    inputs.insert(inputs.end(), target.begin(), target.end());
    std::vector<int> cols;
    for (TokenId id : target) cols.push_back(static_cast<int>(Model::column_of(id)));
    cols.push_back(static_cast<int>(Model::column_of(eos)));
    Tensor logits = model.decoder_logits(enc.h_tgt, inputs, train, rng);
    Tensor l = cross_entropy(logits, cols, config.label_smoothing);
    out.terms.attn = l.item();
    parts.push_back(scale(l, config.lambda2));
  }
  if (parts.empty()) {
    out.total = Tensor::constant(Matrix::Zero(1, 1));
    return out;
  }
  out.total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) out.total = add(out.total, parts[i]);
  out.terms.total = out.total.item();
  return out;
}

double AdamW::step(ModelParams& params, double lr) {
  ++steps_;
  double sq = 0.0;
  for (const auto& [name, t] : params)
    if (t.has_grad()) sq += t.grad().squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient norm at step " + std::to_string(steps_));
  const double clip = config_.clip_norm > 0.0 && norm > config_.clip_norm ? config_.clip_norm / norm : 1.0;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    Matrix& p = t.mutable_value();
    const Matrix g = t.grad() * clip;
    auto [mit, fresh] = m_.try_emplace(name, Matrix::Zero(p.rows(), p.cols()));
    Matrix& m = mit->second;
    Matrix& v = v_.try_emplace(name, Matrix::Zero(p.rows(), p.cols())).first->second;
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v.array() = config_.beta2 * v.array() + (1.0 - config_.beta2) * g.array().square();
    if (config_.weight_decay > 0.0 && p.rows() > 1) p *= 1.0 - lr * config_.weight_decay;
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config_.adam_eps);
  }
  return norm;
}

ValidationReport validate_model(const Model& model, const std::vector<Example>& examples,
                                const TrainConfig& config, Index step) {
  NoGradGuard guard;
  ValidationReport r;
  r.step = step;
  const std::size_t n = config.valid_limit > 0 ? std::min(config.valid_limit, examples.size())
                                               : examples.size();
  std::size_t ctc_ok = 0, attn_ok = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Example& ex = examples[i];
    const EncoderGraph g = model.encode_graph(ex.source.ids, false, nullptr);
    const auto loss = multitask_loss(model, g, src_ctc_label(model.config(), ex), ex.target.ids,
                                     config, false, nullptr);
    r.loss += loss.terms.total;
    r.terms.total += loss.terms.total;
    r.terms.src_ctc += loss.terms.src_ctc;
    r.terms.tgt_ctc += loss.terms.tgt_ctc;
    r.terms.attn += loss.terms.attn;

    const auto grid = PosteriorGrid<double>::from_logits(g.tgt_logits.value(), kBlank);
    if (greedy_decode(grid) == ex.target.ids) ++ctc_ok;

    const Matrix h = g.h_tgt.value();
    const DecoderCache cache = model.make_cache(h);
    DecoderState st = model.start(cache);
    std::vector<TokenId> out;
    const TokenId eos = model.config().tgt_eos();
    while (static_cast<Index>(out.size()) < h.rows()) {
      Index best = 0;
      st.next_logp.maxCoeff(&best);
      if (model.token_of(best) == eos) break;
      out.push_back(model.token_of(best));
      st = model.advance(cache, st, out.back());
    }
    if (out == ex.target.ids) ++attn_ok;
  }
  Tape::current().clear();
  r.examples = n;
  if (n > 0) {
    const double dn = static_cast<double>(n);
    r.loss /= dn;
    r.terms.total /= dn;
    r.terms.src_ctc /= dn;
    r.terms.tgt_ctc /= dn;
    r.terms.attn /= dn;
    r.ctc_greedy_accuracy = static_cast<double>(ctc_ok) / dn;
    r.attn_greedy_accuracy = static_cast<double>(attn_ok) / dn;
  }
  return r;
}

namespace {

void log_validation(std::ostream* log, const ValidationReport& r) {
  if (!log) return;
  nlohmann::ordered_json j;
  j["event"] = "valid";
  j["step"] = r.step;
  j["loss"] = r.loss;
  j["src_ctc"] = r.terms.src_ctc;
  j["tgt_ctc"] = r.terms.tgt_ctc;
  j["attn"] = r.terms.attn;
  j["ctc_greedy_accuracy"] = r.ctc_greedy_accuracy;
  j["attn_greedy_accuracy"] = r.attn_greedy_accuracy;
  *log << j.dump() << '\n';
}

}  // namespace

TrainResult train(const Model& init, const std::vector<Example>& train_set,
                  const std::vector<Example>& valid_set, const TrainConfig& config,
                  std::ostream* log) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  TrainResult result;
  Model model = init.clone();
  AdamW opt(config);
  std::mt19937_64 order_rng(config.seed);
  std::mt19937_64 dropout_rng(config.seed + 0x5851f42d4c957f2dull);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  bool have_best = false;
  auto run_validation = [&](Index step) {
    if (valid_set.empty()) return;
    ValidationReport r = validate_model(model, valid_set, config, step);
    log_validation(log, r);
    result.history.push_back(r);
    if (!have_best || r.loss < result.best_report.loss) {
      have_best = true;
      result.best_report = r;
      result.best = model.clone();
    }
  };

  Index step = 0;
  bool done = false;
  for (Index epoch = 0; epoch < config.epochs && !done; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t start = 0; start < order.size() && !done;
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const double inv = 1.0 / static_cast<double>(stop - start);
      model.params().zero_grad();
      LossTerms batch;
      // per-example accumulation; equivalent to a padded, masked batch
      for (std::size_t k = start; k < stop; ++k) {
        const Example& ex = train_set[order[k]];
        const EncoderGraph g = model.encode_graph(ex.source.ids, true, &dropout_rng);
        const auto loss = multitask_loss(model, g, src_ctc_label(model.config(), ex), ex.target.ids,
                                         config, true, &dropout_rng);
        if (!std::isfinite(loss.terms.total))
          throw DivergenceError("non-finite loss at step " + std::to_string(step + 1) +
                                " on training example " + std::to_string(ex.id));
        batch.total += loss.terms.total * inv;
        batch.src_ctc += loss.terms.src_ctc * inv;
        batch.tgt_ctc += loss.terms.tgt_ctc * inv;
        batch.attn += loss.terms.attn * inv;
        if (loss.total.requires_grad())
          backward(scale(loss.total, inv));
        else
          Tape::current().clear();
      }
      ++step;
      const double lr = lr_schedule(step, config.peak_lr, config.warmup_steps);
      const double gnorm = opt.step(model.params(), lr);
      if (log) {
        nlohmann::ordered_json j;
        j["event"] = "step";
        j["step"] = step;
        j["epoch"] = epoch;
        j["lr"] = lr;
        j["loss"] = batch.total;
        j["src_ctc"] = batch.src_ctc;
        j["tgt_ctc"] = batch.tgt_ctc;
        j["attn"] = batch.attn;
        j["grad_norm"] = gnorm;
        *log << j.dump() << '\n';
      }
      if (config.max_steps > 0 && step >= config.max_steps) done = true;
      if (!done && config.valid_every > 0 && step % config.valid_every == 0) run_validation(step);
    }
  }
  run_validation(step);
  result.steps = step;
  result.last = model;
  if (!have_best) result.best = model.clone();
  return result;
}

}  // namespace jointctc
