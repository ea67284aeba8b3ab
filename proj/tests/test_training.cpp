#include "jointctc/training.hpp"

#include <doctest.h>

#include <nlohmann/json.hpp>

#include <sstream>

using namespace jointctc;

namespace {

ModelConfig tiny(Index vocab, TaskKind task = TaskKind::mt) {
  ModelConfig c;
  c.task = task;
  c.d_model = 32;
  c.n_heads = 4;
  c.d_ff = 64;
  c.n_src_layers = 1;
  c.n_adjust_layers = 1;
  c.n_tgt_layers = 1;
  c.n_dec_layers = 1;
  c.upsample_rate = 2;
  c.downsample_rate = 2;
  c.src_vocab = vocab;
  c.tgt_vocab = vocab;
  c.dropout = 0.0;
  c.src_ctc_layer_index = 2;
  return c;
}

Example make_example(std::vector<TokenId> src, std::vector<TokenId> tgt) {
  Example ex;
  ex.source.ids = std::move(src);
  ex.target.ids = std::move(tgt);
  return ex;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  CHECK(lr_schedule(400, 1e-3, 400) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(lr_schedule(1600, 1e-3, 400) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK(lr_schedule(1, 1e-3, 10000) == doctest::Approx(1e-7).epsilon(1e-15));
  CHECK(lr_schedule(200, 1e-3, 400) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK_THROWS_AS(lr_schedule(0, 1e-3, 10), std::invalid_argument);
}

TEST_CASE("train config validation and presets") {
  CHECK_NOTHROW(TrainConfig{}.validate());
  CHECK_NOTHROW(TrainConfig::full_mt().validate());
  CHECK_NOTHROW(TrainConfig::full_st().validate());
  TrainConfig c;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lambda2 = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("src CTC label follows the task") {
  Example ex = make_example({1, 1, 2, 2}, {3, 4});
  ex.transcript.ids = {1, 2};
  CHECK(src_ctc_label(tiny(5), ex) == ex.source.ids);
  CHECK(src_ctc_label(tiny(5, TaskKind::st), ex) == ex.transcript.ids);
}

TEST_CASE("multitask loss is the weighted sum of its terms") {
  const auto model = Model::initialize(tiny(6), 3);
  const Example ex = make_example({1, 2, 3, 4}, {4, 3, 2, 1});
  for (auto [l1, l2] : std::vector<std::pair<double, double>>{{1.0, 2.0}, {0.5, 1.0}, {0.0, 3.0}}) {
    TrainConfig c;
    c.lambda1 = l1;
    c.lambda2 = l2;
    NoGradGuard guard;
    const auto g = model.encode_graph(ex.source.ids, false, nullptr);
    const auto loss = multitask_loss(model, g, ex.source.ids, ex.target.ids, c, false, nullptr);
    const auto& t = loss.terms;
    CHECK(std::abs(t.total - (t.src_ctc + l1 * t.tgt_ctc + l2 * t.attn)) < 1e-12);
    CHECK(loss.total.item() == doctest::Approx(t.total).epsilon(1e-14));
    if (l1 == 0.0) CHECK(t.tgt_ctc == 0.0);
  }
}

TEST_CASE("disabled CTC terms are absent") {
  const auto model = Model::initialize(tiny(6), 4);
  const Example ex = make_example({1, 2, 3}, {3, 2, 1});
  TrainConfig c;
  c.use_src_ctc = false;
  c.use_tgt_ctc = false;
  NoGradGuard guard;
  const auto g = model.encode_graph(ex.source.ids, false, nullptr);
  const auto loss = multitask_loss(model, g, ex.source.ids, ex.target.ids, c, false, nullptr);
  CHECK(loss.terms.src_ctc == 0.0);
  CHECK(loss.terms.tgt_ctc == 0.0);
  CHECK(loss.terms.total == doctest::Approx(c.lambda2 * loss.terms.attn).epsilon(1e-14));
}

TEST_CASE("one optimizer step lowers the loss on a fixed batch") {
  auto model = Model::initialize(tiny(6), 5);
  const Example ex = make_example({1, 2, 3, 4}, {1, 2, 3, 4});
  TrainConfig c;
  auto loss_now = [&] {
    NoGradGuard guard;
    const auto g = model.encode_graph(ex.source.ids, false, nullptr);
    return multitask_loss(model, g, ex.source.ids, ex.target.ids, c, false, nullptr).terms.total;
  };
  const double before = loss_now();
  AdamW opt(c);
  model.params().zero_grad();
  const auto g = model.encode_graph(ex.source.ids, false, nullptr);
  backward(multitask_loss(model, g, ex.source.ids, ex.target.ids, c, false, nullptr).total);
  const double gnorm = opt.step(model.params(), 1e-3);
  CHECK(gnorm > 0.0);
  CHECK(opt.steps() == 1);
  CHECK(loss_now() < before);
}

TEST_CASE("training is deterministic and logs JSON records") {
  SyntheticTaskSpec spec;
  spec.task = SyntheticTask::copy;
  spec.vocab = 5;
  spec.min_length = 2;
  spec.max_length = 4;
  spec.train_size = 64;
  spec.valid_size = 8;
  spec.test_size = 0;
  const auto corpus = generate_corpus(spec);
  TrainConfig c;
  c.batch_size = 8;
  c.max_steps = 6;
  c.valid_every = 3;
  c.seed = 9;
  const auto init = Model::initialize(tiny(5), 1);
  std::ostringstream log1, log2;
  const auto a = train(init, corpus.train, corpus.valid, c, &log1);
  const auto b = train(init, corpus.train, corpus.valid, c, &log2);
  CHECK(log1.str() == log2.str());
  CHECK(a.steps == 6);
  CHECK(a.history.size() == 2);
  for (const auto& [name, t] : a.last.params()) CHECK(t.value() == b.last.params().at(name).value());
  std::istringstream lines(log1.str());
  std::string line;
  int steps = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j["event"] == "step") {
      ++steps;
      CHECK(j.contains("grad_norm"));
      CHECK(j["lr"].get<double>() > 0.0);
    }
  }
  CHECK(steps == 6);
  // the initial model is untouched
  for (const auto& [name, t] : init.params())
    CHECK(t.value() == Model::initialize(tiny(5), 1).params().at(name).value());
}

TEST_CASE("copy task is learned") {
  SyntheticTaskSpec spec;
  spec.task = SyntheticTask::copy;
  spec.vocab = 6;
  spec.min_length = 2;
  spec.max_length = 5;
  spec.train_size = 2000;
  spec.valid_size = 100;
  spec.test_size = 0;
  const auto corpus = generate_corpus(spec);
  TrainConfig c;
  c.batch_size = 16;
  c.peak_lr = 2e-3;
  c.warmup_steps = 100;
  c.epochs = 100;
  c.max_steps = 600;
  c.valid_every = 0;
  c.weight_decay = 0.0;
  const auto result = train(Model::initialize(tiny(6), 2), corpus.train, corpus.valid, c);
  const auto report = validate_model(result.best, corpus.valid, c);
  INFO("attention greedy accuracy " << report.attn_greedy_accuracy);
  CHECK(report.attn_greedy_accuracy >= 0.99);
}
