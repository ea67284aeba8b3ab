#include "jointctc/checkpoint.hpp"
#include "jointctc/model.hpp"
#include "jointctc/oracle_suite.hpp"

#include <doctest.h>

#include <sstream>

using namespace jointctc;

namespace {

ModelConfig small_config(TaskKind task = TaskKind::mt) {
  ModelConfig c;
  c.task = task;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 24;
  c.n_src_layers = 1;
  c.n_adjust_layers = 1;
  c.n_tgt_layers = 1;
  c.n_dec_layers = 2;
  c.upsample_rate = 2;
  c.downsample_rate = 3;
  c.src_vocab = 6;
  c.tgt_vocab = 5;
  c.dropout = 0.0;
  c.src_ctc_layer_index = 2;
  return c;
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(small_config().validate());
  auto c = small_config();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config();
  c.src_ctc_layer_index = 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK_NOTHROW(ModelConfig::full_mt(100, 100).validate());
  CHECK_NOTHROW(ModelConfig::full_st(100, 100).validate());
  CHECK(ModelConfig::full_mt(10, 10).encoder_layers() == 18);
  CHECK(ModelConfig::full_st(10, 10).encoder_layers() == 18);
}

TEST_CASE("length adjustment") {
  auto mt = small_config();
  CHECK(mt.adjusted_length(4) == 8);
  auto st = small_config(TaskKind::st);
  CHECK(st.adjusted_length(7) == 3);
  CHECK(st.adjusted_length(9) == 3);
  CHECK(st.adjusted_length(1) == 1);
}

TEST_CASE("encoder output shapes and grids") {
  for (TaskKind task : {TaskKind::mt, TaskKind::st}) {
    const auto model = Model::initialize(small_config(task), 7);
    const std::vector<TokenId> x{1, 2, 3, 4, 5, 6, 1};
    const auto enc = model.encode(x);
    const Index Tp = model.config().adjusted_length(7);
    CHECK(enc.adjusted_length == Tp);
    CHECK(enc.h_tgt.rows() == Tp);
    CHECK(enc.h_tgt.cols() == 16);
    CHECK(enc.tgt_grid.frames() == Tp);
    CHECK(enc.tgt_grid.vocab() == 6);
    CHECK(enc.src_grid.vocab() == 7);
    CHECK_NOTHROW(enc.tgt_grid.validate());
    CHECK_NOTHROW(enc.src_grid.validate());
  }
}

TEST_CASE("input validation") {
  const auto model = Model::initialize(small_config(), 1);
  CHECK_THROWS_AS(model.encode(std::vector<TokenId>{}), std::invalid_argument);
  CHECK_THROWS_AS(model.encode(std::vector<TokenId>{0}), std::invalid_argument);
  CHECK_THROWS_AS(model.encode(std::vector<TokenId>{7}), std::invalid_argument);
}

TEST_CASE("initialization is seeded") {
  const auto a = Model::initialize(small_config(), 3);
  const auto b = Model::initialize(small_config(), 3);
  const auto c = Model::initialize(small_config(), 4);
  bool all_equal = true, any_diff = false;
  for (const auto& [name, t] : a.params()) {
    all_equal = all_equal && t.value() == b.params().at(name).value();
    any_diff = any_diff || t.value() != c.params().at(name).value();
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("incremental decoding matches full recomputation") {
  const auto model = Model::initialize(small_config(), 11);
  const std::vector<TokenId> x{3, 1, 4, 1, 5};
  const auto enc = model.encode(x);
  const auto cache = model.make_cache(enc.h_tgt);
  const std::vector<TokenId> y{2, 5, 1, 1, 3};
  auto state = model.start(cache);
  std::vector<TokenId> prefix;
  double total = 0.0;
  for (std::size_t i = 0; i <= y.size(); ++i) {
    const Vector full = model.decode_step(enc.h_tgt, prefix);
    CHECK((full - state.next_logp).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(state.next_logp.array().exp().sum() - 1.0) < 1e-12);
    if (i == y.size()) {
      total += state.next_logp(Model::column_of(model.config().tgt_eos()));
      break;
    }
    total += state.next_logp(Model::column_of(y[i]));
    state = model.advance(cache, state, y[i]);
    prefix.push_back(y[i]);
  }
  CHECK(model.sequence_logp(enc.h_tgt, y) == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("cross-attention maps are row-stochastic") {
  const auto model = Model::initialize(small_config(), 12);
  const std::vector<TokenId> x{1, 2, 3};
  const auto enc = model.encode(x);
  const std::vector<TokenId> y{1, 2, 3, 4};
  const auto maps = model.cross_attention_maps(enc.h_tgt, y);
  REQUIRE(maps.size() == 2);
  REQUIRE(maps[0].size() == 2);
  for (const auto& layer : maps)
    for (const Matrix& m : layer) {
      CHECK(m.cols() == enc.adjusted_length);
      CHECK(m.rows() >= 4);
      for (Index r = 0; r < m.rows(); ++r) CHECK(m.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("clone is deep, copies share") {
  auto a = Model::initialize(small_config(), 13);
  Model shared = a;
  Model deep = a.clone();
  a.params().at(a.params().begin()->first).mutable_value()(0, 0) += 1.0;
  const auto& name = a.params().begin()->first;
  CHECK(shared.params().at(name).value()(0, 0) == a.params().at(name).value()(0, 0));
  CHECK(deep.params().at(name).value()(0, 0) != a.params().at(name).value()(0, 0));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const auto model = Model::initialize(small_config(TaskKind::st), 14);
  std::stringstream first;
  write_checkpoint(first, model);
  const auto loaded = read_checkpoint(first);
  CHECK(loaded.config() == model.config());
  for (const auto& [name, t] : model.params()) CHECK(loaded.params().at(name).value() == t.value());
  std::stringstream second;
  write_checkpoint(second, loaded);
  CHECK(first.str() == second.str());
  const std::vector<TokenId> x{1, 2, 3, 4, 5, 6};
  CHECK(loaded.encode(x).h_tgt == model.encode(x).h_tgt);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto model = Model::initialize(small_config(), 15);
  std::stringstream ss;
  write_checkpoint(ss, model);
  std::string bytes = ss.str();
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::stringstream a(bad_magic);
  CHECK_THROWS_AS(read_checkpoint(a), CheckpointError);
  std::stringstream b(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(read_checkpoint(b), CheckpointError);
}

TEST_CASE("model config JSON round trip") {
  const auto c = ModelConfig::full_st(40, 30);
  CHECK(model_config_from_json(model_config_to_json(c)) == c);
}

TEST_CASE("decoder output gradients pass a finite-difference check") {
  auto model = Model::initialize(small_config(), 16);
  const std::vector<TokenId> x{1, 2};
  const std::string name = "dec.out.w";
  REQUIRE(model.params().contains(name));
  const Matrix w0 = model.params().at(name).value();
  auto f = [&](const Tensor& w) {
    model.params().at(name) = w;
    const auto g = model.encode_graph(x, false, nullptr);
    const std::vector<TokenId> in{model.config().tgt_eos(), 3};
    const std::vector<int> cols{2, static_cast<int>(Model::column_of(model.config().tgt_eos()))};
    return cross_entropy(model.decoder_logits(g.h_tgt, in, false, nullptr), cols, 0.0);
  };
  const auto report = grad_check(f, w0, 1e-5, 1e-5);
  CHECK(report.passed);
}
