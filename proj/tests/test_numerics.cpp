#include "jointctc/numerics.hpp"

#include <doctest.h>

#include <cmath>

using namespace jointctc;

namespace {

Matrix random_matrix(Index r, Index c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// weighted sum keeps every output entry in the checked gradient
Tensor weighted_sum(const Tensor& t, std::uint64_t seed) {
  return sum(mul(t, Tensor::constant(random_matrix(t.rows(), t.cols(), seed))));
}

void expect_grad_ok(const std::function<Tensor(const Tensor&)>& f, const Matrix& x) {
  const auto report = grad_check(f, x, 1e-5, 1e-6);
  INFO("max relative error " << report.max_rel_error);
  CHECK(report.passed);
}

}  // namespace

TEST_CASE("log_add and log_sum_exp") {
  CHECK(log_add(std::log(0.25), std::log(0.5)) == doctest::Approx(std::log(0.75)).epsilon(1e-15));
  CHECK(log_add(kLogZero<double>, -3.0) == -3.0);
  CHECK(log_add(kLogZero<double>, kLogZero<double>) == kLogZero<double>);
  CHECK(log_add(1000.0, 1000.0) == doctest::Approx(1000.0 + std::log(2.0)));
  Vector v(3);
  v << std::log(0.2), std::log(0.3), std::log(0.5);
  CHECK(std::abs(log_sum_exp(v)) < 1e-15);
  Vector z = Vector::Constant(2, kLogZero<double>);
  CHECK(log_sum_exp(z) == kLogZero<double>);
}

TEST_CASE("softmax rows are normalized") {
  const Matrix x = random_matrix(4, 5, 1, 3.0);
  const Matrix p = softmax_rows(x);
  for (Index i = 0; i < 4; ++i) CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-14));
  const Matrix lp = log_softmax_rows(x);
  CHECK((lp.array().exp() - p.array()).abs().maxCoeff() < 1e-15);
}

TEST_CASE("gradients of elementwise and linear ops") {
  const Matrix x = random_matrix(3, 4, 2);
  const Matrix w = random_matrix(4, 5, 3);
  expect_grad_ok([&](const Tensor& a) { return weighted_sum(matmul(a, Tensor::constant(w)), 10); }, x);
  expect_grad_ok([&](const Tensor& b) { return weighted_sum(matmul(Tensor::constant(x), b), 11); }, w);
  expect_grad_ok([&](const Tensor& a) { return weighted_sum(matmul_nt(a, Tensor::constant(x)), 12); }, x);
  expect_grad_ok([&](const Tensor& a) { return weighted_sum(transpose(a), 13); }, x);
  expect_grad_ok([&](const Tensor& a) { return weighted_sum(mul(a, a), 14); }, x);
  expect_grad_ok([&](const Tensor& a) { return weighted_sum(sub(a, scale(a, 0.3)), 15); }, x);
  expect_grad_ok([&](const Tensor& a) { return weighted_sum(relu(a), 16); }, x);
  expect_grad_ok([&](const Tensor& a) { return weighted_sum(gelu(a), 17); }, x);
  expect_grad_ok([&](const Tensor& b) { return weighted_sum(add_bias(Tensor::constant(x), b), 18); },
                 random_matrix(1, 4, 4));
  expect_grad_ok([&](const Tensor& a) { return mean(a); }, x);
}

TEST_CASE("gradients of normalizing ops") {
  const Matrix x = random_matrix(3, 5, 5, 2.0);
  expect_grad_ok([&](const Tensor& a) { return weighted_sum(softmax(a), 20); }, x);
  expect_grad_ok([&](const Tensor& a) { return weighted_sum(log_softmax(a), 21); }, x);
  expect_grad_ok([&](const Tensor& a) { return weighted_sum(causal_softmax(a, 1), 22); }, x);
  const Matrix g = random_matrix(1, 5, 6);
  const Matrix b = random_matrix(1, 5, 7);
  expect_grad_ok([&](const Tensor& a) {
    return weighted_sum(layer_norm(a, Tensor::constant(g), Tensor::constant(b)), 23);
  }, x);
  expect_grad_ok([&](const Tensor& gain) {
    return weighted_sum(layer_norm(Tensor::constant(x), gain, Tensor::constant(b)), 24);
  }, g);
  const std::vector<int> targets{0, 4, 2};
  expect_grad_ok([&](const Tensor& a) { return cross_entropy(a, targets, 0.1); }, x);
}

TEST_CASE("gradients of structural ops") {
  const Matrix x = random_matrix(4, 3, 8);
  expect_grad_ok([&](const Tensor& a) { return weighted_sum(reshape(a, 2, 6), 30); }, x);
  expect_grad_ok([&](const Tensor& a) { return weighted_sum(repeat_rows(a, 3), 31); }, x);
  expect_grad_ok([&](const Tensor& a) { return weighted_sum(pad_rows(a, 7), 32); }, x);
  expect_grad_ok([&](const Tensor& a) { return weighted_sum(slice_rows(a, 1, 2), 33); }, x);
  expect_grad_ok([&](const Tensor& a) { return weighted_sum(slice_cols(a, 1, 2), 34); }, x);
  expect_grad_ok([&](const Tensor& a) { return weighted_sum(concat_cols({a, scale(a, 2.0)}), 35); }, x);
  expect_grad_ok([&](const Tensor& a) { return weighted_sum(concat_rows({a, relu(a)}), 36); }, x);
  const std::vector<int> ids{2, 0, 2, 1};
  expect_grad_ok([&](const Tensor& table) { return weighted_sum(embed_lookup(table, ids), 37); }, x);
}

TEST_CASE("causal softmax masks future columns") {
  const Matrix x = random_matrix(3, 4, 9);
  NoGradGuard guard;
  const Matrix p = causal_softmax(Tensor::constant(x), 0).value();
  CHECK(p(0, 1) == 0.0);
  CHECK(p(1, 2) == 0.0);
  CHECK(p(2, 3) == 0.0);
  CHECK(p(0, 0) == doctest::Approx(1.0));
  CHECK(p.row(2).sum() == doctest::Approx(1.0));
}

TEST_CASE("cross entropy without smoothing is the negative log-likelihood") {
  const Matrix x = random_matrix(2, 3, 10);
  const Matrix lp = log_softmax_rows(x);
  const std::vector<int> t{1, 2};
  NoGradGuard guard;
  CHECK(cross_entropy(Tensor::constant(x), t, 0.0).item() ==
        doctest::Approx(-(lp(0, 1) + lp(1, 2))).epsilon(1e-14));
}

TEST_CASE("backward clears the tape and accumulates into leaves") {
  Tensor p = Tensor::parameter(random_matrix(2, 2, 11));
  Tensor loss = sum(mul(p, p));
  CHECK(Tape::current().size() > 0);
  backward(loss);
  CHECK(Tape::current().empty());
  CHECK((p.grad() - 2.0 * p.value()).norm() < 1e-14);
  backward(sum(p));
  CHECK((p.grad() - (2.0 * p.value()).array().matrix() - Matrix::Ones(2, 2)).norm() < 1e-14);
  p.zero_grad();
  CHECK(p.grad().norm() == 0.0);
}

TEST_CASE("no-grad guard records nothing") {
  Tensor p = Tensor::parameter(random_matrix(2, 2, 12));
  {
    NoGradGuard guard;
    Tensor y = sum(mul(p, p));
    CHECK_FALSE(y.requires_grad());
    CHECK(Tape::current().empty());
  }
  CHECK_FALSE(NoGradGuard::active());
}

TEST_CASE("shape and numeric errors") {
  NoGradGuard guard;
  const Tensor a = Tensor::constant(Matrix::Ones(2, 3));
  const Tensor b = Tensor::constant(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(reshape(a, 4, 2), ShapeError);
  CHECK_THROWS_AS(a.item(), ShapeError);
  Matrix bad = Matrix::Ones(1, 2);
  bad(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(scale(Tensor::constant(bad), 1.0), NumericError);
  const std::vector<int> out_of_range{5, 0};
  CHECK_THROWS_AS(cross_entropy(b, out_of_range), ShapeError);
}

TEST_CASE("dropout is identity at rate zero and seeded otherwise") {
  const Matrix x = random_matrix(3, 4, 13);
  std::mt19937_64 r1(5), r2(5);
  NoGradGuard guard;
  CHECK(dropout(Tensor::constant(x), 0.0, r1).value() == x);
  const Matrix d1 = dropout(Tensor::constant(x), 0.5, r1).value();
  const Matrix d2 = dropout(Tensor::constant(x), 0.5, r2).value();
  CHECK(d1 == d2);
  for (Index i = 0; i < x.size(); ++i)
    CHECK((d1.data()[i] == 0.0 || std::abs(d1.data()[i] - 2.0 * x.data()[i]) < 1e-15));
}

TEST_CASE("sinusoidal positions") {
  const Matrix pe = sinusoidal_positions(3, 4);
  CHECK(pe(0, 0) == 0.0);
  CHECK(pe(0, 1) == 1.0);
  CHECK(pe(1, 0) == doctest::Approx(std::sin(1.0)));
  CHECK(pe(2, 2) == doctest::Approx(std::sin(2.0 / 100.0)));
  const Matrix shifted = sinusoidal_positions(2, 4, 1);
  CHECK((shifted.row(0) - pe.row(1)).norm() < 1e-15);
}

TEST_CASE("grad_check reports a wrong gradient") {
  // an op whose backward is deliberately off by a factor of two
  auto broken = [](const Tensor& a) {
    Matrix v(1, 1);
    v(0, 0) = a.value().squaredNorm();
    return make_op(std::move(v), {a}, [a](const Matrix& g) { accumulate_grad(a, 4.0 * a.value() * g(0, 0)); });
  };
  const auto report = grad_check(broken, random_matrix(2, 2, 14));
  CHECK_FALSE(report.passed);
  CHECK(report.max_rel_error > 0.1);
}
