#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace jointctc {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using Index = Eigen::Index;

template <typename Scalar = double>
inline constexpr Scalar kLogZero = -std::numeric_limits<Scalar>::infinity();

/// log(exp(a) + exp(b)) without leaving the log domain.
template <typename Scalar>
inline Scalar log_add(Scalar a, Scalar b) {
  if (a < b) std::swap(a, b);
  if (b == kLogZero<Scalar>) return a;
  return a + std::log1p(std::exp(b - a));
}

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = x.maxCoeff();
  if (m == kLogZero<Scalar>) return m;
  return m + std::log((x.array() - m).exp().sum());
}

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct Node;
}

/// A dense 2-D float64 value that may participate in reverse-mode
/// differentiation. Vectors are 1 x n rows; scalars are 1 x 1.
///
/// Copies share the underlying node, so a Tensor behaves like a handle.
class Tensor {
 public:
  Tensor() = default;

  /// A value that never receives gradients.
  static Tensor constant(Matrix value);
  /// A differentiable leaf; backward() accumulates into grad().
  static Tensor parameter(Matrix value);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const;
  Matrix& mutable_value();
  bool requires_grad() const;
  bool has_grad() const;
  const Matrix& grad() const;
  void zero_grad();

  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  std::array<Index, 2> shape() const { return {rows(), cols()}; }
  double item() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(Matrix, std::initializer_list<Tensor>,
                        std::function<void(const Matrix&)>);
  friend Tensor make_op_n(Matrix, std::vector<Tensor>,
                          std::function<void(const Matrix&)>);
};

namespace detail {
struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  // Receives dL/d(value) and accumulates into parents.
  std::function<void(const Matrix&)> backward;

  Matrix& grad_buffer() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
};
}  // namespace detail

/// Accumulates an incoming gradient into a tensor's node if it wants one.
void accumulate_grad(const Tensor& t, const Matrix& g);

/// Builds the result of a differentiable op. `backward` receives the
/// upstream gradient and must call accumulate_grad on the parents.
Tensor make_op(Matrix value, std::initializer_list<Tensor> parents,
               std::function<void(const Matrix&)> backward);
Tensor make_op_n(Matrix value, std::vector<Tensor> parents,
                 std::function<void(const Matrix&)> backward);

/// The per-thread ordered record of executed differentiable ops.
class Tape {
 public:
  static Tape& current();

  void record(std::shared_ptr<detail::Node> node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

  friend void backward(const Tensor& loss);

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool active();

 private:
  bool previous_;
};

/// Runs reverse accumulation from a scalar loss, then clears the tape.
void backward(const Tensor& loss);

// --- differentiable ops -------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// Adds a 1 x C row to every row of a (the only broadcast supported).
Tensor add_bias(const Tensor& a, const Tensor& bias);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor softmax(const Tensor& a);
/// Row softmax where row i only sees columns j <= i + offset.
Tensor causal_softmax(const Tensor& a, Index offset = 0);
Tensor log_softmax(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor embed_lookup(const Tensor& table, std::span<const int> ids);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, Index begin, Index count);
Tensor slice_rows(const Tensor& a, Index begin, Index count);
/// Row-major reinterpretation; size must be preserved.
Tensor reshape(const Tensor& a, Index rows, Index cols);
/// Each row repeated `times` times consecutively.
Tensor repeat_rows(const Tensor& a, Index times);
/// Appends zero rows up to `total_rows`.
Tensor pad_rows(const Tensor& a, Index total_rows);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Inverted dropout with a seeded Bernoulli mask; identity when rate == 0.
Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng);
/// Summed token cross-entropy of row-wise logits against column targets,
/// with uniform label smoothing over all columns.
Tensor cross_entropy(const Tensor& logits, std::span<const int> target_cols,
                     double smoothing = 0.0);

// --- non-differentiable helpers -----------------------------------------

Matrix softmax_rows(const Matrix& x);
Matrix log_softmax_rows(const Matrix& x);
Matrix sinusoidal_positions(Index length, Index dim, Index offset = 0);

struct GradCheckReport {
  Matrix analytic;
  Matrix numeric;
  Matrix rel_error;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Compares tape gradients of a scalar function against central
/// differences. Relative error is |a - n| / max(1, |a|, |n|).
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Matrix& x,
                           double eps = 1e-5, double tol = 1e-5);

}  // namespace jointctc
