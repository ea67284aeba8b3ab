#include "jointctc/numerics.hpp"

#include <algorithm>
#include <numbers>
#include <sstream>

namespace jointctc {

namespace {

thread_local bool g_no_grad = false;

void check_finite(const Matrix& m, const char* op) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite output in ") + op);
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  std::ostringstream os;
  os << op << ": shape mismatch (" << a.rows() << "x" << a.cols() << ") vs (" << b.rows() << "x"
     << b.cols() << ")";
  throw ShapeError(os.str());
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_fail(op, a, b);
}

}  // namespace

// --- Tensor ----------------------------------------------------------------

Tensor Tensor::constant(Matrix value) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Matrix value) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Tensor(std::move(node));
}

const Matrix& Tensor::value() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->value;
}

Matrix& Tensor::mutable_value() {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->value;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && node_->grad.size() != 0; }

const Matrix& Tensor::grad() const {
  if (!node_) throw std::logic_error("undefined tensor");
  if (node_->grad.size() == 0) node_->grad = Matrix::Zero(rows(), cols());
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.resize(0, 0);
}

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("item() on non-scalar tensor");
  return value()(0, 0);
}

void accumulate_grad(const Tensor& t, const Matrix& g) {
  if (!t.requires_grad()) return;
  t.node()->grad_buffer() += g;
}

Tensor make_op_n(Matrix value, std::vector<Tensor> parents,
                 std::function<void(const Matrix&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->is_leaf = false;
  if (!g_no_grad) {
    for (const auto& p : parents) {
      if (p.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
    Tape::current().record(node);
  }
  return Tensor(std::move(node));
}

Tensor make_op(Matrix value, std::initializer_list<Tensor> parents,
               std::function<void(const Matrix&)> backward) {
  return make_op_n(std::move(value), std::vector<Tensor>(parents), std::move(backward));
}

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::active() { return g_no_grad; }

void backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) throw ShapeError("backward() requires a scalar loss");
  Tape& tape = Tape::current();
  if (!loss.requires_grad()) {
    tape.clear();
    return;
  }
  if (tape.empty()) throw std::logic_error("backward() on an empty tape");
  loss.node()->grad_buffer().setOnes();
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
    detail::Node& node = **it;
    if (node.grad.size() != 0 && node.backward) node.backward(node.grad);
    // Intermediate gradients are not needed once propagated.
    node.grad.resize(0, 0);
    node.backward = nullptr;
    node.parents.clear();
  }
  tape.clear();
}

// --- ops -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_fail("matmul", a, b);
  Matrix out = a.value() * b.value();
  check_finite(out, "matmul");
  return make_op(std::move(out), {a, b}, [a, b](const Matrix& g) {
    if (a.requires_grad()) accumulate_grad(a, g * b.value().transpose());
    if (b.requires_grad()) accumulate_grad(b, a.value().transpose() * g);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) shape_fail("matmul_nt", a, b);
  Matrix out = a.value() * b.value().transpose();
  check_finite(out, "matmul_nt");
  return make_op(std::move(out), {a, b}, [a, b](const Matrix& g) {
    if (a.requires_grad()) accumulate_grad(a, g * b.value());
    if (b.requires_grad()) accumulate_grad(b, g.transpose() * a.value());
  });
}

Tensor transpose(const Tensor& a) {
  Matrix out = a.value().transpose();
  return make_op(std::move(out), {a}, [a](const Matrix& g) { accumulate_grad(a, g.transpose()); });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Matrix out = a.value() + b.value();
  check_finite(out, "add");
  return make_op(std::move(out), {a, b}, [a, b](const Matrix& g) {
    accumulate_grad(a, g);
    accumulate_grad(b, g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Matrix out = a.value() - b.value();
  check_finite(out, "sub");
  return make_op(std::move(out), {a, b}, [a, b](const Matrix& g) {
    accumulate_grad(a, g);
    accumulate_grad(b, -g);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Matrix out = a.value().cwiseProduct(b.value());
  check_finite(out, "mul");
  return make_op(std::move(out), {a, b}, [a, b](const Matrix& g) {
    if (a.requires_grad()) accumulate_grad(a, g.cwiseProduct(b.value()));
    if (b.requires_grad()) accumulate_grad(b, g.cwiseProduct(a.value()));
  });
}

Tensor scale(const Tensor& a, double s) {
  Matrix out = a.value() * s;
  check_finite(out, "scale");
  return make_op(std::move(out), {a}, [a, s](const Matrix& g) { accumulate_grad(a, g * s); });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) shape_fail("add_bias", a, bias);
  Matrix out = a.value().rowwise() + bias.value().row(0);
  check_finite(out, "add_bias");
  return make_op(std::move(out), {a, bias}, [a, bias](const Matrix& g) {
    accumulate_grad(a, g);
    if (bias.requires_grad()) accumulate_grad(bias, g.colwise().sum());
  });
}

Tensor relu(const Tensor& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return make_op(std::move(out), {a}, [a](const Matrix& g) {
    accumulate_grad(a, (a.value().array() > 0.0).select(g, 0.0));
  });
}

Tensor gelu(const Tensor& a) {
  // tanh approximation
  static constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double c = 0.044715;
  const Matrix& x = a.value();
  Matrix inner = (k * (x.array() + c * x.array().cube())).matrix();
  Matrix th = inner.array().tanh().matrix();
  Matrix out = (0.5 * x.array() * (1.0 + th.array())).matrix();
  check_finite(out, "gelu");
  return make_op(std::move(out), {a}, [a, th](const Matrix& g) {
    const auto x = a.value().array();
    auto t = th.array();
    auto d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t.square()) * k * (1.0 + 3.0 * c * x.square());
    accumulate_grad(a, (g.array() * d).matrix());
  });
}

Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Matrix log_softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    const double lse = m + std::log((x.row(i).array() - m).exp().sum());
    out.row(i) = x.row(i).array() - lse;
  }
  return out;
}

Tensor softmax(const Tensor& a) {
  Matrix out = softmax_rows(a.value());
  check_finite(out, "softmax");
  Matrix y = out;
  return make_op(std::move(out), {a}, [a, y](const Matrix& g) {
    Vector dots = g.cwiseProduct(y).rowwise().sum();
    accumulate_grad(a, (y.array() * (g.colwise() - dots).array()).matrix());
  });
}

Tensor causal_softmax(const Tensor& a, Index offset) {
  const Matrix& x = a.value();
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Index n = std::min<Index>(x.cols(), i + offset + 1);
    if (n <= 0) throw ShapeError("causal_softmax: row with no visible columns");
    auto row = x.row(i).head(n);
    const double m = row.maxCoeff();
    out.row(i).head(n) = (row.array() - m).exp();
    out.row(i).head(n) /= out.row(i).head(n).sum();
  }
  check_finite(out, "causal_softmax");
  Matrix y = out;
  return make_op(std::move(out), {a}, [a, y](const Matrix& g) {
    // masked entries have y == 0 so they receive no gradient
    Vector dots = g.cwiseProduct(y).rowwise().sum();
    accumulate_grad(a, (y.array() * (g.colwise() - dots).array()).matrix());
  });
}

Tensor log_softmax(const Tensor& a) {
  Matrix out = log_softmax_rows(a.value());
  check_finite(out, "log_softmax");
  Matrix y = out;
  return make_op(std::move(out), {a}, [a, y](const Matrix& g) {
    Vector sums = g.rowwise().sum();
    Matrix p = y.array().exp().matrix();
    accumulate_grad(a, g - (p.array().colwise() * sums.array()).matrix());
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Index n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n) shape_fail("layer_norm", x, gain);
  if (bias.rows() != 1 || bias.cols() != n) shape_fail("layer_norm", x, bias);
  const Matrix& v = x.value();
  Vector mu = v.rowwise().mean();
  Matrix centered = v.colwise() - mu;
  Vector inv_std = (centered.array().square().rowwise().mean() + eps).rsqrt().matrix();
  Matrix xhat = (centered.array().colwise() * inv_std.array()).matrix();
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  check_finite(out, "layer_norm");
  return make_op(std::move(out), {x, gain, bias}, [x, gain, bias, xhat, inv_std](const Matrix& g) {
    if (gain.requires_grad()) accumulate_grad(gain, g.cwiseProduct(xhat).colwise().sum());
    if (bias.requires_grad()) accumulate_grad(bias, g.colwise().sum());
    if (x.requires_grad()) {
      Matrix dxhat = (g.array().rowwise() * gain.value().row(0).array()).matrix();
      Vector m1 = dxhat.rowwise().mean();
      Vector m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
      Matrix dx = dxhat.colwise() - m1;
      dx -= (xhat.array().colwise() * m2.array()).matrix();
      dx = (dx.array().colwise() * inv_std.array()).matrix();
      accumulate_grad(x, dx);
    }
  });
}

Tensor embed_lookup(const Tensor& table, std::span<const int> ids) {
  Matrix out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw ShapeError("embed_lookup: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(table.rows()) + " rows");
    out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_op(std::move(out), {table}, [table, idx](const Matrix& g) {
    Matrix& acc = table.node()->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) acc.row(idx[i]) += g.row(static_cast<Index>(i));
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) shape_fail("concat_cols", parts.front(), p);
    cols += p.cols();
  }
  Matrix out(parts.front().rows(), cols);
  Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return make_op_n(std::move(out), parts, [parts](const Matrix& g) {
    Index c0 = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) accumulate_grad(p, g.middleCols(c0, p.cols()));
      c0 += p.cols();
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols()) shape_fail("concat_rows", parts.front(), p);
    rows += p.rows();
  }
  Matrix out(rows, parts.front().cols());
  Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return make_op_n(std::move(out), parts, [parts](const Matrix& g) {
    Index r0 = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) accumulate_grad(p, g.middleRows(r0, p.rows()));
      r0 += p.rows();
    }
  });
}

Tensor slice_cols(const Tensor& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols())
    throw ShapeError("slice_cols: range outside tensor");
  Matrix out = a.value().middleCols(begin, count);
  return make_op(std::move(out), {a}, [a, begin, count](const Matrix& g) {
    a.node()->grad_buffer().middleCols(begin, count) += g;
  });
}

Tensor slice_rows(const Tensor& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows())
    throw ShapeError("slice_rows: range outside tensor");
  Matrix out = a.value().middleRows(begin, count);
  return make_op(std::move(out), {a}, [a, begin, count](const Matrix& g) {
    a.node()->grad_buffer().middleRows(begin, count) += g;
  });
}

Tensor reshape(const Tensor& a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) throw ShapeError("reshape: size mismatch");
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  const Index r0 = a.rows(), c0 = a.cols();
  return make_op(std::move(out), {a}, [a, r0, c0](const Matrix& g) {
    accumulate_grad(a, Eigen::Map<const Matrix>(g.data(), r0, c0));
  });
}

Tensor repeat_rows(const Tensor& a, Index times) {
  if (times < 1) throw ShapeError("repeat_rows: times must be >= 1");
  Matrix out(a.rows() * times, a.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index k = 0; k < times; ++k) out.row(i * times + k) = a.value().row(i);
  return make_op(std::move(out), {a}, [a, times](const Matrix& g) {
    Matrix da = Matrix::Zero(a.rows(), a.cols());
    for (Index i = 0; i < a.rows(); ++i)
      for (Index k = 0; k < times; ++k) da.row(i) += g.row(i * times + k);
    accumulate_grad(a, da);
  });
}

Tensor pad_rows(const Tensor& a, Index total_rows) {
  if (total_rows < a.rows()) throw ShapeError("pad_rows: target smaller than input");
  Matrix out = Matrix::Zero(total_rows, a.cols());
  out.topRows(a.rows()) = a.value();
  return make_op(std::move(out), {a},
                 [a](const Matrix& g) { accumulate_grad(a, g.topRows(a.rows())); });
}

Tensor sum(const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_op(std::move(out), {a}, [a](const Matrix& g) {
    accumulate_grad(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  const double inv = 1.0 / (1.0 - rate);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? inv : 0.0;
  Matrix out = a.value().cwiseProduct(mask);
  return make_op(std::move(out), {a},
                 [a, mask](const Matrix& g) { accumulate_grad(a, g.cwiseProduct(mask)); });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> target_cols, double smoothing) {
  if (static_cast<Index>(target_cols.size()) != logits.rows())
    throw ShapeError("cross_entropy: one target per row required");
  const Index n = logits.cols();
  Matrix logp = log_softmax_rows(logits.value());
  check_finite(logp, "cross_entropy");
  const double off = smoothing / static_cast<double>(n);
  double loss = 0.0;
  for (Index i = 0; i < logp.rows(); ++i) {
    const int t = target_cols[static_cast<std::size_t>(i)];
    if (t < 0 || t >= n) throw ShapeError("cross_entropy: target column out of range");
    loss -= (1.0 - smoothing) * logp(i, t);
    if (smoothing > 0.0) loss -= off * logp.row(i).sum();
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  std::vector<int> targets(target_cols.begin(), target_cols.end());
  return make_op(std::move(out), {logits}, [logits, logp, targets, smoothing, off](const Matrix& g) {
    Matrix d = logp.array().exp().matrix();
    d.array() -= off;
    for (std::size_t i = 0; i < targets.size(); ++i)
      d(static_cast<Index>(i), targets[i]) -= (1.0 - smoothing);
    accumulate_grad(logits, d * g(0, 0));
  });
}

Matrix sinusoidal_positions(Index length, Index dim, Index offset) {
  Matrix pe(length, dim);
  for (Index p = 0; p < length; ++p) {
    for (Index i = 0; i < dim; ++i) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(p + offset) * rate;
      pe(p, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Matrix& x,
                           double eps, double tol) {
  GradCheckReport report;
  Tensor input = Tensor::parameter(x);
  Tensor out = f(input);
  if (out.rows() != 1 || out.cols() != 1) throw ShapeError("grad_check: f must return a scalar");
  backward(out);
  report.analytic = input.grad();

  report.numeric.resize(x.rows(), x.cols());
  {
    NoGradGuard guard;
    for (Index i = 0; i < x.size(); ++i) {
      Matrix xp = x, xm = x;
      xp.data()[i] += eps;
      xm.data()[i] -= eps;
      const double fp = f(Tensor::constant(xp)).item();
      const double fm = f(Tensor::constant(xm)).item();
      report.numeric.data()[i] = (fp - fm) / (2.0 * eps);
    }
  }
  Tape::current().clear();

  report.rel_error.resize(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double a = report.analytic.data()[i];
    const double n = report.numeric.data()[i];
    report.rel_error.data()[i] = std::abs(a - n) / std::max({1.0, std::abs(a), std::abs(n)});
  }
  report.max_rel_error = x.size() ? report.rel_error.maxCoeff() : 0.0;
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace jointctc
