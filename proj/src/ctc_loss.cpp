#include "jointctc/ctc.hpp"

#include <iostream>

namespace jointctc {

Tensor ctc_loss(const Tensor& logits, std::span<const TokenId> y, TokenId blank,
                InfeasiblePolicy policy) {
  if (min_frames(y) > logits.rows()) {
    const std::string msg = "ctc_loss: target of length " + std::to_string(y.size()) + " needs " +
                            std::to_string(min_frames(y)) + " frames, logits have " +
                            std::to_string(logits.rows());
    if (policy == InfeasiblePolicy::error) throw InfeasibleAlignment(msg);
    std::cerr << "warning: " << msg << " (skipped)\n";
    return Tensor::constant(Matrix::Zero(1, 1));
  }
  auto [loss, grad] = ctc_loss_grad<double>(logits.value(), y, blank);
  Matrix out(1, 1);
  out(0, 0) = loss;
  return make_op(std::move(out), {logits}, [logits, grad = std::move(grad)](const Matrix& g) {
    accumulate_grad(logits, grad * g(0, 0));
  });
}

}  // namespace jointctc
