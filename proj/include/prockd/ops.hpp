#pragma once

// Differentiable tensor operations. Each op validates shapes, rejects
// non-finite results with Errc::NonFinite, and records a backward rule on the
// active tape when any input requires a gradient. No implicit broadcasting:
// expansion is spelled out with broadcast_axis().

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "prockd/tensor.hpp"

namespace prockd {

Tensor matmul(const Tensor& a, const Tensor& b);
// [G x M x K] * [G x K x N]; with transpose_b the second operand is [G x N x K].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);

// While alive, records the smallest |input| that relu sees on this thread.
// Finite-difference probes use it to stay clear of the kink.
class ReluMargin {
 public:
  ReluMargin();
  ~ReluMargin();
  ReluMargin(const ReluMargin&) = delete;
  ReluMargin& operator=(const ReluMargin&) = delete;
  double value() const { return value_; }
  void observe(double v) { value_ = v < value_ ? v : value_; }

 private:
  double value_;
  ReluMargin* previous_;
};

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // rank 2
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
// Inserts a new axis of extent `count` at `axis`, repeating x along it.
Tensor broadcast_axis(const Tensor& x, std::size_t axis, std::size_t count);

// Sum or mean over one axis, which is removed (a rank-1 input yields shape [1]).
Tensor reduce_sum(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Row-wise layer normalization of [M x N] with affine gamma/beta of length N.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// x[M x K] * w[K x N] + b[N] expanded over rows.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor mse(const Tensor& a, const Tensor& b);
// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);
// Mean over the batch of KL(softmax(p) || softmax(q)).
Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits);

}  // namespace prockd
