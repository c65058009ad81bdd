#pragma once

// Dense numeric kernels. The top-level functions are the OpenMP-parallel
// versions used by the tensor ops; `serial::` holds straightforward reference
// loops kept for testing and benchmarking.
//
// Parallel kernels partition work by output row only, so each output element
// is produced by the same sequence of floating-point operations regardless of
// the thread count.

#include <cstddef>
#include <span>

namespace prockd::kernels {

enum class Trans { No, Yes };

// C[M x N] = op(A) * op(B), or C += op(A) * op(B) when `accumulate` is set.
// op(A) is M x K and op(B) is K x N; a transposed operand is stored in the
// row-major layout of its untransposed shape.
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate = false);

// `batch` independent gemms over contiguous slabs of A, B and C.
void batched_gemm(std::size_t batch, Trans ta, Trans tb, std::size_t m, std::size_t n,
                  std::size_t k, std::span<const double> a, std::span<const double> b,
                  std::span<double> c, bool accumulate = false);

// Row-wise softmax with max subtraction.
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y);

// dx += J_softmax(y)^T dy for each row, given the softmax output y.
void softmax_rows_backward(std::size_t rows, std::size_t cols, std::span<const double> y,
                           std::span<const double> dy, std::span<double> dx);

// Number of OpenMP threads the kernels will use (1 without OpenMP).
int max_threads();

namespace serial {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate = false);

void batched_gemm(std::size_t batch, Trans ta, Trans tb, std::size_t m, std::size_t n,
                  std::size_t k, std::span<const double> a, std::span<const double> b,
                  std::span<double> c, bool accumulate = false);

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y);

void softmax_rows_backward(std::size_t rows, std::size_t cols, std::span<const double> y,
                           std::span<const double> dy, std::span<double> dx);

}  // namespace serial
}  // namespace prockd::kernels
