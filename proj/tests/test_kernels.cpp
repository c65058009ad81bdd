#include <gtest/gtest.h>
#include <omp.h>

#include <vector>

#include "oracles.hpp"
#include "prockd/kernels.hpp"
#include "prockd/params.hpp"

using namespace prockd;
using kernels::Trans;

namespace {

std::vector<double> random_values(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

// Row-major transpose of an r x c matrix.
std::vector<double> transposed(const std::vector<double>& a, std::size_t r, std::size_t c) {
  std::vector<double> t(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = a[i * c + j];
  return t;
}

}  // namespace

TEST(Kernels, GemmMatchesOracleForAllTransposes) {
  Rng rng(11);
  for (int inst = 0; inst < 40; ++inst) {
    const std::size_t m = 1 + rng.index(20), n = 1 + rng.index(70), k = 1 + rng.index(20);
    const auto a = random_values(m * k, rng), b = random_values(k * n, rng);
    const auto ref = oracle::matmul(a, b, m, k, n);
    for (Trans ta : {Trans::No, Trans::Yes})
      for (Trans tb : {Trans::No, Trans::Yes}) {
        const auto as = ta == Trans::Yes ? transposed(a, m, k) : a;
        const auto bs = tb == Trans::Yes ? transposed(b, k, n) : b;
        std::vector<double> c(m * n), cs(m * n);
        kernels::gemm(ta, tb, m, n, k, as, bs, c);
        kernels::serial::gemm(ta, tb, m, n, k, as, bs, cs);
        EXPECT_LT(oracle::max_abs_diff(c, ref), 1e-12);
        EXPECT_LT(oracle::max_abs_diff(cs, ref), 1e-12);
      }
  }
}

TEST(Kernels, GemmAccumulateAdds) {
  Rng rng(12);
  const std::size_t m = 7, n = 9, k = 5;
  const auto a = random_values(m * k, rng), b = random_values(k * n, rng);
  auto c = random_values(m * n, rng);
  const auto c0 = c;
  kernels::gemm(Trans::No, Trans::No, m, n, k, a, b, c, true);
  const auto ab = oracle::matmul(a, b, m, k, n);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], c0[i] + ab[i], 1e-12);
}

TEST(Kernels, BatchedGemmMatchesSerial) {
  Rng rng(13);
  const std::size_t batch = 5, m = 13, n = 17, k = 8;
  for (Trans tb : {Trans::No, Trans::Yes}) {
    const auto a = random_values(batch * m * k, rng), b = random_values(batch * k * n, rng);
    std::vector<double> c(batch * m * n), cs(batch * m * n);
    kernels::batched_gemm(batch, Trans::No, tb, m, n, k, a, b, c);
    kernels::serial::batched_gemm(batch, Trans::No, tb, m, n, k, a, b, cs);
    EXPECT_LT(oracle::max_abs_diff(c, cs), 1e-12);
  }
}

TEST(Kernels, ResultsIndependentOfThreadCount) {
  Rng rng(14);
  const std::size_t m = 67, n = 45, k = 33;
  const auto a = random_values(m * k, rng), b = random_values(k * n, rng);
  std::vector<double> one(m * n), many(m * n), sm1(m * 10), smn(m * 10);
  const auto x = random_values(m * 10, rng);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  kernels::gemm(Trans::No, Trans::Yes, m, n, k, a, b, one);
  kernels::softmax_rows(m, 10, x, sm1);
  omp_set_num_threads(4);
  kernels::gemm(Trans::No, Trans::Yes, m, n, k, a, b, many);
  kernels::softmax_rows(m, 10, x, smn);
  omp_set_num_threads(saved);
  EXPECT_EQ(one, many);
  EXPECT_EQ(sm1, smn);
}

TEST(Kernels, SoftmaxRowsMatchOracleAndSerial) {
  Rng rng(15);
  const std::size_t rows = 9, cols = 7;
  auto x = random_values(rows * cols, rng);
  x[3] = 800.0;  // exercises max subtraction
  std::vector<double> y(rows * cols), ys(rows * cols);
  kernels::softmax_rows(rows, cols, x, y);
  kernels::serial::softmax_rows(rows, cols, x, ys);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto ref = oracle::softmax(std::span<const double>(x).subspan(r * cols, cols));
    EXPECT_LT(oracle::max_abs_diff(std::span<const double>(y).subspan(r * cols, cols), ref), 1e-14);
  }
  EXPECT_LT(oracle::max_abs_diff(y, ys), 1e-15);
}

TEST(Kernels, SoftmaxBackwardMatchesSerial) {
  Rng rng(16);
  const std::size_t rows = 11, cols = 6;
  const auto x = random_values(rows * cols, rng), dy = random_values(rows * cols, rng);
  std::vector<double> y(rows * cols), dx(rows * cols, 0.0), dxs(rows * cols, 0.0);
  kernels::softmax_rows(rows, cols, x, y);
  kernels::softmax_rows_backward(rows, cols, y, dy, dx);
  kernels::serial::softmax_rows_backward(rows, cols, y, dy, dxs);
  EXPECT_LT(oracle::max_abs_diff(dx, dxs), 1e-14);
  // Each row of J^T dy sums to zero.
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += dx[r * cols + c];
    EXPECT_NEAR(s, 0.0, 1e-14);
  }
}
