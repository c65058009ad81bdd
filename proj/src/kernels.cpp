#include "prockd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace prockd::kernels {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

inline double op_at(const double* p, Trans t, std::size_t rows, std::size_t cols,
                    std::size_t i, std::size_t j) {
  // Element (i, j) of op(P) where op(P) is rows x cols.
  return t == Trans::No ? p[i * cols + j] : p[j * rows + i];
}

constexpr std::size_t kTileRows = 6;

// C[i0:i0+MR, j0:j0+NR] accumulated in registers. B is K x N row-major. Each
// element sums over p in ascending order, whatever tile it falls in.
template <std::size_t MR, std::size_t NR>
inline void tile(Trans ta, std::size_t i0, std::size_t j0, std::size_t m, std::size_t n, std::size_t k,
                 const double* a, const double* b, double* c, bool accumulate) {
  double acc[MR][NR];
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t j = 0; j < NR; ++j) acc[r][j] = accumulate ? c[(i0 + r) * n + j0 + j] : 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n + j0;
    for (std::size_t r = 0; r < MR; ++r) {
      const double ar = ta == Trans::No ? a[(i0 + r) * k + p] : a[p * m + i0 + r];
      for (std::size_t j = 0; j < NR; ++j) acc[r][j] += ar * brow[j];
    }
  }
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t j = 0; j < NR; ++j) c[(i0 + r) * n + j0 + j] = acc[r][j];
}

// Narrow variant: B values are loaded once per p and A is walked through a
// precomputed stride. gcc vectorizes this form well for NR <= 8 and the form
// above well for NR = 32; the arithmetic per element is identical.
template <std::size_t MR, std::size_t NR>
inline void narrow_tile(Trans ta, std::size_t i0, std::size_t j0, std::size_t m, std::size_t n, std::size_t k,
                        const double* __restrict a, const double* __restrict b, double* __restrict c,
                        bool accumulate) {
  double acc[MR][NR] = {};
  if (accumulate)
    for (std::size_t r = 0; r < MR; ++r)
      for (std::size_t j = 0; j < NR; ++j) acc[r][j] = c[(i0 + r) * n + j0 + j];
  const std::size_t row_stride = ta == Trans::No ? k : 1, p_stride = ta == Trans::No ? 1 : m;
  const double* ablock = ta == Trans::No ? a + i0 * k : a + i0;
  for (std::size_t p = 0; p < k; ++p) {
    double bv[NR];
    for (std::size_t j = 0; j < NR; ++j) bv[j] = b[p * n + j0 + j];
    for (std::size_t r = 0; r < MR; ++r) {
      const double ar = ablock[r * row_stride + p * p_stride];
#pragma GCC unroll 8
      for (std::size_t j = 0; j < NR; ++j) acc[r][j] += ar * bv[j];
    }
  }
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t j = 0; j < NR; ++j) c[(i0 + r) * n + j0 + j] = acc[r][j];
}

template <std::size_t MR, std::size_t NR>
inline void any_tile(Trans ta, std::size_t i0, std::size_t j0, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, const double* b, double* c, bool accumulate) {
  if constexpr (NR > 8)
    tile<MR, NR>(ta, i0, j0, m, n, k, a, b, c, accumulate);
  else
    narrow_tile<MR, NR>(ta, i0, j0, m, n, k, a, b, c, accumulate);
}

template <std::size_t NR>
inline void panel(Trans ta, std::size_t i0, std::size_t mr, std::size_t j0, std::size_t m, std::size_t n,
                  std::size_t k, const double* a, const double* b, double* c, bool accumulate) {
  switch (mr) {
    case 6: any_tile<6, NR>(ta, i0, j0, m, n, k, a, b, c, accumulate); break;
    case 5: any_tile<5, NR>(ta, i0, j0, m, n, k, a, b, c, accumulate); break;
    case 4: any_tile<4, NR>(ta, i0, j0, m, n, k, a, b, c, accumulate); break;
    case 3: any_tile<3, NR>(ta, i0, j0, m, n, k, a, b, c, accumulate); break;
    case 2: any_tile<2, NR>(ta, i0, j0, m, n, k, a, b, c, accumulate); break;
    default: any_tile<1, NR>(ta, i0, j0, m, n, k, a, b, c, accumulate); break;
  }
}

// Rows [i0, i0 + mr) of C for one gemm.
inline void row_block(Trans ta, std::size_t i0, std::size_t mr, std::size_t m, std::size_t n, std::size_t k,
                      const double* a, const double* b, double* c, bool accumulate) {
  std::size_t j = 0;
  for (; j + 32 <= n; j += 32) panel<32>(ta, i0, mr, j, m, n, k, a, b, c, accumulate);
  for (; j + 8 <= n; j += 8) panel<8>(ta, i0, mr, j, m, n, k, a, b, c, accumulate);
  for (; j + 4 <= n; j += 4) panel<4>(ta, i0, mr, j, m, n, k, a, b, c, accumulate);
  for (; j < n; ++j) panel<1>(ta, i0, mr, j, m, n, k, a, b, c, accumulate);
}

void transpose_into(const double* src, std::size_t rows, std::size_t cols, double* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  const double* bp = b.data();
  std::vector<double> bt;
  if (tb == Trans::Yes) {
    // B is stored N x K; lay it out K x N so the inner loop is unit-stride.
    bt.resize(k * n);
    transpose_into(b.data(), n, k, bt.data());
    bp = bt.data();
  }
  const std::size_t blocks = (m + kTileRows - 1) / kTileRows;
  const auto total = static_cast<std::int64_t>(blocks);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (std::int64_t bi = 0; bi < total; ++bi) {
    const std::size_t i0 = static_cast<std::size_t>(bi) * kTileRows;
    row_block(ta, i0, std::min(kTileRows, m - i0), m, n, k, a.data(), bp, c.data(), accumulate);
  }
}

void batched_gemm(std::size_t batch, Trans ta, Trans tb, std::size_t m, std::size_t n,
                  std::size_t k, std::span<const double> a, std::span<const double> b,
                  std::span<double> c, bool accumulate) {
  const std::size_t sa = m * k, sb = k * n, sc = m * n;
  const double* bp = b.data();
  std::vector<double> bt;
  if (tb == Trans::Yes) {
    bt.resize(batch * sb);
    for (std::size_t g = 0; g < batch; ++g) transpose_into(b.data() + g * sb, n, k, bt.data() + g * sb);
    bp = bt.data();
  }
  const std::size_t blocks = (m + kTileRows - 1) / kTileRows;
  const auto total = static_cast<std::int64_t>(batch * blocks);
#pragma omp parallel for schedule(static) if (batch * m * n * k > kParallelWork)
  for (std::int64_t gi = 0; gi < total; ++gi) {
    const std::size_t g = static_cast<std::size_t>(gi) / blocks;
    const std::size_t i0 = (static_cast<std::size_t>(gi) % blocks) * kTileRows;
    row_block(ta, i0, std::min(kTileRows, m - i0), m, n, k, a.data() + g * sa, bp + g * sb, c.data() + g * sc,
              accumulate);
  }
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y) {
  const auto total = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::int64_t ri = 0; ri < total; ++ri) {
    const auto r = static_cast<std::size_t>(ri);
    const double* xr = x.data() + r * cols;
    double* yr = y.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

void softmax_rows_backward(std::size_t rows, std::size_t cols, std::span<const double> y,
                           std::span<const double> dy, std::span<double> dx) {
  const auto total = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::int64_t ri = 0; ri < total; ++ri) {
    const auto r = static_cast<std::size_t>(ri);
    const double* yr = y.data() + r * cols;
    const double* gr = dy.data() + r * cols;
    double dot = 0.0;
    for (std::size_t j = 0; j < cols; ++j) dot += yr[j] * gr[j];
    double* out = dx.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += yr[j] * (gr[j] - dot);
  }
}

namespace serial {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p)
        s += op_at(a.data(), ta, m, k, i, p) * op_at(b.data(), tb, k, n, p, j);
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void batched_gemm(std::size_t batch, Trans ta, Trans tb, std::size_t m, std::size_t n,
                  std::size_t k, std::span<const double> a, std::span<const double> b,
                  std::span<double> c, bool accumulate) {
  for (std::size_t g = 0; g < batch; ++g)
    serial::gemm(ta, tb, m, n, k, a.subspan(g * m * k, m * k), b.subspan(g * k * n, k * n),
                 c.subspan(g * m * n, m * n), accumulate);
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = x[r * cols];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[r * cols + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sum += std::exp(x[r * cols + j] - mx);
    for (std::size_t j = 0; j < cols; ++j) y[r * cols + j] = std::exp(x[r * cols + j] - mx) / sum;
  }
}

void softmax_rows_backward(std::size_t rows, std::size_t cols, std::span<const double> y,
                           std::span<const double> dy, std::span<double> dx) {
  // Full Jacobian product: dx_j += sum_i dy_i * y_i * (delta_ij - y_j).
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < cols; ++i) {
        const double jac = y[r * cols + i] * ((i == j ? 1.0 : 0.0) - y[r * cols + j]);
        s += dy[r * cols + i] * jac;
      }
      dx[r * cols + j] += s;
    }
  }
}

}  // namespace serial
}  // namespace prockd::kernels
