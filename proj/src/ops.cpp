#include "prockd/ops.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <limits>
#include <cmath>
#include <numeric>
#include <string>

#include "prockd/error.hpp"
#include "prockd/kernels.hpp"
#include "prockd/tape.hpp"

namespace prockd {
namespace {

using kernels::Trans;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail(Errc::ShapeMismatch, std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                                  shape_str(b.shape()));
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank)
    fail(Errc::ShapeMismatch, std::string(op) + ": expected rank " + std::to_string(rank) +
                                  ", got " + shape_str(x.shape()));
}

void require_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (axis >= x.rank())
    fail(Errc::AxisOutOfRange, std::string(op) + ": axis " + std::to_string(axis) +
                                   " on " + shape_str(x.shape()));
}

Tensor make_output(Shape shape, std::vector<double> data, const char* op) {
  // An all-ones exponent marks Inf or NaN; the integer test vectorizes.
  constexpr std::uint64_t exponent = 0x7ff0000000000000ULL;
  bool bad = false;
  for (double v : data) bad |= (std::bit_cast<std::uint64_t>(v) & exponent) == exponent;
  if (bad) fail(Errc::NonFinite, std::string(op) + " produced a non-finite value");
  return Tensor(std::move(shape), std::move(data));
}

// Records `rule` when a tape is active and some input participates in autodiff.
template <typename Rule>
void record(const char* op, std::initializer_list<const Tensor*> inputs, Tensor& out, Rule&& rule) {
  Tape* tape = active_tape();
  if (tape == nullptr) return;
  bool any = false;
  for (auto* t : inputs) any = any || t->requires_grad();
  if (!any) return;
  out.set_requires_grad(true);
  std::vector<std::shared_ptr<TensorImpl>> ins;
  ins.reserve(inputs.size());
  for (auto* t : inputs) ins.push_back(t->impl_ptr());
  tape->record(op, std::move(ins), out, Tape::Rule(std::forward<Rule>(rule)));
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out.push_back(shape[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

// Softmax or log-softmax along an arbitrary axis.
std::vector<double> softmax_along(const std::vector<double>& x, const AxisSplit& s, bool log) {
  std::vector<double> y(x.size());
  if (s.inner == 1 && !log) {
    kernels::softmax_rows(s.outer, s.extent, x, y);
    return y;
  }
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = x[base];
      for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, x[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) total += std::exp(x[base + k * s.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double v = x[base + k * s.inner] - lse;
        y[base + k * s.inner] = log ? v : std::exp(v);
      }
    }
  }
  return y;
}

std::vector<double> log_softmax_rows(std::span<const double> x, std::size_t rows, std::size_t cols) {
  std::vector<double> y(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(xr[c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = xr[c] - lse;
  }
  return y;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    fail(Errc::ShapeMismatch, "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> c(m * n);
  kernels::gemm(Trans::No, Trans::No, m, n, k, a.data(), b.data(), c);
  Tensor out = make_output({m, n}, std::move(c), "matmul");
  record("matmul", {&a, &b}, out, [pa = &a.impl(), pb = &b.impl(), m, n, k](TensorImpl& o) {
    if (pa->requires_grad)  // dA = dC B^T
      kernels::gemm(Trans::No, Trans::Yes, m, k, n, o.grad, pb->data, pa->grad_buffer(), true);
    if (pb->requires_grad)  // dB = A^T dC
      kernels::gemm(Trans::Yes, Trans::No, k, n, m, pa->data, o.grad, pb->grad_buffer(), true);
  });
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != g || bk != k)
    fail(Errc::ShapeMismatch, "bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const Trans tb = transpose_b ? Trans::Yes : Trans::No;
  std::vector<double> c(g * m * n);
  kernels::batched_gemm(g, Trans::No, tb, m, n, k, a.data(), b.data(), c);
  Tensor out = make_output({g, m, n}, std::move(c), "bmm");
  record("bmm", {&a, &b}, out,
         [pa = &a.impl(), pb = &b.impl(), g, m, n, k, transpose_b](TensorImpl& o) {
           if (pa->requires_grad) {
             // dA = dC op(B)^T
             const Trans t = transpose_b ? Trans::No : Trans::Yes;
             kernels::batched_gemm(g, Trans::No, t, m, k, n, o.grad, pb->data, pa->grad_buffer(), true);
           }
           if (pb->requires_grad) {
             if (transpose_b)  // B is N x K: dB = dC^T A
               kernels::batched_gemm(g, Trans::Yes, Trans::No, n, k, m, o.grad, pa->data,
                                     pb->grad_buffer(), true);
             else  // dB = A^T dC
               kernels::batched_gemm(g, Trans::Yes, Trans::No, k, n, m, pa->data, o.grad,
                                     pb->grad_buffer(), true);
           }
         });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  Tensor out = make_output(a.shape(), std::move(y), "add");
  record("add", {&a, &b}, out, [pa = &a.impl(), pb = &b.impl()](TensorImpl& o) {
    for (auto* p : {pa, pb}) {
      if (!p->requires_grad) continue;
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
  Tensor out = make_output(a.shape(), std::move(y), "sub");
  record("sub", {&a, &b}, out, [pa = &a.impl(), pb = &b.impl()](TensorImpl& o) {
    if (pa->requires_grad) {
      auto g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (pb->requires_grad) {
      auto g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  Tensor out = make_output(a.shape(), std::move(y), "mul");
  record("mul", {&a, &b}, out, [pa = &a.impl(), pb = &b.impl()](TensorImpl& o) {
    if (pa->requires_grad) {
      auto g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      auto g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pa->data[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * factor;
  Tensor out = make_output(x.shape(), std::move(y), "scale");
  record("scale", {&x}, out, [px = &x.impl(), factor](TensorImpl& o) {
    auto g = px->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
  });
  return out;
}

namespace {
thread_local ReluMargin* active_margin = nullptr;
}

ReluMargin::ReluMargin() : value_(std::numeric_limits<double>::infinity()), previous_(active_margin) {
  active_margin = this;
}

ReluMargin::~ReluMargin() { active_margin = previous_; }

Tensor relu(const Tensor& x) {
  std::vector<double> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (active_margin != nullptr)
    for (std::size_t i = 0; i < y.size(); ++i) active_margin->observe(std::abs(x[i]));
  Tensor out = make_output(x.shape(), std::move(y), "relu");
  record("relu", {&x}, out, [px = &x.impl()](TensorImpl& o) {
    auto g = px->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (px->data[i] > 0.0) g[i] += o.grad[i];
  });
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor out = make_output(x.shape(), softmax_along(x.impl().data, s, false), "softmax");
  record("softmax", {&x}, out, [px = &x.impl(), s](TensorImpl& o) {
    auto g = px->grad_buffer();
    if (s.inner == 1) {
      kernels::softmax_rows_backward(s.outer, s.extent, o.data, o.grad, g);
      return;
    }
    for (std::size_t oo = 0; oo < s.outer; ++oo)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = oo * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k)
          dot += o.data[base + k * s.inner] * o.grad[base + k * s.inner];
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t idx = base + k * s.inner;
          g[idx] += o.data[idx] * (o.grad[idx] - dot);
        }
      }
  });
  return out;
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "log_softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor out = make_output(x.shape(), softmax_along(x.impl().data, s, true), "log_softmax");
  record("log_softmax", {&x}, out, [px = &x.impl(), s](TensorImpl& o) {
    auto g = px->grad_buffer();
    for (std::size_t oo = 0; oo < s.outer; ++oo)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = oo * s.extent * s.inner + i;
        double total = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k) total += o.grad[base + k * s.inner];
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t idx = base + k * s.inner;
          g[idx] += o.grad[idx] - std::exp(o.data[idx]) * total;
        }
      }
  });
  return out;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) fail(Errc::ShapeMismatch, "concat of nothing");
  const Tensor& first = parts.front();
  require_axis(first, axis, "concat");
  Shape shape = first.shape();
  shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.rank()) fail(Errc::ShapeMismatch, "concat: rank mismatch");
    for (std::size_t d = 0; d < p.rank(); ++d)
      if (d != axis && p.dim(d) != first.dim(d))
        fail(Errc::ShapeMismatch, "concat: " + shape_str(p.shape()) + " vs " + shape_str(first.shape()));
    shape[axis] += p.dim(axis);
  }
  const AxisSplit s = split_at(shape, axis);
  std::vector<double> y(shape_numel(shape));
  std::vector<std::size_t> chunk(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) chunk[p] = parts[p].dim(axis) * s.inner;
  const std::size_t row = s.extent * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::size_t offset = o * row;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      auto src = parts[p].data().subspan(o * chunk[p], chunk[p]);
      std::copy(src.begin(), src.end(), y.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += chunk[p];
    }
  }
  Tensor out = make_output(std::move(shape), std::move(y), "concat");
  Tape* tape = active_tape();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape != nullptr && any) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorImpl>> ins;
    std::vector<TensorImpl*> raw;
    for (const auto& p : parts) {
      ins.push_back(p.impl_ptr());
      raw.push_back(&p.impl());
    }
    tape->record("concat", std::move(ins), out, [raw, chunk, s, row](TensorImpl& o) {
      for (std::size_t oo = 0; oo < s.outer; ++oo) {
        std::size_t offset = oo * row;
        for (std::size_t p = 0; p < raw.size(); ++p) {
          if (raw[p]->requires_grad) {
            auto g = raw[p]->grad_buffer();
            for (std::size_t i = 0; i < chunk[p]; ++i) g[oo * chunk[p] + i] += o.grad[offset + i];
          }
          offset += chunk[p];
        }
      }
    });
  }
  return out;
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    fail(Errc::ShapeMismatch, "reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  Tensor out(std::move(shape), x.impl().data);
  record("reshape", {&x}, out, [px = &x.impl()](TensorImpl& o) {
    auto g = px->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
  return out;
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  return permute(x, {1, 0});
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const std::size_t r = x.rank();
  if (order.size() != r) fail(Errc::AxisOutOfRange, "permute: order rank mismatch");
  std::vector<bool> seen(r, false);
  for (auto a : order) {
    if (a >= r || seen[a]) fail(Errc::AxisOutOfRange, "permute: invalid axis order");
    seen[a] = true;
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t d = r; d-- > 1;) in_stride[d - 1] = in_stride[d] * x.dim(d);
  Shape shape(r);
  std::vector<std::size_t> stride(r);  // input stride for each output axis
  for (std::size_t d = 0; d < r; ++d) {
    shape[d] = x.dim(order[d]);
    stride[d] = in_stride[order[d]];
  }
  // src[i] = input flat index feeding output flat index i.
  std::vector<std::size_t> src(x.numel());
  std::vector<std::size_t> idx(r, 0);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    src[i] = pos;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      pos += stride[d];
      if (idx[d] < shape[d]) break;
      pos -= stride[d] * shape[d];
      idx[d] = 0;
    }
  }
  std::vector<double> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[src[i]];
  Tensor out(std::move(shape), std::move(y));
  record("permute", {&x}, out, [px = &x.impl(), src = std::move(src)](TensorImpl& o) {
    auto g = px->grad_buffer();
    for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += o.grad[i];
  });
  return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_axis(x, axis, "slice");
  if (begin >= end || end > x.dim(axis))
    fail(Errc::IndexOutOfRange, "slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                                    ") of axis extent " + std::to_string(x.dim(axis)));
  const AxisSplit s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const std::size_t len = (end - begin) * s.inner;
  std::vector<double> y(shape_numel(shape));
  for (std::size_t o = 0; o < s.outer; ++o) {
    auto src = x.data().subspan(o * s.extent * s.inner + begin * s.inner, len);
    std::copy(src.begin(), src.end(), y.begin() + static_cast<std::ptrdiff_t>(o * len));
  }
  Tensor out(std::move(shape), std::move(y));
  record("slice", {&x}, out, [px = &x.impl(), s, begin, len](TensorImpl& o) {
    auto g = px->grad_buffer();
    for (std::size_t oo = 0; oo < s.outer; ++oo)
      for (std::size_t i = 0; i < len; ++i)
        g[oo * s.extent * s.inner + begin * s.inner + i] += o.grad[oo * len + i];
  });
  return out;
}

Tensor broadcast_axis(const Tensor& x, std::size_t axis, std::size_t count) {
  if (axis > x.rank()) fail(Errc::AxisOutOfRange, "broadcast_axis: axis beyond rank");
  if (count == 0) fail(Errc::ShapeMismatch, "broadcast_axis: zero count");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis; d < x.rank(); ++d) inner *= x.dim(d);
  Shape shape = x.shape();
  shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), count);
  std::vector<double> y(x.numel() * count);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < count; ++c) {
      auto src = x.data().subspan(o * inner, inner);
      std::copy(src.begin(), src.end(), y.begin() + static_cast<std::ptrdiff_t>((o * count + c) * inner));
    }
  Tensor out(std::move(shape), std::move(y));
  record("broadcast_axis", {&x}, out, [px = &x.impl(), outer, inner, count](TensorImpl& o) {
    auto g = px->grad_buffer();
    for (std::size_t oo = 0; oo < outer; ++oo)
      for (std::size_t c = 0; c < count; ++c)
        for (std::size_t i = 0; i < inner; ++i) g[oo * inner + i] += o.grad[(oo * count + c) * inner + i];
  });
  return out;
}

Tensor reduce_sum(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "reduce_sum");
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<double> y(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.extent; ++k)
      for (std::size_t i = 0; i < s.inner; ++i)
        y[o * s.inner + i] += x[(o * s.extent + k) * s.inner + i];
  Tensor out = make_output(drop_axis(x.shape(), axis), std::move(y), "reduce_sum");
  record("reduce_sum", {&x}, out, [px = &x.impl(), s](TensorImpl& o) {
    auto g = px->grad_buffer();
    for (std::size_t oo = 0; oo < s.outer; ++oo)
      for (std::size_t k = 0; k < s.extent; ++k)
        for (std::size_t i = 0; i < s.inner; ++i) g[(oo * s.extent + k) * s.inner + i] += o.grad[oo * s.inner + i];
  });
  return out;
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "mean_axis");
  return scale(reduce_sum(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor out = make_output({1}, {total}, "sum");
  record("sum", {&x}, out, [px = &x.impl()](TensorImpl& o) {
    auto g = px->grad_buffer();
    for (auto& v : g) v += o.grad[0];
  });
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n})
    fail(Errc::ShapeMismatch, "layer_norm: affine parameters must have length " + std::to_string(n));
  std::vector<double> xhat(m * n), inv_std(m), y(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = x.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += xr[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (xr[c] - mu) * inv_std[r];
      y[r * n + c] = xhat[r * n + c] * gamma[c] + beta[c];
    }
  }
  Tensor out = make_output({m, n}, std::move(y), "layer_norm");
  record("layer_norm", {&x, &gamma, &beta}, out,
         [px = &x.impl(), pg = &gamma.impl(), pb = &beta.impl(), xhat = std::move(xhat),
          inv_std = std::move(inv_std), m, n](TensorImpl& o) {
           if (pg->requires_grad) {
             auto g = pg->grad_buffer();
             for (std::size_t r = 0; r < m; ++r)
               for (std::size_t c = 0; c < n; ++c) g[c] += o.grad[r * n + c] * xhat[r * n + c];
           }
           if (pb->requires_grad) {
             auto g = pb->grad_buffer();
             for (std::size_t r = 0; r < m; ++r)
               for (std::size_t c = 0; c < n; ++c) g[c] += o.grad[r * n + c];
           }
           if (px->requires_grad) {
             auto g = px->grad_buffer();
             const double inv_n = 1.0 / static_cast<double>(n);
             for (std::size_t r = 0; r < m; ++r) {
               double mean_d = 0.0, mean_dx = 0.0;
               for (std::size_t c = 0; c < n; ++c) {
                 const double d = o.grad[r * n + c] * pg->data[c];
                 mean_d += d;
                 mean_dx += d * xhat[r * n + c];
               }
               mean_d *= inv_n;
               mean_dx *= inv_n;
               for (std::size_t c = 0; c < n; ++c) {
                 const double d = o.grad[r * n + c] * pg->data[c];
                 g[r * n + c] += inv_std[r] * (d - mean_d - xhat[r * n + c] * mean_dx);
               }
             }
           }
         });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "linear");
  if (b.rank() != 1 || w.rank() != 2 || b.dim(0) != w.dim(1))
    fail(Errc::ShapeMismatch, "linear: weight " + shape_str(w.shape()) + " bias " + shape_str(b.shape()));
  return add(matmul(x, w), broadcast_axis(b, 0, x.dim(0)));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  const double inv = 1.0 / static_cast<double>(a.numel());
  double total = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
  Tensor out = make_output({1}, {total * inv}, "mse");
  record("mse", {&a, &b}, out, [pa = &a.impl(), pb = &b.impl(), inv](TensorImpl& o) {
    const double s = 2.0 * inv * o.grad[0];
    if (pa->requires_grad) {
      auto g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * (pa->data[i] - pb->data[i]);
    }
    if (pb->requires_grad) {
      auto g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= s * (pa->data[i] - pb->data[i]);
    }
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch)
    fail(Errc::ShapeMismatch, "cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                                  std::to_string(batch));
  for (auto l : labels)
    if (l >= classes)
      fail(Errc::LabelOutOfRange, "label " + std::to_string(l) + " with " + std::to_string(classes) + " classes");
  auto logp = log_softmax_rows(logits.data(), batch, classes);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) total -= logp[b * classes + labels[b]];
  const double inv = 1.0 / static_cast<double>(batch);
  Tensor out = make_output({1}, {total * inv}, "cross_entropy");
  record("cross_entropy", {&logits}, out,
         [px = &logits.impl(), logp = std::move(logp), lab = std::vector<std::size_t>(labels.begin(), labels.end()),
          batch, classes, inv](TensorImpl& o) {
           auto g = px->grad_buffer();
           const double s = o.grad[0] * inv;
           for (std::size_t b = 0; b < batch; ++b)
             for (std::size_t c = 0; c < classes; ++c) {
               const double p = std::exp(logp[b * classes + c]);
               g[b * classes + c] += s * (p - (c == lab[b] ? 1.0 : 0.0));
             }
         });
  return out;
}

Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits) {
  require_same_shape(p_logits, q_logits, "kl_divergence");
  require_rank(p_logits, 2, "kl_divergence");
  const std::size_t batch = p_logits.dim(0), classes = p_logits.dim(1);
  auto lp = log_softmax_rows(p_logits.data(), batch, classes);
  auto lq = log_softmax_rows(q_logits.data(), batch, classes);
  std::vector<double> row_kl(batch, 0.0);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < classes; ++c) {
      const std::size_t i = b * classes + c;
      row_kl[b] += std::exp(lp[i]) * (lp[i] - lq[i]);
    }
    total += row_kl[b];
  }
  const double inv = 1.0 / static_cast<double>(batch);
  Tensor out = make_output({1}, {total * inv}, "kl_divergence");
  record("kl_divergence", {&p_logits, &q_logits}, out,
         [pp = &p_logits.impl(), pq = &q_logits.impl(), lp = std::move(lp), lq = std::move(lq),
          row_kl = std::move(row_kl), batch, classes, inv](TensorImpl& o) {
           const double s = o.grad[0] * inv;
           for (std::size_t b = 0; b < batch; ++b)
             for (std::size_t c = 0; c < classes; ++c) {
               const std::size_t i = b * classes + c;
               const double sp = std::exp(lp[i]);
               if (pp->requires_grad) pp->grad_buffer()[i] += s * sp * (lp[i] - lq[i] - row_kl[b]);
               if (pq->requires_grad) pq->grad_buffer()[i] += s * (std::exp(lq[i]) - sp);
             }
         });
  return out;
}

}  // namespace prockd
