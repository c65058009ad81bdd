#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oracle {

Values matmul(std::span<const double> a, std::span<const double> b, std::size_t m, std::size_t k, std::size_t n) {
  Values c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

Values softmax(std::span<const double> row) {
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : row) z += std::exp(v - mx);
  Values out;
  for (double v : row) out.push_back(std::exp(v - mx) / z);
  return out;
}

double mse(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double cross_entropy(std::span<const double> logits, std::span<const std::size_t> labels, std::size_t classes) {
  const std::size_t rows = logits.size() / classes;
  double s = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto p = softmax(logits.subspan(r * classes, classes));
    s -= std::log(p[labels[r]]);
  }
  return s / static_cast<double>(rows);
}

double kl_divergence(std::span<const double> p_logits, std::span<const double> q_logits, std::size_t classes) {
  const std::size_t rows = p_logits.size() / classes;
  double s = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto p = softmax(p_logits.subspan(r * classes, classes));
    const auto q = softmax(q_logits.subspan(r * classes, classes));
    for (std::size_t c = 0; c < classes; ++c) s += p[c] * (std::log(p[c]) - std::log(q[c]));
  }
  return s / static_cast<double>(rows);
}

Values descriptors(const prockd::proto::PrototypeBank& bank, std::span<const double> feature, std::size_t hw) {
  const std::size_t n = bank.count(), d = bank.dim();
  const auto w = bank.assign_weight.data(), bias = bank.assign_bias.data(), p = bank.prototypes.data();
  Values v(n * d, 0.0);
  for (std::size_t j = 0; j < hw; ++j) {
    Values logits(n);
    for (std::size_t k = 0; k < n; ++k) {
      double s = bias[k];
      for (std::size_t c = 0; c < d; ++c) s += feature[c * hw + j] * w[c * n + k];
      logits[k] = s;
    }
    const auto a = softmax(logits);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t c = 0; c < d; ++c) v[k * d + c] += a[k] * (feature[c * hw + j] - p[k * d + c]);
  }
  return v;
}

Values aggregate(const prockd::proto::PrototypeBank& bank, std::span<const double> feature,
                 std::span<const double> desc, std::size_t hw) {
  const std::size_t n = bank.count(), d = bank.dim();
  const auto aw = bank.agg_weight.data(), ab = bank.agg_bias.data();
  const auto fw = bank.fuse_weight.data(), fb = bank.fuse_bias.data();
  Values g(d);
  for (std::size_t c = 0; c < d; ++c) {
    double s = ab[c];
    for (std::size_t r = 0; r < n * d; ++r) s += desc[r] * aw[r * d + c];
    g[c] = s;
  }
  Values out(d * hw);
  for (std::size_t j = 0; j < hw; ++j)
    for (std::size_t c = 0; c < d; ++c) {
      double s = fb[c];
      for (std::size_t r = 0; r < d; ++r) s += feature[r * hw + j] * fw[r * d + c];
      for (std::size_t r = 0; r < d; ++r) s += g[r] * fw[(d + r) * d + c];
      out[c * hw + j] = s > 0.0 ? s : 0.0;
    }
  return out;
}

namespace {

// x[rows x in] W[in x out] + b
Values affine(std::span<const double> x, std::size_t rows, const prockd::Tensor& w, const prockd::Tensor& b) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  Values y(rows * out);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += x[r * in + i] * w[i * out + o];
      y[r * out + o] = s;
    }
  return y;
}

}  // namespace

Values attention(const prockd::augment::AugmentParams& params, std::span<const double> prototypes,
                 std::size_t count, std::span<const double> tokens, std::size_t t) {
  const std::size_t da = params.attn_dim();
  const Values fe = affine(tokens, t, params.feat_w, params.feat_b);
  const Values pe = affine(prototypes, count, params.proto_w, params.proto_b);
  Values a(t * count);
  for (std::size_t i = 0; i < t; ++i) {
    Values logits(count);
    for (std::size_t k = 0; k < count; ++k) {
      double s = 0.0;
      for (std::size_t c = 0; c < da; ++c) s += fe[i * da + c] * pe[k * da + c];
      logits[k] = s;
    }
    const auto row = softmax(logits);
    std::copy(row.begin(), row.end(), a.begin() + static_cast<std::ptrdiff_t>(i * count));
  }
  return a;
}

Values augment(const prockd::augment::AugmentParams& params, std::span<const double> prototypes, std::size_t count,
               std::span<const double> tokens, std::size_t t) {
  const std::size_t da = params.attn_dim(), dout = params.out_dim(), din = params.in_dim();
  const Values fe = affine(tokens, t, params.feat_w, params.feat_b);
  const Values pe = affine(prototypes, count, params.proto_w, params.proto_b);
  const Values a = attention(params, prototypes, count, tokens, t);
  Values joined(t * 2 * da);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t c = 0; c < da; ++c) joined[i * 2 * da + c] = fe[i * da + c];
    for (std::size_t c = 0; c < da; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < count; ++k) s += a[i * count + k] * pe[k * da + c];
      joined[i * 2 * da + da + c] = s;
    }
  }
  const Values phi = affine(joined, t, params.fuse_w, params.fuse_b);
  Values residual(tokens.begin(), tokens.end());
  if (params.has_residual_proj()) residual = affine(tokens, t, params.residual_w, params.residual_b);
  else if (din != dout) throw std::logic_error("residual width mismatch");
  Values out(t * dout);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, phi[i] + residual[i]);
  return out;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
