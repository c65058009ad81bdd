#include "prockd/augment.hpp"

#include <cmath>
#include <string>

#include "prockd/error.hpp"
#include "prockd/ops.hpp"

namespace prockd::augment {
namespace {

struct Encoded {
  Tensor tokens;   // [B*t x d_in]
  Tensor feat;     // F_e, [B*t x d_a]
  Tensor protos;   // P_e, [n x d_a]
  Tensor weights;  // A, [B*t x n]
  std::size_t batch, length;
  bool batched;
};

Encoded encode(const AugmentParams& params, const Tensor& prototypes, const Tensor& tokens) {
  if (prototypes.rank() != 2 || prototypes.dim(1) != params.proto_dim())
    fail(Errc::ShapeMismatch, "prototypes " + shape_str(prototypes.shape()) + ", expected [n x " +
                                  std::to_string(params.proto_dim()) + "]");
  Encoded e{};
  if (tokens.rank() == 2) {
    e.batched = false;
    e.batch = 1;
    e.length = tokens.dim(0);
  } else if (tokens.rank() == 3) {
    e.batched = true;
    e.batch = tokens.dim(0);
    e.length = tokens.dim(1);
  } else {
    fail(Errc::ShapeMismatch, "tokens must be [t x d] or [B x t x d], got " + shape_str(tokens.shape()));
  }
  if (tokens.shape().back() != params.in_dim())
    fail(Errc::ShapeMismatch, "token width " + std::to_string(tokens.shape().back()) + ", expected " +
                                  std::to_string(params.in_dim()));
  e.tokens = reshape(tokens, {e.batch * e.length, params.in_dim()});
  e.feat = linear(e.tokens, params.feat_w, params.feat_b);
  e.protos = linear(prototypes, params.proto_w, params.proto_b);
  e.weights = softmax(matmul(e.feat, transpose(e.protos)), 1);
  return e;
}

}  // namespace

AugmentParams AugmentParams::create(std::size_t proto_dim, std::size_t in_dim, std::size_t attn_dim,
                                    std::size_t out_dim, std::uint64_t seed) {
  if (proto_dim < 1 || in_dim < 1 || attn_dim < 1 || out_dim < 1)
    fail(Errc::InvalidConfig, "augmentation dimensions must be positive");
  Rng rng(seed);
  const auto s = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  AugmentParams p;
  p.proto_w = randn({proto_dim, attn_dim}, s(proto_dim), rng);
  p.proto_b = Tensor::zeros({attn_dim});
  p.feat_w = randn({in_dim, attn_dim}, s(in_dim), rng);
  p.feat_b = Tensor::zeros({attn_dim});
  p.fuse_w = randn({2 * attn_dim, out_dim}, s(2 * attn_dim), rng);
  p.fuse_b = Tensor::zeros({out_dim});
  if (out_dim != in_dim) {
    p.residual_w = randn({in_dim, out_dim}, s(in_dim), rng);
    p.residual_b = Tensor::zeros({out_dim});
  }
  set_trainable(p.parameters(), true);
  return p;
}

ParamList AugmentParams::parameters() const {
  ParamList p{{"proto_enc.w", proto_w}, {"proto_enc.b", proto_b}, {"feat_enc.w", feat_w},
              {"feat_enc.b", feat_b},   {"phi.w", fuse_w},        {"phi.b", fuse_b}};
  if (has_residual_proj()) {
    p.push_back({"residual.w", residual_w});
    p.push_back({"residual.b", residual_b});
  }
  return p;
}

Tensor attention_map(const AugmentParams& params, const Tensor& prototypes, const Tensor& tokens) {
  Encoded e = encode(params, prototypes, tokens);
  const std::size_t n = prototypes.dim(0);
  return e.batched ? reshape(e.weights, {e.batch, e.length, n}) : e.weights;
}

Tensor augment(const AugmentParams& params, const Tensor& prototypes, const Tensor& tokens) {
  Encoded e = encode(params, prototypes, tokens);
  Tensor attended = matmul(e.weights, e.protos);  // [B*t x d_a]
  Tensor phi = linear(concat({e.feat, attended}, 1), params.fuse_w, params.fuse_b);
  Tensor residual = params.has_residual_proj() ? linear(e.tokens, params.residual_w, params.residual_b) : e.tokens;
  Tensor out = relu(add(phi, residual));
  const std::size_t d_out = params.out_dim();
  return e.batched ? reshape(out, {e.batch, e.length, d_out}) : out;
}

Tensor consistency_logits(const AugmentParams& params, const model::Classifier& classifier,
                          const Tensor& prototypes, const Tensor& tokens) {
  if (tokens.rank() != 3) fail(Errc::ShapeMismatch, "consistency_logits expects [B x t x d_in] tokens");
  return classifier.forward(mean_axis(augment(params, prototypes, tokens), 1));
}

}  // namespace prockd::augment
