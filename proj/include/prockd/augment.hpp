#pragma once

// Prototype-guided feature augmentation:
//   A     = softmax(F_e P_e^T)                 over the prototype axis
//   O_aug = relu(Phi(concat[F_e, A P_e]) + F_r)
// where F_e and P_e are affine encodings of the tokens and the prototypes
// into a shared attention width, and F_r is the token feature itself (or an
// affine projection of it when the output width differs from the input).

#include <cstddef>
#include <cstdint>

#include "prockd/encoder.hpp"
#include "prockd/params.hpp"
#include "prockd/tensor.hpp"

namespace prockd::augment {

struct AugmentParams {
  Tensor proto_w, proto_b;  // [D x d_a], [d_a]
  Tensor feat_w, feat_b;    // [d_in x d_a], [d_a]
  Tensor fuse_w, fuse_b;    // Phi: [2 d_a x d_out], [d_out]
  Tensor residual_w, residual_b;  // [d_in x d_out]; undefined when d_out == d_in

  static AugmentParams create(std::size_t proto_dim, std::size_t in_dim, std::size_t attn_dim,
                              std::size_t out_dim, std::uint64_t seed);
  static AugmentParams create(std::size_t proto_dim, std::size_t in_dim, std::size_t attn_dim,
                              std::uint64_t seed) {
    return create(proto_dim, in_dim, attn_dim, in_dim, seed);
  }

  std::size_t proto_dim() const { return proto_w.dim(0); }
  std::size_t in_dim() const { return feat_w.dim(0); }
  std::size_t attn_dim() const { return feat_w.dim(1); }
  std::size_t out_dim() const { return fuse_w.dim(1); }
  bool has_residual_proj() const { return residual_w.defined(); }
  ParamList parameters() const;
};

// tokens: [t x d_in] or [B x t x d_in]; returns A as [t x n] or [B x t x n].
Tensor attention_map(const AugmentParams& params, const Tensor& prototypes, const Tensor& tokens);
// O_aug, [t x d_out] or [B x t x d_out].
Tensor augment(const AugmentParams& params, const Tensor& prototypes, const Tensor& tokens);
// Mean-pooled O_aug through the shared classifier; tokens [B x t x d_in] -> [B x C].
Tensor consistency_logits(const AugmentParams& params, const model::Classifier& classifier,
                          const Tensor& prototypes, const Tensor& tokens);

}  // namespace prockd::augment
