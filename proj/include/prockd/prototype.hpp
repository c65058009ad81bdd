#pragma once

// Prototype-based representation learning over spatial teacher features.
//
// For a feature map F with positions F_j (j over H*W) and prototypes p_i:
//   L_ji  = F_j . a_i + c_i                          (learned assignment logit)
//   V_i   = sum_j softmax_i(L_j.)[i] * (F_j - p_i)   (residual descriptors)
//   O_pro = f(concat[F_j, flatten(V) W_p + b_p])      per position, f = relu(affine 2D->D)
//
// Features are [D x H x W] or batched [B x D x H x W].

#include <cstddef>
#include <cstdint>
#include <vector>

#include "prockd/encoder.hpp"
#include "prockd/params.hpp"
#include "prockd/tensor.hpp"

namespace prockd::proto {

inline constexpr std::size_t kDefaultPrototypes = 72;

struct PrototypeBank {
  Tensor prototypes;     // [n x D]
  Tensor assign_weight;  // [D x n]
  Tensor assign_bias;    // [n]
  Tensor agg_weight;     // [(n*D) x D]
  Tensor agg_bias;       // [D]
  Tensor fuse_weight;    // [2D x D]
  Tensor fuse_bias;      // [D]

  // Prototypes ~ N(0, 1/D); other weights scaled by fan-in.
  static PrototypeBank create(std::size_t count, std::size_t dim, std::uint64_t seed);

  std::size_t count() const { return prototypes.dim(0); }
  std::size_t dim() const { return prototypes.dim(1); }
  ParamList parameters() const;
};

// [B x H*W x n] (or [H*W x n] for an unbatched feature).
Tensor assignment_logits(const PrototypeBank& bank, const Tensor& feature);
// [B x n x D] (or [n x D]).
Tensor descriptors(const PrototypeBank& bank, const Tensor& feature);
// O_pro, same shape as `feature`.
Tensor aggregate(const PrototypeBank& bank, const Tensor& feature, const Tensor& desc);

struct PrototypeOutput {
  Tensor output;  // O_pro, same shape as the feature
  Tensor pooled;  // [B x D] (or [D]), spatial mean of O_pro
};

PrototypeOutput prototype_forward(const PrototypeBank& bank, const Tensor& feature);

// Channel-concatenates the spatial reshapes of the tapped layers (1-based
// indices) into [B x D_cat x H x W]. Throws Errc::IndexOutOfRange.
Tensor tap_features(const std::vector<model::LayerOutput>& layers, const std::vector<std::size_t>& tap,
                    std::size_t grid, bool class_token = false);

PrototypeOutput prototype_forward(const PrototypeBank& bank, const std::vector<model::LayerOutput>& layers,
                                  const std::vector<std::size_t>& tap, std::size_t grid,
                                  bool class_token = false);

}  // namespace prockd::proto
