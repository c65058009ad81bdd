#include "prockd/prototype.hpp"

#include <cmath>
#include <string>

#include "prockd/error.hpp"
#include "prockd/ops.hpp"

namespace prockd::proto {
namespace {

// Batched view of a feature: [B x D x H x W]; `batched` reports the input form.
struct FeatureView {
  Tensor feature;
  bool batched;
};

FeatureView as_batched(const Tensor& feature, const PrototypeBank& bank) {
  FeatureView view{feature, true};
  if (feature.rank() == 3) {
    view = {reshape(feature, {1, feature.dim(0), feature.dim(1), feature.dim(2)}), false};
  } else if (feature.rank() != 4) {
    fail(Errc::ShapeMismatch, "prototype feature must be [D x H x W] or [B x D x H x W], got " +
                                  shape_str(feature.shape()));
  }
  if (view.feature.dim(1) != bank.dim())
    fail(Errc::ShapeMismatch, "feature has " + std::to_string(view.feature.dim(1)) +
                                  " channels, bank expects " + std::to_string(bank.dim()));
  return view;
}

// [B x H*W x D] position-major rows.
Tensor positions(const Tensor& batched) { return model::spatial_as_hidden(batched); }

Tensor unbatch(const Tensor& t) {
  Shape s(t.shape().begin() + 1, t.shape().end());
  return reshape(t, std::move(s));
}

}  // namespace

PrototypeBank PrototypeBank::create(std::size_t count, std::size_t dim, std::uint64_t seed) {
  if (count < 1 || dim < 1) fail(Errc::InvalidConfig, "prototype bank needs n >= 1 and D >= 1");
  Rng rng(seed);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dim));
  PrototypeBank bank;
  bank.prototypes = randn({count, dim}, inv_sqrt_d, rng);
  bank.assign_weight = randn({dim, count}, inv_sqrt_d, rng);
  bank.assign_bias = Tensor::zeros({count});
  bank.agg_weight = randn({count * dim, dim}, 1.0 / std::sqrt(static_cast<double>(count * dim)), rng);
  bank.agg_bias = Tensor::zeros({dim});
  bank.fuse_weight = randn({2 * dim, dim}, 1.0 / std::sqrt(2.0 * static_cast<double>(dim)), rng);
  bank.fuse_bias = Tensor::zeros({dim});
  set_trainable(bank.parameters(), true);
  return bank;
}

ParamList PrototypeBank::parameters() const {
  return {{"prototypes", prototypes}, {"assign.w", assign_weight}, {"assign.b", assign_bias},
          {"agg.w", agg_weight},      {"agg.b", agg_bias},         {"fuse.w", fuse_weight},
          {"fuse.b", fuse_bias}};
}

Tensor assignment_logits(const PrototypeBank& bank, const Tensor& feature) {
  auto [f, batched] = as_batched(feature, bank);
  const std::size_t b = f.dim(0), hw = f.dim(2) * f.dim(3);
  Tensor pos = reshape(positions(f), {b * hw, bank.dim()});
  Tensor logits = reshape(linear(pos, bank.assign_weight, bank.assign_bias), {b, hw, bank.count()});
  return batched ? logits : unbatch(logits);
}

Tensor descriptors(const PrototypeBank& bank, const Tensor& feature) {
  auto [f, batched] = as_batched(feature, bank);
  const std::size_t b = f.dim(0), d = bank.dim();
  Tensor weights = softmax(assignment_logits(bank, f), 2);  // [B x HW x n], normalized over prototypes
  // sum_j w_ji (F_j - p_i) = (W^T F)_i - (sum_j w_ji) p_i
  Tensor weighted = bmm(permute(weights, {0, 2, 1}), positions(f));  // [B x n x D]
  Tensor mass = broadcast_axis(reduce_sum(weights, 1), 2, d);        // [B x n x D]
  Tensor desc = sub(weighted, mul(mass, broadcast_axis(bank.prototypes, 0, b)));
  return batched ? desc : unbatch(desc);
}

Tensor aggregate(const PrototypeBank& bank, const Tensor& feature, const Tensor& desc) {
  auto [f, batched] = as_batched(feature, bank);
  const std::size_t b = f.dim(0), n = bank.count(), d = bank.dim();
  const std::size_t gh = f.dim(2), gw = f.dim(3), hw = gh * gw;
  const Shape want = batched ? Shape{b, n, d} : Shape{n, d};
  if (desc.shape() != want)
    fail(Errc::ShapeMismatch, "descriptors " + shape_str(desc.shape()) + ", expected " + shape_str(want));
  Tensor projected = linear(reshape(desc, {b, n * d}), bank.agg_weight, bank.agg_bias);  // [B x D]
  Tensor joined = concat({positions(f), broadcast_axis(projected, 1, hw)}, 2);         // [B x HW x 2D]
  Tensor fused = relu(linear(reshape(joined, {b * hw, 2 * d}), bank.fuse_weight, bank.fuse_bias));
  Tensor out = reshape(permute(reshape(fused, {b, hw, d}), {0, 2, 1}), {b, d, gh, gw});
  return batched ? out : unbatch(out);
}

PrototypeOutput prototype_forward(const PrototypeBank& bank, const Tensor& feature) {
  const Tensor f = as_batched(feature, bank).feature;
  const std::size_t b = f.dim(0), d = bank.dim(), hw = f.dim(2) * f.dim(3);
  PrototypeOutput out;
  out.output = aggregate(bank, f, descriptors(bank, f));
  out.pooled = mean_axis(reshape(out.output, {b, d, hw}), 2);
  if (feature.rank() == 3) {
    out.output = reshape(out.output, feature.shape());
    out.pooled = reshape(out.pooled, {d});
  }
  return out;
}

Tensor tap_features(const std::vector<model::LayerOutput>& layers, const std::vector<std::size_t>& tap,
                    std::size_t grid, bool class_token) {
  if (tap.empty()) fail(Errc::IndexOutOfRange, "empty tap list");
  std::vector<Tensor> parts;
  for (auto index : tap) {
    if (index < 1 || index > layers.size())
      fail(Errc::IndexOutOfRange, "tap layer " + std::to_string(index) + " of " + std::to_string(layers.size()));
    const auto& layer = layers[index - 1];
    const std::size_t dim = layer.hidden.dim(1);
    parts.push_back(model::hidden_as_spatial(reshape(layer.hidden, {layer.batch, layer.tokens, dim}), grid,
                                             grid, class_token));
  }
  return parts.size() == 1 ? parts.front() : concat(parts, 1);
}

PrototypeOutput prototype_forward(const PrototypeBank& bank, const std::vector<model::LayerOutput>& layers,
                                  const std::vector<std::size_t>& tap, std::size_t grid, bool class_token) {
  return prototype_forward(bank, tap_features(layers, tap, grid, class_token));
}

}  // namespace prockd::proto
