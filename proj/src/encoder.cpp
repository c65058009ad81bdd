#include "prockd/encoder.hpp"

#include <cmath>
#include <string>

#include "prockd/error.hpp"
#include "prockd/ops.hpp"

namespace prockd::model {

void EncoderConfig::validate() const {
  if (layers < 1) fail(Errc::InvalidConfig, "encoder needs at least one layer");
  if (heads < 1 || hidden_dim % heads != 0)
    fail(Errc::InvalidConfig, "hidden_dim " + std::to_string(hidden_dim) + " not divisible by heads " +
                                  std::to_string(heads));
  if (patch_size < 1 || image_size % patch_size != 0)
    fail(Errc::InvalidConfig, "image_size must be a multiple of patch_size");
  if (mlp_ratio < 1) fail(Errc::InvalidConfig, "mlp_ratio must be >= 1");
  if (num_classes < 2) fail(Errc::InvalidConfig, "need at least two classes");
}

EncoderConfig default_teacher_config() {
  EncoderConfig c;
  c.layers = 6;
  c.heads = 4;
  c.hidden_dim = 64;
  return c;
}

EncoderConfig default_student_config() { return EncoderConfig{}; }

Tensor Classifier::forward(const Tensor& pooled) const { return linear(pooled, weight, bias); }

ParamList Classifier::parameters() const { return {{"head.w", weight}, {"head.b", bias}}; }

Tensor LayerOutput::head(std::size_t sample, std::size_t index) const {
  if (sample >= batch || index >= heads) fail(Errc::IndexOutOfRange, "attention head index");
  const std::size_t len = tokens * tokens;
  auto src = attention.data().subspan((sample * heads + index) * len, len);
  return Tensor({tokens, tokens}, std::vector<double>(src.begin(), src.end()));
}

Encoder::Encoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.hidden_dim;
  const std::size_t hidden = d * config_.mlp_ratio;
  const auto glorot = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };

  patch_w_ = randn({config_.patch_dim(), d}, glorot(config_.patch_dim()), rng);
  patch_b_ = Tensor::zeros({d});
  pos_ = randn({config_.token_len(), d}, 0.02, rng);
  if (config_.class_token) cls_ = randn({1, d}, 0.02, rng);
  for (std::size_t i = 0; i < config_.layers; ++i) {
    Block b;
    b.ln1_g = Tensor::full({d}, 1.0);
    b.ln1_b = Tensor::zeros({d});
    b.qkv_w = randn({d, 3 * d}, glorot(d), rng);
    b.qv_b = Tensor::zeros({2 * d});
    b.out_w = randn({d, d}, glorot(d), rng);
    b.out_b = Tensor::zeros({d});
    b.ln2_g = Tensor::full({d}, 1.0);
    b.ln2_b = Tensor::zeros({d});
    b.fc1_w = randn({d, hidden}, glorot(d), rng);
    b.fc1_b = Tensor::zeros({hidden});
    b.fc2_w = randn({hidden, d}, glorot(hidden), rng);
    b.fc2_b = Tensor::zeros({d});
    blocks_.push_back(std::move(b));
  }
  norm_g_ = Tensor::full({d}, 1.0);
  norm_b_ = Tensor::zeros({d});
  classifier_ = std::make_shared<Classifier>();
  classifier_->weight = randn({d, config_.num_classes}, glorot(d), rng);
  classifier_->bias = Tensor::zeros({config_.num_classes});
  set_trainable(parameters(), true);
}

Tensor Encoder::patchify(const Tensor& batch) const {
  if (batch.rank() != 2 || batch.dim(1) != config_.input_size())
    fail(Errc::ShapeMismatch, "encoder input " + shape_str(batch.shape()) + ", expected [B x " +
                                  std::to_string(config_.input_size()) + "]");
  const std::size_t n = batch.dim(0), g = config_.grid(), ps = config_.patch_size;
  // [B x (gy iy) x (gx ix)] -> [B gy gx x iy ix]
  Tensor grid = permute(reshape(batch, {n, g, ps, g, ps}), {0, 1, 3, 2, 4});
  return reshape(grid, {n * config_.patches(), config_.patch_dim()});
}

ForwardResult Encoder::forward(const Tensor& batch) const {
  const std::size_t b = batch.dim(0);
  const std::size_t d = config_.hidden_dim, h = config_.heads, dh = config_.head_dim();
  const std::size_t l = config_.token_len();

  Tensor x = reshape(linear(patchify(batch), patch_w_, patch_b_), {b, config_.patches(), d});
  if (config_.class_token) x = concat({broadcast_axis(cls_, 0, b), x}, 1);
  x = reshape(add(x, broadcast_axis(pos_, 0, b)), {b * l, d});

  ForwardResult result;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& blk : blocks_) {
    const Tensor qkv_b = concat({slice(blk.qv_b, 0, 0, d), Tensor::zeros({d}), slice(blk.qv_b, 0, d, 2 * d)}, 0);
    Tensor qkv = linear(layer_norm(x, blk.ln1_g, blk.ln1_b), blk.qkv_w, qkv_b);
    qkv = reshape(permute(reshape(qkv, {b, l, 3, h, dh}), {2, 0, 3, 1, 4}), {3, b * h, l, dh});
    Tensor q = reshape(slice(qkv, 0, 0, 1), {b * h, l, dh});
    Tensor k = reshape(slice(qkv, 0, 1, 2), {b * h, l, dh});
    Tensor v = reshape(slice(qkv, 0, 2, 3), {b * h, l, dh});
    Tensor att = softmax(scale(bmm(q, k, true), att_scale), 2);
    Tensor ctx = reshape(permute(reshape(bmm(att, v), {b, h, l, dh}), {0, 2, 1, 3}), {b * l, d});
    x = add(x, linear(ctx, blk.out_w, blk.out_b));
    Tensor mlp = relu(linear(layer_norm(x, blk.ln2_g, blk.ln2_b), blk.fc1_w, blk.fc1_b));
    x = add(x, linear(mlp, blk.fc2_w, blk.fc2_b));
    result.layers.push_back(LayerOutput{x, reshape(att, {b, h, l, l}), b, l, h});
  }
  Tensor normed = reshape(layer_norm(x, norm_g_, norm_b_), {b, l, d});
  result.pooled = mean_axis(normed, 1);
  result.logits = classifier_->forward(result.pooled);
  return result;
}

void Encoder::freeze() {
  set_trainable(parameters(), false);
  frozen_ = true;
}

ParamList Encoder::parameters() const {
  ParamList p{{"patch.w", patch_w_}, {"patch.b", patch_b_}, {"pos", pos_}};
  if (config_.class_token) p.push_back({"cls", cls_});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = blocks_[i];
    const std::string pre = "blocks." + std::to_string(i) + ".";
    p.insert(p.end(), {{pre + "ln1.g", b.ln1_g}, {pre + "ln1.b", b.ln1_b}, {pre + "qkv.w", b.qkv_w},
                       {pre + "qv.b", b.qv_b}, {pre + "out.w", b.out_w}, {pre + "out.b", b.out_b},
                       {pre + "ln2.g", b.ln2_g}, {pre + "ln2.b", b.ln2_b}, {pre + "fc1.w", b.fc1_w},
                       {pre + "fc1.b", b.fc1_b}, {pre + "fc2.w", b.fc2_w}, {pre + "fc2.b", b.fc2_b}});
  }
  p.push_back({"norm.g", norm_g_});
  p.push_back({"norm.b", norm_b_});
  append(p, classifier_->parameters());
  return p;
}

Tensor hidden_as_spatial(const Tensor& hidden, std::size_t grid_h, std::size_t grid_w, bool class_token) {
  if (hidden.rank() == 2) {
    Tensor batched = reshape(hidden, {1, hidden.dim(0), hidden.dim(1)});
    Tensor out = hidden_as_spatial(batched, grid_h, grid_w, class_token);
    return reshape(out, {out.dim(1), grid_h, grid_w});
  }
  if (hidden.rank() != 3) fail(Errc::ShapeMismatch, "hidden_as_spatial expects [l x dim] or [B x l x dim]");
  const std::size_t b = hidden.dim(0), l = hidden.dim(1), dim = hidden.dim(2);
  const std::size_t skip = class_token ? 1 : 0;
  if (l != grid_h * grid_w + skip)
    fail(Errc::GridMismatch, std::to_string(l) + " tokens for a " + std::to_string(grid_h) + "x" +
                                 std::to_string(grid_w) + " grid" + (class_token ? " plus class token" : ""));
  Tensor tokens = skip ? slice(hidden, 1, 1, l) : hidden;
  return reshape(permute(tokens, {0, 2, 1}), {b, dim, grid_h, grid_w});
}

Tensor spatial_as_hidden(const Tensor& spatial) {
  if (spatial.rank() == 3) {
    const std::size_t dim = spatial.dim(0), hw = spatial.dim(1) * spatial.dim(2);
    return transpose(reshape(spatial, {dim, hw}));
  }
  if (spatial.rank() != 4) fail(Errc::ShapeMismatch, "spatial_as_hidden expects [D x H x W] or [B x D x H x W]");
  const std::size_t b = spatial.dim(0), dim = spatial.dim(1), hw = spatial.dim(2) * spatial.dim(3);
  return permute(reshape(spatial, {b, dim, hw}), {0, 2, 1});
}

}  // namespace prockd::model
