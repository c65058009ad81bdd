#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "prockd/params.hpp"
#include "prockd/tensor.hpp"

namespace prockd::model {

struct EncoderConfig {
  std::size_t layers = 3;
  std::size_t heads = 2;
  std::size_t hidden_dim = 32;
  std::size_t mlp_ratio = 2;
  std::size_t image_size = 16;
  std::size_t patch_size = 4;
  std::size_t num_classes = 5;
  bool class_token = false;

  std::size_t grid() const { return image_size / patch_size; }  // H == W
  std::size_t patches() const { return grid() * grid(); }
  std::size_t token_len() const { return patches() + (class_token ? 1 : 0); }
  std::size_t patch_dim() const { return patch_size * patch_size; }
  std::size_t input_size() const { return image_size * image_size; }
  std::size_t head_dim() const { return hidden_dim / heads; }

  // Throws Errc::InvalidConfig on violated invariants.
  void validate() const;
};

// Desk-scale defaults: teacher m=6, d=64, h=4; student n=3, d'=32, h=2.
EncoderConfig default_teacher_config();
EncoderConfig default_student_config();

// Linear head; one instance is shared between the student and the
// augmentation path of a distillation run.
struct Classifier {
  Tensor weight;  // [dim x C]
  Tensor bias;    // [C]

  Tensor forward(const Tensor& pooled) const;  // [B x dim] -> [B x C]
  ParamList parameters() const;
};

struct LayerOutput {
  Tensor hidden;     // [B*l x dim], rows grouped by sample
  Tensor attention;  // [B x h x l x l]
  std::size_t batch = 0;
  std::size_t tokens = 0;
  std::size_t heads = 0;

  // Attention matrix of one head for one sample, [l x l] (detached copy).
  Tensor head(std::size_t sample, std::size_t index) const;
};

struct ForwardResult {
  Tensor logits;  // [B x C]
  Tensor pooled;  // [B x dim], mean over tokens after the final norm
  std::vector<LayerOutput> layers;
};

// Pre-norm transformer encoder over 1-channel square images split into
// non-overlapping patches.
class Encoder {
 public:
  Encoder(const EncoderConfig& config, std::uint64_t seed);

  // batch: [B x image_size^2].
  ForwardResult forward(const Tensor& batch) const;

  // Marks every parameter as constant; forward records no nodes for them.
  void freeze();
  bool frozen() const { return frozen_; }

  ParamList parameters() const;
  const EncoderConfig& config() const { return config_; }
  const std::shared_ptr<Classifier>& classifier() const { return classifier_; }

 private:
  struct Block {
    // Query and value biases only: a key bias shifts all logits of a query
    // equally and never reaches the output.
    Tensor ln1_g, ln1_b, qkv_w, qv_b, out_w, out_b;
    Tensor ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };

  Tensor patchify(const Tensor& batch) const;

  EncoderConfig config_;
  Tensor patch_w_, patch_b_, pos_, cls_;
  std::vector<Block> blocks_;
  Tensor norm_g_, norm_b_;
  std::shared_ptr<Classifier> classifier_;
  bool frozen_ = false;
};

// [l x dim] -> [dim x H x W], or [B x l x dim] -> [B x dim x H x W]. With a
// class token the first token row is dropped. Throws Errc::GridMismatch.
Tensor hidden_as_spatial(const Tensor& hidden, std::size_t grid_h, std::size_t grid_w,
                         bool class_token = false);
// Inverse of hidden_as_spatial (without the class token).
Tensor spatial_as_hidden(const Tensor& spatial);

}  // namespace prockd::model
