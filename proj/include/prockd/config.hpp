#pragma once

// Run configuration. On disk it is a flat key = value file with [sections];
// see docs/config.md for the schema.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "prockd/encoder.hpp"
#include "prockd/losses.hpp"
#include "prockd/optim.hpp"

namespace prockd::harness {

enum class Mode { CrossTask, SameTask };

struct DataConfig {
  Mode mode = Mode::CrossTask;
  std::vector<std::size_t> teacher_classes{0, 1, 2, 3, 4};
  std::vector<std::size_t> student_classes{5, 6, 7, 8, 9};
  std::size_t train_per_class = 400;
  std::size_t val_per_class = 100;
  double imbalance = 1.0;
  double noise = 0.25;
  std::size_t clutter = 1;
  std::uint64_t seed = 1;
};

struct DistillConfig {
  model::EncoderConfig teacher = model::default_teacher_config();
  model::EncoderConfig student = model::default_student_config();

  std::size_t prototypes = 72;
  std::vector<std::size_t> tap{6};  // 1-based teacher layers feeding the prototype module
  std::size_t attn_dim = 32;        // shared width of the augmentation attention
  bool teacher_augment = false;     // also augment tapped teacher features
  bool proto_head = true;           // classify pooled O_pro as part of the prototype loss

  distill::LossWeights weights;
  distill::HeadMatch head_match = distill::HeadMatch::Subsample;
  std::vector<std::size_t> teacher_layers;  // empty: uniform layer map

  AdamWConfig optim;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::size_t teacher_epochs = 30;

  DataConfig data;
  std::uint64_t seed = 1;          // student-side initialization and batch order
  std::uint64_t teacher_seed = 1;  // teacher initialization and batch order

  distill::LayerMap layer_map() const;
  std::string to_text() const;
};

// Source line of each key ("section.key"), for error reporting.
using LineIndex = std::map<std::string, std::size_t>;

// Throws Errc::InvalidConfig; messages carry "line N:" when `lines` knows the key.
void validate(const DistillConfig& config, const LineIndex* lines = nullptr);

DistillConfig parse_config(std::string_view text);
DistillConfig load_config(const std::string& path);

std::vector<std::size_t> parse_index_list(std::string_view text);

}  // namespace prockd::harness
