#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prockd/tensor.hpp"

namespace prockd::data {

inline constexpr std::size_t kImageSide = 16;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide;
inline constexpr std::size_t kClassCount = 10;  // renderable shape classes, ids 0..9

enum class Split { Train, Val };

std::string_view class_name(std::size_t class_id);

struct DatasetSpec {
  std::vector<std::size_t> class_ids;  // global shape ids; labels are positions in this list
  std::size_t per_class = 400;         // N_max, size of the most frequent class
  double imbalance = 1.0;              // beta = N_max / N_min
  double noise = 0.25;                 // pixel noise standard deviation
  std::size_t clutter = 1;             // random distractor strokes per image
  std::uint64_t seed = 1;
  Split split = Split::Train;

  void validate() const;  // Throws Errc::InvalidSpec.
};

struct SyntheticDataset {
  Tensor images;  // [N x 1 x 16 x 16]
  std::vector<std::size_t> labels;
  std::vector<std::size_t> class_set;
  Split split = Split::Train;
  double imbalance_ratio = 1.0;

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return class_set.size(); }
  // Rows `indices` as an encoder batch [B x 256].
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> batch_labels(std::span<const std::size_t> indices) const;
};

// N_k = round(N_max * beta^(-k / (C - 1))) for k = 0..C-1.
std::vector<std::size_t> class_sizes(std::size_t n_max, std::size_t classes, double beta);

// Deterministic per (spec.seed, class id, split); each class is rendered from
// its own derived stream, so the result does not depend on generation order.
SyntheticDataset generate_dataset(const DatasetSpec& spec);

// Plugs other data sources into the training harness.
class DatasetSource {
 public:
  virtual ~DatasetSource() = default;
  virtual SyntheticDataset load(Split split) const = 0;
};

class SyntheticSource : public DatasetSource {
 public:
  SyntheticSource(DatasetSpec train, DatasetSpec val) : train_(std::move(train)), val_(std::move(val)) {}
  SyntheticDataset load(Split split) const override {
    return generate_dataset(split == Split::Train ? train_ : val_);
  }

 private:
  DatasetSpec train_, val_;
};

}  // namespace prockd::data
