#pragma once

// Offline cross-task distillation: a frozen teacher, a student trained on its
// own label space, and the prototype and augmentation modules trained jointly
// with the student on
//   L_total = l_emb * L_emb + l_pro * L_pro + l_stu * L_stu.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "prockd/augment.hpp"
#include "prockd/config.hpp"
#include "prockd/dataset.hpp"
#include "prockd/encoder.hpp"
#include "prockd/losses.hpp"
#include "prockd/metrics.hpp"
#include "prockd/optim.hpp"
#include "prockd/prototype.hpp"

namespace prockd::distill {

// Seed streams derived from a run seed.
enum SeedStream : std::uint64_t {
  kInitStream = 1,
  kShuffleStream = 2,
  kBankStream = 3,
  kAugmentStream = 4,
  kProjectorStream = 5,
  kProtoHeadStream = 6,
  kTeacherAugmentStream = 7,
};

// Outputs of the frozen teacher precomputed for every sample of a dataset;
// only the layers named at construction are kept.
class TeacherCache {
 public:
  TeacherCache(const model::Encoder& teacher, const data::SyntheticDataset& dataset,
               const std::vector<std::size_t>& layers);

  // One entry per teacher layer; layers that were not cached are left empty.
  std::vector<model::LayerOutput> gather(std::span<const std::size_t> indices) const;
  std::size_t depth() const { return depth_; }

 private:
  struct Layer {
    bool cached = false;
    std::size_t dim = 0;
    std::vector<double> hidden;     // [N*l x dim]
    std::vector<double> attention;  // [N x h x l x l]
  };
  std::vector<Layer> layers_;
  std::size_t depth_, tokens_, heads_;
};

struct Batch {
  Tensor images;                             // [B x 256]
  std::vector<std::size_t> labels;
  std::vector<model::LayerOutput> teacher;  // from TeacherCache::gather; may be empty
};

enum class Baseline {
  None,  // student loss only
  Fbkd,  // embedding loss + student loss
  Proc,  // full objective
};

LossWeights baseline_weights(Baseline baseline, const LossWeights& configured);

struct DistillState {
  model::EncoderConfig teacher_config;
  model::Encoder student;
  proto::PrototypeBank bank;
  augment::AugmentParams aug;
  std::optional<augment::AugmentParams> teacher_aug;
  HiddenProjector projector;
  model::Classifier proto_head;
  std::shared_ptr<model::Classifier> aug_classifier;  // the student's own head

  LayerMap map;
  LossWeights weights;
  HeadMatch match = HeadMatch::Subsample;
  std::vector<std::size_t> tap;
  bool use_proto_head = true;

  AdamW optimizer;

  DistillState(const harness::DistillConfig& config, const LossWeights& weights);

  // Student parameters first, then the distillation modules.
  ParamList trainable() const;
  // Everything a distillation checkpoint holds, with module prefixes.
  ParamList state_tensors() const;
  // Teacher layers the losses read: the mapped layers plus the tap.
  std::vector<std::size_t> teacher_layers_needed() const;
  bool classifier_shared() const { return aug_classifier.get() == student.classifier().get(); }
};

struct StepResult {
  harness::MetricsRow metrics;
  // Per-term values before weighting (0 for skipped terms).
  double emb = 0.0, pro = 0.0, stu = 0.0;
};

struct LossTerms {
  Tensor logits;                // student logits
  Tensor emb, pro, stu, total;  // emb/pro stay undefined when their weight is zero
};

// The weighted objective for one batch, built on the active tape.
LossTerms distill_losses(const DistillState& state, const Batch& batch);

// One joint optimizer step. Terms with zero weight are not evaluated.
StepResult distill_step(DistillState& state, const Batch& batch);

// Shuffled minibatches for one epoch; the last batch may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t samples, std::size_t batch_size, Rng& rng);

double accuracy(const model::Encoder& model, const data::SyntheticDataset& dataset, std::size_t batch_size = 250);

using RowSink = std::function<void(const harness::MetricsRow&)>;

struct TrainSettings {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  AdamWConfig optim;
  std::uint64_t shuffle_seed = 0;
};

// Plain supervised training of one encoder with cross-entropy.
std::vector<harness::MetricsRow> train_classifier(model::Encoder& model, const data::SyntheticDataset& train,
                                                  const data::SyntheticDataset& val, const TrainSettings& settings,
                                                  const RowSink& sink = {});

struct DistillHooks {
  RowSink row;
  // Called after each epoch's validation.
  std::function<void(std::size_t epoch, const DistillState&)> epoch_end;
};

// Full distillation run against a frozen teacher.
std::vector<harness::MetricsRow> run_distillation(DistillState& state, const model::Encoder& teacher,
                                                  const data::SyntheticDataset& train,
                                                  const data::SyntheticDataset& val, const TrainSettings& settings,
                                                  const DistillHooks& hooks = {});

}  // namespace prockd::distill
