#pragma once

// Whole runs as the command-line tool performs them: datasets from a config,
// teacher training, distillation, checkpoints with embedded metadata,
// evaluation dumps and the prototype-count sweep.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "prockd/config.hpp"
#include "prockd/dataset.hpp"
#include "prockd/distill.hpp"
#include "prockd/encoder.hpp"
#include "prockd/metrics.hpp"
#include "prockd/params.hpp"

namespace prockd::harness {

enum class Task { Teacher, Student };

struct TaskData {
  data::SyntheticDataset train;
  data::SyntheticDataset val;
};

TaskData load_task(const DistillConfig& config, Task task);
data::SyntheticDataset load_split(const DistillConfig& config, Task task, data::Split split);

distill::TrainSettings teacher_settings(const DistillConfig& config);
distill::TrainSettings student_settings(const DistillConfig& config);

struct TeacherRun {
  model::Encoder teacher;
  std::vector<MetricsRow> rows;
};

TeacherRun train_teacher(const DistillConfig& config, const TaskData& data, const distill::RowSink& sink = {});

struct DistillRun {
  std::unique_ptr<distill::DistillState> state;
  std::vector<MetricsRow> rows;
  std::uint64_t teacher_checksum_before = 0;
  std::uint64_t teacher_checksum_after = 0;
};

DistillRun run_distill(const DistillConfig& config, const model::Encoder& teacher, const TaskData& data,
                       distill::Baseline baseline, const distill::DistillHooks& hooks = {});

// Checkpoint contents. Model tensors carry a "model." prefix (teacher) or the
// distillation state prefixes (student); "meta.role" and "meta.config" hold
// the role and the config text.
ParamList teacher_checkpoint(const model::Encoder& teacher, const DistillConfig& config);
ParamList student_checkpoint(const distill::DistillState& state, const DistillConfig& config);

struct LoadedModel {
  std::string role;  // "teacher" or "student"
  DistillConfig config;
  model::Encoder model;
};

// Throws Errc::FormatError when metadata is missing or the role is unknown.
LoadedModel load_model(const ParamList& checkpoint);
LoadedModel load_model(const std::string& path);
// A frozen teacher; throws Errc::FormatError for other roles.
model::Encoder load_teacher(const std::string& path);

Task model_task(const LoadedModel& loaded);

// Columns sample_id, label, then one column per pooled feature.
void write_embeddings_csv(const std::string& path, const model::Encoder& model,
                          const data::SyntheticDataset& dataset);

// One SVG per sample: a layers x heads grid of attention heatmaps.
std::vector<std::string> write_attention_svgs(const std::string& dir, const model::Encoder& model,
                                              const data::SyntheticDataset& dataset, std::size_t samples = 4);
std::string attention_svg(const model::ForwardResult& result, std::size_t sample);

struct AblationRow {
  std::size_t prototypes = 0;
  double val_acc = 0.0;
  double final_loss = 0.0;
};

// One full distillation per count; counts must be strictly increasing.
std::vector<AblationRow> ablate_prototypes(const DistillConfig& config, const model::Encoder& teacher,
                                           const TaskData& data, const std::vector<std::size_t>& counts);
std::string ablation_table(const std::vector<AblationRow>& rows);

// Keeps large tensor buffers in the heap instead of fresh mappings per
// allocation. A no-op outside glibc.
void tune_allocator();

}  // namespace prockd::harness
