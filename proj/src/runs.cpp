#include "prockd/runs.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "prockd/checkpoint.hpp"
#include "prockd/error.hpp"
#include "prockd/tape.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace prockd::harness {
namespace {

constexpr const char* kRoleTeacher = "teacher";
constexpr const char* kRoleStudent = "student";

ParamList with_meta(ParamList tensors, const char* role, const DistillConfig& config) {
  tensors.push_back({"meta.role", text_tensor(role)});
  tensors.push_back({"meta.config", text_tensor(config.to_text())});
  return tensors;
}

std::string meta_text(const ParamList& checkpoint, const char* name) {
  const Tensor* t = find_tensor(checkpoint, name);
  if (t == nullptr) fail(Errc::FormatError, std::string("checkpoint lacks ") + name);
  return tensor_text(*t);
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::IoError, "cannot write " + path);
  out << text;
  if (!out) fail(Errc::IoError, "write failed: " + path);
}

}  // namespace

data::SyntheticDataset load_split(const DistillConfig& config, Task task, data::Split split) {
  data::DatasetSpec spec;
  spec.class_ids = task == Task::Teacher ? config.data.teacher_classes : config.data.student_classes;
  spec.per_class = split == data::Split::Train ? config.data.train_per_class : config.data.val_per_class;
  spec.imbalance = split == data::Split::Train ? config.data.imbalance : 1.0;
  spec.noise = config.data.noise;
  spec.clutter = config.data.clutter;
  spec.seed = config.data.seed;
  spec.split = split;
  return data::generate_dataset(spec);
}

TaskData load_task(const DistillConfig& config, Task task) {
  return {load_split(config, task, data::Split::Train), load_split(config, task, data::Split::Val)};
}

distill::TrainSettings teacher_settings(const DistillConfig& config) {
  return {config.teacher_epochs, config.batch_size, config.optim,
          derive_seed(config.teacher_seed, distill::kShuffleStream)};
}

distill::TrainSettings student_settings(const DistillConfig& config) {
  return {config.epochs, config.batch_size, config.optim, derive_seed(config.seed, distill::kShuffleStream)};
}

TeacherRun train_teacher(const DistillConfig& config, const TaskData& data, const distill::RowSink& sink) {
  validate(config);
  TeacherRun run{model::Encoder(config.teacher, derive_seed(config.teacher_seed, distill::kInitStream)), {}};
  run.rows = distill::train_classifier(run.teacher, data.train, data.val, teacher_settings(config), sink);
  run.teacher.freeze();
  return run;
}

DistillRun run_distill(const DistillConfig& config, const model::Encoder& teacher, const TaskData& data,
                       distill::Baseline baseline, const distill::DistillHooks& hooks) {
  validate(config);
  const auto& tc = teacher.config();
  if (tc.layers != config.teacher.layers || tc.heads != config.teacher.heads ||
      tc.hidden_dim != config.teacher.hidden_dim || tc.patch_size != config.teacher.patch_size ||
      tc.class_token != config.teacher.class_token)
    fail(Errc::InvalidConfig, "teacher checkpoint does not match the [teacher] section");
  DistillRun run;
  run.state = std::make_unique<distill::DistillState>(config, distill::baseline_weights(baseline, config.weights));
  run.teacher_checksum_before = checksum(teacher.parameters());
  run.rows = distill::run_distillation(*run.state, teacher, data.train, data.val, student_settings(config), hooks);
  run.teacher_checksum_after = checksum(teacher.parameters());
  return run;
}

ParamList teacher_checkpoint(const model::Encoder& teacher, const DistillConfig& config) {
  return with_meta(prefixed(teacher.parameters(), "model."), kRoleTeacher, config);
}

ParamList student_checkpoint(const distill::DistillState& state, const DistillConfig& config) {
  return with_meta(state.state_tensors(), kRoleStudent, config);
}

LoadedModel load_model(const ParamList& checkpoint) {
  const std::string role = meta_text(checkpoint, "meta.role");
  DistillConfig config = parse_config(meta_text(checkpoint, "meta.config"));
  if (role == kRoleTeacher) {
    model::Encoder m(config.teacher, 0);
    restore(m.parameters(), checkpoint, "model.");
    m.freeze();
    return {role, std::move(config), std::move(m)};
  }
  if (role == kRoleStudent) {
    model::Encoder m(config.student, 0);
    restore(m.parameters(), checkpoint, "student.");
    m.freeze();
    return {role, std::move(config), std::move(m)};
  }
  fail(Errc::FormatError, "unknown checkpoint role '" + role + "'");
}

LoadedModel load_model(const std::string& path) { return load_model(load_checkpoint(path)); }

model::Encoder load_teacher(const std::string& path) {
  LoadedModel loaded = load_model(path);
  if (loaded.role != kRoleTeacher) fail(Errc::FormatError, path + " is not a teacher checkpoint");
  return std::move(loaded.model);
}

Task model_task(const LoadedModel& loaded) { return loaded.role == kRoleTeacher ? Task::Teacher : Task::Student; }

void write_embeddings_csv(const std::string& path, const model::Encoder& model,
                          const data::SyntheticDataset& dataset) {
  TapeScope no_tape(nullptr);
  const std::size_t dim = model.config().hidden_dim, chunk = 250;
  std::string out = "sample_id,label";
  for (std::size_t j = 0; j < dim; ++j) out += ",f" + std::to_string(j);
  out += '\n';
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += chunk) {
    idx.resize(std::min(chunk, dataset.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor pooled = model.forward(dataset.batch(idx)).pooled;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out += std::to_string(idx[i]) + ',' + std::to_string(dataset.labels[idx[i]]);
      for (std::size_t j = 0; j < dim; ++j) out += ',' + format_double(pooled[i * dim + j]);
      out += '\n';
    }
  }
  write_file(path, out);
}

std::string attention_svg(const model::ForwardResult& result, std::size_t sample) {
  constexpr std::size_t cell = 6, gap = 10, margin = 20;
  const auto& first = result.layers.front();
  const std::size_t l = first.tokens, heads = first.heads, layers = result.layers.size();
  const std::size_t side = l * cell;
  const std::size_t width = 2 * margin + heads * side + (heads - 1) * gap;
  const std::size_t height = 2 * margin + layers * side + (layers - 1) * gap;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t li = 0; li < layers; ++li) {
    const auto& layer = result.layers[li];
    for (std::size_t h = 0; h < heads; ++h) {
      const auto map = layer.attention.data().subspan(((sample * heads) + h) * l * l, l * l);
      const double peak = std::max(*std::max_element(map.begin(), map.end()), 1e-12);
      const std::size_t x0 = margin + h * (side + gap), y0 = margin + li * (side + gap);
      os << "<g id=\"layer" << li + 1 << "-head" << h + 1 << "\">\n";
      for (std::size_t q = 0; q < l; ++q) {
        for (std::size_t k = 0; k < l; ++k) {
          const int shade = 255 - static_cast<int>(std::lround(255.0 * map[q * l + k] / peak));
          os << "<rect x=\"" << x0 + k * cell << "\" y=\"" << y0 + q * cell << "\" width=\"" << cell
             << "\" height=\"" << cell << "\" fill=\"rgb(" << shade << ',' << shade << ",255)\"/>\n";
        }
      }
      os << "</g>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<std::string> write_attention_svgs(const std::string& dir, const model::Encoder& model,
                                              const data::SyntheticDataset& dataset, std::size_t samples) {
  TapeScope no_tape(nullptr);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(Errc::IoError, "cannot create " + dir + ": " + ec.message());
  std::vector<std::size_t> idx(std::min(samples, dataset.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const auto result = model.forward(dataset.batch(idx));
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::string path = (std::filesystem::path(dir) / ("attention_" + std::to_string(i) + ".svg")).string();
    write_file(path, attention_svg(result, i));
    paths.push_back(path);
  }
  return paths;
}

std::vector<AblationRow> ablate_prototypes(const DistillConfig& config, const model::Encoder& teacher,
                                           const TaskData& data, const std::vector<std::size_t>& counts) {
  if (counts.empty()) fail(Errc::InvalidConfig, "no prototype counts given");
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] < 1) fail(Errc::InvalidConfig, "prototype counts must be positive");
    if (i > 0 && counts[i] <= counts[i - 1]) fail(Errc::InvalidConfig, "prototype counts must be increasing");
  }
  std::vector<AblationRow> rows;
  for (auto n : counts) {
    DistillConfig c = config;
    c.prototypes = n;
    const auto run = run_distill(c, teacher, data, distill::Baseline::Proc);
    const auto& last = run.rows.back();
    rows.push_back({n, last.val_acc.value_or(0.0), last.loss_total});
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out = "prototypes,val_acc,loss_total\n";
  for (const auto& r : rows)
    out += std::to_string(r.prototypes) + ',' + format_double(r.val_acc) + ',' + format_double(r.final_loss) + '\n';
  return out;
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace prockd::harness
