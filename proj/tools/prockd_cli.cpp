// prockd: train a teacher, distill a cross-task student, evaluate, and run
// the gradient and prototype-count checks.
//
// Exit codes: 0 success, 1 validation or I/O error, 2 numerical failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "prockd/checkpoint.hpp"
#include "prockd/config.hpp"
#include "prockd/error.hpp"
#include "prockd/gradcheck_suite.hpp"
#include "prockd/metrics.hpp"
#include "prockd/runs.hpp"

namespace {

using namespace prockd;

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitNumeric = 2;

int exit_code(Errc code) { return code == Errc::NonFinite ? kExitNumeric : kExitInvalid; }

harness::DistillConfig config_or_default(const std::string& path) {
  if (path.empty()) {
    harness::DistillConfig c;
    harness::validate(c);
    return c;
  }
  return harness::load_config(path);
}

void log_epoch(const char* what, const harness::MetricsRow& row) {
  if (!row.val_acc) return;
  std::fprintf(stderr, "%s epoch %zu loss %.4f train_acc %.4f val_acc %.4f\n", what, row.epoch, row.loss_total,
               row.train_acc, *row.val_acc);
}

int cmd_train_teacher(const std::string& config_path, const std::string& out, const std::string& metrics) {
  const auto config = harness::load_config(config_path);
  const auto data = harness::load_task(config, harness::Task::Teacher);
  auto run = harness::train_teacher(config, data, [](const auto& row) { log_epoch("teacher", row); });
  harness::save_checkpoint(out, harness::teacher_checkpoint(run.teacher, config));
  if (!metrics.empty()) harness::write_metrics_csv(metrics, run.rows);
  std::printf("val_acc %s\n", harness::format_double(*run.rows.back().val_acc).c_str());
  return kExitOk;
}

int cmd_distill(const std::string& config_path, const std::string& teacher_path, const std::string& out,
                const std::string& metrics, const std::string& baseline) {
  const auto config = harness::load_config(config_path);
  distill::Baseline mode = distill::Baseline::Proc;
  if (baseline == "none") mode = distill::Baseline::None;
  else if (baseline == "fbkd") mode = distill::Baseline::Fbkd;
  const auto teacher = harness::load_teacher(teacher_path);
  const auto data = harness::load_task(config, harness::Task::Student);
  distill::DistillHooks hooks;
  hooks.row = [](const auto& row) { log_epoch("student", row); };
  auto run = harness::run_distill(config, teacher, data, mode, hooks);
  if (run.teacher_checksum_after != run.teacher_checksum_before)
    fail(Errc::NonFinite, "teacher parameters changed during distillation");
  harness::save_checkpoint(out, harness::student_checkpoint(*run.state, config));
  harness::write_metrics_csv(metrics, run.rows);
  std::printf("val_acc %s\n", harness::format_double(*run.rows.back().val_acc).c_str());
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& split, const std::string& embeddings,
             const std::string& attention) {
  const auto loaded = harness::load_model(ckpt);
  const auto dataset = harness::load_split(loaded.config, harness::model_task(loaded),
                                           split == "train" ? data::Split::Train : data::Split::Val);
  std::printf("role %s\nsplit %s\nsamples %zu\naccuracy %s\n", loaded.role.c_str(), split.c_str(), dataset.size(),
              harness::format_double(distill::accuracy(loaded.model, dataset)).c_str());
  if (!embeddings.empty()) harness::write_embeddings_csv(embeddings, loaded.model, dataset);
  if (!attention.empty())
    for (const auto& path : harness::write_attention_svgs(attention, loaded.model, dataset))
      std::printf("attention %s\n", path.c_str());
  return kExitOk;
}

int cmd_gradcheck(const std::string& module) {
  const auto results = check::run_gradcheck_suite(module);
  for (const auto& r : results)
    std::printf("%-5s %-10s %-24s instances %zu  max_rel_error %.3e%s%s\n", r.passed ? "PASS" : "FAIL",
                r.module.c_str(), r.name.c_str(), r.instances, r.max_rel_error, r.passed ? "" : "  worst ",
                r.passed ? "" : r.worst.c_str());
  const bool ok = check::all_passed(results);
  std::printf("%s\n", ok ? "all composites passed" : "gradient check failed");
  return ok ? kExitOk : kExitNumeric;
}

int cmd_ablate(const std::string& counts_text, const std::string& config_path, const std::string& teacher_path,
               const std::string& out) {
  const auto counts = harness::parse_index_list(counts_text);
  const auto config = config_or_default(config_path);
  std::optional<model::Encoder> teacher;
  if (!teacher_path.empty()) {
    teacher.emplace(harness::load_teacher(teacher_path));
  } else {
    std::fprintf(stderr, "no --teacher given; training one from the config\n");
    teacher.emplace(harness::train_teacher(config, harness::load_task(config, harness::Task::Teacher)).teacher);
  }
  const auto data = harness::load_task(config, harness::Task::Student);
  const auto table = harness::ablation_table(harness::ablate_prototypes(config, *teacher, data, counts));
  std::fputs(table.c_str(), stdout);
  if (!out.empty()) {
    std::ofstream file(out, std::ios::binary);
    file << table;
    if (!file) fail(Errc::IoError, "cannot write " + out);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  harness::tune_allocator();
  CLI::App app{"Prototype-guided cross-task knowledge distillation"};
  app.require_subcommand(1);

  std::string config, out, metrics, teacher, baseline = "proc", ckpt, split = "val", embeddings, attention;
  std::string module = "all", counts;

  auto* tt = app.add_subcommand("train-teacher", "Train the teacher on its own task and save it");
  tt->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  tt->add_option("--out", out, "Output checkpoint")->required();
  tt->add_option("--metrics", metrics, "Optional metrics CSV");

  auto* ds = app.add_subcommand("distill", "Distill a student from a frozen teacher checkpoint");
  ds->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  ds->add_option("--teacher", teacher, "Teacher checkpoint")->required()->check(CLI::ExistingFile);
  ds->add_option("--out", out, "Output checkpoint")->required();
  ds->add_option("--metrics", metrics, "Metrics CSV")->required();
  ds->add_option("--baseline", baseline, "proc (full objective), fbkd (embedding loss only) or none")
      ->check(CLI::IsMember({"proc", "fbkd", "none"}));

  auto* ev = app.add_subcommand("eval", "Accuracy of a checkpoint, with optional dumps");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}));
  ev->add_option("--emit-embeddings", embeddings, "Write pooled features as CSV");
  ev->add_option("--emit-attention", attention, "Write attention heatmaps (SVG) into this directory");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc->add_option("--module", module, "all, tensor, encoder, prototype, augment or loss")
      ->check(CLI::IsMember({"all", "tensor", "encoder", "prototype", "augment", "loss"}));

  auto* ab = app.add_subcommand("ablate-prototypes", "Distill once per prototype count");
  ab->add_option("--counts", counts, "Comma-separated increasing counts, e.g. 24,48,72,96")->required();
  ab->add_option("--config", config, "Config file (defaults when omitted)")->check(CLI::ExistingFile);
  ab->add_option("--teacher", teacher, "Teacher checkpoint (trained from the config when omitted)")
      ->check(CLI::ExistingFile);
  ab->add_option("--out", out, "Also write the table to this CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*tt) return cmd_train_teacher(config, out, metrics);
    if (*ds) return cmd_distill(config, teacher, out, metrics, baseline);
    if (*ev) return cmd_eval(ckpt, split, embeddings, attention);
    if (*gc) return cmd_gradcheck(module);
    if (*ab) return cmd_ablate(counts, config, teacher, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  }
  return kExitInvalid;
}
