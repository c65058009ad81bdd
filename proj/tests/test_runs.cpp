#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "prockd/checkpoint.hpp"
#include "prockd/distill.hpp"
#include "prockd/error.hpp"
#include "prockd/runs.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace prockd;
using namespace prockd::harness;

namespace {

struct Fixture {
  DistillConfig config = testutil::tiny_config();
  TaskData teacher_data = load_task(config, Task::Teacher);
  TaskData student_data = load_task(config, Task::Student);
  model::Encoder teacher = train_teacher(config, teacher_data).teacher;
  fs::path dir = fs::temp_directory_path() / "prockd_test_runs";
  Fixture() { fs::create_directories(dir); }
  ~Fixture() { fs::remove_all(dir); }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Runs, TaskSplitsUseTheirClassSets) {
  auto& f = fixture();
  EXPECT_EQ(f.teacher_data.train.class_set, f.config.data.teacher_classes);
  EXPECT_EQ(f.student_data.val.class_set, f.config.data.student_classes);
  EXPECT_EQ(f.student_data.val.size(), 5 * f.config.data.val_per_class);
}

TEST(Runs, TeacherCheckpointReloadsExactly) {
  auto& f = fixture();
  const auto path = (f.dir / "teacher.ckpt").string();
  save_checkpoint(path, teacher_checkpoint(f.teacher, f.config));
  const auto loaded = load_model(path);
  EXPECT_EQ(loaded.role, "teacher");
  EXPECT_EQ(model_task(loaded), Task::Teacher);
  EXPECT_EQ(loaded.config.to_text(), f.config.to_text());
  EXPECT_EQ(checksum(loaded.model.parameters()), checksum(f.teacher.parameters()));
  EXPECT_EQ(distill::accuracy(loaded.model, f.teacher_data.val), distill::accuracy(f.teacher, f.teacher_data.val));
  EXPECT_TRUE(load_teacher(path).frozen());
}

TEST(Runs, StudentCheckpointReloadsExactly) {
  auto& f = fixture();
  auto run = run_distill(f.config, f.teacher, f.student_data, distill::Baseline::Proc);
  const auto path = (f.dir / "student.ckpt").string();
  save_checkpoint(path, student_checkpoint(*run.state, f.config));
  const auto loaded = load_model(path);
  EXPECT_EQ(loaded.role, "student");
  EXPECT_EQ(model_task(loaded), Task::Student);
  EXPECT_EQ(checksum(loaded.model.parameters()), checksum(run.state->student.parameters()));
  EXPECT_EQ(distill::accuracy(loaded.model, f.student_data.val),
            distill::accuracy(run.state->student, f.student_data.val));
  EXPECT_THROW(load_teacher(path), Error);

  const std::vector<std::size_t> probe{0, 3, 9};
  const Tensor batch = f.student_data.val.batch(probe);
  const Tensor a = loaded.model.forward(batch).logits, b = run.state->student.forward(batch).logits;
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Runs, MismatchedTeacherRejected) {
  auto& f = fixture();
  auto config = f.config;
  config.teacher.hidden_dim = 32;
  EXPECT_THROW(run_distill(config, f.teacher, f.student_data, distill::Baseline::Proc), Error);
}

TEST(Runs, EmbeddingDump) {
  auto& f = fixture();
  const auto path = f.dir / "emb.csv";
  write_embeddings_csv(path.string(), f.teacher, f.teacher_data.val);
  std::istringstream in(slurp(path));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("sample_id,label,f0,", 0), 0u);
  EXPECT_NE(line.find(",f15"), std::string::npos);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 17);
  }
  EXPECT_EQ(rows, f.teacher_data.val.size());
}

TEST(Runs, AttentionDump) {
  auto& f = fixture();
  const auto files = write_attention_svgs(f.dir.string(), f.teacher, f.teacher_data.val, 3);
  ASSERT_EQ(files.size(), 3u);
  for (const auto& file : files) {
    const auto svg = slurp(file);
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
  }
}

TEST(Runs, PrototypeAblation) {
  auto& f = fixture();
  const auto rows = ablate_prototypes(f.config, f.teacher, f.student_data, {2, 6});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].prototypes, 2u);
  // The row for the configured count repeats a plain run.
  const auto run = run_distill(f.config, f.teacher, f.student_data, distill::Baseline::Proc);
  EXPECT_EQ(rows[1].val_acc, run.rows.back().val_acc.value());
  EXPECT_EQ(rows[1].final_loss, run.rows.back().loss_total);
  const auto table = ablation_table(rows);
  EXPECT_EQ(table.rfind("prototypes,val_acc,loss_total\n2,", 0), 0u);
  EXPECT_THROW(ablate_prototypes(f.config, f.teacher, f.student_data, {6, 2}), Error);
  EXPECT_THROW(ablate_prototypes(f.config, f.teacher, f.student_data, {0, 2}), Error);
}
