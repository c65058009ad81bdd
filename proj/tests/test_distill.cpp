#include <gtest/gtest.h>

#include <numeric>

#include "oracles.hpp"
#include "prockd/distill.hpp"
#include "prockd/error.hpp"
#include "prockd/metrics.hpp"
#include "prockd/runs.hpp"
#include "test_util.hpp"

using namespace prockd;
using namespace prockd::distill;

namespace {

struct Fixture {
  harness::DistillConfig config = testutil::tiny_config();
  harness::TaskData teacher_data = harness::load_task(config, harness::Task::Teacher);
  harness::TaskData student_data = harness::load_task(config, harness::Task::Student);
  model::Encoder teacher = harness::train_teacher(config, teacher_data).teacher;
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST(Distill, BaselineWeights) {
  const LossWeights w{0.3, 1.0, 1.0};
  const auto none = baseline_weights(Baseline::None, w);
  EXPECT_EQ(none.emb, 0.0);
  EXPECT_EQ(none.pro, 0.0);
  EXPECT_EQ(none.stu, 1.0);
  const auto fbkd = baseline_weights(Baseline::Fbkd, w);
  EXPECT_EQ(fbkd.emb, 0.3);
  EXPECT_EQ(fbkd.pro, 0.0);
  const auto proc = baseline_weights(Baseline::Proc, w);
  EXPECT_EQ(proc.pro, 1.0);
}

TEST(Distill, EpochBatchesCoverEverySampleOnce) {
  Rng rng(1);
  const auto batches = epoch_batches(70, 32, rng);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches.back().size(), 6u);
  std::vector<std::size_t> all;
  for (const auto& b : batches) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(70);
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(all, expect);
}

TEST(Distill, TeacherIsFrozenAfterTraining) {
  auto& f = fixture();
  EXPECT_TRUE(f.teacher.frozen());
}

TEST(Distill, TeacherCacheMatchesDirectForward) {
  auto& f = fixture();
  const std::vector<std::size_t> layers{1, 2};
  TeacherCache cache(f.teacher, f.student_data.train, layers);
  const std::vector<std::size_t> idx{7, 0, 33};
  const auto cached = cache.gather(idx);
  const auto direct = f.teacher.forward(f.student_data.train.batch(idx));
  ASSERT_EQ(cached.size(), direct.layers.size());
  for (std::size_t i = 0; i < cached.size(); ++i) {
    EXPECT_EQ(oracle::max_abs_diff(cached[i].hidden.data(), direct.layers[i].hidden.data()), 0.0);
    EXPECT_EQ(oracle::max_abs_diff(cached[i].attention.data(), direct.layers[i].attention.data()), 0.0);
  }
}

TEST(Distill, ZeroWeightObjectiveEqualsPlainTraining) {
  auto& f = fixture();
  auto run = harness::run_distill(f.config, f.teacher, f.student_data, Baseline::None);
  model::Encoder student(f.config.student, derive_seed(f.config.seed, kInitStream));
  const auto rows = train_classifier(student, f.student_data.train, f.student_data.val,
                                     harness::student_settings(f.config));
  EXPECT_EQ(harness::metrics_csv(run.rows), harness::metrics_csv(rows));
  EXPECT_EQ(checksum(run.state->student.parameters()), checksum(student.parameters()));
}

TEST(Distill, RunsAreDeterministic) {
  auto& f = fixture();
  const auto a = harness::run_distill(f.config, f.teacher, f.student_data, Baseline::Proc);
  const auto b = harness::run_distill(f.config, f.teacher, f.student_data, Baseline::Proc);
  EXPECT_EQ(harness::metrics_csv(a.rows), harness::metrics_csv(b.rows));
  EXPECT_EQ(checksum(a.state->state_tensors()), checksum(b.state->state_tensors()));
}

TEST(Distill, TeacherUntouchedAndClassifierShared) {
  auto& f = fixture();
  for (bool teacher_aug : {false, true}) {
    auto config = f.config;
    config.teacher_augment = teacher_aug;
    const auto before = checksum(f.teacher.parameters());
    std::size_t epochs = 0;
    DistillHooks hooks;
    hooks.epoch_end = [&](std::size_t, const DistillState& s) {
      EXPECT_EQ(checksum(f.teacher.parameters()), before);
      EXPECT_TRUE(s.classifier_shared());
      ++epochs;
    };
    const auto run = harness::run_distill(config, f.teacher, f.student_data, Baseline::Proc, hooks);
    EXPECT_EQ(epochs, config.epochs);
    EXPECT_EQ(run.teacher_checksum_before, run.teacher_checksum_after);
    EXPECT_EQ(run.teacher_checksum_before, before);
  }
}

TEST(Distill, MetricsRowsPerStep) {
  auto& f = fixture();
  const auto run = harness::run_distill(f.config, f.teacher, f.student_data, Baseline::Proc);
  const std::size_t steps_per_epoch = (f.student_data.train.size() + f.config.batch_size - 1) / f.config.batch_size;
  ASSERT_EQ(run.rows.size(), steps_per_epoch * f.config.epochs);
  for (std::size_t i = 0; i < run.rows.size(); ++i) {
    const auto& r = run.rows[i];
    EXPECT_EQ(r.step, i + 1);
    EXPECT_EQ(r.val_acc.has_value(), (i + 1) % steps_per_epoch == 0);
    EXPECT_GT(r.loss_emb, 0.0);
    EXPECT_GT(r.loss_pro, 0.0);
    EXPECT_GT(r.loss_stu, 0.0);
    EXPECT_NEAR(r.loss_total, 0.3 * r.loss_emb + r.loss_pro + r.loss_stu, 1e-9 * r.loss_total);
  }
}

TEST(Distill, UnfrozenTeacherRejected) {
  auto& f = fixture();
  model::Encoder live(f.config.teacher, 3);
  EXPECT_THROW(harness::run_distill(f.config, live, f.student_data, Baseline::Proc), Error);
}
