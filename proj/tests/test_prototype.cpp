#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "prockd/error.hpp"
#include "prockd/ops.hpp"
#include "prockd/prototype.hpp"

using namespace prockd;

TEST(Prototype, DescriptorsMatchOracle) {
  Rng rng(41);
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 1 + rng.index(4), d = 1 + rng.index(4), h = 1 + rng.index(3), w = 1 + rng.index(3);
    const std::size_t b = 1 + rng.index(3), hw = h * w;
    auto bank = proto::PrototypeBank::create(n, d, 100 + inst);
    Tensor f = randn({b, d, h, w}, 1.0, rng);
    const Tensor v = proto::descriptors(bank, f);
    ASSERT_EQ(v.shape(), (Shape{b, n, d}));
    for (std::size_t s = 0; s < b; ++s) {
      const auto ref = oracle::descriptors(bank, f.data().subspan(s * d * hw, d * hw), hw);
      EXPECT_LT(oracle::max_abs_diff(v.data().subspan(s * n * d, n * d), ref), 1e-10);
    }
  }
}

TEST(Prototype, SinglePrototypeClosedForm) {
  Rng rng(42);
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t d = 1 + rng.index(4), h = 1 + rng.index(3), w = 1 + rng.index(3), hw = h * w;
    auto bank = proto::PrototypeBank::create(1, d, inst);
    Tensor f = randn({d, h, w}, 1.0, rng);
    const Tensor v = proto::descriptors(bank, f);
    for (std::size_t c = 0; c < d; ++c) {
      double expect = 0.0;
      for (std::size_t j = 0; j < hw; ++j) expect += f[c * hw + j] - bank.prototypes[c];
      EXPECT_NEAR(v[c], expect, 1e-12);
    }
  }
}

TEST(Prototype, AggregateMatchesOracle) {
  Rng rng(43);
  for (int inst = 0; inst < 30; ++inst) {
    const std::size_t n = 1 + rng.index(4), d = 1 + rng.index(4), h = 1 + rng.index(3), w = 1 + rng.index(3);
    const std::size_t b = 1 + rng.index(2), hw = h * w;
    auto bank = proto::PrototypeBank::create(n, d, 200 + inst);
    Tensor f = randn({b, d, h, w}, 1.0, rng);
    const Tensor desc = proto::descriptors(bank, f);
    const Tensor out = proto::aggregate(bank, f, desc);
    for (std::size_t s = 0; s < b; ++s) {
      const auto ref = oracle::aggregate(bank, f.data().subspan(s * d * hw, d * hw),
                                         desc.data().subspan(s * n * d, n * d), hw);
      EXPECT_LT(oracle::max_abs_diff(out.data().subspan(s * d * hw, d * hw), ref), 1e-10);
    }
  }
}

TEST(Prototype, ShapePreservedAndAssignmentsNormalized) {
  Rng rng(44);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 1 + rng.index(8), d = 1 + rng.index(8), h = 1 + rng.index(5), w = 1 + rng.index(5);
    const bool batched = rng.index(2) == 0;
    auto bank = proto::PrototypeBank::create(n, d, inst);
    Tensor f = batched ? randn({1 + rng.index(3), d, h, w}, 1.0, rng) : randn({d, h, w}, 1.0, rng);
    const auto out = proto::prototype_forward(bank, f);
    EXPECT_EQ(out.output.shape(), f.shape());
    const Tensor a = softmax(proto::assignment_logits(bank, f), batched ? 2 : 1);
    for (std::size_t r = 0; r < a.numel() / n; ++r) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += a[r * n + i];
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
    for (double v : out.output.data()) EXPECT_GE(v, 0.0);
  }
}

TEST(Prototype, PooledIsSpatialMean) {
  Rng rng(45);
  auto bank = proto::PrototypeBank::create(3, 4, 1);
  Tensor f = randn({2, 4, 3, 3}, 1.0, rng);
  const auto out = proto::prototype_forward(bank, f);
  ASSERT_EQ(out.pooled.shape(), (Shape{2, 4}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 4; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < 9; ++j) s += out.output[(b * 4 + c) * 9 + j] / 9.0;
      EXPECT_NEAR(out.pooled.at({b, c}), s, 1e-12);
    }
}

TEST(Prototype, RejectsMismatchedFeature) {
  auto bank = proto::PrototypeBank::create(3, 4, 1);
  EXPECT_THROW(proto::descriptors(bank, Tensor::zeros({2, 5, 3, 3})), Error);
  EXPECT_THROW(proto::descriptors(bank, Tensor::zeros({4, 9})), Error);
  EXPECT_THROW(proto::PrototypeBank::create(0, 4, 1), Error);
}
