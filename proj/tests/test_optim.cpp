#include <gtest/gtest.h>

#include <cmath>

#include "prockd/ops.hpp"
#include "prockd/optim.hpp"
#include "prockd/tape.hpp"

using namespace prockd;

TEST(AdamW, TwoStepsMatchHandComputation) {
  Tensor w({2}, {1.0, -2.0});
  w.set_requires_grad(true);
  AdamWConfig cfg{0.1, 0.9, 0.999, 1e-8, 0.05};
  AdamW opt({{"w", w}}, cfg);
  double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {1.0, -2.0};
  for (int t = 1; t <= 2; ++t) {
    opt.zero_grad();
    Tape tape;
    {
      TapeScope scope(tape);
      const Tensor loss = sum(mul(w, w));  // grad 2w
      tape.backward(loss);
    }
    opt.step();
    for (int i = 0; i < 2; ++i) {
      const double g = 2 * x[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      x[i] -= 0.1 * (mh / (std::sqrt(vh) + 1e-8) + 0.05 * x[i]);
    }
    EXPECT_NEAR(w[0], x[0], 1e-14);
    EXPECT_NEAR(w[1], x[1], 1e-14);
  }
  EXPECT_EQ(opt.steps(), 2u);
}

TEST(AdamW, FrozenParametersUntouched) {
  Tensor a({1}, {1.0}), b({1}, {1.0});
  a.set_requires_grad(true);
  AdamW opt({{"a", a}, {"b", b}}, {});
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(mul(a, b)));
  }
  opt.step();
  EXPECT_NE(a[0], 1.0);
  EXPECT_EQ(b[0], 1.0);
}

TEST(AdamW, GradNorm) {
  Tensor a({2}, {3.0, 4.0});
  a.set_requires_grad(true);
  AdamW opt({{"a", a}}, {});
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(a));
  }
  EXPECT_NEAR(opt.grad_norm(), std::sqrt(2.0), 1e-15);
  opt.zero_grad();
  EXPECT_EQ(opt.grad_norm(), 0.0);
}
