#pragma once

#include "prockd/config.hpp"

namespace testutil {

// Small end-to-end config: a 2-layer teacher, a 1-layer student, 24/10
// samples per class, 2 epochs. Runs in well under a second.
inline prockd::harness::DistillConfig tiny_config() {
  prockd::harness::DistillConfig c;
  c.teacher.layers = 2;
  c.teacher.heads = 2;
  c.teacher.hidden_dim = 16;
  c.student.layers = 1;
  c.student.heads = 1;
  c.student.hidden_dim = 8;
  c.prototypes = 6;
  c.tap = {2};
  c.attn_dim = 8;
  c.batch_size = 16;
  c.epochs = 2;
  c.teacher_epochs = 2;
  c.data.train_per_class = 24;
  c.data.val_per_class = 10;
  return c;
}

}  // namespace testutil
