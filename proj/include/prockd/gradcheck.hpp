#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "prockd/tensor.hpp"

namespace prockd {

struct GradcheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;  // number of scalar components compared
  bool passed = true;
  std::string worst;  // "input#k[flat]" of the worst component
};

struct GradcheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Denominator floor: components whose gradients are both below this are
  // judged on absolute error scaled by the floor.
  double abs_floor = 1e-6;
};

// Compares tape gradients of the scalar f() with respect to `inputs` against
// central finite differences. f must read the inputs through the given handles
// and be pure; the inputs are perturbed in place and restored.
GradcheckReport gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                          const GradcheckOptions& options = {});

GradcheckReport gradcheck(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                          const GradcheckOptions& options = {});

}  // namespace prockd
