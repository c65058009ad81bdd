#pragma once

// Finite-difference checks of every differentiable composite, grouped by
// module and repeated over independent random instances.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "prockd/gradcheck.hpp"

namespace prockd::check {

struct CompositeResult {
  std::string module;
  std::string name;
  std::size_t instances = 0;
  std::size_t rejected = 0;  // draws discarded for sitting near a relu kink
  double max_rel_error = 0.0;
  std::string worst;  // "seed S input#k[i]"
  bool passed = true;
};

struct SuiteOptions {
  std::size_t instances = 20;
  std::uint64_t seed = 1;
  // Draws whose relu inputs come closer than this to zero are redrawn.
  double kink_margin = 1e-3;
  GradcheckOptions gradcheck;
};

std::vector<std::string> suite_modules();  // tensor, encoder, prototype, augment, loss

// `module` is "all" or one of suite_modules(). Throws Errc::InvalidConfig otherwise.
std::vector<CompositeResult> run_gradcheck_suite(std::string_view module, const SuiteOptions& options = {});

bool all_passed(const std::vector<CompositeResult>& results);

}  // namespace prockd::check
