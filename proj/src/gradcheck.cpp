#include "prockd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "prockd/error.hpp"
#include "prockd/tape.hpp"

namespace prockd {

GradcheckReport gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                          const GradcheckOptions& options) {
  std::vector<bool> previous;
  for (auto& t : inputs) {
    previous.push_back(t.requires_grad());
    t.zero_grad();
    t.set_requires_grad(true);
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    tape.backward(loss);
    for (auto& t : inputs) {
      analytic.push_back(t.grad());
      t.zero_grad();
    }
  }

  GradcheckReport report;
  TapeScope no_tape(nullptr);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + options.eps;
      const double up = f().item();
      data[i] = saved - options.eps;
      const double down = f().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double rel = abs_err / denom;
      ++report.checked;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = "input#" + std::to_string(k) + "[" + std::to_string(i) + "]";
      }
    }
  }
  report.passed = report.max_rel_error <= options.tol;
  for (std::size_t k = 0; k < inputs.size(); ++k) inputs[k].set_requires_grad(previous[k]);
  return report;
}

GradcheckReport gradcheck(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                          const GradcheckOptions& options) {
  return gradcheck([&f, x] { return f(x); }, {x}, options);
}

}  // namespace prockd
