#include "prockd/tape.hpp"

#include "prockd/error.hpp"

namespace prockd {
namespace {

thread_local Tape* g_active = nullptr;

}  // namespace

void Tape::record(std::string_view op, std::vector<std::shared_ptr<TensorImpl>> inputs,
                  const Tensor& output, Rule rule) {
  output.impl().tape = this;
  nodes_.push_back(Node{op, std::move(inputs), output.impl_ptr(), std::move(rule)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) fail(Errc::NotScalar, "backward on shape " + shape_str(loss.shape()));
  if (loss.impl().tape != this || !loss.requires_grad())
    fail(Errc::DetachedFromTape, "loss was not produced on this tape");
  loss.impl().grad_buffer()[0] += 1.0;
  visits_ = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    ++visits_;
    // Outputs that received no gradient are unreachable from the loss.
    if (it->output->grad.empty()) continue;
    it->backward(*it->output);
  }
}

void Tape::clear() {
  nodes_.clear();
  visits_ = 0;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active) { g_active = &tape; }

TapeScope::TapeScope(std::nullptr_t) : previous_(g_active) { g_active = nullptr; }

TapeScope::~TapeScope() { g_active = previous_; }

Tape* active_tape() { return g_active; }

void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

}  // namespace prockd
