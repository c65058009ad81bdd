#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "prockd/tensor.hpp"

namespace prockd {

// Records differentiable operations in execution order. Ops record onto the
// tape installed by the innermost TapeScope on the calling thread, and only
// when at least one input requires a gradient.
class Tape {
 public:
  using Rule = std::function<void(TensorImpl& out)>;

  struct Node {
    std::string_view op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    Rule backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::string_view op, std::vector<std::shared_ptr<TensorImpl>> inputs,
              const Tensor& output, Rule rule);

  // Seeds d(loss)/d(loss) = 1 and runs every node's rule once, newest first.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  // Node rules executed by the most recent backward().
  std::size_t visits() const { return visits_; }
  void clear();

 private:
  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  // Installs no tape: ops inside evaluate without recording.
  explicit TapeScope(std::nullptr_t);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Tape installed on this thread, or nullptr.
Tape* active_tape();

void backward(const Tensor& loss, Tape& tape);

}  // namespace prockd
