#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace prockd {

using Shape = std::vector<std::size_t>;

class Tape;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Storage behind a Tensor handle. Shared by every handle copy; gradients of
// intermediate values live here for the lifetime of the tape that produced them.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::uint64_t id = 0;
  const Tape* tape = nullptr;  // tape that recorded the op producing this value

  std::span<double> grad_buffer();
};

// Dense row-major float64 tensor with reference semantics: copies of a Tensor
// alias the same storage. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from_impl(std::shared_ptr<TensorImpl> impl);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Direct write access; only for leaves (parameters, inputs) outside a tape.
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double operator[](std::size_t flat) const { return impl_->data[flat]; }
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool value);
  bool has_grad() const { return !impl_->grad.empty(); }
  // Gradient view; an all-zero vector of the right size if nothing accumulated.
  std::vector<double> grad() const;
  void zero_grad() { impl_->grad.clear(); }

  std::uint64_t id() const { return impl_->id; }
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

  Tensor clone() const;  // deep copy, detached, requires_grad=false
  Tensor detach() const { return clone(); }

  TensorImpl& impl() const { return *impl_; }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

}  // namespace prockd
