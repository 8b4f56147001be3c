#include "odssd/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "odssd/error.hpp"

namespace odssd {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

template <typename T>
Tensor<T>::Tensor() : impl_(std::make_shared<Impl>()) {
  impl_->shape = {0};
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
  const auto n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->values.assign(static_cast<std::size_t>(n), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
  const auto n = shape_numel(shape);
  if (static_cast<std::int64_t>(values.size()) != n) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " + std::to_string(n) + " values, got " +
                     std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->values.assign(values.begin(), values.end());
}

template <typename T>
T Tensor<T>::item() const {
  if (impl_->values.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(impl_->shape));
  return impl_->values[0];
}

template <typename T>
T& Tensor<T>::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
  const auto& s = impl_->shape;
  return impl_->values[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
}

template <typename T>
T Tensor<T>::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
  const auto& s = impl_->shape;
  return impl_->values[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
}

template <typename T>
std::span<T> Tensor<T>::grad() const {
  if (impl_->grad.size() != impl_->values.size()) impl_->grad.assign(impl_->values.size(), T(0));
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  auto impl = std::make_shared<Impl>(*impl_);
  return Tensor(std::move(impl));
}

template <typename T>
BackwardReport Graph<T>::backward(Tensor<T>& loss, std::span<Tensor<T>> parameters) {
  if (loss.numel() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  for (auto& p : parameters) p.clear_grad();
  loss.grad()[0] = T(1);
  BackwardReport report;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    (*it)();
    ++report.nodes_run;
  }
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    if (!parameters[i].has_grad()) {
      parameters[i].grad();
      report.unreached.push_back(i);
    }
  }
  return report;
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace odssd
