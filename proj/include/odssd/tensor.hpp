#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace odssd {

using Shape = std::vector<std::int64_t>;

/// Cache-line aligned allocator. Vectorized reductions peel up to the first
/// aligned element, so a buffer's summation order would otherwise follow its
/// heap address and training would not be bit-reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major N-dimensional buffer with an optional gradient buffer.
///
/// A Tensor is a handle: copies share the same storage, so the reverse pass
/// can reach every tensor an operator touched. Use clone() for a deep copy.
/// Detection maps use N,C,H,W order. T is float for training and inference,
/// double for gradient checks.
template <typename T>
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->values.size()); }

  std::span<T> values() { return impl_->values; }
  std::span<const T> values() const { return impl_->values; }
  T* data() { return impl_->values.data(); }
  const T* data() const { return impl_->values.data(); }
  T item() const;

  /// Element access for rank-4 tensors.
  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w);
  T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  /// True once a reverse pass has deposited a gradient here.
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer, allocated (zero-filled) on first access. Shared by
  /// every handle, so it is writable through const handles too.
  std::span<T> grad() const;
  void zero_grad();
  void clear_grad() { impl_->grad.clear(); }

  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    AlignedVector<T> values;
    AlignedVector<T> grad;
    bool requires_grad = false;
  };
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;
};

struct BackwardReport {
  std::size_t nodes_run = 0;
  /// Indices (into the parameter list handed to backward) that received no
  /// gradient because they are detached from the loss. Their grads are zero.
  std::vector<std::size_t> unreached;
};

/// Append-only tape of executed operators for the reverse pass.
///
/// Operators record a closure that reads their output gradient and
/// accumulates into their inputs. backward() replays closures in inverse
/// execution order, which is a valid topological order because nodes only
/// reference tensors produced earlier.
template <typename T>
class Graph {
 public:
  using Backward = std::function<void()>;

  void record(Backward fn) { nodes_.push_back(std::move(fn)); }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded node in reverse.
  /// Gradients of `parameters` are reset first; detached ones end up zero
  /// and are listed in the report.
  /// Throws ShapeError if loss is not a single element.
  BackwardReport backward(Tensor<T>& loss, std::span<Tensor<T>> parameters = {});

 private:
  std::vector<Backward> nodes_;
};

/// True if recording is on and at least one input needs a gradient.
template <typename T>
bool needs_grad(const Graph<T>* graph, std::initializer_list<const Tensor<T>*> inputs) {
  if (graph == nullptr) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->requires_grad()) return true;
  }
  return false;
}

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace odssd
