#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "upet/core/errors.hpp"
#include "upet/core/shape.hpp"

namespace upet {

/// 64-byte aligned allocation. Vectorized kernels peel unaligned heads
/// differently depending on the start address, so a fixed alignment keeps
/// floating-point results independent of where a buffer happens to land.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major N-dimensional array with an optional gradient buffer.
///
/// A Tensor is a cheap handle: copies share the same storage, like a
/// shared_ptr. `clone()` produces an independent deep copy. Constness is
/// deep for element access: a const handle only exposes read-only spans.
///
/// `float` is used for training; `double` is the verification precision
/// used by the finite-difference checker.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  /// Undefined tensor; used for "absent" optional operands such as a bias.
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : s_(std::make_shared<Storage>(std::move(shape))) {
    s_->values.assign(static_cast<std::size_t>(s_->shape.numel()), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<Storage>(std::move(shape))) {
    if (static_cast<Index>(values.size()) != s_->shape.numel()) {
      throw ShapeError("tensor of shape " + s_->shape.str() + " needs " +
                       std::to_string(s_->shape.numel()) + " elements, got " +
                       std::to_string(values.size()));
    }
    s_->values.assign(values.begin(), values.end());
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(T value) { return Tensor(Shape{}, value); }

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const { return s_->shape; }
  Index numel() const { return s_->shape.numel(); }
  Index dim(std::size_t axis) const { return s_->shape[axis]; }
  std::size_t rank() const { return s_->shape.rank(); }

  std::span<T> data() { return s_->values; }
  std::span<const T> data() const { return s_->values; }
  T* ptr() { return s_->values.data(); }
  const T* ptr() const { return s_->values.data(); }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
    return s_->values.front();
  }

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    s_->requires_grad = flag;
    if (!flag) s_->grad.clear();
    return *this;
  }

  bool has_grad() const { return !s_->grad.empty(); }
  std::span<T> grad() { return s_->grad; }
  std::span<const T> grad() const { return s_->grad; }

  /// Allocates a zero gradient buffer if none exists and returns it.
  std::span<T> ensure_grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->values.size(), T(0));
    return s_->grad;
  }
  void zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }
  void clear_grad() { s_->grad.clear(); }

  /// Deep copy of shape and elements; no gradient, not tracked.
  Tensor clone() const {
    Tensor out;
    out.s_ = std::make_shared<Storage>(s_->shape);
    out.s_->values = s_->values;
    return out;
  }

  /// Same-typed copy with elements converted to another precision.
  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(s_->values.begin(), s_->values.end());
    return Tensor<U>(s_->shape, std::move(v));
  }

  /// True when both handles refer to the same storage.
  bool same(const Tensor& other) const { return s_ == other.s_; }

 private:
  struct Storage {
    explicit Storage(Shape sh) : shape(std::move(sh)) {}
    Shape shape;
    AlignedVector<T> values;
    AlignedVector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

}  // namespace upet
