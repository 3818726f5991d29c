#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace upet {

using Index = std::int64_t;

/// Extents of a dense row-major tensor. Rank 0 denotes a scalar.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims);
  explicit Shape(std::vector<Index> dims);

  std::size_t rank() const { return dims_.size(); }
  Index operator[](std::size_t axis) const { return dims_[axis]; }
  Index numel() const;
  const std::vector<Index>& dims() const { return dims_; }

  auto begin() const { return dims_.begin(); }
  auto end() const { return dims_.end(); }

  /// "2x3x4" style rendering; "scalar" for rank 0.
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<Index> dims_;
};

}  // namespace upet
