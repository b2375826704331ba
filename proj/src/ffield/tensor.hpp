#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ffield/error.hpp"

namespace ffield {

using Shape = std::vector<std::size_t>;

inline std::size_t ShapeSize(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string ShapeString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// 64-byte aligned storage. Vectorized reductions peel a head whose length
// depends on the address, so unaligned buffers would make results depend on
// where the allocator placed them.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlignment));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

// Dense, contiguous, row-major tensor. Most of the code base works with
// rank-2 tensors laid out as (batch rows, feature columns).
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Storage = std::vector<T, AlignedAllocator<T>>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(ShapeSize(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    if (data_.size() != ShapeSize(shape_)) {
      Fail(ErrorCode::kShape, "tensor: " + std::to_string(data_.size()) +
                                  " values do not fill shape " +
                                  ShapeString(shape_));
    }
  }

  static Tensor Scalar(T value) { return Tensor({1}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Leading (batch) extent, and the product of all trailing extents.
  std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
  std::size_t cols() const { return rows() == 0 ? 0 : size() / rows(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  Storage& storage() { return data_; }
  const Storage& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    // Non-finite values are exactly those with an all-ones exponent. The
    // integer test vectorizes, unlike std::isfinite.
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    constexpr Bits kExponent =
        sizeof(T) == 4 ? static_cast<Bits>(0x7f800000u) : static_cast<Bits>(0x7ff0000000000000ull);
    Bits bad = 0;
    for (const T v : data_) {
      const Bits b = std::bit_cast<Bits>(v);
      bad |= static_cast<Bits>((b & kExponent) == kExponent);
    }
    return bad == 0;
  }

  std::string shape_string() const { return ShapeString(shape_); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  void reshape(Shape shape) {
    if (ShapeSize(shape) != data_.size()) {
      Fail(ErrorCode::kShape, "reshape: cannot view " + ShapeString(shape_) +
                                  " as " + ShapeString(shape));
    }
    shape_ = std::move(shape);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Storage data_;
};

// A named learnable tensor and its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) {
      grad = Tensor<T>(value.shape());
    } else {
      grad.fill(T(0));
    }
  }
};

}  // namespace ffield
