#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dscale/core/errors.hpp"

namespace dscale {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

/// Allocator pinning every buffer to one 64-byte alignment class. Eigen's
/// vectorized kernels peel a scalar head whose length depends on the address,
/// so mixed alignments change summation order and make results vary run to
/// run; a fixed alignment keeps the arithmetic bit-identical.
template <class T>
struct AlignedAlloc {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAlloc() = default;
  template <class U>
  AlignedAlloc(const AlignedAlloc<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlign}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kAlign}); }

  template <class U>
  bool operator==(const AlignedAlloc<U>&) const {
    return true;
  }
  template <class U>
  bool operator!=(const AlignedAlloc<U>&) const {
    return false;
  }
};

}  // namespace detail

/// Dense row-major tensor over a contiguous buffer.
///
/// Rank 0 (empty shape) holds a single scalar. A default-constructed tensor
/// owns no storage at all; allocated() tells the two apart.
template <class S>
class Tensor {
 public:
  using Scalar = S;
  using Buffer = std::vector<S, detail::AlignedAlloc<S>>;
  using ArrayMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;
  using MatrixMap =
      Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap =
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_extents(shape_);
    data_.assign(shape_numel(shape_), S(0));
  }

  Tensor(Shape shape, const std::vector<S>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_extents(shape_);
    if (data_.size() != shape_numel(shape_)) {
      throw DimensionError("tensor: data length " + std::to_string(data_.size()) +
                           " does not fill shape " + shape_str(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, S v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  static Tensor scalar(S v) {
    Tensor t{Shape{}};
    t.data_[0] = v;
    return t;
  }

  bool allocated() const { return !data_.empty(); }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  S& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const S& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  S& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const S& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  S& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const S& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(S(0)); }

  ArrayMap array() { return ArrayMap(data_.data(), static_cast<Eigen::Index>(data_.size())); }
  ConstArrayMap array() const {
    return ConstArrayMap(data_.data(), static_cast<Eigen::Index>(data_.size()));
  }

  /// View the buffer as a row-major matrix; rows*cols must equal numel().
  MatrixMap mat(std::size_t rows, std::size_t cols) {
    require_matrix(rows, cols);
    return MatrixMap(data_.data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
  }
  ConstMatrixMap mat(std::size_t rows, std::size_t cols) const {
    require_matrix(rows, cols);
    return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(rows),
                          static_cast<Eigen::Index>(cols));
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const S& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
    return out;
  }

  /// Same buffer under a new shape with identical element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
      throw DimensionError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape) +
                           " changes element count");
    }
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

 private:
  static void check_extents(const Shape& s) {
    for (std::size_t e : s) {
      if (e == 0) throw DimensionError("tensor: zero extent in shape " + shape_str(s));
    }
  }
  void require_matrix(std::size_t rows, std::size_t cols) const {
    if (rows * cols != data_.size()) {
      throw DimensionError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                           " does not cover tensor " + shape_str(shape_));
    }
  }

  template <class T>
  friend class Tensor;

  Shape shape_;
  Buffer data_;
};

}  // namespace dscale
