#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace advaug {

// Cache-line aligned storage. Eigen's vectorised reductions peel a different
// number of leading elements depending on the buffer address, so a fixed
// alignment is what keeps sums (and therefore training) bit-reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlignment); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
    return true;
  }
};

// Dense 4-d tensor. Feature maps use the channel-major layout
// {channels, batch, height, width} so that every channel is one contiguous
// row of a (C x N*H*W) matrix; weights use {out, in, kh, kw}.
template <typename T>
class Tensor {
 public:
  using Shape = std::array<int, 4>;
  using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Storage = std::vector<T, AlignedAllocator<T>>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  Tensor(int d0, int d1, int d2, int d3, T fill = T(0))
      : shape_{d0, d1, d2, d3}, data_(count(shape_), fill) {}
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(count(shape), fill) {}

  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Feature-map accessors.
  int channels() const { return shape_[0]; }
  int batch() const { return shape_[1]; }
  int height() const { return shape_[2]; }
  int width() const { return shape_[3]; }
  std::size_t plane() const { return static_cast<std::size_t>(shape_[2]) * shape_[3]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  Storage& vec() { return data_; }
  const Storage& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int a, int b, int c, int d) { return data_[index(a, b, c, d)]; }
  const T& at(int a, int b, int c, int d) const { return data_[index(a, b, c, d)]; }

  std::size_t index(int a, int b, int c, int d) const {
    return ((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d;
  }

  // Views the tensor as a (dim0 x rest) row-major matrix.
  MatrixMap matrix() {
    return MatrixMap(data_.data(), shape_[0], static_cast<Eigen::Index>(data_.size() / std::max(shape_[0], 1)));
  }
  ConstMatrixMap matrix() const {
    return ConstMatrixMap(data_.data(), shape_[0], static_cast<Eigen::Index>(data_.size() / std::max(shape_[0], 1)));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  void resize(Shape shape) {
    shape_ = shape;
    data_.assign(count(shape), T(0));
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  static std::size_t count(const Shape& s) {
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("negative tensor dimension");
    }
    return static_cast<std::size_t>(s[0]) * s[1] * s[2] * s[3];
  }

 private:
  Shape shape_{0, 0, 0, 0};
  Storage data_;
};

inline std::string shape_string(const std::array<int, 4>& s) {
  return std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" + std::to_string(s[2]) + "x" +
         std::to_string(s[3]);
}

}  // namespace advaug
