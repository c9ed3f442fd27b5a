#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <vector>

#include "icell/common.hpp"

namespace icell {

// 64-byte-aligned storage. Keeping every buffer at one alignment makes
// vectorized kernels (Eigen loop peeling) take the same code path for the
// same shapes, so results are bit-identical regardless of heap layout.
template <typename T, std::size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;
  // allocator_traits cannot auto-rebind across the non-type Align parameter.
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(
        ::operator new(n * sizeof(T), std::align_val_t(Align)));
  }
  void deallocate(T* p, std::size_t) {
    ::operator delete(p, std::align_val_t(Align));
  }
  template <typename U>
  bool operator==(const AlignedAllocator<U, Align>&) const { return true; }
  template <typename U>
  bool operator!=(const AlignedAllocator<U, Align>&) const { return false; }
};

// Dense row-major tensor. Rank is dynamic but in practice 1 (vectors),
// 2 (batched features) or 4 (batched images, NCHW).
template <typename T>
class Tensor {
 public:
  using Vec = std::vector<T, AlignedAllocator<T>>;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (int d : shape_) {
      check_value(d > 0, "Tensor: non-positive dimension");
      n *= static_cast<std::size_t>(d);
    }
    data_.assign(n, T(0));
  }

  Tensor(std::vector<int> shape, const std::vector<T>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    std::size_t n = 1;
    for (int d : shape_) n *= static_cast<std::size_t>(d);
    check_shape(n == data_.size(), "Tensor: shape/data size mismatch");
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  Vec& vec() { return data_; }
  const Vec& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // NCHW accessor
  T& at(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + h) *
                     dim(3) +
                 w];
  }
  const T& at(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + h) *
                     dim(3) +
                 w];
  }

  T& at(int n, int f) { return data_[static_cast<std::size_t>(n) * dim(1) + f]; }
  const T& at(int n, int f) const {
    return data_[static_cast<std::size_t>(n) * dim(1) + f];
  }

  Tensor reshaped(std::vector<int> shape) const {
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    std::size_t n = 1;
    for (int d : out.shape_) n *= static_cast<std::size_t>(d);
    check_shape(n == out.data_.size(), "Tensor: shape/data size mismatch");
    return out;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    check_shape(o.numel() == numel(), "Tensor+=: size mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  // this += s * o
  void axpy(T s, const Tensor& o) {
    check_shape(o.numel() == numel(), "Tensor::axpy: size mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
  }

  bool all_finite() const {
    for (const auto& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  T min() const { return *std::min_element(data_.begin(), data_.end()); }
  T max() const { return *std::max_element(data_.begin(), data_.end()); }

  double sum() const {
    double s = 0;
    for (const auto& v : data_) s += static_cast<double>(v);
    return s;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i)
      os << shape_[i] << (i + 1 < shape_.size() ? "," : "");
    os << ")";
    return os.str();
  }

 private:
  std::vector<int> shape_;
  Vec data_;
};

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.numel() == b.numel(), "max_abs_diff: size mismatch");
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace icell
