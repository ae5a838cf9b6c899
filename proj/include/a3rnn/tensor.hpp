#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace a3rnn {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);

/// Cache-line aligned buffers, so vectorized kernels take the same code path
/// for equal data regardless of where the allocator placed it.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Scalars use shape {1}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, const std::vector<double>& data);

  static Tensor scalar(double v) { return Tensor({1}, v); }
  static Tensor from_storage(Shape shape, Storage data);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  Storage& storage() { return data_; }
  const Storage& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int i, int j) { return data_[offset(i, j)]; }
  double at(int i, int j) const { return data_[offset(i, j)]; }
  double& at(int i, int j, int k) { return data_[offset(i, j, k)]; }
  double at(int i, int j, int k) const { return data_[offset(i, j, k)]; }
  double& at(int i, int j, int k, int l) { return data_[offset(i, j, k, l)]; }
  double at(int i, int j, int k, int l) const { return data_[offset(i, j, k, l)]; }

  double item() const;

  /// Same data, new shape; element counts must agree.
  Tensor reshaped(Shape shape) const;
  /// Sub-tensor at index `i` of the leading axis.
  Tensor slice0(int i) const;

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(int i, int j) const {
    return static_cast<std::size_t>(i) * shape_[1] + j;
  }
  std::size_t offset(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
  }
  std::size_t offset(int i, int j, int k, int l) const {
    return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
  }

  Shape shape_;
  Storage data_;
};

/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace a3rnn
