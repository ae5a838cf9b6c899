#include "a3rnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "a3rnn/errors.hpp"

namespace a3rnn {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    require(d >= 0, "negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, const std::vector<double>& data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  require(data_.size() == numel(shape_),
          "tensor data size " + std::to_string(data_.size()) + " does not match shape " +
              shape_string(shape_));
}

Tensor Tensor::from_storage(Shape shape, Storage data) {
  require(data.size() == numel(shape),
          "tensor data size " + std::to_string(data.size()) + " does not match shape " + shape_string(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

int Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  require(axis >= 0 && axis < rank(), "axis out of range for shape " + shape_string(shape_));
  return shape_[axis];
}

double Tensor::item() const {
  require(data_.size() == 1, "item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  require(numel(shape) == data_.size(),
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return from_storage(std::move(shape), data_);
}

Tensor Tensor::slice0(int i) const {
  require(rank() >= 1 && i >= 0 && i < shape_[0], "slice0 index out of range");
  Shape sub(shape_.begin() + 1, shape_.end());
  if (sub.empty()) sub = {1};
  const std::size_t n = numel(sub);
  return from_storage(sub, Storage(data_.begin() + static_cast<std::ptrdiff_t>(i * n),
                                         data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * n)));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack(std::span<const Tensor> parts) {
  require(!parts.empty(), "stack of zero tensors");
  Shape shape = parts.front().shape();
  Storage data;
  data.reserve(parts.size() * parts.front().size());
  for (const auto& p : parts) {
    require(p.shape() == shape, "stack: mismatched shapes " + shape_string(p.shape()) + " vs " +
                                    shape_string(shape));
    data.insert(data.end(), p.storage().begin(), p.storage().end());
  }
  shape.insert(shape.begin(), static_cast<int>(parts.size()));
  return Tensor::from_storage(std::move(shape), std::move(data));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.size() == b.size(), "max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace a3rnn
