#pragma once

#include <span>
#include <utility>
#include <vector>

#include "a3rnn/autodiff.hpp"

namespace a3rnn::ad {

// Elementwise. Binary ops require identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var square(const Var& a);
/// Clamps to [lo, hi]; gradient is zero where the clamp is active.
Var clamp(const Var& a, double lo, double hi);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);

// Reductions to shape {1}.
Var sum(const Var& a);
Var mean(const Var& a);
/// Mean of squared differences over every element.
Var mse(const Var& a, const Var& b);
Var mse(const Var& a, const Tensor& target);

// Shape manipulation.
Var reshape(const Var& a, Shape shape);
Var concat(std::span<const Var> parts, int axis);
Var slice(const Var& a, int axis, int start, int length);
/// Index `i` of the leading axis, which is dropped.
Var select(const Var& a, int i);
/// Stacks equally shaped values along a new leading axis.
Var stack(std::span<const Var> parts);
Var transpose(const Var& a);

/// Matrix product of rank-2 operands, or batched product of rank-3 operands
/// sharing the leading batch axis. Transposes apply to the trailing two axes.
Var matmul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);
/// x·Wᵀ + b for x of shape [in], [n, in] or [..., in]; W is [out, in], b is [out] or undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);

/// Softmax over the last axis.
Var softmax(const Var& a);
/// Layer normalization over the last axis with affine gain/shift of that width.
Var layer_norm(const Var& a, const Var& gain, const Var& shift, double eps = 1e-5);
/// Mean over the second-to-last axis: [..., n, d] -> [..., d].
Var mean_rows(const Var& a);
/// Euclidean norm of each row of the last axis: [..., d] -> [...]. Zero rows get zero gradient.
Var row_norm(const Var& a);

// Convolutions over [N, C, H, W].
struct Conv2dGeometry {
  int stride = 1;
  int padding = 0;
};
/// weight: [out, in, k, k]; bias: [out] or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dGeometry geom);
/// weight: [in, out, k, k]; output size (H-1)*stride - 2*padding + k.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, Conv2dGeometry geom);

/// Multiplies every channel of x [N, C, H, W] by mask [N, H, W].
Var mask_channels(const Var& x, const Var& mask);

}  // namespace a3rnn::ad
