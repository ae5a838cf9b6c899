#include "a3rnn/ops.hpp"

#include <Eigen/Core>
#include <cmath>

#include "a3rnn/errors.hpp"

namespace a3rnn::ad {
namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

void require_same(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                      " vs " + shape_string(b.shape()));
}

template <typename F, typename G>
Var unary(const Var& a, F forward, G derivative) {
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = forward(x[i]);
  return make_node(std::move(out), {a}, [derivative](Node& n) {
    double* g = input_grad(n, 0);
    if (!g) return;
    const Tensor& x = n.inputs[0]->value;
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += n.grad[i] * derivative(x[i], n.value[i]);
  });
}

int normalize_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, "axis out of range");
  return axis;
}

std::size_t prod(const Shape& s, int from, int to) {
  std::size_t p = 1;
  for (int i = from; i < to; ++i) p *= static_cast<std::size_t>(s[i]);
  return p;
}

// Column buffer layout: rows (c, ki, kj), columns (oh, ow).
// Column buffers hold one row per (channel, ki, kj) and `ld` entries per row, so
// several images can sit side by side in one buffer.
void im2col(const double* src, int channels, int height, int width, int k, int stride, int pad,
            int out_h, int out_w, double* cols, std::size_t ld) {
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* row = cols + static_cast<std::size_t>((c * k + ki) * k + kj) * ld;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki;
          double* dst = row + oh * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* line = src + (static_cast<std::size_t>(c) * height + ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - pad + kj;
            dst[ow] = (iw >= 0 && iw < width) ? line[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int channels, int height, int width, int k, int stride, int pad,
            int out_h, int out_w, double* dst, std::size_t ld) {
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* row = cols + static_cast<std::size_t>((c * k + ki) * k + kj) * ld;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= height) continue;
          double* line = dst + (static_cast<std::size_t>(c) * height + ih) * width;
          const double* srcrow = row + oh * out_w;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < width) line[iw] += srcrow[ow];
          }
        }
      }
    }
  }
}

// [n, C, plane] images <-> [C, n * plane] matrix with images side by side.
void gather_channels(const double* src, int n, int channels, int plane, double* dst) {
  const std::size_t ld = static_cast<std::size_t>(n) * plane;
  for (int b = 0; b < n; ++b)
    for (int c = 0; c < channels; ++c)
      std::copy_n(src + (static_cast<std::size_t>(b) * channels + c) * plane, plane, dst + c * ld + b * plane);
}

void scatter_channels(const double* src, int n, int channels, int plane, double* dst, bool accumulate) {
  const std::size_t ld = static_cast<std::size_t>(n) * plane;
  for (int b = 0; b < n; ++b)
    for (int c = 0; c < channels; ++c) {
      const double* from = src + c * ld + b * plane;
      double* to = dst + (static_cast<std::size_t>(b) * channels + c) * plane;
      if (accumulate)
        for (int i = 0; i < plane; ++i) to[i] += from[i];
      else
        std::copy_n(from, plane, to);
    }
}

/// Images per GEMM so that a column buffer stays around 4M entries.
int chunk_size(int batch, std::size_t rows, std::size_t plane) {
  const std::size_t per_image = std::max<std::size_t>(rows * plane, 1);
  return static_cast<int>(std::clamp<std::size_t>((std::size_t{1} << 16) / per_image, 1, static_cast<std::size_t>(batch)));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    accumulate(n, 0, n.grad);
    accumulate(n, 1, n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    accumulate(n, 0, n.grad);
    if (double* g = input_grad(n, 1))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    const Tensor& x = n.inputs[0]->value;
    const Tensor& y = n.inputs[1]->value;
    if (double* g = input_grad(n, 0))
      for (std::size_t i = 0; i < x.size(); ++i) g[i] += n.grad[i] * y[i];
    if (double* g = input_grad(n, 1))
      for (std::size_t i = 0; i < x.size(); ++i) g[i] += n.grad[i] * x[i];
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_node(Tensor::scalar(s), {a}, [](Node& n) {
    if (double* g = input_grad(n, 0)) {
      const double d = n.grad[0];
      for (std::size_t i = 0; i < n.inputs[0]->value.size(); ++i) g[i] += d;
    }
  });
}

Var mean(const Var& a) {
  require(a.size() > 0, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var mse(const Var& a, const Var& b) {
  require_same(a, b, "mse");
  const std::size_t count = a.size();
  require(count > 0, "mse of empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = a.value()[i] - b.value()[i];
    s += d * d;
  }
  return make_node(Tensor::scalar(s / count), {a, b}, [count](Node& n) {
    const Tensor& x = n.inputs[0]->value;
    const Tensor& y = n.inputs[1]->value;
    const double c = 2.0 * n.grad[0] / static_cast<double>(count);
    if (double* g = input_grad(n, 0))
      for (std::size_t i = 0; i < count; ++i) g[i] += c * (x[i] - y[i]);
    if (double* g = input_grad(n, 1))
      for (std::size_t i = 0; i < count; ++i) g[i] -= c * (x[i] - y[i]);
  });
}

Var mse(const Var& a, const Tensor& target) { return mse(a, Var(target)); }

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_node(std::move(out), {a}, [](Node& n) {
    if (double* g = input_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

Var concat(std::span<const Var> parts, int axis) {
  require(!parts.empty(), "concat of zero tensors");
  const Shape& first = parts.front().shape();
  const int rank = static_cast<int>(first.size());
  axis = normalize_axis(axis, rank);
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    require(static_cast<int>(p.shape().size()) == rank, "concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis) require(p.shape()[d] == first[d], "concat: shape mismatch off-axis");
    shape[axis] += p.shape()[axis];
  }
  const std::size_t outer = prod(shape, 0, axis);
  const std::size_t inner = prod(shape, axis + 1, rank);
  const std::size_t out_stride = static_cast<std::size_t>(shape[axis]) * inner;
  Tensor out(shape);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  std::vector<Var> inputs;
  for (const auto& p : parts) {
    const std::size_t len = static_cast<std::size_t>(p.shape()[axis]) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.value().data() + o * len, len, out.data() + o * out_stride + offset);
    offsets.push_back(offset);
    offset += len;
    inputs.push_back(p);
  }
  return make_node(std::move(out), std::move(inputs), [outer, out_stride, offsets](Node& n) {
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      double* g = input_grad(n, i);
      if (!g) continue;
      const std::size_t len = n.inputs[i]->value.size() / outer;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = n.grad.data() + o * out_stride + offsets[i];
        for (std::size_t k = 0; k < len; ++k) g[o * len + k] += src[k];
      }
    }
  });
}

Var slice(const Var& a, int axis, int start, int length) {
  const Shape& in = a.shape();
  const int rank = static_cast<int>(in.size());
  axis = normalize_axis(axis, rank);
  require(start >= 0 && length >= 0 && start + length <= in[axis], "slice out of range");
  Shape shape = in;
  shape[axis] = length;
  const std::size_t outer = prod(in, 0, axis);
  const std::size_t inner = prod(in, axis + 1, rank);
  const std::size_t in_stride = static_cast<std::size_t>(in[axis]) * inner;
  const std::size_t len = static_cast<std::size_t>(length) * inner;
  const std::size_t offset = static_cast<std::size_t>(start) * inner;
  Tensor out(shape);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.value().data() + o * in_stride + offset, len, out.data() + o * len);
  return make_node(std::move(out), {a}, [outer, in_stride, len, offset](Node& n) {
    double* g = input_grad(n, 0);
    if (!g) return;
    for (std::size_t o = 0; o < outer; ++o) {
      double* dst = g + o * in_stride + offset;
      const double* src = n.grad.data() + o * len;
      for (std::size_t k = 0; k < len; ++k) dst[k] += src[k];
    }
  });
}

Var select(const Var& a, int i) {
  Shape shape(a.shape().begin() + 1, a.shape().end());
  if (shape.empty()) shape = {1};
  return reshape(slice(a, 0, i, 1), shape);
}

Var stack(std::span<const Var> parts) {
  require(!parts.empty(), "stack of zero tensors");
  std::vector<Var> lifted;
  lifted.reserve(parts.size());
  for (const auto& p : parts) {
    require(p.shape() == parts.front().shape(), "stack: mismatched shapes");
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    lifted.push_back(reshape(p, s));
  }
  return concat(lifted, 0);
}

Var transpose(const Var& a) {
  require(a.shape().size() == 2, "transpose requires rank 2");
  const int r = a.dim(0), c = a.dim(1);
  Tensor out({c, r});
  MapR(out.data(), c, r) = CMapR(a.value().data(), r, c).transpose();
  return make_node(std::move(out), {a}, [r, c](Node& n) {
    if (double* g = input_grad(n, 0)) MapR(g, r, c) += CMapR(n.grad.data(), c, r).transpose();
  });
}

Var matmul(const Var& a, const Var& b, bool ta, bool tb) {
  const int rank = static_cast<int>(a.shape().size());
  require(rank == static_cast<int>(b.shape().size()) && (rank == 2 || rank == 3),
          "matmul: operands must both be rank 2 or rank 3");
  const int batch = rank == 3 ? a.dim(0) : 1;
  if (rank == 3) require(b.dim(0) == batch, "matmul: batch mismatch");
  const int ar = a.dim(rank - 2), ac = a.dim(rank - 1);
  const int br = b.dim(rank - 2), bc = b.dim(rank - 1);
  const int m = ta ? ac : ar, k = ta ? ar : ac;
  const int kb = tb ? bc : br, nn = tb ? br : bc;
  require(k == kb, "matmul: inner dimension mismatch " + shape_string(a.shape()) + " x " +
                       shape_string(b.shape()));
  Shape shape = rank == 3 ? Shape{batch, m, nn} : Shape{m, nn};
  Tensor out(shape);
  const std::size_t sa = static_cast<std::size_t>(ar) * ac, sb = static_cast<std::size_t>(br) * bc,
                    so = static_cast<std::size_t>(m) * nn;
  for (int i = 0; i < batch; ++i) {
    CMapR A(a.value().data() + i * sa, ar, ac);
    CMapR B(b.value().data() + i * sb, br, bc);
    MapR C(out.data() + i * so, m, nn);
    if (!ta && !tb) C.noalias() = A * B;
    else if (ta && !tb) C.noalias() = A.transpose() * B;
    else if (!ta && tb) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
  return make_node(std::move(out), {a, b}, [=](Node& n) {
    double* ga = input_grad(n, 0);
    double* gb = input_grad(n, 1);
    for (int i = 0; i < batch; ++i) {
      CMapR A(n.inputs[0]->value.data() + i * sa, ar, ac);
      CMapR B(n.inputs[1]->value.data() + i * sb, br, bc);
      CMapR G(n.grad.data() + i * so, m, nn);
      if (ga) {
        MapR GA(ga + i * sa, ar, ac);
        // d op(A) = G op(B)^T
        if (!ta && !tb) GA.noalias() += G * B.transpose();
        else if (!ta && tb) GA.noalias() += G * B;
        else if (ta && !tb) GA.noalias() += B * G.transpose();
        else GA.noalias() += B.transpose() * G.transpose();
      }
      if (gb) {
        MapR GB(gb + i * sb, br, bc);
        // d op(B) = op(A)^T G
        if (!ta && !tb) GB.noalias() += A.transpose() * G;
        else if (ta && !tb) GB.noalias() += A * G;
        else if (!ta && tb) GB.noalias() += G.transpose() * A;
        else GB.noalias() += G.transpose() * A.transpose();
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require(weight.shape().size() == 2, "linear: weight must be rank 2");
  const int out_f = weight.dim(0), in_f = weight.dim(1);
  require(!x.shape().empty() && x.shape().back() == in_f,
          "linear: input " + shape_string(x.shape()) + " incompatible with weight " +
              shape_string(weight.shape()));
  if (bias.defined()) require(bias.shape() == Shape{out_f}, "linear: bias shape mismatch");
  const int rows = static_cast<int>(x.size() / in_f);
  Shape shape = x.shape();
  shape.back() = out_f;
  Tensor out(shape);
  MapR Y(out.data(), rows, out_f);
  Y.noalias() = CMapR(x.value().data(), rows, in_f) * CMapR(weight.value().data(), out_f, in_f).transpose();
  if (bias.defined()) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), out_f);
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_node(std::move(out), std::move(inputs), [rows, in_f, out_f](Node& n) {
    CMapR G(n.grad.data(), rows, out_f);
    if (double* gx = input_grad(n, 0))
      MapR(gx, rows, in_f).noalias() += G * CMapR(n.inputs[1]->value.data(), out_f, in_f);
    if (double* gw = input_grad(n, 1))
      MapR(gw, out_f, in_f).noalias() += G.transpose() * CMapR(n.inputs[0]->value.data(), rows, in_f);
    if (n.inputs.size() > 2)
      if (double* gb = input_grad(n, 2)) Eigen::Map<Eigen::RowVectorXd>(gb, out_f) += G.colwise().sum();
  });
}

Var softmax(const Var& a) {
  require(!a.shape().empty(), "softmax of scalar shape");
  const int d = a.shape().back();
  const std::size_t rows = a.size() / d;
  Tensor out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * d;
    double* y = out.data() + r * d;
    double mx = x[0];
    for (int i = 1; i < d; ++i) mx = std::max(mx, x[i]);
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += (y[i] = std::exp(x[i] - mx));
    for (int i = 0; i < d; ++i) y[i] /= s;
  }
  return make_node(std::move(out), {a}, [rows, d](Node& n) {
    double* g = input_grad(n, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = n.value.data() + r * d;
      const double* dy = n.grad.data() + r * d;
      double dot = 0.0;
      for (int i = 0; i < d; ++i) dot += dy[i] * y[i];
      for (int i = 0; i < d; ++i) g[r * d + i] += y[i] * (dy[i] - dot);
    }
  });
}

Var layer_norm(const Var& a, const Var& gain, const Var& shift, double eps) {
  const int d = a.shape().back();
  require(gain.shape() == Shape{d} && shift.shape() == Shape{d}, "layer_norm: affine shape mismatch");
  const std::size_t rows = a.size() / d;
  Tensor out(a.shape());
  auto normalized = std::make_shared<Storage>(a.size());
  auto inv_std = std::make_shared<Storage>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * d;
    double mu = 0.0;
    for (int i = 0; i < d; ++i) mu += x[i];
    mu /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int i = 0; i < d; ++i) {
      const double xh = (x[i] - mu) * is;
      (*normalized)[r * d + i] = xh;
      out[r * d + i] = xh * gain.value()[i] + shift.value()[i];
    }
  }
  return make_node(std::move(out), {a, gain, shift}, [rows, d, normalized, inv_std](Node& n) {
    const Tensor& gain = n.inputs[1]->value;
    double* gx = input_grad(n, 0);
    double* gg = input_grad(n, 1);
    double* gs = input_grad(n, 2);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* dy = n.grad.data() + r * d;
      const double* xh = normalized->data() + r * d;
      if (gg)
        for (int i = 0; i < d; ++i) gg[i] += dy[i] * xh[i];
      if (gs)
        for (int i = 0; i < d; ++i) gs[i] += dy[i];
      if (gx) {
        double m1 = 0.0, m2 = 0.0;
        for (int i = 0; i < d; ++i) {
          const double dxh = dy[i] * gain[i];
          m1 += dxh;
          m2 += dxh * xh[i];
        }
        m1 /= d;
        m2 /= d;
        for (int i = 0; i < d; ++i)
          gx[r * d + i] += (*inv_std)[r] * (dy[i] * gain[i] - m1 - xh[i] * m2);
      }
    }
  });
}

Var mean_rows(const Var& a) {
  const Shape& s = a.shape();
  require(s.size() >= 2, "mean_rows requires rank >= 2");
  const int rows = s[s.size() - 2], d = s.back();
  require(rows > 0, "mean_rows over zero rows");
  const std::size_t outer = a.size() / (static_cast<std::size_t>(rows) * d);
  Shape shape(s.begin(), s.end() - 2);
  shape.push_back(d);
  Tensor out(shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (int r = 0; r < rows; ++r)
      for (int i = 0; i < d; ++i) out[o * d + i] += a.value()[(o * rows + r) * d + i] / rows;
  return make_node(std::move(out), {a}, [outer, rows, d](Node& n) {
    double* g = input_grad(n, 0);
    if (!g) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (int r = 0; r < rows; ++r)
        for (int i = 0; i < d; ++i) g[(o * rows + r) * d + i] += n.grad[o * d + i] / rows;
  });
}

Var row_norm(const Var& a) {
  const Shape& s = a.shape();
  const int d = s.back();
  const std::size_t rows = a.size() / d;
  Shape shape(s.begin(), s.end() - 1);
  if (shape.empty()) shape = {1};
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int i = 0; i < d; ++i) acc += a.value()[r * d + i] * a.value()[r * d + i];
    out[r] = std::sqrt(acc);
  }
  return make_node(std::move(out), {a}, [rows, d](Node& n) {
    double* g = input_grad(n, 0);
    if (!g) return;
    const Tensor& x = n.inputs[0]->value;
    for (std::size_t r = 0; r < rows; ++r) {
      if (n.value[r] <= 0.0) continue;
      const double c = n.grad[r] / n.value[r];
      for (int i = 0; i < d; ++i) g[r * d + i] += c * x[r * d + i];
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dGeometry geom) {
  require(x.shape().size() == 4 && weight.shape().size() == 4, "conv2d: expects rank-4 input and weight");
  const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == cin && weight.dim(3) == k, "conv2d: weight " + shape_string(weight.shape()) +
                                                          " incompatible with input " + shape_string(x.shape()));
  if (bias.defined()) require(bias.shape() == Shape{cout}, "conv2d: bias shape mismatch");
  const int s = geom.stride, p = geom.padding;
  const int oh = (h + 2 * p - k) / s + 1, ow = (w + 2 * p - k) / s + 1;
  require(oh > 0 && ow > 0, "conv2d: empty output");
  const int ckk = cin * k * k, plane = oh * ow;
  const std::size_t in_size = static_cast<std::size_t>(cin) * h * w;
  const int chunk = chunk_size(batch, static_cast<std::size_t>(ckk + cout), plane);
  Tensor out({batch, cout, oh, ow});
  Storage cols(static_cast<std::size_t>(ckk) * chunk * plane);
  Storage result(static_cast<std::size_t>(cout) * chunk * plane);
  CMapR W(weight.value().data(), cout, ckk);
  for (int b0 = 0; b0 < batch; b0 += chunk) {
    const int n = std::min(chunk, batch - b0);
    const std::size_t ld = static_cast<std::size_t>(n) * plane;
    for (int b = 0; b < n; ++b)
      im2col(x.value().data() + (b0 + b) * in_size, cin, h, w, k, s, p, oh, ow, cols.data() + b * plane, ld);
    MapR Y(result.data(), cout, static_cast<Eigen::Index>(ld));
    Y.noalias() = W * CMapR(cols.data(), ckk, static_cast<Eigen::Index>(ld));
    if (bias.defined()) Y.colwise() += CVecMap(bias.value().data(), cout);
    scatter_channels(result.data(), n, cout, plane, out.data() + static_cast<std::size_t>(b0) * cout * plane, false);
  }
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_node(std::move(out), std::move(inputs), [=](Node& n) {
    double* gx = input_grad(n, 0);
    double* gw = input_grad(n, 1);
    double* gb = n.inputs.size() > 2 ? input_grad(n, 2) : nullptr;
    Storage cols(static_cast<std::size_t>(ckk) * chunk * plane);
    Storage grads(static_cast<std::size_t>(cout) * chunk * plane);
    CMapR W(n.inputs[1]->value.data(), cout, ckk);
    for (int b0 = 0; b0 < batch; b0 += chunk) {
      const int m = std::min(chunk, batch - b0);
      const auto ld = static_cast<Eigen::Index>(static_cast<std::size_t>(m) * plane);
      gather_channels(n.grad.data() + static_cast<std::size_t>(b0) * cout * plane, m, cout, plane, grads.data());
      CMapR G(grads.data(), cout, ld);
      if (gb) VecMap(gb, cout) += G.rowwise().sum();
      if (gw) {
        for (int b = 0; b < m; ++b)
          im2col(n.inputs[0]->value.data() + (b0 + b) * in_size, cin, h, w, k, s, p, oh, ow,
                 cols.data() + b * plane, static_cast<std::size_t>(ld));
        MapR(gw, cout, ckk).noalias() += G * CMapR(cols.data(), ckk, ld).transpose();
      }
      if (gx) {
        MapR(cols.data(), ckk, ld).noalias() = W.transpose() * G;
        for (int b = 0; b < m; ++b)
          col2im(cols.data() + b * plane, cin, h, w, k, s, p, oh, ow, gx + (b0 + b) * in_size,
                 static_cast<std::size_t>(ld));
      }
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, Conv2dGeometry geom) {
  require(x.shape().size() == 4 && weight.shape().size() == 4,
          "conv_transpose2d: expects rank-4 input and weight");
  const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = weight.dim(1), k = weight.dim(2);
  require(weight.dim(0) == cin && weight.dim(3) == k, "conv_transpose2d: weight " +
                                                          shape_string(weight.shape()) + " incompatible with input " +
                                                          shape_string(x.shape()));
  if (bias.defined()) require(bias.shape() == Shape{cout}, "conv_transpose2d: bias shape mismatch");
  const int s = geom.stride, p = geom.padding;
  const int oh = (h - 1) * s - 2 * p + k, ow = (w - 1) * s - 2 * p + k;
  require(oh > 0 && ow > 0, "conv_transpose2d: empty output");
  const int okk = cout * k * k, plane = h * w, out_plane = oh * ow;
  const std::size_t out_size = static_cast<std::size_t>(cout) * out_plane;
  const int chunk = chunk_size(batch, static_cast<std::size_t>(okk + cin), plane);
  Tensor out({batch, cout, oh, ow});
  Storage cols(static_cast<std::size_t>(okk) * chunk * plane);
  Storage inputs_block(static_cast<std::size_t>(cin) * chunk * plane);
  CMapR W(weight.value().data(), cin, okk);
  for (int b0 = 0; b0 < batch; b0 += chunk) {
    const int n = std::min(chunk, batch - b0);
    const auto ld = static_cast<Eigen::Index>(static_cast<std::size_t>(n) * plane);
    gather_channels(x.value().data() + static_cast<std::size_t>(b0) * cin * plane, n, cin, plane, inputs_block.data());
    MapR(cols.data(), okk, ld).noalias() = W.transpose() * CMapR(inputs_block.data(), cin, ld);
    for (int b = 0; b < n; ++b) {
      double* y = out.data() + (b0 + b) * out_size;
      col2im(cols.data() + b * plane, cout, oh, ow, k, s, p, h, w, y, static_cast<std::size_t>(ld));
      if (bias.defined())
        for (int c = 0; c < cout; ++c)
          for (int i = 0; i < out_plane; ++i) y[c * out_plane + i] += bias.value()[c];
    }
  }
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_node(std::move(out), std::move(inputs), [=](Node& n) {
    double* gx = input_grad(n, 0);
    double* gw = input_grad(n, 1);
    double* gb = n.inputs.size() > 2 ? input_grad(n, 2) : nullptr;
    if (gb)
      for (int b = 0; b < batch; ++b)
        for (int c = 0; c < cout; ++c)
          for (int i = 0; i < out_plane; ++i) gb[c] += n.grad[(b * static_cast<std::size_t>(cout) + c) * out_plane + i];
    if (!gx && !gw) return;
    Storage cols(static_cast<std::size_t>(okk) * chunk * plane);
    Storage block(static_cast<std::size_t>(cin) * chunk * plane);
    CMapR W(n.inputs[1]->value.data(), cin, okk);
    for (int b0 = 0; b0 < batch; b0 += chunk) {
      const int m = std::min(chunk, batch - b0);
      const auto ld = static_cast<Eigen::Index>(static_cast<std::size_t>(m) * plane);
      for (int b = 0; b < m; ++b)
        im2col(n.grad.data() + (b0 + b) * out_size, cout, oh, ow, k, s, p, h, w, cols.data() + b * plane,
               static_cast<std::size_t>(ld));
      CMapR C(cols.data(), okk, ld);
      if (gx) {
        MapR(block.data(), cin, ld).noalias() = W * C;
        scatter_channels(block.data(), m, cin, plane, gx + static_cast<std::size_t>(b0) * cin * plane, true);
      }
      if (gw) {
        gather_channels(n.inputs[0]->value.data() + static_cast<std::size_t>(b0) * cin * plane, m, cin, plane,
                        block.data());
        MapR(gw, cin, okk).noalias() += CMapR(block.data(), cin, ld) * C.transpose();
      }
    }
  });
}

Var mask_channels(const Var& x, const Var& mask) {
  require(x.shape().size() == 4 && mask.shape().size() == 3, "mask_channels: expects [N,C,H,W] and [N,H,W]");
  const int batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  require(mask.dim(0) == batch && mask.dim(1) == x.dim(2) && mask.dim(2) == x.dim(3),
          "mask_channels: mask " + shape_string(mask.shape()) + " incompatible with " + shape_string(x.shape()));
  Tensor out(x.shape());
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < ch; ++c)
      for (int i = 0; i < plane; ++i) {
        const std::size_t xi = (static_cast<std::size_t>(b) * ch + c) * plane + i;
        out[xi] = x.value()[xi] * mask.value()[static_cast<std::size_t>(b) * plane + i];
      }
  return make_node(std::move(out), {x, mask}, [batch, ch, plane](Node& n) {
    const Tensor& xv = n.inputs[0]->value;
    const Tensor& mv = n.inputs[1]->value;
    double* gx = input_grad(n, 0);
    double* gm = input_grad(n, 1);
    for (int b = 0; b < batch; ++b)
      for (int c = 0; c < ch; ++c)
        for (int i = 0; i < plane; ++i) {
          const std::size_t xi = (static_cast<std::size_t>(b) * ch + c) * plane + i;
          const std::size_t mi = static_cast<std::size_t>(b) * plane + i;
          if (gx) gx[xi] += n.grad[xi] * mv[mi];
          if (gm) gm[mi] += n.grad[xi] * xv[xi];
        }
  });
}

}  // namespace a3rnn::ad
