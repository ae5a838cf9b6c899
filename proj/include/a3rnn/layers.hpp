#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "a3rnn/ops.hpp"

namespace a3rnn {

/// Seeded generator with platform-independent real-valued draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  /// Uniform in [0, 1) built from the top 53 bits of the engine output.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

namespace nn {

struct NamedParameter {
  std::string name;
  ad::Var var;
};

/// Owns every trainable leaf of a model in registration order.
class ParameterStore {
 public:
  ad::Var add(const std::string& name, Tensor init);
  const std::vector<NamedParameter>& entries() const { return entries_; }
  ad::Var find(const std::string& name) const;
  std::size_t count() const;
  void zero_grad();

 private:
  std::vector<NamedParameter> entries_;
};

Tensor uniform_tensor(Shape shape, double bound, Rng& rng);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, int in, int out, Rng& rng, bool with_bias = true);
  ad::Var operator()(const ad::Var& x) const { return ad::linear(x, weight, bias); }

  ad::Var weight;
  ad::Var bias;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, int in, int out, int kernel, int stride,
         int padding, Rng& rng);
  ad::Var operator()(const ad::Var& x) const { return ad::conv2d(x, weight, bias, geom); }

  ad::Var weight;
  ad::Var bias;
  ad::Conv2dGeometry geom;
};

class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterStore& store, const std::string& name, int in, int out, int kernel,
                  int stride, int padding, Rng& rng);
  ad::Var operator()(const ad::Var& x) const { return ad::conv_transpose2d(x, weight, bias, geom); }

  ad::Var weight;
  ad::Var bias;
  ad::Conv2dGeometry geom;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, int width);
  ad::Var operator()(const ad::Var& x) const { return ad::layer_norm(x, gain, shift); }

  ad::Var gain;
  ad::Var shift;
};

/// Standard LSTM cell, gate order (input, forget, cell, output).
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(ParameterStore& store, const std::string& name, int input, int hidden, Rng& rng);
  /// Returns (h', c') for input x [input] and state h, c [hidden].
  std::pair<ad::Var, ad::Var> operator()(const ad::Var& x, const ad::Var& h, const ad::Var& c) const;
  int hidden() const { return hidden_; }

  Linear input_map;
  Linear hidden_map;

 private:
  int hidden_ = 0;
};

/// Multi-head scaled dot-product attention without positional terms.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name, int width, int heads, Rng& rng);
  /// queries [n, width], memory [m, width] -> [n, width].
  ad::Var operator()(const ad::Var& queries, const ad::Var& memory) const;

  Linear query_map, key_map, value_map, output_map;

 private:
  int width_ = 0;
  int heads_ = 1;
};

}  // namespace nn
}  // namespace a3rnn
