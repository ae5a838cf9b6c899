#include "a3rnn/layers.hpp"

#include <cmath>

#include "a3rnn/errors.hpp"

namespace a3rnn::nn {

ad::Var ParameterStore::add(const std::string& name, Tensor init) {
  for (const auto& e : entries_) require(e.name != name, "duplicate parameter name " + name);
  ad::Var v(std::move(init), true);
  entries_.push_back({name, v});
  return v;
}

ad::Var ParameterStore::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.var;
  throw ContractError("unknown parameter " + name);
}

std::size_t ParameterStore::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

Linear::Linear(ParameterStore& store, const std::string& name, int in, int out, Rng& rng, bool with_bias) {
  weight = store.add(name + ".weight", uniform_tensor({out, in}, std::sqrt(3.0 / in), rng));
  if (with_bias) bias = store.add(name + ".bias", Tensor({out}, 0.0));
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, int in, int out, int kernel, int stride,
               int padding, Rng& rng)
    : geom{stride, padding} {
  const double fan_in = static_cast<double>(in) * kernel * kernel;
  weight = store.add(name + ".weight", uniform_tensor({out, in, kernel, kernel}, std::sqrt(6.0 / fan_in), rng));
  bias = store.add(name + ".bias", Tensor({out}, 0.0));
}

ConvTranspose2d::ConvTranspose2d(ParameterStore& store, const std::string& name, int in, int out, int kernel,
                                 int stride, int padding, Rng& rng)
    : geom{stride, padding} {
  // Each output pixel receives roughly (kernel/stride)^2 taps per input channel.
  const double taps = static_cast<double>(kernel) / stride;
  const double fan_in = static_cast<double>(in) * taps * taps;
  weight = store.add(name + ".weight", uniform_tensor({in, out, kernel, kernel}, std::sqrt(6.0 / fan_in), rng));
  bias = store.add(name + ".bias", Tensor({out}, 0.0));
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, int width) {
  gain = store.add(name + ".gain", Tensor({width}, 1.0));
  shift = store.add(name + ".shift", Tensor({width}, 0.0));
}

LstmCell::LstmCell(ParameterStore& store, const std::string& name, int input, int hidden, Rng& rng)
    : hidden_(hidden) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  input_map.weight = store.add(name + ".w_ih", uniform_tensor({4 * hidden, input}, bound, rng));
  hidden_map.weight = store.add(name + ".w_hh", uniform_tensor({4 * hidden, hidden}, bound, rng));
  Tensor b({4 * hidden}, 0.0);
  for (int i = hidden; i < 2 * hidden; ++i) b[i] = 1.0;  // forget gate
  input_map.bias = store.add(name + ".bias", std::move(b));
}

std::pair<ad::Var, ad::Var> LstmCell::operator()(const ad::Var& x, const ad::Var& h, const ad::Var& c) const {
  using namespace ad;
  const Var gates = add(input_map(x), hidden_map(h));
  const Var i = sigmoid(slice(gates, -1, 0, hidden_));
  const Var f = sigmoid(slice(gates, -1, hidden_, hidden_));
  const Var g = ad::tanh(slice(gates, -1, 2 * hidden_, hidden_));
  const Var o = sigmoid(slice(gates, -1, 3 * hidden_, hidden_));
  const Var c_next = f * c + i * g;
  const Var h_next = o * ad::tanh(c_next);
  return {h_next, c_next};
}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& name, int width, int heads,
                                       Rng& rng)
    : width_(width), heads_(heads) {
  require(heads > 0 && width % heads == 0, "attention width must divide evenly across heads");
  query_map = Linear(store, name + ".q", width, width, rng);
  key_map = Linear(store, name + ".k", width, width, rng);
  value_map = Linear(store, name + ".v", width, width, rng);
  output_map = Linear(store, name + ".o", width, width, rng);
}

ad::Var MultiHeadAttention::operator()(const ad::Var& queries, const ad::Var& memory) const {
  using namespace ad;
  require(queries.shape().size() == 2 && memory.shape().size() == 2, "attention expects rank-2 inputs");
  require(memory.dim(0) > 0, "attention over an empty key/value set");
  const Var q = query_map(queries);
  const Var k = key_map(memory);
  const Var v = value_map(memory);
  const int head_width = width_ / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_width));
  std::vector<Var> outputs;
  outputs.reserve(heads_);
  for (int hd = 0; hd < heads_; ++hd) {
    const Var qh = slice(q, 1, hd * head_width, head_width);
    const Var kh = slice(k, 1, hd * head_width, head_width);
    const Var vh = slice(v, 1, hd * head_width, head_width);
    const Var weights = softmax(scale(matmul(qh, kh, false, true), inv_sqrt));
    outputs.push_back(matmul(weights, vh));
  }
  return output_map(heads_ == 1 ? outputs.front() : concat(outputs, 1));
}

}  // namespace a3rnn::nn
