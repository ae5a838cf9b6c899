#include "a3rnn/attention.hpp"

#include <cmath>

#include "a3rnn/errors.hpp"

namespace a3rnn::attention {
namespace {

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw InvalidInputError(std::string(what) + ": non-finite input");
}

}  // namespace

void validate(const FeatureMaps& maps) {
  const Shape& bu = maps.f_bu.shape();
  const Shape& td = maps.f_td.shape();
  require(bu.size() == td.size() && (bu.size() == 3 || bu.size() == 4),
          "feature maps must both be [C,H,W] or [N,C,H,W]");
  const std::size_t r = bu.size();
  require(bu[r - 1] == td[r - 1] && bu[r - 2] == td[r - 2], "feature maps disagree on the spatial grid");
  if (r == 4) require(bu[0] == td[0], "feature maps disagree on batch size");
  require(maps.f_bu.value().all_finite() && maps.f_td.value().all_finite(), "feature maps contain non-finite values");
}

ad::Var spatial_softmax(const ad::Var& logits, double temperature) {
  require(temperature > 0.0, "spatial_softmax: temperature must be positive");
  const Shape& s = logits.shape();
  require(s.size() >= 3, "spatial_softmax expects [..., C, H, W]");
  require_finite(logits.value(), "spatial_softmax");
  const int h = s[s.size() - 2], w = s.back();
  Shape flat(s.begin(), s.end() - 2);
  flat.push_back(h * w);
  const ad::Var scaled = temperature == 1.0 ? logits : ad::scale(logits, 1.0 / temperature);
  return ad::reshape(ad::softmax(ad::reshape(scaled, flat)), s);
}

void validate_attention_maps(const Tensor& maps, double tolerance) {
  require(maps.rank() >= 3, "attention maps must be [..., C, H, W]");
  const std::size_t plane = static_cast<std::size_t>(maps.dim(-1)) * maps.dim(-2);
  for (std::size_t c = 0; c < maps.size() / plane; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = maps[c * plane + i];
      require(v >= 0.0, "attention map has a negative entry");
      total += v;
    }
    require(std::abs(total - 1.0) <= tolerance, "attention map channel does not sum to one");
  }
}

ad::Var extract_pseudo_queries(const ad::Var& m_bu, const ad::Var& f_td) {
  const Shape& ms = m_bu.shape();
  const Shape& fs = f_td.shape();
  require(ms.size() == fs.size() && (ms.size() == 3 || ms.size() == 4),
          "extract_pseudo_queries expects matching [C,H,W]/[D,H,W] or batched ranks");
  const std::size_t r = ms.size();
  require(ms[r - 1] == fs[r - 1] && ms[r - 2] == fs[r - 2],
          "extract_pseudo_queries: spatial shapes " + shape_string(ms) + " and " + shape_string(fs) + " differ");
  const int plane = ms[r - 1] * ms[r - 2];
  if (r == 3) {
    return ad::matmul(ad::reshape(m_bu, {ms[0], plane}), ad::reshape(f_td, {fs[0], plane}), false, true);
  }
  require(ms[0] == fs[0], "extract_pseudo_queries: batch mismatch");
  return ad::matmul(ad::reshape(m_bu, {ms[0], ms[1], plane}), ad::reshape(f_td, {fs[0], fs[1], plane}), false,
                    true);
}

Tensor grid_coordinates(int height, int width) {
  Tensor coords({height * width, 2});
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      coords.at(r * width + c, 0) = (c + 0.5) / width;
      coords.at(r * width + c, 1) = (r + 0.5) / height;
    }
  return coords;
}

ad::Var spatial_expectation(const ad::Var& probabilities, int height, int width) {
  const Shape& s = probabilities.shape();
  require(s.size() >= 2 && s.back() == height * width, "spatial_expectation: last axis must be H*W");
  const int rows = static_cast<int>(probabilities.size() / s.back());
  const ad::Var flat = ad::reshape(probabilities, {rows, height * width});
  Shape out(s.begin(), s.end() - 1);
  out.push_back(2);
  return ad::reshape(ad::matmul(flat, ad::Var(grid_coordinates(height, width))), out);
}

ad::Var estimate_td_points(const ad::Var& q_a, const ad::Var& f_td, double temperature) {
  require(temperature > 0.0, "estimate_td_points: temperature must be positive");
  require(q_a.shape().size() == 2 && f_td.shape().size() == 3, "estimate_td_points expects [K,D] and [D,H,W]");
  const int d = f_td.dim(0), h = f_td.dim(1), w = f_td.dim(2);
  require(q_a.dim(1) == d, "estimate_td_points: query width " + std::to_string(q_a.dim(1)) +
                               " does not match feature depth " + std::to_string(d));
  const ad::Var similarity = ad::scale(ad::matmul(q_a, ad::reshape(f_td, {d, h * w})),
                                       1.0 / (std::sqrt(static_cast<double>(d)) * temperature));
  if (!similarity.value().all_finite()) throw InvalidInputError("estimate_td_points: non-finite similarity");
  return spatial_expectation(ad::softmax(similarity), h, w);
}

Tensor extract_bu_points(const Tensor& m_bu) {
  require(m_bu.rank() == 3 || m_bu.rank() == 4, "extract_bu_points expects [C,H,W] or [N,C,H,W]");
  const int h = m_bu.dim(-2), w = m_bu.dim(-1);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t channels = m_bu.size() / plane;
  Shape shape(m_bu.shape().begin(), m_bu.shape().end() - 2);
  shape.push_back(2);
  Tensor points(shape);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* map = m_bu.data() + c * plane;
    std::size_t best = 0;
    for (std::size_t i = 1; i < plane; ++i)
      if (map[i] > map[best]) best = i;
    points[2 * c] = (static_cast<double>(best % w) + 0.5) / w;
    points[2 * c + 1] = (static_cast<double>(best / w) + 0.5) / h;
  }
  return points;
}

TdQueryGenerator::TdQueryGenerator(nn::ParameterStore& store, const std::string& name, int state_width,
                                   int hidden_width, int n_td, int d_td, Rng& rng)
    : hidden(store, name + ".hidden", state_width, hidden_width, rng),
      output(store, name + ".out", hidden_width, n_td * d_td, rng),
      n_td_(n_td),
      d_td_(d_td) {}

ad::Var TdQueryGenerator::operator()(const ad::Var& h_shared) const {
  require(h_shared.shape().size() == 1, "TD query generator expects a hidden-state vector");
  return ad::reshape(output(ad::tanh(hidden(h_shared))), {n_td_, d_td_});
}

TransformerFusion::TransformerFusion(nn::ParameterStore& store, const std::string& name,
                                     const TransformerFusionConfig& config, Rng& rng)
    : config_(config) {
  const int d = config.width, ff = config.feed_forward;
  if (config.use_encoder) {
    enc_self_ = nn::MultiHeadAttention(store, name + ".enc.self", d, config.heads, rng);
    enc_norm1_ = nn::LayerNorm(store, name + ".enc.norm1", d);
    enc_ff_ = {nn::Linear(store, name + ".enc.ff1", d, ff, rng), nn::Linear(store, name + ".enc.ff2", ff, d, rng)};
    enc_norm2_ = nn::LayerNorm(store, name + ".enc.norm2", d);
  }
  dec_self_ = nn::MultiHeadAttention(store, name + ".dec.self", d, config.heads, rng);
  dec_norm1_ = nn::LayerNorm(store, name + ".dec.norm1", d);
  dec_cross_ = nn::MultiHeadAttention(store, name + ".dec.cross", d, config.heads, rng);
  dec_norm2_ = nn::LayerNorm(store, name + ".dec.norm2", d);
  dec_ff_ = {nn::Linear(store, name + ".dec.ff1", d, ff, rng), nn::Linear(store, name + ".dec.ff2", ff, d, rng)};
  dec_norm3_ = nn::LayerNorm(store, name + ".dec.norm3", d);
}

ad::Var TransformerFusion::operator()(const ad::Var& q_bu, const ad::Var& q_td) const {
  using ad::add;
  require(q_bu.shape().size() == 2 && q_td.shape().size() == 2, "fusion expects rank-2 query sets");
  require(q_bu.dim(0) > 0, "fusion: empty bottom-up query set");
  require(q_bu.dim(1) == config_.width && q_td.dim(1) == config_.width, "fusion: query width mismatch");
  ad::Var memory = q_bu;
  if (config_.use_encoder) {
    memory = enc_norm1_(add(memory, enc_self_(memory, memory)));
    memory = enc_norm2_(add(memory, enc_ff_(memory)));
  }
  ad::Var x = dec_norm1_(add(q_td, dec_self_(q_td, q_td)));
  x = dec_norm2_(add(x, dec_cross_(x, memory)));
  return dec_norm3_(add(x, dec_ff_(x)));
}

MlpFusion::MlpFusion(nn::ParameterStore& store, const std::string& name, int width, Rng& rng)
    : hidden(store, name + ".hidden", 2 * width, 2 * width, rng), output(store, name + ".out", 2 * width, width, rng) {}

ad::Var MlpFusion::operator()(const ad::Var& q_bu, const ad::Var& q_td) const {
  require(q_bu.shape().size() == 2 && q_td.shape().size() == 2, "fusion expects rank-2 query sets");
  require(q_bu.dim(0) > 0, "fusion: empty bottom-up query set");
  require(q_bu.dim(1) == q_td.dim(1), "fusion: query width mismatch");
  const int n_td = q_td.dim(0), d = q_td.dim(1);
  const ad::Var pooled = ad::reshape(ad::mean_rows(q_bu), {1, d});
  std::vector<ad::Var> rows(static_cast<std::size_t>(n_td), pooled);
  const ad::Var tiled = ad::concat(rows, 0);
  const std::vector<ad::Var> both{q_td, tiled};
  return output(ad::relu(hidden(ad::concat(both, 1))));
}

}  // namespace a3rnn::attention
