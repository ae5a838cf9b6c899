#pragma once

// Shared test helpers: random fixtures, central-difference gradient checks and
// brute-force loop oracles that do not reuse library code paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "a3rnn/model.hpp"
#include "a3rnn/ops.hpp"

namespace a3rnn::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Random non-negative maps [C, H, W], each channel summing to one.
inline Tensor random_distribution(int channels, int height, int width, Rng& rng) {
  Tensor t({channels, height, width});
  const int plane = height * width;
  for (int c = 0; c < channels; ++c) {
    double total = 0.0;
    for (int i = 0; i < plane; ++i) total += t[static_cast<std::size_t>(c * plane + i)] = rng.uniform(0.01, 1.0);
    for (int i = 0; i < plane; ++i) t[static_cast<std::size_t>(c * plane + i)] /= total;
  }
  return t;
}

/// Scalar projection sum(out * weights), so every output entry reaches the gradient.
inline ad::Var project(const ad::Var& out, const Tensor& weights) { return ad::sum(ad::mul(out, ad::Var(weights))); }

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Gradients smaller than this are compared on an absolute scale.
inline constexpr double kFdFloor = 1e-5;

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kFdFloor});
}

/// Compares backward() against central differences. `max_per_input` bounds the
/// entries probed per input (largest-gradient entry first, then a random sample).
inline FdReport fd_check(const std::function<ad::Var()>& loss, const std::vector<ad::Var>& inputs, double step = 1e-4,
                         std::size_t max_per_input = std::numeric_limits<std::size_t>::max(), std::uint64_t seed = 1) {
  for (auto input : inputs) input.zero_grad();
  ad::backward(loss());
  FdReport report;
  Rng rng(seed);
  for (auto input : inputs) {
    const Tensor grad = input.grad();
    Tensor& value = input.mutable_value();
    std::vector<std::size_t> probe;
    if (value.size() <= max_per_input) {
      for (std::size_t i = 0; i < value.size(); ++i) probe.push_back(i);
    } else {
      std::size_t largest = 0;
      for (std::size_t i = 1; i < grad.size(); ++i)
        if (std::abs(grad[i]) > std::abs(grad[largest])) largest = i;
      probe.push_back(largest);
      while (probe.size() < max_per_input) probe.push_back(rng.next() % value.size());
    }
    ad::NoGradGuard no_grad;
    for (std::size_t i : probe) {
      const double original = value[i];
      value[i] = original + step;
      const double up = loss().value().item();
      value[i] = original - step;
      const double down = loss().value().item();
      value[i] = original;
      const double numeric = (up - down) / (2.0 * step);
      report.max_rel_error = std::max(report.max_rel_error, rel_error(grad[i], numeric));
      ++report.checked;
    }
  }
  return report;
}

// Loop oracles.

inline Tensor softmax_oracle(const Tensor& logits, double temperature) {
  const int c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  Tensor out({c, h, w});
  for (int k = 0; k < c; ++k) {
    double peak = -std::numeric_limits<double>::infinity();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) peak = std::max(peak, logits.at(k, y, x) / temperature);
    double total = 0.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) total += out.at(k, y, x) = std::exp(logits.at(k, y, x) / temperature - peak);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(k, y, x) /= total;
  }
  return out;
}

inline Tensor pseudo_query_oracle(const Tensor& maps, const Tensor& features) {
  const int c = maps.dim(0), d = features.dim(0), h = maps.dim(1), w = maps.dim(2);
  Tensor out({c, d});
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) acc += maps.at(i, y, x) * features.at(j, y, x);
      out.at(i, j) = acc;
    }
  return out;
}

inline Tensor td_point_oracle(const Tensor& queries, const Tensor& features, double temperature) {
  const int k = queries.dim(0), d = queries.dim(1), h = features.dim(1), w = features.dim(2);
  Tensor out({k, 2});
  for (int q = 0; q < k; ++q) {
    std::vector<double> score(static_cast<std::size_t>(h * w));
    double peak = -std::numeric_limits<double>::infinity();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += queries.at(q, j) * features.at(j, y, x);
        const double s = dot / (std::sqrt(static_cast<double>(d)) * temperature);
        score[static_cast<std::size_t>(y * w + x)] = s;
        peak = std::max(peak, s);
      }
    double total = 0.0, ex = 0.0, ey = 0.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double p = std::exp(score[static_cast<std::size_t>(y * w + x)] - peak);
        total += p;
        ex += p * (x + 0.5) / w;
        ey += p * (y + 0.5) / h;
      }
    out.at(q, 0) = ex / total;
    out.at(q, 1) = ey / total;
  }
  return out;
}

inline Tensor bu_argmax_oracle(const Tensor& maps) {
  const int c = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
  Tensor out({c, 2});
  for (int k = 0; k < c; ++k) {
    int by = 0, bx = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (maps.at(k, y, x) > maps.at(k, by, bx)) by = y, bx = x;
    out.at(k, 0) = (bx + 0.5) / w;
    out.at(k, 1) = (by + 0.5) / h;
  }
  return out;
}

/// Window of `patch` cells around the cell containing each point, zero outside.
inline Tensor feature_crop_oracle(const Tensor& features, const Tensor& points, int patch) {
  const int d = features.dim(0), h = features.dim(1), w = features.dim(2), k = points.dim(0);
  Tensor out({k, d, patch, patch});
  for (int q = 0; q < k; ++q) {
    const int cx = std::clamp(static_cast<int>(std::floor(points.at(q, 0) * w)), 0, w - 1);
    const int cy = std::clamp(static_cast<int>(std::floor(points.at(q, 1) * h)), 0, h - 1);
    for (int j = 0; j < d; ++j)
      for (int r = 0; r < patch; ++r)
        for (int s = 0; s < patch; ++s) {
          const int y = cy - patch / 2 + r, x = cx - patch / 2 + s;
          out.at(q, j, r, s) = (y >= 0 && y < h && x >= 0 && x < w) ? features.at(j, y, x) : 0.0;
        }
  }
  return out;
}

inline Tensor image_crop_oracle(const Tensor& image, double cx, double cy, int patch) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int left = static_cast<int>(std::floor(cx * w)) - patch / 2;
  const int top = static_cast<int>(std::floor(cy * h)) - patch / 2;
  Tensor out({c, patch, patch});
  for (int k = 0; k < c; ++k)
    for (int r = 0; r < patch; ++r)
      for (int s = 0; s < patch; ++s) {
        const int y = top + r, x = left + s;
        out.at(k, r, s) = (y >= 0 && y < h && x >= 0 && x < w) ? image.at(k, y, x) : 0.0;
      }
  return out;
}

inline double cosine_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Grid 4x4 over 16 px frames, small enough for exhaustive gradient checks.
inline ModelConfig tiny_model_config(Variant variant = Variant::proposed) {
  ModelConfig c;
  c.image_size = 16;
  c.grid = 4;
  c.d_td = 8;
  c.encoder_channels = {4, 8};
  c.foveal_patch = 8;
  c.modality_width = 8;
  c.shared_width = 8;
  c.shared_projection = 4;
  c.query_hidden = 8;
  c.n_bu = 3;
  c.n_td = 2;
  c.seed = 3;
  return variant_config(variant, c);
}

/// Zero-initialized biases leave ReLU inputs exactly at the kink; jitter them
/// so finite differences see a smooth function.
inline void jitter_biases(Model& model, std::uint64_t seed, double amplitude = 0.1) {
  Rng rng(seed);
  for (const auto& p : model.parameters().entries()) {
    if (p.name.find("bias") == std::string::npos) continue;
    ad::Var v = p.var;
    for (double& x : v.mutable_value().values()) x += rng.uniform(-amplitude, amplitude);
  }
}

/// `steps` consecutive frames and joints starting at `first`.
inline env::Episode episode_window(const env::Episode& episode, int first, int steps) {
  env::Episode out = episode;
  const auto take = [&](const Tensor& t) {
    std::vector<Tensor> rows;
    for (int i = 0; i < steps; ++i) rows.push_back(t.slice0(first + i));
    return stack(rows);
  };
  out.frames = take(episode.frames);
  out.joints = take(episode.joints);
  return out;
}

}  // namespace a3rnn::testing
