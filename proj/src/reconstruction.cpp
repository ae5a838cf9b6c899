#include "a3rnn/reconstruction.hpp"

#include <algorithm>
#include <cmath>

#include "a3rnn/errors.hpp"

namespace a3rnn::reconstruction {
namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

HeatmapResult inverse_spatial_softmax(const ad::Var& points, int height, int width, double sharpness) {
  const Shape& s = points.shape();
  require((s.size() == 2 || s.size() == 3) && s.back() == 2, "inverse_spatial_softmax expects [K,2] or [N,K,2]");
  require(sharpness > 0.0, "inverse_spatial_softmax: sharpness must be positive");
  require(height > 0 && width > 0, "inverse_spatial_softmax: empty grid");
  const std::size_t count = points.size() / 2;
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  Shape shape(s.begin(), s.end() - 1);
  shape.push_back(height);
  shape.push_back(width);

  Tensor maps(shape);
  std::vector<double> px(count), py(count);
  std::vector<unsigned char> free_x(count), free_y(count);
  int clamped = 0;
  const double inv_two_var = 1.0 / (2.0 * sharpness * sharpness);
  for (std::size_t k = 0; k < count; ++k) {
    const double x = points.value()[2 * k], y = points.value()[2 * k + 1];
    px[k] = std::clamp(x, 0.0, 1.0);
    py[k] = std::clamp(y, 0.0, 1.0);
    free_x[k] = px[k] == x;
    free_y[k] = py[k] == y;
    if (!free_x[k] || !free_y[k]) ++clamped;
    double* map = maps.data() + k * plane;
    // Log-domain normalization keeps the delta limit finite.
    double best = -INFINITY;
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) {
        const double dx = (c + 0.5) / width - px[k], dy = (r + 0.5) / height - py[k];
        const double e = -(dx * dx + dy * dy) * inv_two_var;
        map[r * width + c] = e;
        best = std::max(best, e);
      }
    double total = 0.0;
    for (std::size_t i = 0; i < plane; ++i) total += (map[i] = std::exp(map[i] - best));
    for (std::size_t i = 0; i < plane; ++i) map[i] /= total;
  }

  ad::Var out = ad::make_node(std::move(maps), {points}, [=](ad::Node& n) {
    double* g = ad::input_grad(n, 0);
    if (!g) return;
    const double inv_var = 1.0 / (sharpness * sharpness);
    for (std::size_t k = 0; k < count; ++k) {
      const double* u = n.value.data() + k * plane;
      const double* gy = n.grad.data() + k * plane;
      // d u_i / d p = u_i (a_i - sum_j u_j a_j) with a_i = (coord_i - p) / sharpness^2.
      double mean_ax = 0.0, mean_ay = 0.0, dot = 0.0, dot_ax = 0.0, dot_ay = 0.0;
      for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * width + c;
          const double ax = ((c + 0.5) / width - px[k]) * inv_var;
          const double ay = ((r + 0.5) / height - py[k]) * inv_var;
          mean_ax += u[i] * ax;
          mean_ay += u[i] * ay;
          dot += gy[i] * u[i];
          dot_ax += gy[i] * u[i] * ax;
          dot_ay += gy[i] * u[i] * ay;
        }
      if (free_x[k]) g[2 * k] += dot_ax - dot * mean_ax;
      if (free_y[k]) g[2 * k + 1] += dot_ay - dot * mean_ay;
    }
  });
  return {out, clamped};
}

int nearest_cell(double coordinate, int cells) {
  const double scaled = std::floor(coordinate * cells);
  if (!(scaled >= 0.0)) return 0;
  return static_cast<int>(std::min<double>(scaled, cells - 1));
}

Tensor snap_to_cells(const Tensor& points, int height, int width) {
  require(points.rank() >= 1 && points.dim(-1) == 2, "snap_to_cells expects [..., 2]");
  Tensor out(points.shape());
  for (std::size_t k = 0; k < points.size() / 2; ++k) {
    out[2 * k] = (nearest_cell(points[2 * k], width) + 0.5) / width;
    out[2 * k + 1] = (nearest_cell(points[2 * k + 1], height) + 0.5) / height;
  }
  return out;
}

ad::Var crop_attention_area(const ad::Var& f_td, const Tensor& points, int patch) {
  const Shape& fs = f_td.shape();
  require(patch > 0 && patch % 2 == 1, "crop_attention_area: patch must be odd");
  require(fs.size() == 3 || fs.size() == 4, "crop_attention_area expects [D,H,W] or [N,D,H,W]");
  const bool batched = fs.size() == 4;
  const int batch = batched ? fs[0] : 1;
  const int depth = fs[fs.size() - 3], h = fs[fs.size() - 2], w = fs.back();
  require(points.rank() == (batched ? 3 : 2) && points.dim(-1) == 2, "crop_attention_area: points shape mismatch");
  if (batched) require(points.dim(0) == batch, "crop_attention_area: batch mismatch");
  const int per = points.dim(-2);
  const int half = patch / 2;
  const int windows = batch * per;

  // Source offset of every output element, -1 for padding.
  auto index = std::make_shared<std::vector<std::ptrdiff_t>>(static_cast<std::size_t>(windows) * depth * patch * patch);
  Tensor out({windows, depth, patch, patch});
  std::size_t o = 0;
  for (int b = 0; b < batch; ++b)
    for (int k = 0; k < per; ++k) {
      const std::size_t p = static_cast<std::size_t>(b * per + k) * 2;
      const int col = nearest_cell(points[p], w), row = nearest_cell(points[p + 1], h);
      for (int d = 0; d < depth; ++d)
        for (int i = 0; i < patch; ++i)
          for (int j = 0; j < patch; ++j, ++o) {
            const int r = row - half + i, c = col - half + j;
            if (r < 0 || r >= h || c < 0 || c >= w) {
              (*index)[o] = -1;
              continue;
            }
            const std::ptrdiff_t src = ((static_cast<std::ptrdiff_t>(b) * depth + d) * h + r) * w + c;
            (*index)[o] = src;
            out[o] = f_td.value()[static_cast<std::size_t>(src)];
          }
    }
  return ad::make_node(std::move(out), {f_td}, [index](ad::Node& n) {
    double* g = ad::input_grad(n, 0);
    if (!g) return;
    for (std::size_t i = 0; i < index->size(); ++i)
      if ((*index)[i] >= 0) g[(*index)[i]] += n.grad[i];
  });
}

Tensor foveal_target_crop(const Tensor& image, std::array<double, 2> center, int patch) {
  require(image.rank() == 3, "foveal_target_crop expects [C,H,W]");
  require(patch > 0, "foveal_target_crop: patch must be positive");
  const int channels = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int x0 = static_cast<int>(std::floor(center[0] * w)) - patch / 2;
  const int y0 = static_cast<int>(std::floor(center[1] * h)) - patch / 2;
  Tensor out({channels, patch, patch});
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < patch; ++i) {
      const int r = y0 + i;
      if (r < 0 || r >= h) continue;
      for (int j = 0; j < patch; ++j) {
        const int col = x0 + j;
        if (col >= 0 && col < w) out.at(c, i, j) = image.at(c, r, col);
      }
    }
  return out;
}

PeripheralDecoder::PeripheralDecoder(nn::ParameterStore& store, const std::string& name,
                                     const DecoderGeometry& geometry, Rng& rng)
    : geometry_(geometry) {
  require(geometry.image % geometry.grid == 0 && is_power_of_two(geometry.image / geometry.grid),
          "image size must be the feature grid times a power of two");
  int channels = geometry.feature_depth;
  int size = geometry.grid;
  for (int i = 0; size < geometry.image; ++i, size *= 2) {
    const int next = std::max(channels / 2, 4);
    upsample_.emplace_back(store, name + ".up" + std::to_string(i), channels, next, 4, 2, 1, rng);
    channels = next;
  }
  head_ = nn::Conv2d(store, name + ".head", channels, 3, 3, 1, 1, rng);
}

ad::Var PeripheralDecoder::mask_from_points(const ad::Var& points, int* clamped) const {
  require(points.shape().size() == 3, "peripheral mask expects [N, K, 2]");
  const int batch = points.dim(0), count = points.dim(1), g = geometry_.grid;
  HeatmapResult heat = inverse_spatial_softmax(points, g, g, geometry_.sharpness);
  if (clamped) *clamped += heat.clamped_points;
  const ad::Var summed = ad::scale(ad::mean_rows(ad::reshape(heat.maps, {batch, count, g * g})), count);
  return ad::reshape(ad::clamp(summed, 0.0, 1.0), {batch, g, g});
}

ad::Var PeripheralDecoder::decode(const ad::Var& masked_features) const {
  ad::Var x = masked_features;
  for (const auto& layer : upsample_) x = ad::relu(layer(x));
  return ad::sigmoid(head_(x));
}

ad::Var PeripheralDecoder::operator()(const ad::Var& pt_bu_hat, const ad::Var& f_td_skip, int* clamped) const {
  require(f_td_skip.shape().size() == 4 && f_td_skip.dim(1) == geometry_.feature_depth,
          "peripheral decoder: skip features must be [N, D_TD, H, W]");
  require(pt_bu_hat.shape().size() == 3 && pt_bu_hat.dim(0) == f_td_skip.dim(0),
          "peripheral decoder: points/features batch mismatch");
  return decode(ad::mask_channels(f_td_skip, mask_from_points(pt_bu_hat, clamped)));
}

FovealDecoder::FovealDecoder(nn::ParameterStore& store, const std::string& name, const DecoderGeometry& geometry,
                             Rng& rng) {
  require(geometry.foveal_patch >= 8 && is_power_of_two(geometry.foveal_patch / 8) && geometry.foveal_patch % 8 == 0,
          "foveal patch size must be 8 times a power of two");
  int channels = geometry.feature_depth;
  // 5x5 -> 8x8 first, then doubling up to the patch size.
  int next = std::max(channels / 2, 4);
  upsample_.emplace_back(store, name + ".up0", channels, next, 4, 2, 2, rng);
  channels = next;
  for (int size = 8, i = 1; size < geometry.foveal_patch; size *= 2, ++i) {
    next = std::max(channels / 2, 4);
    upsample_.emplace_back(store, name + ".up" + std::to_string(i), channels, next, 4, 2, 1, rng);
    channels = next;
  }
  head_ = nn::Conv2d(store, name + ".head", channels, 3, 3, 1, 1, rng);
}

ad::Var FovealDecoder::logits(const ad::Var& patches) const {
  require(patches.shape().size() == 4 && patches.dim(2) == 5 && patches.dim(3) == 5,
          "foveal decoder expects [M, D, 5, 5] patches");
  ad::Var x = patches;
  for (const auto& layer : upsample_) x = ad::relu(layer(x));
  return head_(x);
}

}  // namespace a3rnn::reconstruction
