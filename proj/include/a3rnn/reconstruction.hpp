#pragma once

#include <array>
#include <vector>

#include "a3rnn/layers.hpp"

// Peripheral and foveal decoders. The peripheral branch masks skip-connected
// features with heatmaps regenerated from predicted BU points and decodes a
// whole frame; the foveal branch decodes small feature windows around TD points.

namespace a3rnn::reconstruction {

struct HeatmapResult {
  ad::Var maps;         ///< [..., K, H, W], every map sums to one
  int clamped_points;   ///< points that were outside [0,1]^2 and got clamped
};

/// Normalized isotropic Gaussian heatmap per point. `sharpness` is the kernel
/// standard deviation in normalized image units. points: [K, 2] or [N, K, 2].
HeatmapResult inverse_spatial_softmax(const ad::Var& points, int height, int width, double sharpness);

/// Grid cell containing a normalized coordinate, clamped to the grid.
int nearest_cell(double coordinate, int cells);

/// Replaces each point by the normalized center of its nearest grid cell.
Tensor snap_to_cells(const Tensor& points, int height, int width);

/// Feature windows of size patch x patch centered at each point's nearest
/// cell, zero-padded at borders. Differentiable with respect to f_td only.
/// [D, H, W] with points [K, 2] -> [K, D, p, p];
/// [N, D, H, W] with points [N, K, 2] -> [N*K, D, p, p].
ad::Var crop_attention_area(const ad::Var& f_td, const Tensor& points, int patch = 5);

/// P x P crop of image [C, H, W] whose top-left corner is
/// floor(center * size) - P/2 on each axis; zero-padded outside the image.
Tensor foveal_target_crop(const Tensor& image, std::array<double, 2> center, int patch);

struct DecoderGeometry {
  int feature_depth = 32;  ///< D_TD
  int grid = 16;           ///< feature grid H = W
  int image = 64;          ///< frame size H_img = W_img
  int foveal_patch = 16;   ///< P_img
  double sharpness = 0.05;
};

class PeripheralDecoder {
 public:
  PeripheralDecoder() = default;
  PeripheralDecoder(nn::ParameterStore& store, const std::string& name, const DecoderGeometry& geometry, Rng& rng);

  /// Sum of the per-point heatmaps clipped to [0, 1]: [N, K, 2] -> [N, H, W].
  ad::Var mask_from_points(const ad::Var& points, int* clamped = nullptr) const;
  /// Decodes masked features [N, D, H, W] to images [N, 3, H_img, W_img] in [0, 1].
  ad::Var decode(const ad::Var& masked_features) const;
  ad::Var operator()(const ad::Var& pt_bu_hat, const ad::Var& f_td_skip, int* clamped = nullptr) const;

 private:
  DecoderGeometry geometry_;
  std::vector<nn::ConvTranspose2d> upsample_;
  nn::Conv2d head_;
};

class FovealDecoder {
 public:
  FovealDecoder() = default;
  FovealDecoder(nn::ParameterStore& store, const std::string& name, const DecoderGeometry& geometry, Rng& rng);

  /// Pre-activation output [M, 3, P, P] for patches [M, D, 5, 5].
  ad::Var logits(const ad::Var& patches) const;
  ad::Var operator()(const ad::Var& patches) const { return ad::sigmoid(logits(patches)); }

 private:
  std::vector<nn::ConvTranspose2d> upsample_;
  nn::Conv2d head_;
};

}  // namespace a3rnn::reconstruction
