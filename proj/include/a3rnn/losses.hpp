#pragma once

#include <nlohmann/json.hpp>

#include "a3rnn/ops.hpp"

namespace a3rnn::losses {

/// Scalar values of every objective term. Disabled terms are reported as zero.
struct LossBreakdown {
  double body = 0.0;
  double rec_per = 0.0;
  double rec_fov_enc = 0.0;
  double rec_fov_dec = 0.0;
  double reg_bu_consist = 0.0;
  double reg_fov_consist = 0.0;
  double reg_displacement = 0.0;
  double reg_bounds = 0.0;  ///< reg_bounds_enc + reg_bounds_dec
  double reg_bounds_enc = 0.0;
  double reg_bounds_dec = 0.0;
  double total = 0.0;

  double reconstruction_sum() const { return rec_per + rec_fov_enc + rec_fov_dec; }
  double regularization_sum() const { return reg_bu_consist + reg_fov_consist + reg_displacement + reg_bounds; }
};

nlohmann::json to_json(const LossBreakdown& loss);
LossBreakdown loss_from_json(const nlohmann::json& j);

/// Largest per-step TD displacement (normalized units) tolerated without penalty.
inline constexpr double kDisplacementThreshold = 0.1;

/// MSE with a one-step shift: prediction t is scored against ground truth t+1.
/// joint_hat, joint_true: [T, D_J].
ad::Var body_loss(const ad::Var& joint_hat, const Tensor& joint_true);

/// Mean over steps and points of max(0, |pt_t - pt_{t-1}| - threshold). pt_td: [T, K, 2].
ad::Var displacement_hinge(const ad::Var& pt_td, double threshold = kDisplacementThreshold);

/// Mean over points of the squared distance to the point's clamp into [0,1]^2. points: [..., 2].
ad::Var bounds_penalty(const ad::Var& points);

struct ReconstructionTerms {
  ad::Var per;      ///< peripheral prediction vs next frame
  ad::Var fov_enc;  ///< encoder-side foveal patches vs current-frame crops
  ad::Var fov_dec;  ///< decoder-side foveal patches vs next-frame crops
};

/// MSE of each reconstruction against its target. Each pair must agree in shape.
ReconstructionTerms reconstruction_loss(const ad::Var& peripheral, const Tensor& peripheral_target,
                                        const ad::Var& fov_enc, const Tensor& fov_enc_target, const ad::Var& fov_dec,
                                        const Tensor& fov_dec_target);

struct RegularizationTerms {
  ad::Var bu_consist;
  ad::Var fov_consist;
  ad::Var displacement;
  ad::Var bounds_enc;
  ad::Var bounds_dec;
};

/// pt_bu [T-1, N_BU, 2] encoder points aligned with pt_bu_hat [T-1, N_BU, 2] predicted one
/// step earlier; fov_enc_next / fov_dec likewise aligned; pt_td [T, N_TD, 2]; pt_td_hat [T, N_TD, 2].
RegularizationTerms regularization_loss(const Tensor& pt_bu, const ad::Var& pt_bu_hat, const ad::Var& fov_enc_next,
                                        const ad::Var& fov_dec, const ad::Var& pt_td, const ad::Var& pt_td_hat);

struct LossWeights {
  double alpha = 0.1;  ///< reconstruction
  double beta = 0.1;   ///< regularization
};

/// body + alpha * (reconstruction terms) + beta * (regularization terms).
double total_loss(const LossBreakdown& breakdown, const LossWeights& weights);

}  // namespace a3rnn::losses
