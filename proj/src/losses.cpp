#include "a3rnn/losses.hpp"

#include "a3rnn/errors.hpp"

namespace a3rnn::losses {

nlohmann::json to_json(const LossBreakdown& l) {
  return {{"body", l.body},
          {"rec_per", l.rec_per},
          {"rec_fov_enc", l.rec_fov_enc},
          {"rec_fov_dec", l.rec_fov_dec},
          {"reg_bu_consist", l.reg_bu_consist},
          {"reg_fov_consist", l.reg_fov_consist},
          {"reg_displacement", l.reg_displacement},
          {"reg_bounds", l.reg_bounds},
          {"reg_bounds_enc", l.reg_bounds_enc},
          {"reg_bounds_dec", l.reg_bounds_dec},
          {"total", l.total}};
}

LossBreakdown loss_from_json(const nlohmann::json& j) {
  LossBreakdown l;
  l.body = j.at("body");
  l.rec_per = j.at("rec_per");
  l.rec_fov_enc = j.at("rec_fov_enc");
  l.rec_fov_dec = j.at("rec_fov_dec");
  l.reg_bu_consist = j.at("reg_bu_consist");
  l.reg_fov_consist = j.at("reg_fov_consist");
  l.reg_displacement = j.at("reg_displacement");
  l.reg_bounds = j.at("reg_bounds");
  l.reg_bounds_enc = j.at("reg_bounds_enc");
  l.reg_bounds_dec = j.at("reg_bounds_dec");
  l.total = j.at("total");
  return l;
}

ad::Var body_loss(const ad::Var& joint_hat, const Tensor& joint_true) {
  require(joint_hat.shape().size() == 2 && joint_hat.shape() == joint_true.shape(),
          "body_loss: prediction " + shape_string(joint_hat.shape()) + " and target " +
              shape_string(joint_true.shape()) + " must be equal [T, D_J]");
  const int steps = joint_hat.dim(0), dof = joint_hat.dim(1);
  require(steps >= 2, "body_loss needs at least two timesteps");
  Tensor shifted({steps - 1, dof});
  std::copy(joint_true.data() + dof, joint_true.data() + joint_true.size(), shifted.data());
  return ad::mse(ad::slice(joint_hat, 0, 0, steps - 1), shifted);
}

ad::Var displacement_hinge(const ad::Var& pt_td, double threshold) {
  require(pt_td.shape().size() == 3 && pt_td.dim(2) == 2, "displacement_hinge expects [T, K, 2]");
  const int steps = pt_td.dim(0);
  if (steps < 2) return ad::Var(Tensor::scalar(0.0));
  const ad::Var delta = ad::sub(ad::slice(pt_td, 0, 1, steps - 1), ad::slice(pt_td, 0, 0, steps - 1));
  return ad::mean(ad::relu(ad::add_scalar(ad::row_norm(delta), -threshold)));
}

ad::Var bounds_penalty(const ad::Var& points) {
  require(!points.shape().empty() && points.shape().back() == 2, "bounds_penalty expects [..., 2]");
  // x - clamp(x, 0, 1) == relu(x - 1) - relu(-x)
  const ad::Var outside = ad::sub(ad::relu(ad::add_scalar(points, -1.0)), ad::relu(ad::scale(points, -1.0)));
  return ad::scale(ad::sum(ad::square(outside)), 2.0 / static_cast<double>(points.size()));
}

ReconstructionTerms reconstruction_loss(const ad::Var& peripheral, const Tensor& peripheral_target,
                                        const ad::Var& fov_enc, const Tensor& fov_enc_target, const ad::Var& fov_dec,
                                        const Tensor& fov_dec_target) {
  require(peripheral.shape() == peripheral_target.shape(), "reconstruction_loss: peripheral misaligned");
  require(fov_enc.shape() == fov_enc_target.shape(), "reconstruction_loss: encoder-side foveal misaligned");
  require(fov_dec.shape() == fov_dec_target.shape(), "reconstruction_loss: decoder-side foveal misaligned");
  return {ad::mse(peripheral, peripheral_target), ad::mse(fov_enc, fov_enc_target), ad::mse(fov_dec, fov_dec_target)};
}

RegularizationTerms regularization_loss(const Tensor& pt_bu, const ad::Var& pt_bu_hat, const ad::Var& fov_enc_next,
                                        const ad::Var& fov_dec, const ad::Var& pt_td, const ad::Var& pt_td_hat) {
  require(pt_bu.shape() == pt_bu_hat.shape(), "regularization_loss: BU points misaligned");
  require(fov_enc_next.shape() == fov_dec.shape(), "regularization_loss: foveal reconstructions misaligned");
  require(pt_td.shape() == pt_td_hat.shape(), "regularization_loss: TD point sequences misaligned");
  return {ad::mse(pt_bu_hat, pt_bu), ad::mse(fov_enc_next, fov_dec), displacement_hinge(pt_td),
          bounds_penalty(pt_td), bounds_penalty(pt_td_hat)};
}

double total_loss(const LossBreakdown& b, const LossWeights& w) {
  if (w.alpha < 0.0 || w.beta < 0.0) throw ConfigError("loss weights must be non-negative");
  return b.body + w.alpha * b.reconstruction_sum() + w.beta * b.regularization_sum();
}

}  // namespace a3rnn::losses
