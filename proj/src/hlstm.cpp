#include "a3rnn/hlstm.hpp"

#include "a3rnn/errors.hpp"

namespace a3rnn {

HierarchicalLstm::HierarchicalLstm(nn::ParameterStore& store, const std::string& name, const HlstmConfig& config,
                                   Rng& rng)
    : config_(config) {
  require(config.n_td > 0 && config.n_bu > 0 && config.joint_dim > 0, "H-LSTM sizes must be positive");
  const int m = config.modality_width, s = config.shared_width, p = config.shared_projection;
  td_from_shared = nn::Linear(store, name + ".td_from_shared", s, p, rng);
  bu_from_shared = nn::Linear(store, name + ".bu_from_shared", s, p, rng);
  joint_from_shared = nn::Linear(store, name + ".joint_from_shared", s, p, rng);
  td_cell = nn::LstmCell(store, name + ".td", 2 * config.n_td + p, m, rng);
  bu_cell = nn::LstmCell(store, name + ".bu", 2 * config.n_bu + p, m, rng);
  joint_cell = nn::LstmCell(store, name + ".joint", config.joint_dim + p, m, rng);
  shared_cell = nn::LstmCell(store, name + ".shared", 3 * m, s, rng);
  td_readout = nn::Linear(store, name + ".td_out", m, 2 * config.n_td, rng);
  bu_readout = nn::Linear(store, name + ".bu_out", m, 2 * config.n_bu, rng);
  joint_readout = nn::Linear(store, name + ".joint_out", m, config.joint_dim, rng);
}

HlstmState HierarchicalLstm::init_state() const {
  const auto zeros = [](int n) { return ad::Var(Tensor({n}, 0.0)); };
  const int m = config_.modality_width, s = config_.shared_width;
  return {zeros(m), zeros(m), zeros(m), zeros(m), zeros(m), zeros(m), zeros(s), zeros(s)};
}

std::pair<StepPrediction, HlstmState> HierarchicalLstm::step(const ad::Var& pt_td, const ad::Var& pt_bu,
                                                             const ad::Var& joint, const HlstmState& state) const {
  using ad::Var;
  require(pt_td.shape() == Shape{config_.n_td, 2}, "hlstm_step: pt_td shape " + shape_string(pt_td.shape()));
  require(pt_bu.shape() == Shape{config_.n_bu, 2}, "hlstm_step: pt_bu shape " + shape_string(pt_bu.shape()));
  require(joint.shape() == Shape{config_.joint_dim}, "hlstm_step: joint shape " + shape_string(joint.shape()));
  require(state.h_shared.defined() && state.h_shared.shape() == Shape{config_.shared_width},
          "hlstm_step: state does not match this model (use init_state)");

  const auto input_for = [&](const Var& x, const nn::Linear& from_shared) {
    const std::vector<Var> parts{ad::reshape(x, {static_cast<int>(x.size())}), from_shared(state.h_shared)};
    return ad::concat(parts, 0);
  };
  auto [h_td, c_td] = td_cell(input_for(pt_td, td_from_shared), state.h_td, state.c_td);
  auto [h_bu, c_bu] = bu_cell(input_for(pt_bu, bu_from_shared), state.h_bu, state.c_bu);
  auto [h_joint, c_joint] = joint_cell(input_for(joint, joint_from_shared), state.h_joint, state.c_joint);
  const std::vector<Var> hiddens{h_td, h_bu, h_joint};
  auto [h_shared, c_shared] = shared_cell(ad::concat(hiddens, 0), state.h_shared, state.c_shared);

  StepPrediction prediction{ad::reshape(td_readout(h_td), {config_.n_td, 2}),
                            ad::reshape(bu_readout(h_bu), {config_.n_bu, 2}), joint_readout(h_joint)};
  HlstmState next{h_td, c_td, h_bu, c_bu, h_joint, c_joint, h_shared, c_shared};
  return {std::move(prediction), std::move(next)};
}

}  // namespace a3rnn
