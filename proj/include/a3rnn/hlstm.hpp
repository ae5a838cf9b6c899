#pragma once

#include <utility>

#include "a3rnn/layers.hpp"

// Hierarchical LSTM: one LSTM per modality (TD points, BU points, joints)
// coupled through a smaller shared LSTM. The shared LSTM reads the three
// modality hidden states; a projection of its previous hidden state is
// appended to every modality input on the next step.

namespace a3rnn {

struct HlstmConfig {
  int n_td = 4;
  int n_bu = 16;
  int joint_dim = 4;
  int modality_width = 64;
  int shared_width = 32;
  int shared_projection = 16;
};

struct HlstmState {
  ad::Var h_td, c_td;
  ad::Var h_bu, c_bu;
  ad::Var h_joint, c_joint;
  ad::Var h_shared, c_shared;
};

struct StepPrediction {
  ad::Var pt_td_hat;  ///< [N_TD, 2]
  ad::Var pt_bu_hat;  ///< [N_BU, 2]
  ad::Var joint_hat;  ///< [D_J]
};

class HierarchicalLstm {
 public:
  HierarchicalLstm() = default;
  HierarchicalLstm(nn::ParameterStore& store, const std::string& name, const HlstmConfig& config, Rng& rng);

  const HlstmConfig& config() const { return config_; }

  /// Fresh zero state; every call allocates independent tensors.
  HlstmState init_state() const;

  /// pt_td [N_TD, 2], pt_bu [N_BU, 2], joint [D_J].
  std::pair<StepPrediction, HlstmState> step(const ad::Var& pt_td, const ad::Var& pt_bu, const ad::Var& joint,
                                             const HlstmState& state) const;

  nn::LstmCell td_cell, bu_cell, joint_cell, shared_cell;
  nn::Linear td_from_shared, bu_from_shared, joint_from_shared;
  nn::Linear td_readout, bu_readout, joint_readout;

 private:
  HlstmConfig config_;
};

}  // namespace a3rnn
