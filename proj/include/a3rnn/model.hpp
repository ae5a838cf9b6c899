#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "a3rnn/attention.hpp"
#include "a3rnn/env.hpp"
#include "a3rnn/hlstm.hpp"
#include "a3rnn/losses.hpp"
#include "a3rnn/reconstruction.hpp"

// End-to-end model: CNN encoder -> amalgamated attention -> hierarchical LSTM,
// plus the reconstruction decoders that only exist to shape the attention.

namespace a3rnn {

enum class FusionMode { transformer, mlp, none };

std::string to_string(FusionMode mode);
FusionMode fusion_from_string(const std::string& name);

struct LossToggles {
  bool peripheral = true;
  bool foveal = true;
  bool consistency = true;
  bool spatial = true;  ///< displacement hinge and bounds penalty
};

struct ModelConfig {
  int n_td = 4;
  int n_bu = 16;
  int d_td = 32;
  int grid = 16;
  int image_size = 64;
  /// One stride-2 3x3 conv per entry; image_size must equal grid * 2^count.
  std::vector<int> encoder_channels{16, 32};
  int query_hidden = 64;
  int modality_width = 64;
  int shared_width = 32;
  int shared_projection = 16;
  bool a2_module = true;
  FusionMode fusion = FusionMode::transformer;
  bool use_encoder = true;
  int fusion_heads = 2;
  LossToggles losses;
  double alpha = 0.1;
  double beta = 0.1;
  double bu_temperature = 1.0;
  double td_temperature = 1.0;
  int foveal_patch = 16;
  double sharpness = 0.05;
  std::uint64_t seed = 0;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j);
  std::uint64_t hash() const;
};

/// Model rows of the ablation matrix, in results-table column order.
enum class Variant { proposed, a2rnn, variant1, variant2, variant3, variant4 };

inline constexpr std::array<Variant, 6> kAllVariants{Variant::proposed, Variant::a2rnn,    Variant::variant1,
                                                     Variant::variant2, Variant::variant3, Variant::variant4};

std::string variant_name(Variant v);
/// Display header used in results tables.
std::string variant_label(Variant v);
Variant variant_from_string(const std::string& name);
/// `base` with the fusion mode and loss toggles of the given variant.
ModelConfig variant_config(Variant v, ModelConfig base = {});

/// Per-episode training-time outputs with teacher-forced inputs.
struct EpisodeOutputs {
  ad::Var f_td;       ///< [T, D, H, W]
  ad::Var m_bu;       ///< [T, N_BU, H, W]
  ad::Var q_bu;       ///< [T, N_BU, D]
  Tensor pt_bu;       ///< [T, N_BU, 2]
  ad::Var pt_td;      ///< [T, N_TD, 2]
  ad::Var q_a;        ///< [T, N_TD, D]
  ad::Var pt_td_hat;  ///< [T, N_TD, 2], prediction for t + 1
  ad::Var pt_bu_hat;  ///< [T, N_BU, 2], prediction for t + 1
  ad::Var joint_hat;  ///< [T, D_J], prediction for t + 1
};

struct EpisodeLoss {
  ad::Var total;
  losses::LossBreakdown breakdown;
  int clamped_points = 0;  ///< BU predictions clamped into the image by the heatmap
};

/// Outputs of one closed-loop step.
struct StepOutputs {
  Tensor pt_td;      ///< [N_TD, 2]
  Tensor pt_bu;      ///< [N_BU, 2]
  Tensor m_bu;       ///< [N_BU, H, W]
  Tensor q_a;        ///< [N_TD, D]
  Tensor q_bu;       ///< [N_BU, D]
  Tensor joint_hat;  ///< [D_J]
};

class Model {
 public:
  explicit Model(const ModelConfig& config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }

  /// frames [N, 3, S, S] -> FeatureMaps with [N, C, H, W] members.
  attention::FeatureMaps encode(const ad::Var& frames) const;

  /// Teacher-forced pass over a whole episode. frames [T, 3, S, S], joints [T, D_J].
  EpisodeOutputs forward_episode(const Tensor& frames, const Tensor& joints) const;
  /// Every loss term of an episode; disabled terms are neither computed nor reported.
  EpisodeLoss episode_loss(const EpisodeOutputs& outputs, const Tensor& frames, const Tensor& joints) const;

  HlstmState initial_state() const { return hlstm_.init_state(); }
  /// One gradient-free step on a single frame [3, S, S] and joint vector.
  StepOutputs step(const Tensor& frame, const Tensor& joint, HlstmState& state) const;

 private:
  ad::Var amalgamate(const ad::Var& q_bu, const ad::Var& h_shared) const;

  ModelConfig config_;
  nn::ParameterStore store_;
  std::vector<nn::Conv2d> encoder_;
  nn::Conv2d td_head_, bu_head_;
  attention::TdQueryGenerator queries_;
  attention::TransformerFusion transformer_;
  attention::MlpFusion mlp_;
  HierarchicalLstm hlstm_;
  std::optional<reconstruction::PeripheralDecoder> peripheral_;
  std::optional<reconstruction::FovealDecoder> foveal_;
};

}  // namespace a3rnn
