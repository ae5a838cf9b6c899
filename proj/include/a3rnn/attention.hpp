#pragma once

#include "a3rnn/layers.hpp"

// Amalgamated attention: bottom-up saliency maps and top-down queries from the
// recurrent state are fused into the queries that place the top-down points.
//
// Coordinates are normalized pixel centers: cell (row, col) of an H x W grid
// sits at ((col + 0.5) / W, (row + 0.5) / H), x first.

namespace a3rnn::attention {

/// CNN activations for one frame ([C, H, W]) or a batch of frames ([N, C, H, W]).
struct FeatureMaps {
  ad::Var f_bu;  ///< saliency logits, N_BU channels
  ad::Var f_td;  ///< query/feature pathway, D_TD channels
};

/// Throws ContractError unless both maps share a spatial grid and are finite.
void validate(const FeatureMaps& maps);

/// Per-channel softmax over the trailing H x W grid of [..., C, H, W].
ad::Var spatial_softmax(const ad::Var& logits, double temperature);

/// Throws ContractError if some channel is negative or does not sum to one.
void validate_attention_maps(const Tensor& maps, double tolerance = 1e-5);

/// Mask-weighted spatial averages: row i = sum_{h,w} m[i,h,w] * f[:,h,w].
/// [C, H, W] x [D, H, W] -> [C, D], or batched with a leading N.
ad::Var extract_pseudo_queries(const ad::Var& m_bu, const ad::Var& f_td);

/// Normalized pixel-center coordinates of an H x W grid, [H*W, 2].
Tensor grid_coordinates(int height, int width);

/// Expected coordinate under each distribution: [..., K, H*W] -> [..., K, 2].
ad::Var spatial_expectation(const ad::Var& probabilities, int height, int width);

/// Scaled dot-product similarity of each query against every location of
/// f_td, softmaxed over space, reduced to its expected coordinate.
/// q_a [K, D], f_td [D, H, W] -> [K, 2].
ad::Var estimate_td_points(const ad::Var& q_a, const ad::Var& f_td, double temperature);

/// Per-channel argmax cell, first occurrence in row-major order wins.
/// [C, H, W] -> [C, 2], or [N, C, H, W] -> [N, C, 2].
Tensor extract_bu_points(const Tensor& m_bu);

/// Two-layer perceptron mapping the previous shared hidden state to N_TD query rows.
class TdQueryGenerator {
 public:
  TdQueryGenerator() = default;
  TdQueryGenerator(nn::ParameterStore& store, const std::string& name, int state_width, int hidden_width,
                   int n_td, int d_td, Rng& rng);
  ad::Var operator()(const ad::Var& h_shared) const;

  nn::Linear hidden;
  nn::Linear output;

 private:
  int n_td_ = 0;
  int d_td_ = 0;
};

struct TransformerFusionConfig {
  int width = 32;
  int heads = 2;
  int feed_forward = 64;
  /// Self-attention encoder over the pseudo-queries before cross-attention.
  bool use_encoder = true;
};

/// Post-norm encoder/decoder block. Pseudo-queries form the unordered key/value
/// set; top-down queries are the decoder targets.
class TransformerFusion {
 public:
  TransformerFusion() = default;
  TransformerFusion(nn::ParameterStore& store, const std::string& name, const TransformerFusionConfig& config,
                    Rng& rng);
  /// q_bu [N_BU, D], q_td [N_TD, D] -> [N_TD, D].
  ad::Var operator()(const ad::Var& q_bu, const ad::Var& q_td) const;

 private:
  struct FeedForward {
    nn::Linear expand, contract;
    ad::Var operator()(const ad::Var& x) const { return contract(ad::relu(expand(x))); }
  };

  TransformerFusionConfig config_;
  nn::MultiHeadAttention enc_self_;
  nn::LayerNorm enc_norm1_, enc_norm2_;
  FeedForward enc_ff_;
  nn::MultiHeadAttention dec_self_, dec_cross_;
  nn::LayerNorm dec_norm1_, dec_norm2_, dec_norm3_;
  FeedForward dec_ff_;
};

/// Ablation fusion: each TD query concatenated with the mean pseudo-query,
/// passed through a two-layer perceptron.
class MlpFusion {
 public:
  MlpFusion() = default;
  MlpFusion(nn::ParameterStore& store, const std::string& name, int width, Rng& rng);
  ad::Var operator()(const ad::Var& q_bu, const ad::Var& q_td) const;

  nn::Linear hidden;
  nn::Linear output;
};

}  // namespace a3rnn::attention
