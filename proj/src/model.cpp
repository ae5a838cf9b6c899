#include "a3rnn/model.hpp"

#include <algorithm>

#include "a3rnn/errors.hpp"
#include "a3rnn/hash.hpp"

namespace a3rnn {
namespace {

Tensor leading_rows(const Tensor& t, int start, int count) {
  Shape shape = t.shape();
  const std::size_t stride = t.size() / static_cast<std::size_t>(shape[0]);
  shape[0] = count;
  Tensor out(shape);
  std::copy(t.data() + start * stride, t.data() + (start + count) * stride, out.data());
  return out;
}

/// Targets for P x P foveal crops of frames[first + t] at the snapped points[t, k].
Tensor foveal_targets(const Tensor& frames, int first, const Tensor& points, int grid, int patch) {
  const int steps = points.dim(0), count = points.dim(1);
  const Tensor snapped = reconstruction::snap_to_cells(points, grid, grid);
  Tensor out({steps * count, 3, patch, patch});
  const std::size_t crop_size = static_cast<std::size_t>(3) * patch * patch;
  for (int t = 0; t < steps; ++t) {
    const Tensor frame = frames.slice0(first + t);
    for (int k = 0; k < count; ++k) {
      const Tensor crop =
          reconstruction::foveal_target_crop(frame, {snapped.at(t, k, 0), snapped.at(t, k, 1)}, patch);
      std::copy(crop.data(), crop.data() + crop_size, out.data() + (t * count + k) * crop_size);
    }
  }
  return out;
}

ad::Var zero() { return ad::Var(Tensor::scalar(0.0)); }

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw ConfigError("unknown " + where + " key '" + key + "'");
}

}  // namespace

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::transformer: return "transformer";
    case FusionMode::mlp: return "mlp";
    case FusionMode::none: return "none";
  }
  return "none";
}

FusionMode fusion_from_string(const std::string& name) {
  if (name == "transformer") return FusionMode::transformer;
  if (name == "mlp") return FusionMode::mlp;
  if (name == "none") return FusionMode::none;
  throw ConfigError("unknown fusion mode '" + name + "'");
}

void ModelConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  check(n_td >= 1 && n_bu >= 1, "n_td and n_bu must be at least 1");
  check(d_td >= 1 && grid >= 1, "d_td and grid must be positive");
  check(std::all_of(encoder_channels.begin(), encoder_channels.end(), [](int c) { return c >= 1; }),
        "encoder channels must be positive");
  check(encoder_channels.size() < 16 && image_size == grid << encoder_channels.size(),
        "image_size must equal grid * 2^(number of encoder layers)");
  check(query_hidden >= 1 && modality_width >= 1 && shared_width >= 1 && shared_projection >= 1,
        "layer widths must be positive");
  check(a2_module, "every variant is built on the A2 attention module; a2_module cannot be disabled");
  check(fusion != FusionMode::transformer || (fusion_heads >= 1 && d_td % fusion_heads == 0),
        "d_td must be divisible by fusion_heads");
  check(!losses.consistency || losses.foveal, "the consistency term compares foveal reconstructions; enable foveal");
  check(alpha >= 0.0 && beta >= 0.0, "loss weights must be non-negative");
  check(bu_temperature > 0.0 && td_temperature > 0.0, "temperatures must be positive");
  check(sharpness > 0.0, "sharpness must be positive");
  check(foveal_patch >= 8 && foveal_patch % 8 == 0 && ((foveal_patch / 8) & (foveal_patch / 8 - 1)) == 0 &&
            foveal_patch <= image_size,
        "foveal_patch must be 8 * 2^k and fit in the image");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"n_td", n_td},
          {"n_bu", n_bu},
          {"d_td", d_td},
          {"grid", grid},
          {"image_size", image_size},
          {"encoder_channels", encoder_channels},
          {"query_hidden", query_hidden},
          {"modality_width", modality_width},
          {"shared_width", shared_width},
          {"shared_projection", shared_projection},
          {"a2_module", a2_module},
          {"fusion", to_string(fusion)},
          {"use_encoder", use_encoder},
          {"fusion_heads", fusion_heads},
          {"losses",
           {{"peripheral", losses.peripheral},
            {"foveal", losses.foveal},
            {"consistency", losses.consistency},
            {"spatial", losses.spatial}}},
          {"alpha", alpha},
          {"beta", beta},
          {"bu_temperature", bu_temperature},
          {"td_temperature", td_temperature},
          {"foveal_patch", foveal_patch},
          {"sharpness", sharpness},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"n_td", "n_bu", "d_td", "grid", "image_size", "encoder_channels", "query_hidden", "modality_width",
                  "shared_width", "shared_projection", "a2_module", "fusion", "use_encoder", "fusion_heads", "losses",
                  "alpha", "beta", "bu_temperature", "td_temperature", "foveal_patch", "sharpness", "seed"},
                 "model");
  ModelConfig c;
  try {
    read_field(j, "n_td", c.n_td);
    read_field(j, "n_bu", c.n_bu);
    read_field(j, "d_td", c.d_td);
    read_field(j, "grid", c.grid);
    read_field(j, "image_size", c.image_size);
    read_field(j, "encoder_channels", c.encoder_channels);
    read_field(j, "query_hidden", c.query_hidden);
    read_field(j, "modality_width", c.modality_width);
    read_field(j, "shared_width", c.shared_width);
    read_field(j, "shared_projection", c.shared_projection);
    read_field(j, "a2_module", c.a2_module);
    if (j.contains("fusion")) c.fusion = fusion_from_string(j.at("fusion").get<std::string>());
    read_field(j, "use_encoder", c.use_encoder);
    read_field(j, "fusion_heads", c.fusion_heads);
    if (j.contains("losses")) {
      const auto& l = j.at("losses");
      reject_unknown(l, {"peripheral", "foveal", "consistency", "spatial"}, "losses");
      read_field(l, "peripheral", c.losses.peripheral);
      read_field(l, "foveal", c.losses.foveal);
      read_field(l, "consistency", c.losses.consistency);
      read_field(l, "spatial", c.losses.spatial);
    }
    read_field(j, "alpha", c.alpha);
    read_field(j, "beta", c.beta);
    read_field(j, "bu_temperature", c.bu_temperature);
    read_field(j, "td_temperature", c.td_temperature);
    read_field(j, "foveal_patch", c.foveal_patch);
    read_field(j, "sharpness", c.sharpness);
    read_field(j, "seed", c.seed);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("model config: ") + ex.what());
  }
  c.validate();
  return c;
}

std::uint64_t ModelConfig::hash() const { return fnv1a(to_json().dump()); }

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::proposed: return "proposed";
    case Variant::a2rnn: return "a2rnn";
    case Variant::variant1: return "variant1";
    case Variant::variant2: return "variant2";
    case Variant::variant3: return "variant3";
    case Variant::variant4: return "variant4";
  }
  return "proposed";
}

std::string variant_label(Variant v) {
  switch (v) {
    case Variant::proposed: return "Proposed";
    case Variant::a2rnn: return "A2RNN";
    case Variant::variant1: return "(1)";
    case Variant::variant2: return "(2)";
    case Variant::variant3: return "(3)";
    case Variant::variant4: return "(4)";
  }
  return "";
}

Variant variant_from_string(const std::string& name) {
  for (Variant v : kAllVariants)
    if (variant_name(v) == name) return v;
  throw ConfigError("unknown variant '" + name + "'");
}

ModelConfig variant_config(Variant v, ModelConfig base) {
  base.a2_module = true;
  LossToggles& l = base.losses;
  switch (v) {
    case Variant::a2rnn:
      base.fusion = FusionMode::none;
      l = {false, false, false, false};
      break;
    case Variant::variant1:
      base.fusion = FusionMode::transformer;
      l = {true, false, false, false};
      break;
    case Variant::variant2:
      base.fusion = FusionMode::transformer;
      l = {true, true, false, false};
      break;
    case Variant::variant3:
      base.fusion = FusionMode::transformer;
      l = {true, true, true, false};
      break;
    case Variant::variant4:
      base.fusion = FusionMode::mlp;
      l = {true, true, true, true};
      break;
    case Variant::proposed:
      base.fusion = FusionMode::transformer;
      l = {true, true, true, true};
      break;
  }
  base.validate();
  return base;
}

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const ModelConfig& c = config_;
  int channels = 3;
  for (std::size_t i = 0; i < c.encoder_channels.size(); ++i) {
    encoder_.emplace_back(store_, "encoder.conv" + std::to_string(i), channels, c.encoder_channels[i], 3, 2, 1, rng);
    channels = c.encoder_channels[i];
  }
  td_head_ = nn::Conv2d(store_, "encoder.td_head", channels, c.d_td, 3, 1, 1, rng);
  bu_head_ = nn::Conv2d(store_, "encoder.bu_head", channels, c.n_bu, 3, 1, 1, rng);
  queries_ = attention::TdQueryGenerator(store_, "td_query", c.shared_width, c.query_hidden, c.n_td, c.d_td, rng);
  if (c.fusion == FusionMode::transformer)
    transformer_ = attention::TransformerFusion(store_, "fusion", {c.d_td, c.fusion_heads, 2 * c.d_td, c.use_encoder},
                                                rng);
  else if (c.fusion == FusionMode::mlp)
    mlp_ = attention::MlpFusion(store_, "fusion", c.d_td, rng);
  hlstm_ = HierarchicalLstm(store_, "hlstm",
                            {c.n_td, c.n_bu, env::kJointDim, c.modality_width, c.shared_width, c.shared_projection},
                            rng);
  const reconstruction::DecoderGeometry geometry{c.d_td, c.grid, c.image_size, c.foveal_patch, c.sharpness};
  if (c.losses.peripheral) peripheral_.emplace(store_, "peripheral", geometry, rng);
  if (c.losses.foveal) foveal_.emplace(store_, "foveal", geometry, rng);
}

attention::FeatureMaps Model::encode(const ad::Var& frames) const {
  require(frames.shape().size() == 4 && frames.dim(1) == 3 && frames.dim(2) == config_.image_size &&
              frames.dim(3) == config_.image_size,
          "model expects frames [N, 3, " + std::to_string(config_.image_size) + ", " +
              std::to_string(config_.image_size) + "], got " + shape_string(frames.shape()));
  ad::Var x = frames;
  for (const auto& conv : encoder_) x = ad::relu(conv(x));
  return {bu_head_(x), td_head_(x)};
}

ad::Var Model::amalgamate(const ad::Var& q_bu, const ad::Var& h_shared) const {
  const ad::Var q_td = queries_(h_shared);
  switch (config_.fusion) {
    case FusionMode::transformer: return transformer_(q_bu, q_td);
    case FusionMode::mlp: return mlp_(q_bu, q_td);
    case FusionMode::none: break;
  }
  return q_td;
}

EpisodeOutputs Model::forward_episode(const Tensor& frames, const Tensor& joints) const {
  require(joints.rank() == 2 && joints.dim(1) == env::kJointDim && frames.rank() == 4 &&
              joints.dim(0) == frames.dim(0),
          "forward_episode: frames [T,3,S,S] and joints [T,4] must share T");
  const int steps = frames.dim(0);
  EpisodeOutputs out;
  const attention::FeatureMaps maps = encode(ad::Var(frames));
  attention::validate(maps);
  out.f_td = maps.f_td;
  out.m_bu = attention::spatial_softmax(maps.f_bu, config_.bu_temperature);
  out.q_bu = attention::extract_pseudo_queries(out.m_bu, maps.f_td);
  out.pt_bu = attention::extract_bu_points(out.m_bu.value());

  std::vector<ad::Var> pt_td, q_a, pt_td_hat, pt_bu_hat, joint_hat;
  HlstmState state = hlstm_.init_state();
  for (int t = 0; t < steps; ++t) {
    const ad::Var qa = amalgamate(ad::select(out.q_bu, t), state.h_shared);
    const ad::Var pt = attention::estimate_td_points(qa, ad::select(maps.f_td, t), config_.td_temperature);
    auto [pred, next] = hlstm_.step(pt, ad::Var(out.pt_bu.slice0(t)), ad::Var(joints.slice0(t)), state);
    state = std::move(next);
    pt_td.push_back(pt);
    q_a.push_back(qa);
    pt_td_hat.push_back(pred.pt_td_hat);
    pt_bu_hat.push_back(pred.pt_bu_hat);
    joint_hat.push_back(pred.joint_hat);
  }
  out.pt_td = ad::stack(pt_td);
  out.q_a = ad::stack(q_a);
  out.pt_td_hat = ad::stack(pt_td_hat);
  out.pt_bu_hat = ad::stack(pt_bu_hat);
  out.joint_hat = ad::stack(joint_hat);
  return out;
}

EpisodeLoss Model::episode_loss(const EpisodeOutputs& o, const Tensor& frames, const Tensor& joints) const {
  const int steps = frames.dim(0);
  require(steps >= 2, "episode_loss needs at least two timesteps");
  const int next = steps - 1;
  const int grid = config_.grid;
  EpisodeLoss result;
  losses::LossBreakdown& b = result.breakdown;

  const ad::Var body = losses::body_loss(o.joint_hat, joints);
  ad::Var rec = zero(), reg = zero();
  ad::Var fov_enc, fov_dec;

  if (peripheral_) {
    const ad::Var predicted = (*peripheral_)(ad::slice(o.pt_bu_hat, 0, 0, next), ad::slice(o.f_td, 0, 0, next),
                                             &result.clamped_points);
    const ad::Var term = ad::mse(predicted, leading_rows(frames, 1, next));
    b.rec_per = term.value().item();
    rec = rec + term;
  }
  if (foveal_) {
    const Tensor pt_td = o.pt_td.value();
    const Tensor pt_td_hat = leading_rows(o.pt_td_hat.value(), 0, next);
    fov_enc = (*foveal_)(reconstruction::crop_attention_area(o.f_td, pt_td));
    fov_dec = (*foveal_)(reconstruction::crop_attention_area(ad::slice(o.f_td, 0, 0, next), pt_td_hat));
    const ad::Var enc_term = ad::mse(fov_enc, foveal_targets(frames, 0, pt_td, grid, config_.foveal_patch));
    const ad::Var dec_term = ad::mse(fov_dec, foveal_targets(frames, 1, pt_td_hat, grid, config_.foveal_patch));
    b.rec_fov_enc = enc_term.value().item();
    b.rec_fov_dec = dec_term.value().item();
    rec = rec + enc_term + dec_term;
  }
  if (config_.losses.consistency) {
    const ad::Var bu = ad::mse(ad::slice(o.pt_bu_hat, 0, 0, next), leading_rows(o.pt_bu, 1, next));
    const int n_td = config_.n_td;
    const ad::Var fov = ad::mse(ad::slice(fov_enc, 0, n_td, next * n_td), fov_dec);
    b.reg_bu_consist = bu.value().item();
    b.reg_fov_consist = fov.value().item();
    reg = reg + bu + fov;
  }
  if (config_.losses.spatial) {
    const ad::Var displacement = losses::displacement_hinge(o.pt_td);
    const ad::Var bounds_enc = losses::bounds_penalty(o.pt_td);
    const ad::Var bounds_dec = losses::bounds_penalty(o.pt_td_hat);
    b.reg_displacement = displacement.value().item();
    b.reg_bounds_enc = bounds_enc.value().item();
    b.reg_bounds_dec = bounds_dec.value().item();
    b.reg_bounds = b.reg_bounds_enc + b.reg_bounds_dec;
    reg = reg + displacement + bounds_enc + bounds_dec;
  }
  b.body = body.value().item();
  result.total = body + ad::scale(rec, config_.alpha) + ad::scale(reg, config_.beta);
  b.total = result.total.value().item();
  return result;
}

StepOutputs Model::step(const Tensor& frame, const Tensor& joint, HlstmState& state) const {
  ad::NoGradGuard no_grad;
  require(frame.rank() == 3, "Model::step expects a single frame [3, S, S]");
  const int size = config_.image_size;
  const attention::FeatureMaps maps = encode(ad::Var(frame.reshaped({1, 3, size, size})));
  attention::validate(maps);
  const ad::Var m_bu = attention::spatial_softmax(maps.f_bu, config_.bu_temperature);
  const ad::Var q_bu = ad::select(attention::extract_pseudo_queries(m_bu, maps.f_td), 0);
  StepOutputs out;
  out.m_bu = m_bu.value().slice0(0);
  out.pt_bu = attention::extract_bu_points(out.m_bu);
  const ad::Var qa = amalgamate(q_bu, state.h_shared);
  const ad::Var pt = attention::estimate_td_points(qa, ad::select(maps.f_td, 0), config_.td_temperature);
  auto [pred, next] = hlstm_.step(pt, ad::Var(out.pt_bu), ad::Var(joint), state);
  state = std::move(next);
  out.pt_td = pt.value();
  out.q_a = qa.value();
  out.q_bu = q_bu.value();
  out.joint_hat = pred.joint_hat.value();
  return out;
}

}  // namespace a3rnn
