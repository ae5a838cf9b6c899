#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "a3rnn/tensor.hpp"

// Desk-scale pick task: a planar three-link arm seen from above reaches a
// textured box at one of three table slots, closes its gripper and carries the
// box back. Geometry is specified for a 64 px reference frame and scaled to
// the configured image size.

namespace a3rnn::env {

using Vec2 = std::array<double, 2>;

inline constexpr int kJointDim = 4;  ///< three revolute joints + gripper opening

struct EnvConfig {
  int image_size = 64;
  int steps = 120;
  /// Reference-frame (64 px) geometry, y pointing down the image.
  Vec2 base{32.0, 60.0};
  std::array<double, 3> links{22.0, 18.0, 8.0};
  std::array<Vec2, 3> slots{{{18.0, 26.0}, {32.0, 20.0}, {46.0, 26.0}}};
  Vec2 start_effector{32.0, 44.0};
  Vec2 lift_point{32.0, 38.0};
  double box_half_size = 3.5;
  double start_jitter = 0.08;  ///< radians, uniform per joint
  double grasp_radius = 3.0;
  double attention_radius = 6.0;
  double pick_tolerance = 2.0;
  double min_lift = 5.0;
  /// Phase boundaries in steps.
  int reach_begin = 10;
  int reach_end = 70;
  int close_begin = 80;
  int grasp_step = 89;

  double scale() const { return image_size / 64.0; }
  /// Box center of a slot in image pixels.
  Vec2 slot_center(int slot) const;
  void validate() const;
  nlohmann::json to_json() const;
  static EnvConfig from_json(const nlohmann::json& j);
  std::uint64_t hash() const;
};

/// Joint limits used to normalize angles to [0, 1].
struct JointLimits {
  std::array<double, 3> lower{0.0, -3.14159265358979323846, -3.14159265358979323846};
  std::array<double, 3> upper{3.14159265358979323846, 3.14159265358979323846, 3.14159265358979323846};
};

struct ArmPose {
  Vec2 base, elbow, wrist, effector;  ///< image pixels
  double effector_heading = 0.0;      ///< radians, image frame
};

/// Forward kinematics of normalized joints [4] in image pixels.
ArmPose forward_kinematics(std::span<const double> joints, const EnvConfig& config);

/// Normalized joints placing the effector at `target` (pixels) pointing away from
/// the base, elbow on the right; nullopt when unreachable or outside joint limits.
std::optional<std::array<double, 3>> inverse_kinematics(const Vec2& target, const EnvConfig& config);

struct SceneState {
  std::array<double, kJointDim> joints{};
  Vec2 box{};  ///< box center, pixels
  bool attached = false;
};

struct RenderLayers {
  bool box = true;
  bool arm = true;
};

/// [3, S, S] frame, values quantized to 8 bits. Aliasing-free nearest-pixel raster.
Tensor render_frame(const SceneState& scene, const EnvConfig& config, RenderLayers layers = {});

/// Advances the scene to new joints, attaching or releasing the box by the gripper rule.
void apply_joints(SceneState& scene, std::span<const double> joints, const EnvConfig& config);

struct Episode {
  Tensor frames;  ///< [T, 3, S, S] in [0, 1], multiples of 1/255
  Tensor joints;  ///< [T, 4] in [0, 1], float32-representable
  int slot = 0;
  std::uint64_t seed = 0;
  Vec2 box_center_px{};
};

/// Scripted reach / settle / close / carry demonstration.
Episode generate_episode(int slot, std::uint64_t seed, const EnvConfig& config);

/// Joint trajectory of generate_episode without rendering, [T, 4].
Tensor scripted_joints(int slot, std::uint64_t seed, const EnvConfig& config);

/// Per-step record of a (closed- or open-loop) execution.
struct Trajectory {
  std::vector<Vec2> effector;  ///< pixels
  std::vector<double> gripper;
  std::vector<Vec2> box;
  std::vector<unsigned char> attached;
};

Trajectory trace_joints(const Tensor& joints, int slot, const EnvConfig& config);

struct SuccessResult {
  bool attention_success = false;
  bool pick_success = false;
};

/// pt_td: [T, N_TD, 2] normalized. Attention succeeds when some TD point stays
/// within the attention radius of the box for the second half of the pre-grasp
/// steps; picking succeeds when the effector is on the box at the grasp step and
/// the box is carried away.
SuccessResult success_metric(const Trajectory& trajectory, const Vec2& box_center_px, const Tensor& pt_td,
                             const EnvConfig& config);

}  // namespace a3rnn::env
