#include "a3rnn/env.hpp"

#include <algorithm>
#include <cmath>

#include "a3rnn/errors.hpp"
#include "a3rnn/hash.hpp"
#include "a3rnn/layers.hpp"

namespace a3rnn::env {
namespace {

constexpr double kPi = 3.14159265358979323846;

using Color = std::array<double, 3>;

constexpr Color kTable{0.80, 0.80, 0.82};
constexpr Color kWood{0.60, 0.36, 0.14};
constexpr Color kWoodGrain{0.38, 0.21, 0.08};
constexpr Color kLink{0.25, 0.26, 0.30};
constexpr Color kJoint{0.12, 0.12, 0.14};
constexpr Color kFinger{0.90, 0.10, 0.10};

Vec2 scaled(const Vec2& v, double s) { return {v[0] * s, v[1] * s}; }

double distance(const Vec2& a, const Vec2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

double wrap_angle(double a) {
  while (a > kPi) a -= 2.0 * kPi;
  while (a < -kPi) a += 2.0 * kPi;
  return a;
}

double smoothstep(double a) {
  a = std::clamp(a, 0.0, 1.0);
  return a * a * (3.0 - 2.0 * a);
}

Vec2 lerp(const Vec2& a, const Vec2& b, double u) { return {a[0] + (b[0] - a[0]) * u, a[1] + (b[1] - a[1]) * u}; }

double to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

class Canvas {
 public:
  explicit Canvas(int size) : size_(size), pixels_({3, size, size}) {}

  void set(int x, int y, const Color& c) {
    for (int ch = 0; ch < 3; ++ch) pixels_.at(ch, y, x) = c[ch];
  }

  template <typename Inside>
  void fill(double x0, double y0, double x1, double y1, Inside inside, const Color& c) {
    const int lo_x = std::max(0, static_cast<int>(std::floor(x0))), hi_x = std::min(size_ - 1, static_cast<int>(std::ceil(x1)));
    const int lo_y = std::max(0, static_cast<int>(std::floor(y0))), hi_y = std::min(size_ - 1, static_cast<int>(std::ceil(y1)));
    for (int y = lo_y; y <= hi_y; ++y)
      for (int x = lo_x; x <= hi_x; ++x)
        if (inside(x + 0.5, y + 0.5)) set(x, y, c);
  }

  void disk(const Vec2& c, double r, const Color& color) {
    fill(c[0] - r, c[1] - r, c[0] + r, c[1] + r,
         [&](double x, double y) { return (x - c[0]) * (x - c[0]) + (y - c[1]) * (y - c[1]) <= r * r; }, color);
  }

  void segment(const Vec2& a, const Vec2& b, double r, const Color& color) {
    const double dx = b[0] - a[0], dy = b[1] - a[1];
    const double len2 = dx * dx + dy * dy;
    fill(std::min(a[0], b[0]) - r, std::min(a[1], b[1]) - r, std::max(a[0], b[0]) + r, std::max(a[1], b[1]) + r,
         [&](double x, double y) {
           const double u = len2 > 0 ? std::clamp(((x - a[0]) * dx + (y - a[1]) * dy) / len2, 0.0, 1.0) : 0.0;
           const double px = a[0] + u * dx - x, py = a[1] + u * dy - y;
           return px * px + py * py <= r * r;
         },
         color);
  }

  Tensor take() {
    for (auto& v : pixels_.values()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    return std::move(pixels_);
  }

 private:
  int size_;
  Tensor pixels_;
};

void draw_box(Canvas& canvas, const Vec2& center, const EnvConfig& config) {
  const double h = config.box_half_size * config.scale();
  const double top = center[1] - h;
  const double grain = std::max(1.0, config.scale());
  canvas.fill(center[0] - h, top, center[0] + h, center[1] + h,
              [&](double x, double y) { return std::abs(x - center[0]) <= h && std::abs(y - center[1]) <= h; }, kWood);
  // Dark grain every third row of the sprite.
  canvas.fill(center[0] - h, top, center[0] + h, center[1] + h,
              [&](double x, double y) {
                return std::abs(x - center[0]) <= h && std::abs(y - center[1]) <= h &&
                       static_cast<int>(std::floor((y - top) / grain)) % 3 == 0;
              },
              kWoodGrain);
}

}  // namespace

Vec2 EnvConfig::slot_center(int slot) const {
  if (slot < 0 || slot >= static_cast<int>(slots.size())) throw ConfigError("slot must be 0, 1 or 2");
  return scaled(slots[static_cast<std::size_t>(slot)], scale());
}

void EnvConfig::validate() const {
  if (image_size < 16 || image_size % 16 != 0) throw ConfigError("image_size must be a positive multiple of 16");
  if (!(0 <= reach_begin && reach_begin < reach_end && reach_end <= close_begin && close_begin < grasp_step &&
        grasp_step < steps - 1))
    throw ConfigError("episode phase boundaries are not ordered within the episode");
  for (int s = 0; s < 3; ++s)
    if (!inverse_kinematics(slot_center(s), *this))
      throw ConfigError("slot " + std::to_string(s) + " is unreachable under the arm geometry");
  if (!inverse_kinematics(scaled(start_effector, scale()), *this) || !inverse_kinematics(scaled(lift_point, scale()), *this))
    throw ConfigError("start or lift pose is unreachable under the arm geometry");
}

nlohmann::json EnvConfig::to_json() const {
  return {{"image_size", image_size},
          {"steps", steps},
          {"base", base},
          {"links", links},
          {"slots", slots},
          {"start_effector", start_effector},
          {"lift_point", lift_point},
          {"box_half_size", box_half_size},
          {"start_jitter", start_jitter},
          {"grasp_radius", grasp_radius},
          {"attention_radius", attention_radius},
          {"pick_tolerance", pick_tolerance},
          {"min_lift", min_lift},
          {"reach_begin", reach_begin},
          {"reach_end", reach_end},
          {"close_begin", close_begin},
          {"grasp_step", grasp_step}};
}

EnvConfig EnvConfig::from_json(const nlohmann::json& j) {
  EnvConfig c;
  const nlohmann::json defaults = c.to_json();
  for (const auto& [key, value] : j.items())
    if (!defaults.contains(key)) throw ConfigError("unknown environment key '" + key + "'");
  const auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("image_size", c.image_size);
  get("steps", c.steps);
  get("base", c.base);
  get("links", c.links);
  get("slots", c.slots);
  get("start_effector", c.start_effector);
  get("lift_point", c.lift_point);
  get("box_half_size", c.box_half_size);
  get("start_jitter", c.start_jitter);
  get("grasp_radius", c.grasp_radius);
  get("attention_radius", c.attention_radius);
  get("pick_tolerance", c.pick_tolerance);
  get("min_lift", c.min_lift);
  get("reach_begin", c.reach_begin);
  get("reach_end", c.reach_end);
  get("close_begin", c.close_begin);
  get("grasp_step", c.grasp_step);
  return c;
}

std::uint64_t EnvConfig::hash() const { return fnv1a(to_json().dump()); }

ArmPose forward_kinematics(std::span<const double> joints, const EnvConfig& config) {
  require(joints.size() >= 3, "forward_kinematics needs three joint values");
  const JointLimits limits;
  const double s = config.scale();
  ArmPose pose;
  pose.base = scaled(config.base, s);
  double heading = 0.0;
  Vec2 p = pose.base;
  std::array<Vec2*, 3> out{&pose.elbow, &pose.wrist, &pose.effector};
  for (int i = 0; i < 3; ++i) {
    heading += limits.lower[i] + joints[i] * (limits.upper[i] - limits.lower[i]);
    const double len = config.links[i] * s;
    p = {p[0] + len * std::cos(heading), p[1] - len * std::sin(heading)};
    *out[i] = p;
  }
  pose.effector_heading = heading;
  return pose;
}

std::optional<std::array<double, 3>> inverse_kinematics(const Vec2& target, const EnvConfig& config) {
  const JointLimits limits;
  const double s = config.scale();
  const Vec2 base = scaled(config.base, s);
  const double l1 = config.links[0] * s, l2 = config.links[1] * s, l3 = config.links[2] * s;
  const double tx = target[0] - base[0], ty = base[1] - target[1];
  const double heading = std::atan2(ty, tx);
  const double wx = tx - l3 * std::cos(heading), wy = ty - l3 * std::sin(heading);
  const double c2 = (wx * wx + wy * wy - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
  if (c2 < -1.0 || c2 > 1.0) return std::nullopt;
  const double q2 = -std::acos(c2);
  const double q1 = std::atan2(wy, wx) - std::atan2(l2 * std::sin(q2), l1 + l2 * std::cos(q2));
  const double q3 = wrap_angle(heading - q1 - q2);
  const std::array<double, 3> q{q1, q2, q3};
  std::array<double, 3> normalized{};
  for (int i = 0; i < 3; ++i) {
    normalized[i] = (q[i] - limits.lower[i]) / (limits.upper[i] - limits.lower[i]);
    if (normalized[i] < 0.0 || normalized[i] > 1.0) return std::nullopt;
  }
  return normalized;
}

Tensor render_frame(const SceneState& scene, const EnvConfig& config, RenderLayers layers) {
  const int size = config.image_size;
  const double s = config.scale();
  Canvas canvas(size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      // Faint plank seams every 16 reference pixels.
      const bool seam = static_cast<int>(std::floor(y / s)) % 16 == 0;
      Color c = kTable;
      if (seam) c = {kTable[0] - 0.04, kTable[1] - 0.04, kTable[2] - 0.04};
      canvas.set(x, y, c);
    }
  if (layers.box) draw_box(canvas, scene.box, config);
  if (layers.arm) {
    const ArmPose pose = forward_kinematics(scene.joints, config);
    const double link_r = 1.5 * s;
    canvas.disk(pose.base, 3.0 * s, kJoint);
    canvas.segment(pose.base, pose.elbow, link_r, kLink);
    canvas.segment(pose.elbow, pose.wrist, link_r, kLink);
    canvas.segment(pose.wrist, pose.effector, link_r * 0.7, kLink);
    canvas.disk(pose.elbow, 2.0 * s, kJoint);
    canvas.disk(pose.wrist, 2.0 * s, kJoint);
    // Two fingers symmetric about the effector, spread by the gripper opening.
    const double spread = (1.0 + 2.0 * std::clamp(scene.joints[3], 0.0, 1.0)) * s;
    const double nx = std::sin(pose.effector_heading), ny = std::cos(pose.effector_heading);
    const double finger_r = std::max(1.0, 1.2 * s);
    canvas.disk({pose.effector[0] + nx * spread, pose.effector[1] + ny * spread}, finger_r, kFinger);
    canvas.disk({pose.effector[0] - nx * spread, pose.effector[1] - ny * spread}, finger_r, kFinger);
  }
  return canvas.take();
}

void apply_joints(SceneState& scene, std::span<const double> joints, const EnvConfig& config) {
  require(joints.size() == kJointDim, "apply_joints expects four joint values");
  for (int i = 0; i < kJointDim; ++i) scene.joints[i] = std::clamp(joints[i], 0.0, 1.0);
  const Vec2 effector = forward_kinematics(scene.joints, config).effector;
  const bool closed = scene.joints[3] < 0.5;
  if (scene.attached) {
    scene.box = effector;
    if (!closed) scene.attached = false;
  } else if (closed && distance(effector, scene.box) <= config.grasp_radius * config.scale()) {
    scene.attached = true;
    scene.box = effector;
  }
}

Tensor scripted_joints(int slot, std::uint64_t seed, const EnvConfig& config) {
  config.validate();
  const double s = config.scale();
  const Vec2 box = config.slot_center(slot);
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(slot) + 1);

  const JointLimits limits;
  std::array<double, 3> start = *inverse_kinematics(scaled(config.start_effector, s), config);
  for (int i = 0; i < 3; ++i)
    start[i] = std::clamp(start[i] + rng.uniform(-config.start_jitter, config.start_jitter) /
                                         (limits.upper[i] - limits.lower[i]),
                          0.0, 1.0);
  const Vec2 start_effector = forward_kinematics(start, config).effector;
  const Vec2 lift = scaled(config.lift_point, s);

  Tensor joints({config.steps, kJointDim});
  for (int t = 0; t < config.steps; ++t) {
    std::array<double, 3> q = start;
    if (t >= config.reach_begin) {
      Vec2 target;
      if (t < config.reach_end) {
        const double a = static_cast<double>(t - config.reach_begin) / (config.reach_end - 1 - config.reach_begin);
        target = lerp(start_effector, box, smoothstep(a));
      } else if (t <= config.grasp_step) {
        target = box;
      } else {
        const double a = static_cast<double>(t - config.grasp_step) / (config.steps - 1 - config.grasp_step);
        target = lerp(box, lift, smoothstep(a));
      }
      const auto solved = inverse_kinematics(target, config);
      if (!solved) throw ConfigError("scripted trajectory leaves the reachable workspace");
      q = *solved;
    }
    double gripper = 1.0;
    if (t > config.grasp_step) gripper = 0.0;
    else if (t >= config.close_begin)
      gripper = 1.0 - static_cast<double>(t - config.close_begin) / (config.grasp_step - config.close_begin);
    for (int i = 0; i < 3; ++i) joints.at(t, i) = to_float(q[i]);
    joints.at(t, 3) = to_float(gripper);
  }
  return joints;
}

Episode generate_episode(int slot, std::uint64_t seed, const EnvConfig& config) {
  Episode ep;
  ep.slot = slot;
  ep.seed = seed;
  ep.box_center_px = config.slot_center(slot);
  ep.joints = scripted_joints(slot, seed, config);
  const int size = config.image_size;
  ep.frames = Tensor({config.steps, 3, size, size});
  SceneState scene;
  scene.box = ep.box_center_px;
  const std::size_t frame_size = static_cast<std::size_t>(3) * size * size;
  for (int t = 0; t < config.steps; ++t) {
    apply_joints(scene, std::span<const double>(ep.joints.data() + t * kJointDim, kJointDim), config);
    const Tensor frame = render_frame(scene, config);
    std::copy(frame.data(), frame.data() + frame_size, ep.frames.data() + t * frame_size);
  }
  return ep;
}

Trajectory trace_joints(const Tensor& joints, int slot, const EnvConfig& config) {
  require(joints.rank() == 2 && joints.dim(1) == kJointDim, "trace_joints expects [T, 4]");
  Trajectory traj;
  SceneState scene;
  scene.box = config.slot_center(slot);
  for (int t = 0; t < joints.dim(0); ++t) {
    apply_joints(scene, std::span<const double>(joints.data() + t * kJointDim, kJointDim), config);
    traj.effector.push_back(forward_kinematics(scene.joints, config).effector);
    traj.gripper.push_back(scene.joints[3]);
    traj.box.push_back(scene.box);
    traj.attached.push_back(scene.attached ? 1 : 0);
  }
  return traj;
}

SuccessResult success_metric(const Trajectory& trajectory, const Vec2& box_center_px, const Tensor& pt_td,
                             const EnvConfig& config) {
  require(pt_td.rank() == 3 && pt_td.dim(2) == 2, "success_metric: pt_td must be [T, N_TD, 2]");
  const int steps = static_cast<int>(trajectory.effector.size());
  require(pt_td.dim(0) == steps, "success_metric: attention trace and trajectory lengths differ");
  require(steps > config.grasp_step, "success_metric: trajectory ends before the grasp step");
  const double s = config.scale();
  const int size = config.image_size;

  SuccessResult result;
  const int window_begin = config.grasp_step - config.grasp_step / 2;
  for (int k = 0; k < pt_td.dim(1) && !result.attention_success; ++k) {
    bool held = true;
    for (int t = window_begin; t < config.grasp_step && held; ++t) {
      const Vec2 p{pt_td.at(t, k, 0) * size, pt_td.at(t, k, 1) * size};
      held = distance(p, box_center_px) <= config.attention_radius * s;
    }
    result.attention_success = held;
  }
  const bool on_box =
      distance(trajectory.effector[static_cast<std::size_t>(config.grasp_step)], box_center_px) <= config.pick_tolerance * s;
  const bool lifted = trajectory.attached.back() && distance(trajectory.box.back(), box_center_px) >= config.min_lift * s;
  result.pick_success = on_box && lifted;
  return result;
}

}  // namespace a3rnn::env
