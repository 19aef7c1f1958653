#pragma once

// Episode environment: scene layout, domain randomization, object motion,
// observation assembly, gate traversal, collisions and termination.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "agile_pilot/common.hpp"
#include "agile_pilot/dynamics.hpp"
#include "agile_pilot/reward.hpp"

namespace agile {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

struct Gate {
  Vec3 center = Vec3::Zero();
  double yaw = 0.0;  // direction of the plane normal
  double half_width = 0.75;
  double half_height = 0.75;

  Vec3 normal() const { return {std::cos(yaw), std::sin(yaw), 0.0}; }
  Vec3 lateral() const { return {-std::sin(yaw), std::cos(yaw), 0.0}; }
};

/// Vertical cylinder; treated as infinitely tall for collisions.
struct Obstacle {
  Vec2 center_xy = Vec2::Zero();
  double z = 0.0;  // base height; only reported in the observation
  double radius = 0.05;
};

/// Constant-speed motion along a fixed horizontal direction, reflecting at
/// +-half_range around the anchor.
struct PingPongMotion {
  Vec2 anchor = Vec2::Zero();
  Vec2 direction = Vec2::UnitX();
  double speed = 0.0;
  double half_range = std::numeric_limits<double>::infinity();
  double offset = 0.0;
  double sign = 1.0;

  Vec2 advance(double dt) {
    offset += sign * speed * dt;
    if (offset > half_range) {
      offset = 2.0 * half_range - offset;
      sign = -1.0;
    } else if (offset < -half_range) {
      offset = -2.0 * half_range - offset;
      sign = 1.0;
    }
    return anchor + direction * offset;
  }
};

/// Sinusoidal target height z(t) = base + amplitude * sin(2 pi t / period).
struct HeightOscillation {
  double base_z = 1.0;
  double amplitude = 0.0;
  double period = 1.0;
  double at(double t) const { return base_z + amplitude * std::sin(2.0 * kPi * t / period); }
};

struct GateCrossing {
  double lateral = 0.0;   // signed in-plane horizontal offset from the gate center
  double vertical = 0.0;  // signed in-plane vertical offset
  bool inside_opening = false;
  bool on_frame = false;
  double offset() const { return std::hypot(lateral, vertical); }
};

struct WorldConfig {
  DynamicsConfig dynamics;

  double spawn_xy = 4.0;  // drone x, y ~ U(-spawn_xy, spawn_xy)
  double spawn_z_min = 0.3;
  double spawn_z_max = 4.0;
  double spawn_yaw = kPi / 2.0;
  double target_xy = 4.0;
  double target_z_min = 0.5;
  double target_z_max = 3.5;
  double min_leg_length = 1.0;  // horizontal drone-to-goal distance below which a layout is resampled

  int obstacle_count = 1;
  double d_long_min = 0.25;  // fraction of the connecting vector
  double d_long_max = 0.75;
  double d_lat_min = 0.0;  // m, |lateral offset| lower bound
  double d_lat_max = 0.5;  // m
  double obstacle_z_min = 0.0;
  double obstacle_z_max = 2.0;
  double obstacle_radius = 0.05;
  double spawn_clearance = 0.5;  // min horizontal gap from obstacle axis to drone or goal at spawn

  double gate_probability = 0.0;  // share of episodes that route through a gate first
  double gate_fraction_min = 0.35;
  double gate_fraction_max = 0.65;
  double gate_lateral_jitter = 0.3;
  double gate_yaw_jitter = 0.35;

  double object_speed = 0.3;  // random-walk velocity bound for gate and obstacles, m/s
  bool obstacles_move = true;

  double r_drone = 0.15;
  double success_radius = 0.2;
  double episode_time = 10.0;
  double frame_width = 0.2;
  double ground_z = 0.05;
  double target_size = 0.4;
  double gate_capture_depth = 0.15;  // slab half-thickness around the gate plane that counts as reaching it
};

struct WorldState {
  DroneState drone;
  std::optional<Gate> gate;
  std::vector<Obstacle> obstacles;
  Vec3 target = Vec3::Zero();
  double target_size = 0.4;
  bool gate_passed = true;
  double t = 0.0;
  long steps = 0;
  std::uint64_t rng_seed = 0;
  bool done = false;

  // Scenario motion overrides; objects without one follow the random walk.
  std::optional<PingPongMotion> gate_motion;
  std::vector<std::optional<PingPongMotion>> obstacle_motion;
  std::optional<HeightOscillation> target_motion;
  bool obstacles_move = true;

  std::optional<GateCrossing> last_crossing;

  const Vec3& current_goal() const { return (gate && !gate_passed) ? gate->center : target; }
};

/// Number of entries in an observation vector.
inline constexpr int kObsDim = 21;
inline constexpr int kActDim = 4;

using Observation = Eigen::Matrix<double, kObsDim, 1>;

/// Relative position reported when the scene holds no obstacle.
inline const Vec2 kNoObstacleOffset{10.0, 10.0};

inline double horizontal_distance(const Vec3& p, const Obstacle& o) {
  return std::hypot(p.x() - o.center_xy.x(), p.y() - o.center_xy.y());
}

/// Index of the obstacle whose axis is horizontally closest to p, or -1.
inline int nearest_obstacle(const WorldState& w, const Vec3& p) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(w.obstacles.size()); ++i) {
    const double d = horizontal_distance(p, w.obstacles[i]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

inline double nearest_obstacle_distance(const WorldState& w) {
  const int i = nearest_obstacle(w, w.drone.position);
  return i < 0 ? std::numeric_limits<double>::infinity()
               : horizontal_distance(w.drone.position, w.obstacles[i]);
}

/// Horizontal unit vector perpendicular to L: (L x Z) / |L x Z|.
inline std::optional<Vec3> lateral_unit(const Vec3& L) {
  const Vec3 c = L.cross(Vec3::UnitZ());
  const double n = c.norm();
  if (n < 1e-9) return std::nullopt;
  return Vec3(c / n);
}

/// Places an obstacle at start + d_long * L + d_lat * L_lat with L = goal - start.
inline Obstacle place_obstacle(const Vec3& start, const Vec3& goal, double d_long, double d_lat,
                               double z, double radius) {
  const Vec3 L = goal - start;
  const Vec3 lat = lateral_unit(L).value_or(Vec3::UnitY());
  const Vec3 p = start + d_long * L + d_lat * lat;
  return Obstacle{Vec2(p.x(), p.y()), z, radius};
}

inline WorldState randomize_episode(Rng& rng, const WorldConfig& cfg) {
  const std::uint64_t seed = rng();
  Rng local(seed);

  for (;;) {
    WorldState w;
    w.rng_seed = seed;
    w.target_size = cfg.target_size;
    w.obstacles_move = cfg.obstacles_move;

    DroneState d;
    d.position = {uniform(local, -cfg.spawn_xy, cfg.spawn_xy), uniform(local, -cfg.spawn_xy, cfg.spawn_xy),
                  uniform(local, cfg.spawn_z_min, cfg.spawn_z_max)};
    d.yaw = uniform(local, -cfg.spawn_yaw, cfg.spawn_yaw);
    w.drone = d;
    w.target = {uniform(local, -cfg.target_xy, cfg.target_xy), uniform(local, -cfg.target_xy, cfg.target_xy),
                uniform(local, cfg.target_z_min, cfg.target_z_max)};

    const Vec3 L = w.target - d.position;
    if (std::hypot(L.x(), L.y()) < cfg.min_leg_length) continue;

    // Legs the obstacles are spread over: drone -> target, or drone -> gate -> target.
    std::vector<std::pair<Vec3, Vec3>> legs;
    if (uniform(local, 0.0, 1.0) < cfg.gate_probability) {
      Gate g;
      const double f = uniform(local, cfg.gate_fraction_min, cfg.gate_fraction_max);
      const Vec3 lat = *lateral_unit(L);
      g.center = d.position + f * L + uniform(local, -cfg.gate_lateral_jitter, cfg.gate_lateral_jitter) * lat;
      g.yaw = wrap_angle(std::atan2(L.y(), L.x()) + uniform(local, -cfg.gate_yaw_jitter, cfg.gate_yaw_jitter));
      w.gate = g;
      w.gate_passed = false;
      legs = {{d.position, g.center}, {g.center, w.target}};
      if (std::hypot(g.center.x() - d.position.x(), g.center.y() - d.position.y()) < cfg.min_leg_length) continue;
    } else {
      legs = {{d.position, w.target}};
    }

    bool ok = true;
    for (int i = 0; i < cfg.obstacle_count; ++i) {
      const auto& [a, b] = legs[i % legs.size()];
      const double d_long = uniform(local, cfg.d_long_min, cfg.d_long_max);
      double d_lat = uniform(local, -cfg.d_lat_max, cfg.d_lat_max);
      if (cfg.d_lat_min > 0.0) {
        d_lat = std::copysign(cfg.d_lat_min + std::abs(d_lat) / cfg.d_lat_max * (cfg.d_lat_max - cfg.d_lat_min), d_lat);
      }
      const double z = uniform(local, cfg.obstacle_z_min, cfg.obstacle_z_max);
      Obstacle o = place_obstacle(a, b, d_long, d_lat, z, cfg.obstacle_radius);
      const double clear = cfg.spawn_clearance + o.radius;
      if (horizontal_distance(d.position, o) < clear || horizontal_distance(w.target, o) < clear ||
          (w.gate && horizontal_distance(w.gate->center, o) < clear)) {
        ok = false;
        break;
      }
      w.obstacles.push_back(o);
    }
    if (!ok) continue;
    w.obstacle_motion.assign(w.obstacles.size(), std::nullopt);
    return w;
  }
}

/// Moves the gate, obstacles and target by one period. Objects with a
/// scenario override follow it; the rest take a random-walk step with
/// per-axis velocity drawn from U(-v_max_obj, v_max_obj).
inline void move_objects(WorldState& w, double v_max_obj, double dt, Rng& rng) {
  if (v_max_obj < 0.0) throw std::invalid_argument("move_objects: negative speed bound");
  auto random_step = [&](double& x, double& y) {
    if (v_max_obj == 0.0) return;
    x += uniform(rng, -v_max_obj, v_max_obj) * dt;
    y += uniform(rng, -v_max_obj, v_max_obj) * dt;
  };
  if (w.gate) {
    if (w.gate_motion) {
      const Vec2 p = w.gate_motion->advance(dt);
      w.gate->center.x() = p.x();
      w.gate->center.y() = p.y();
    } else {
      random_step(w.gate->center.x(), w.gate->center.y());
    }
  }
  w.obstacle_motion.resize(w.obstacles.size());
  for (std::size_t i = 0; i < w.obstacles.size(); ++i) {
    if (w.obstacle_motion[i]) {
      w.obstacles[i].center_xy = w.obstacle_motion[i]->advance(dt);
    } else if (w.obstacles_move) {
      random_step(w.obstacles[i].center_xy.x(), w.obstacles[i].center_xy.y());
    }
  }
  if (w.target_motion) w.target.z() = w.target_motion->at(w.t + dt);
}

inline Observation observe(const WorldState& w) {
  Observation o;
  const DroneState& d = w.drone;
  o.segment<3>(0) = d.position;
  o.segment<3>(3) = Vec3(0.0, 0.0, d.yaw);
  o.segment<3>(6) = d.velocity;
  o.segment<3>(9) = Vec3(0.0, 0.0, d.yaw_rate);
  if (w.gate && !w.gate_passed) {
    o.segment<3>(12) = w.gate->center;
    o(15) = 2.0 * w.gate->half_width;
    o(16) = w.gate->yaw;
  } else {
    o.segment<3>(12) = w.target;
    o(15) = w.target_size;
    o(16) = 0.0;
  }
  const int i = nearest_obstacle(w, d.position);
  if (i < 0) {
    o.segment<4>(17) = Vec4(kNoObstacleOffset.x(), kNoObstacleOffset.y(), 0.0, 0.0);
  } else {
    const Obstacle& ob = w.obstacles[i];
    o.segment<4>(17) = Vec4(ob.center_xy.x() - d.position.x(), ob.center_xy.y() - d.position.y(),
                            ob.z - d.position.z(), ob.radius);
  }
  return o;
}

/// Crossing of the gate plane by the segment from -> to (both relative to the
/// current gate pose), if any.
inline std::optional<GateCrossing> detect_crossing(const Gate& g, const Vec3& from, const Vec3& to,
                                                   double frame_width) {
  const Vec3 n = g.normal();
  const double s0 = n.dot(from - g.center);
  const double s1 = n.dot(to - g.center);
  if (!((s0 < 0.0 && s1 >= 0.0) || (s0 > 0.0 && s1 <= 0.0))) return std::nullopt;
  const double f = s0 / (s0 - s1);
  const Vec3 p = from + f * (to - from) - g.center;
  GateCrossing c;
  c.lateral = g.lateral().dot(p);
  c.vertical = p.z();
  const double ax = std::abs(c.lateral);
  const double az = std::abs(c.vertical);
  c.inside_opening = ax <= g.half_width && az <= g.half_height;
  c.on_frame = !c.inside_opening && ax <= g.half_width + frame_width && az <= g.half_height + frame_width;
  return c;
}

enum class CollisionKind { kNone, kObstacle, kGateFrame, kGround };

inline CollisionKind collision_kind(const WorldState& w, const WorldConfig& cfg) {
  for (const auto& o : w.obstacles) {
    if (horizontal_distance(w.drone.position, o) < o.radius + cfg.r_drone) return CollisionKind::kObstacle;
  }
  if (w.last_crossing && w.last_crossing->on_frame) return CollisionKind::kGateFrame;
  if (w.drone.position.z() < cfg.ground_z) return CollisionKind::kGround;
  return CollisionKind::kNone;
}

inline bool check_collision(const WorldState& w, const WorldConfig& cfg = {}) {
  return collision_kind(w, cfg) != CollisionKind::kNone;
}

inline RewardInputs reward_inputs(const WorldState& w, bool collided) {
  RewardInputs in;
  in.d_goal = (w.drone.position - w.current_goal()).norm();
  in.d_obs = nearest_obstacle_distance(w);
  in.velocity = w.drone.velocity;
  in.collided = collided;
  return in;
}

inline double r_total(const WorldState& w, bool collided, const RewardConfig& cfg) {
  return reward_terms(reward_inputs(w, collided), cfg).total();
}

struct StepInfo {
  bool success = false;
  bool timeout = false;
  CollisionKind collision = CollisionKind::kNone;
  bool gate_event = false;  // gate_passed switched on during this step
  double gate_offset = 0.0; // in-plane offset from the gate center at that event
  bool collided() const { return collision != CollisionKind::kNone; }
};

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

inline StepResult step_env(WorldState& w, const VelocityCommand& cmd, Rng& rng, const WorldConfig& cfg,
                           const RewardConfig& rcfg) {
  if (w.done) throw ContractError("step_env: episode already finished");
  const double dt = cfg.dynamics.dt;
  const Vec3 prev = w.drone.position;

  w.drone = step_dynamics(w.drone, cmd, dt, cfg.dynamics);
  move_objects(w, cfg.object_speed, dt, rng);
  w.t += dt;
  ++w.steps;

  StepResult r;
  w.last_crossing.reset();
  if (w.gate) {
    w.last_crossing = detect_crossing(*w.gate, prev, w.drone.position, cfg.frame_width);
    if (!w.gate_passed) {
      const Vec3 rel = w.drone.position - w.gate->center;
      const double lat = w.gate->lateral().dot(rel);
      const double depth = std::abs(w.gate->normal().dot(rel));
      const bool crossed = w.last_crossing && w.last_crossing->inside_opening;
      const bool in_slab = depth <= cfg.gate_capture_depth &&
                           std::abs(lat) <= w.gate->half_width - cfg.r_drone &&
                           std::abs(rel.z()) <= w.gate->half_height - cfg.r_drone;
      if (crossed || in_slab) {
        w.gate_passed = true;
        r.info.gate_event = true;
        r.info.gate_offset = crossed ? w.last_crossing->offset() : std::hypot(lat, rel.z());
      }
    }
  }

  r.info.collision = collision_kind(w, cfg);
  r.reward = r_total(w, r.info.collided(), rcfg);

  const long max_steps = std::lround(cfg.episode_time / dt);
  if (!r.info.collided() && w.gate_passed && (w.drone.position - w.target).norm() < cfg.success_radius) {
    r.info.success = true;
  }
  r.info.timeout = !r.info.collided() && !r.info.success && w.steps >= max_steps;
  r.done = r.info.collided() || r.info.success || r.info.timeout;
  w.done = r.done;
  r.obs = observe(w);
  return r;
}

inline StepResult step_env(WorldState& w, const Vec4& action, Rng& rng, const WorldConfig& cfg,
                           const RewardConfig& rcfg) {
  if (w.done) throw ContractError("step_env: episode already finished");
  return step_env(w, map_action(action), rng, cfg, rcfg);
}

using EpisodeFactory = std::function<WorldState(Rng&)>;

/// Maps the current world to a velocity command.
using Controller = std::function<VelocityCommand(const WorldState&)>;

/// A single environment instance with its own random stream.
class Environment {
 public:
  Environment(EpisodeFactory factory, WorldConfig cfg, RewardConfig rcfg, std::uint64_t seed)
      : factory_(std::move(factory)), cfg_(std::move(cfg)), rcfg_(rcfg), rng_(seed) {}

  Environment(WorldConfig cfg, RewardConfig rcfg, std::uint64_t seed)
      : Environment([c = cfg](Rng& r) { return randomize_episode(r, c); }, cfg, rcfg, seed) {}

  Observation reset() {
    state_ = factory_(rng_);
    return observe(state_);
  }

  StepResult step(const Vec4& action) { return step_env(state_, action, rng_, cfg_, rcfg_); }
  StepResult step(const VelocityCommand& cmd) { return step_env(state_, cmd, rng_, cfg_, rcfg_); }

  const WorldState& state() const { return state_; }
  WorldState& state() { return state_; }
  const WorldConfig& config() const { return cfg_; }

  /// Switches to randomized layouts drawn from cfg; takes effect at the next reset.
  void set_world(const WorldConfig& cfg) {
    cfg_ = cfg;
    factory_ = [c = cfg](Rng& r) { return randomize_episode(r, c); };
  }
  const RewardConfig& reward_config() const { return rcfg_; }

 private:
  EpisodeFactory factory_;
  WorldConfig cfg_;
  RewardConfig rcfg_;
  Rng rng_;
  WorldState state_;
};

}  // namespace agile
