#pragma once

// Kinematic quadrotor: first-order velocity tracking with an acceleration cap,
// yaw slaved to the horizontal velocity direction.

#include <algorithm>
#include <span>
#include <stdexcept>

#include "agile_pilot/common.hpp"

namespace agile {

struct DynamicsConfig {
  double tau_v = 0.3;          // s, velocity time constant
  double a_max = 6.0;          // m/s^2
  double tau_yaw = 0.2;        // s
  double yaw_rate_max = 3.0;   // rad/s
  double yaw_min_speed = 0.05; // m/s, below this the heading is held
  double dt = 0.02;            // s, control period (50 Hz)
};

/// Per-axis velocity limits of the airframe.
inline constexpr double kMaxSpeedXY = 3.0;
inline constexpr double kMaxSpeedZ = 2.0;
inline constexpr double kMaxSpeed = 3.0;

struct DroneState {
  Vec3 position = Vec3::Zero();
  double yaw = 0.0;
  Vec3 velocity = Vec3::Zero();
  double yaw_rate = 0.0;
};

struct VelocityCommand {
  Vec3 v_des = Vec3::Zero();
  double v_max = 0.0;
};

inline Vec3 clamp_axes(const Vec3& v) {
  return {clamp_abs(v.x(), kMaxSpeedXY), clamp_abs(v.y(), kMaxSpeedXY), clamp_abs(v.z(), kMaxSpeedZ)};
}

/// Enforces ||v_des|| <= v_max (direction preserved) and then the per-axis caps.
inline VelocityCommand clamp_command(VelocityCommand cmd) {
  cmd.v_max = std::clamp(cmd.v_max, 0.0, kMaxSpeed);
  const double n = cmd.v_des.norm();
  if (n > cmd.v_max) {
    cmd.v_des = n > 0.0 ? Vec3(cmd.v_des * (cmd.v_max / n)) : Vec3::Zero();
  }
  cmd.v_des = clamp_axes(cmd.v_des);
  return cmd;
}

/// Maps a normalized policy action [vx, vy, vz, vmax] in [-1, 1]^4 to a
/// velocity command. Components outside [-1, 1] are clipped.
inline VelocityCommand map_action(std::span<const double, 4> a) {
  for (double x : a) {
    if (!std::isfinite(x)) throw std::domain_error("map_action: non-finite action component");
  }
  auto c = [](double x) { return std::clamp(x, -1.0, 1.0); };
  VelocityCommand cmd;
  cmd.v_max = kMaxSpeed * (c(a[3]) + 1.0) / 2.0;
  cmd.v_des = Vec3(kMaxSpeedXY * c(a[0]), kMaxSpeedXY * c(a[1]), kMaxSpeedZ * c(a[2]));
  return clamp_command(cmd);
}

inline VelocityCommand map_action(const Vec4& a) {
  return map_action(std::span<const double, 4>(a.data(), 4));
}

/// Heading of the horizontal velocity; holds prev_yaw when the drone is
/// (nearly) not moving horizontally.
inline double yaw_from_velocity(const Vec3& v, double prev_yaw, double min_speed = 0.05) {
  if (std::hypot(v.x(), v.y()) > min_speed) return std::atan2(v.y(), v.x());
  return prev_yaw;
}

inline DroneState step_dynamics(const DroneState& s, const VelocityCommand& raw_cmd, double dt,
                                const DynamicsConfig& cfg = {}) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_dynamics: dt must be positive");
  const VelocityCommand cmd = clamp_command(raw_cmd);

  const double gain = std::min(1.0, dt / cfg.tau_v);
  Vec3 dv = (cmd.v_des - s.velocity) * gain;
  const double dv_cap = cfg.a_max * dt;
  const double dv_norm = dv.norm();
  if (dv_norm > dv_cap) dv *= dv_cap / dv_norm;

  DroneState next;
  next.velocity = clamp_axes(s.velocity + dv);
  next.position = s.position + next.velocity * dt;

  const double target_yaw = yaw_from_velocity(next.velocity, s.yaw, cfg.yaw_min_speed);
  const double err = wrap_angle(target_yaw - s.yaw);
  const double gain_yaw = std::min(1.0 / cfg.tau_yaw, 1.0 / dt);
  next.yaw_rate = clamp_abs(err * gain_yaw, cfg.yaw_rate_max);
  next.yaw = wrap_angle(s.yaw + next.yaw_rate * dt);
  return next;
}

}  // namespace agile
