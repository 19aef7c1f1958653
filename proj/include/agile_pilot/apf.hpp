#pragma once

// Artificial potential field baseline: linear attraction to the current goal,
// Khatib repulsion from the obstacle axes (horizontal only).

#include <algorithm>
#include <stdexcept>

#include "agile_pilot/world.hpp"

namespace agile {

struct ApfConfig {
  double k_att = 1.2;
  double k_rep = 0.8;
  double d0 = 1.5;     // m, repulsion cutoff
  double v_cap = 1.0;  // m/s

  void validate() const {
    if (!(k_att > 0 && k_rep > 0 && d0 > 0 && v_cap > 0)) {
      throw std::invalid_argument("ApfConfig: all gains must be positive");
    }
  }
};

inline constexpr double kApfMinDistance = 1e-3;

inline Vec3 attractive(const Vec3& pos, const Vec3& goal, const ApfConfig& cfg) {
  return cfg.k_att * (goal - pos);
}

inline Vec3 repulsive(const Vec3& pos, const Obstacle& o, const ApfConfig& cfg) {
  const Vec2 away(pos.x() - o.center_xy.x(), pos.y() - o.center_xy.y());
  const double axis = away.norm();
  const double d = std::max(axis - o.radius, kApfMinDistance);
  if (d >= cfg.d0) return Vec3::Zero();
  // On the axis itself there is no direction to push along.
  if (axis == 0.0) return Vec3::Zero();
  const double mag = cfg.k_rep * (1.0 / d - 1.0 / cfg.d0) / (d * d);
  const Vec2 u = away / axis;
  return {mag * u.x(), mag * u.y(), 0.0};
}

inline VelocityCommand apf_step(const WorldState& w, const ApfConfig& cfg = {}) {
  const Vec3& pos = w.drone.position;
  Vec3 v = attractive(pos, w.current_goal(), cfg);
  for (const auto& o : w.obstacles) v += repulsive(pos, o, cfg);
  const double n = v.norm();
  if (n > cfg.v_cap) v *= cfg.v_cap / n;
  return VelocityCommand{v, cfg.v_cap};
}

}  // namespace agile
