#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include "agile_pilot/common.hpp"

namespace agile {

struct RewardConfig {
  double c_p = 0.1;        // keeps the proximity term bounded at the goal
  double c_o = 2.0;        // obstacle penalty scale
  double c_penal = 100.0;  // collision penalty
  double c_v = 0.1;        // speed penalty inside the safety region
  double r_safety = 1.0;   // m

  void validate() const {
    if (!(c_p > 0 && c_o > 0 && c_penal > 0 && c_v > 0 && r_safety > 0)) {
      throw std::invalid_argument("RewardConfig: all constants must be positive");
    }
  }
};

inline double r_proximity(double d_goal, const RewardConfig& cfg) {
  if (!(d_goal >= 0.0)) throw std::domain_error("r_proximity: distance must be non-negative");
  return 1.0 / (d_goal + cfg.c_p);
}

inline double r_obstacle(double d_obs, const RewardConfig& cfg) {
  return -cfg.c_o * std::exp(-d_obs / cfg.r_safety);
}

inline double r_collision(bool collided, const RewardConfig& cfg) {
  return collided ? -cfg.c_penal : 0.0;
}

inline double r_velocity(const Vec3& v, double d_obs, const RewardConfig& cfg) {
  return d_obs < cfg.r_safety ? -cfg.c_v * v.squaredNorm() : 0.0;
}

/// Inputs to the reward extracted from a world state. d_obs is the horizontal
/// distance to the nearest obstacle axis (infinity when there are none).
struct RewardInputs {
  double d_goal = 0.0;
  double d_obs = std::numeric_limits<double>::infinity();
  Vec3 velocity = Vec3::Zero();
  bool collided = false;
};

struct RewardTerms {
  double proximity = 0.0;
  double obstacle = 0.0;
  double collision = 0.0;
  double velocity = 0.0;
  double total() const { return proximity + obstacle + collision + velocity; }
};

inline RewardTerms reward_terms(const RewardInputs& in, const RewardConfig& cfg) {
  return {r_proximity(in.d_goal, cfg), r_obstacle(in.d_obs, cfg), r_collision(in.collided, cfg),
          r_velocity(in.velocity, in.d_obs, cfg)};
}

}  // namespace agile
