#pragma once

// Dynamic comparison scenarios, repeated trials and the summary metrics.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "agile_pilot/ppo.hpp"

namespace agile {

struct CaseSpec {
  int id = 1;
  std::string name;
  bool trap = false;             // obstacle exactly on the approach line
  double gate_speed = 0.3;       // m/s
  bool gate_moves_laterally = true;  // otherwise along the gate normal
  double gate_half_range = 1.0;  // m
  double obstacle_speed = 0.0;   // m/s, 0 keeps obstacles fixed
  double obstacle_half_range = 0.5;
  bool target_height_varies = false;
  double target_amplitude = 0.5;  // m
  double target_period = 6.0;     // s
  bool perception = false;        // observations come from the tracker
  double gate_side = 0.0;         // lateral start offset of the gate for the perception cases
  int obstacle_count = 2;         // leading obstacles kept from the layout, 0..2
  int n_trials = 15;
  double time_cap = 20.0;  // s

  void validate() const {
    if (gate_speed < 0 || obstacle_speed < 0) throw std::invalid_argument("CaseSpec: speeds must be >= 0");
    if (n_trials < 1) throw std::invalid_argument("CaseSpec: n_trials must be >= 1");
    if (obstacle_count < 0 || obstacle_count > 2) throw std::invalid_argument("CaseSpec: obstacle_count in 0..2");
    if (!(time_cap > 0)) throw std::invalid_argument("CaseSpec: time_cap must be positive");
  }
};

/// The five comparison cases. Every case has two obstacles and one gate.
inline CaseSpec comparison_case(int id) {
  CaseSpec c;
  c.id = id;
  switch (id) {
    case 1:
      c.name = "gate 0.3 m/s, local-minimum trap";
      c.trap = true;
      c.gate_moves_laterally = false;
      c.gate_half_range = 0.5;
      break;
    case 2:
      c.name = "gate 0.3 m/s";
      break;
    case 3:
      c.name = "gate 0.3 m/s, target height varying";
      c.target_height_varies = true;
      break;
    case 4:
      c.name = "gate and obstacles 0.3 m/s";
      c.obstacle_speed = 0.3;
      break;
    case 5:
      c.name = "gate 0.6 m/s";
      c.gate_speed = 0.6;
      break;
    default:
      throw std::invalid_argument("comparison_case: id must be in 1..5");
  }
  return c;
}

/// Closed-loop scenarios flown on tracker estimates instead of ground truth.
inline CaseSpec perception_case(int id) {
  CaseSpec c;
  c.id = id;
  c.perception = true;
  switch (id) {
    case 6:
      c.name = "tracked, gate left 0.3 m/s";
      c.gate_side = 0.6;
      break;
    case 7:
      c.name = "tracked, gate right 0.6 m/s";
      c.gate_side = -0.6;
      c.gate_speed = 0.6;
      break;
    case 8:
      c.name = "tracked, static gate";
      c.gate_speed = 0.0;
      break;
    default:
      throw std::invalid_argument("perception_case: id must be in 6..8");
  }
  return c;
}

inline CaseSpec case_by_id(int id) { return id <= 5 ? comparison_case(id) : perception_case(id); }

/// Randomized initial layout for one trial. The approach runs along +x:
/// drone near x=-4, gate near x=0.5, target near x=3.8.
inline WorldState make_case_layout(const CaseSpec& c, Rng& rng) {
  c.validate();
  WorldState w;
  const double zd = uniform(rng, 1.0, 2.0);
  const double zt = uniform(rng, 1.0, 2.0);
  const double y_jit = c.trap ? 0.0 : 0.5;
  w.drone.position = {-4.0 + uniform(rng, -0.3, 0.3), uniform(rng, -y_jit, y_jit), zd};
  w.drone.yaw = 0.0;

  Gate g;
  g.center = {0.5 + uniform(rng, -0.3, 0.3), c.gate_side + uniform(rng, -y_jit, y_jit) * 0.5, 1.5};
  g.yaw = 0.0;
  w.gate = g;
  w.gate_passed = false;
  w.target = {3.8 + uniform(rng, -0.2, 0.2), uniform(rng, -y_jit, y_jit), zt};

  const auto side = [&] { return uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0; };
  const Vec3 d = w.drone.position;
  const double f1 = uniform(rng, 0.45, 0.55);
  Obstacle o1;
  if (c.trap) {
    o1.center_xy = {d.x() + f1 * (g.center.x() - d.x()), 0.0};
  } else {
    const Vec3 p = d + f1 * (g.center - d);
    o1.center_xy = {p.x(), p.y() + side() * uniform(rng, 0.4, 0.9)};
  }
  o1.z = 0.0;
  Obstacle o2;
  o2.center_xy = {g.center.x() + uniform(rng, 1.8, 2.3), side() * uniform(rng, 0.6, 1.0)};
  o2.z = 0.0;
  w.obstacles = {o1, o2};

  w.obstacles_move = false;
  w.obstacle_motion.assign(2, std::nullopt);
  if (c.obstacle_speed > 0.0) {
    for (std::size_t i = 0; i < 2; ++i) {
      PingPongMotion m;
      m.anchor = w.obstacles[i].center_xy;
      m.direction = Vec2::UnitY();
      m.speed = c.obstacle_speed;
      m.half_range = c.obstacle_half_range;
      m.sign = side();
      w.obstacle_motion[i] = m;
    }
  }

  PingPongMotion gm;
  gm.anchor = {g.center.x(), g.center.y()};
  gm.direction = c.gate_moves_laterally ? Vec2::UnitY() : Vec2::UnitX();
  gm.speed = c.gate_speed;
  gm.half_range = c.gate_half_range;
  gm.sign = c.trap ? 1.0 : side();
  w.gate_motion = gm;

  if (c.target_height_varies) w.target_motion = HeightOscillation{zt, c.target_amplitude, c.target_period};
  w.obstacles.resize(static_cast<std::size_t>(c.obstacle_count));
  w.obstacle_motion.resize(w.obstacles.size());
  return w;
}

struct TrajectorySample {
  double t, x, y, z, speed;
  int phase;  // 0 while heading for the gate, 1 afterwards
};

struct TrialResult {
  bool success = false;
  bool collision = false;
  bool timeout = false;
  double gate_offset = std::nan("");   // m, in-plane offset when the gate was passed
  double target_error = std::nan("");  // m, distance to the target at the end
  double time = 0.0;                   // s
  std::string diagnostic;
  std::vector<TrajectorySample> trajectory;

  double tracking_error() const { return 0.5 * (gate_offset + target_error); }
};

/// Flies one trial. `ctl` sees the ground-truth world; perception-based agents
/// wrap their own estimator around it.
inline TrialResult run_trial(WorldState w, const Controller& ctl, const CaseSpec& c, Rng& rng,
                             const RewardConfig& rcfg = {}) {
  WorldConfig cfg;
  cfg.episode_time = c.time_cap;
  cfg.object_speed = 0.0;
  TrialResult tr;
  auto sample = [&] {
    const auto& d = w.drone;
    tr.trajectory.push_back({w.t, d.position.x(), d.position.y(), d.position.z(), d.velocity.norm(),
                             w.gate_passed ? 1 : 0});
  };
  sample();
  for (;;) {
    StepResult r;
    try {
      const VelocityCommand cmd = ctl(w);
      if (!cmd.v_des.allFinite() || !std::isfinite(cmd.v_max)) throw std::domain_error("non-finite command");
      r = step_env(w, cmd, rng, cfg, rcfg);
    } catch (const std::domain_error& e) {
      tr.diagnostic = e.what();
      break;
    }
    sample();
    if (r.info.gate_event) tr.gate_offset = r.info.gate_offset;
    if (r.done) {
      tr.success = r.info.success;
      tr.collision = r.info.collided();
      tr.timeout = r.info.timeout;
      if (tr.collision) tr.diagnostic = "collision";
      if (tr.timeout) tr.diagnostic = "timeout";
      break;
    }
  }
  tr.time = w.t;
  tr.target_error = (w.drone.position - w.target).norm();
  return tr;
}

/// Factory for a controller that may keep per-trial state.
using ControllerFactory = std::function<Controller(const WorldState& initial, std::uint64_t seed)>;

inline ControllerFactory stateless(Controller ctl) {
  return [ctl = std::move(ctl)](const WorldState&, std::uint64_t) { return ctl; };
}

/// Runs the case's trials. Layouts depend only on `seed`, so different agents
/// run with the same seed face identical initial conditions.
inline std::vector<TrialResult> run_case(const CaseSpec& c, const ControllerFactory& make, std::uint64_t seed) {
  c.validate();
  std::seed_seq seq{seed, static_cast<std::uint64_t>(c.id)};
  std::vector<std::uint64_t> seeds(3 * static_cast<std::size_t>(c.n_trials));
  seq.generate(seeds.begin(), seeds.end());
  std::vector<TrialResult> out;
  for (int k = 0; k < c.n_trials; ++k) {
    Rng layout_rng(seeds[3 * k]);
    Rng sim_rng(seeds[3 * k + 1]);
    const WorldState w = make_case_layout(c, layout_rng);
    out.push_back(run_trial(w, make(w, seeds[3 * k + 2]), c, sim_rng));
  }
  return out;
}

inline std::vector<TrialResult> run_case(const CaseSpec& c, const Controller& ctl, std::uint64_t seed) {
  return run_case(c, stateless(ctl), seed);
}

struct CaseMetrics {
  int trials = 0;
  int successes = 0;
  double success_rate = 0.0;         // %
  std::optional<double> tracking_me;  // cm
  std::optional<double> tracking_sd;  // cm, sample SD over trials
  std::optional<double> mean_time;    // s
};

inline CaseMetrics compute_metrics(const std::vector<TrialResult>& results) {
  if (results.empty()) throw std::invalid_argument("compute_metrics: no results");
  CaseMetrics m;
  m.trials = static_cast<int>(results.size());
  std::vector<double> err, tt;
  for (const auto& r : results) {
    if (!r.success) continue;
    ++m.successes;
    err.push_back(100.0 * r.tracking_error());
    tt.push_back(r.time);
  }
  const int failures = m.trials - m.successes;
  m.success_rate = (1.0 - static_cast<double>(failures) / m.trials) * 100.0;
  if (err.empty()) return m;
  const double n = static_cast<double>(err.size());
  double me = 0.0, t = 0.0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    me += err[i];
    t += tt[i];
  }
  me /= n;
  double var = 0.0;
  for (double e : err) var += (e - me) * (e - me);
  m.tracking_me = me;
  m.tracking_sd = err.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  m.mean_time = t / n;
  return m;
}

inline std::string fmt_or_na(const std::optional<double>& v, int prec) {
  if (!v) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, *v);
  return buf;
}

inline std::string fmt(double v, int prec) { return fmt_or_na(v, prec); }

struct AgentCaseResult {
  std::string agent;
  CaseSpec spec;
  std::vector<TrialResult> trials;
};

inline void write_report_csv(const std::filesystem::path& path, const std::vector<AgentCaseResult>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "case,agent,trials,successes,success_rate_pct,tracking_me_cm,tracking_sd_cm,tt_s\n";
  for (const auto& r : rows) {
    const CaseMetrics m = compute_metrics(r.trials);
    f << r.spec.id << ',' << r.agent << ',' << m.trials << ',' << m.successes << ',' << fmt(m.success_rate, 1)
      << ',' << fmt_or_na(m.tracking_me, 2) << ',' << fmt_or_na(m.tracking_sd, 2) << ','
      << fmt_or_na(m.mean_time, 3) << '\n';
  }
}

inline void write_trials_csv(const std::filesystem::path& path, const std::vector<AgentCaseResult>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "case,agent,trial,success,collision,timeout,gate_offset_m,target_error_m,time_s,diagnostic\n";
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < r.trials.size(); ++k) {
      const TrialResult& t = r.trials[k];
      auto num = [](double v) { return std::isnan(v) ? std::string("NA") : fmt(v, 9); };
      f << r.spec.id << ',' << r.agent << ',' << k << ',' << t.success << ',' << t.collision << ',' << t.timeout
        << ',' << num(t.gate_offset) << ',' << num(t.target_error) << ',' << fmt(t.time, 2) << ','
        << t.diagnostic << '\n';
    }
  }
}

inline void write_trajectory_csv(const std::filesystem::path& path, const std::vector<TrajectorySample>& traj) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "t,x,y,z,speed,phase\n";
  char buf[160];
  for (const auto& s : traj) {
    std::snprintf(buf, sizeof buf, "%.2f,%.5f,%.5f,%.5f,%.5f,%d\n", s.t, s.x, s.y, s.z, s.speed, s.phase);
    f << buf;
  }
}

}  // namespace agile
