#pragma once

// Run configuration: one JSON document with world / reward / ppo / apf /
// perception / eval sections. Missing keys take their defaults, unknown keys
// are errors.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agile_pilot/apf.hpp"
#include "agile_pilot/eval.hpp"
#include "agile_pilot/perception.hpp"
#include "agile_pilot/ppo.hpp"

namespace agile {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalConfig {
  std::vector<int> cases{1, 2, 3, 4, 5};
  std::vector<int> perception_cases{6, 7, 8};
  int n_trials = 15;
  double time_cap = 20.0;
  bool write_trajectories = true;
};

struct RunConfig {
  WorldConfig world;
  RewardConfig reward;
  PpoConfig ppo;
  std::vector<CurriculumStage> curriculum;
  ApfConfig apf;
  PerceptionConfig perception;
  EvalConfig eval;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";

  TrainSetup train_setup() const { return TrainSetup{ppo, world, reward, curriculum, seed, nullptr}; }
  void validate() const;
};

namespace config_detail {

using nlohmann::json;

// Reads members of one JSON object and remembers which keys were consumed.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!j_[key].is_boolean()) throw ConfigError("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!j_[key].is_number_integer()) throw ConfigError("expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!j_[key].is_number()) throw ConfigError("expected a number");
      }
      out = j_[key].get<T>();
    } catch (const std::exception& e) {
      throw ConfigError(where() + "." + key + ": " + e.what());
    }
  }

  template <typename F>
  void section(const char* key, F&& f) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    Reader r(j_[key], path_ + "." + key);
    f(r);
    r.finish();
  }

  const json* raw(const char* key) {
    used_.insert(key);
    return j_.contains(key) ? &j_[key] : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw ConfigError("unknown key " + path_ + "." + k);
    }
  }

  std::string where() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

// Visits every field with a uniform (name, reference) callback so reading and
// writing share one field list.
template <typename V>
void visit_dynamics(DynamicsConfig& d, V&& v) {
  v("tau_v", d.tau_v);
  v("a_max", d.a_max);
  v("tau_yaw", d.tau_yaw);
  v("yaw_rate_max", d.yaw_rate_max);
  v("yaw_min_speed", d.yaw_min_speed);
  v("dt", d.dt);
}

template <typename V>
void visit_world(WorldConfig& w, V&& v) {
  v("spawn_xy", w.spawn_xy);
  v("spawn_z_min", w.spawn_z_min);
  v("spawn_z_max", w.spawn_z_max);
  v("spawn_yaw", w.spawn_yaw);
  v("target_xy", w.target_xy);
  v("target_z_min", w.target_z_min);
  v("target_z_max", w.target_z_max);
  v("min_leg_length", w.min_leg_length);
  v("obstacle_count", w.obstacle_count);
  v("d_long_min", w.d_long_min);
  v("d_long_max", w.d_long_max);
  v("d_lat_min", w.d_lat_min);
  v("d_lat_max", w.d_lat_max);
  v("obstacle_z_min", w.obstacle_z_min);
  v("obstacle_z_max", w.obstacle_z_max);
  v("obstacle_radius", w.obstacle_radius);
  v("spawn_clearance", w.spawn_clearance);
  v("gate_probability", w.gate_probability);
  v("gate_fraction_min", w.gate_fraction_min);
  v("gate_fraction_max", w.gate_fraction_max);
  v("gate_lateral_jitter", w.gate_lateral_jitter);
  v("gate_yaw_jitter", w.gate_yaw_jitter);
  v("object_speed", w.object_speed);
  v("obstacles_move", w.obstacles_move);
  v("r_drone", w.r_drone);
  v("success_radius", w.success_radius);
  v("episode_time", w.episode_time);
  v("frame_width", w.frame_width);
  v("ground_z", w.ground_z);
  v("target_size", w.target_size);
  v("gate_capture_depth", w.gate_capture_depth);
}

template <typename V>
void visit_reward(RewardConfig& r, V&& v) {
  v("c_p", r.c_p);
  v("c_o", r.c_o);
  v("c_penal", r.c_penal);
  v("c_v", r.c_v);
  v("r_safety", r.r_safety);
}

template <typename V>
void visit_ppo(PpoConfig& p, V&& v) {
  v("n_envs", p.n_envs);
  v("n_steps", p.n_steps);
  v("batch_size", p.batch_size);
  v("clip", p.clip);
  v("gamma", p.gamma);
  v("entropy_coef", p.entropy_coef);
  v("lr", p.lr);
  v("total_steps", p.total_steps);
  v("gae_lambda", p.gae_lambda);
  v("value_coef", p.value_coef);
  v("epochs", p.epochs);
  v("max_grad_norm", p.max_grad_norm);
  v("adam_beta1", p.adam_beta1);
  v("adam_beta2", p.adam_beta2);
  v("adam_eps", p.adam_eps);
  v("reward_scale", p.reward_scale);
  v("eval_interval", p.eval_interval);
  v("eval_episodes", p.eval_episodes);
}

template <typename V>
void visit_stage(CurriculumStage& s, V&& v) {
  v("start_step", s.start_step);
  v("obstacle_count", s.obstacle_count);
  v("gate_probability", s.gate_probability);
  v("d_lat_min", s.d_lat_min);
  v("d_lat_max", s.d_lat_max);
}

template <typename V>
void visit_apf(ApfConfig& a, V&& v) {
  v("k_att", a.k_att);
  v("k_rep", a.k_rep);
  v("d0", a.d0);
  v("v_cap", a.v_cap);
}

template <typename V>
void visit_intrinsics(CameraIntrinsics& c, V&& v) {
  v("fx", c.fx);
  v("fy", c.fy);
  v("cx", c.cx);
  v("cy", c.cy);
  v("width", c.width);
  v("height", c.height);
}

template <typename V>
void visit_perception(PerceptionConfig& p, V&& v) {
  v("pixel_noise", p.pixel_noise);
  v("rate", p.rate);
  v("latency", p.latency);
  v("calibration_samples", p.calibration_samples);
}

template <typename V>
void visit_tracker(TrackerConfig& t, V&& v) {
  v("gate_distance", t.gate_distance);
  v("drop_after", t.drop_after);
  v("init_variance_scale", t.init_variance_scale);
}

template <typename V>
void visit_noise(ProcessNoise& q, V&& v) {
  v("gate_position", q.gate_position);
  v("gate_yaw", q.gate_yaw);
  v("obstacle", q.obstacle);
}

template <typename V>
void visit_eval(EvalConfig& e, V&& v) {
  v("cases", e.cases);
  v("perception_cases", e.perception_cases);
  v("n_trials", e.n_trials);
  v("time_cap", e.time_cap);
  v("write_trajectories", e.write_trajectories);
}

inline auto reader_visitor(Reader& r) {
  return [&r](const char* k, auto& f) { r.get(k, f); };
}

inline auto writer_visitor(json& j) {
  return [&j](const char* k, auto& f) { j[k] = f; };
}

}  // namespace config_detail

inline RunConfig config_from_json(const nlohmann::json& j) {
  using namespace config_detail;
  RunConfig c;
  Reader root(j, "config");
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  root.section("world", [&](Reader& r) {
    visit_world(c.world, reader_visitor(r));
    r.section("dynamics", [&](Reader& d) { visit_dynamics(c.world.dynamics, reader_visitor(d)); });
  });
  root.section("reward", [&](Reader& r) { visit_reward(c.reward, reader_visitor(r)); });
  root.section("ppo", [&](Reader& r) {
    visit_ppo(c.ppo, reader_visitor(r));
    if (const json* cur = r.raw("curriculum")) {
      if (!cur->is_array()) throw ConfigError("config.ppo.curriculum must be an array");
      for (std::size_t i = 0; i < cur->size(); ++i) {
        CurriculumStage s;
        Reader sr((*cur)[i], "config.ppo.curriculum[" + std::to_string(i) + "]");
        visit_stage(s, reader_visitor(sr));
        sr.finish();
        c.curriculum.push_back(s);
      }
    }
  });
  root.section("apf", [&](Reader& r) { visit_apf(c.apf, reader_visitor(r)); });
  root.section("perception", [&](Reader& r) {
    visit_perception(c.perception, reader_visitor(r));
    r.section("intrinsics", [&](Reader& s) { visit_intrinsics(c.perception.intrinsics, reader_visitor(s)); });
    r.section("tracker", [&](Reader& s) {
      visit_tracker(c.perception.tracker, reader_visitor(s));
      s.section("process_noise", [&](Reader& q) { visit_noise(c.perception.tracker.q, reader_visitor(q)); });
    });
  });
  root.section("eval", [&](Reader& r) { visit_eval(c.eval, reader_visitor(r)); });
  root.finish();
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(RunConfig c) {
  using namespace config_detail;
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  json w;
  visit_world(c.world, writer_visitor(w));
  json dyn;
  visit_dynamics(c.world.dynamics, writer_visitor(dyn));
  w["dynamics"] = dyn;
  j["world"] = w;
  json r;
  visit_reward(c.reward, writer_visitor(r));
  j["reward"] = r;
  json p;
  visit_ppo(c.ppo, writer_visitor(p));
  p["curriculum"] = json::array();
  for (auto& s : c.curriculum) {
    json sj;
    visit_stage(s, writer_visitor(sj));
    p["curriculum"].push_back(sj);
  }
  j["ppo"] = p;
  json a;
  visit_apf(c.apf, writer_visitor(a));
  j["apf"] = a;
  json pc, in, tr, q;
  visit_perception(c.perception, writer_visitor(pc));
  visit_intrinsics(c.perception.intrinsics, writer_visitor(in));
  visit_tracker(c.perception.tracker, writer_visitor(tr));
  visit_noise(c.perception.tracker.q, writer_visitor(q));
  tr["process_noise"] = q;
  pc["intrinsics"] = in;
  pc["tracker"] = tr;
  j["perception"] = pc;
  json e;
  visit_eval(c.eval, writer_visitor(e));
  j["eval"] = e;
  return j;
}

inline void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  try {
    reward.validate();
    apf.validate();
    perception.validate();
    train_setup().validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    fail(e.what());
  }
  const auto& w = world;
  if (!(w.dynamics.dt > 0 && w.dynamics.tau_v > 0 && w.dynamics.a_max > 0 && w.dynamics.tau_yaw > 0)) {
    fail("world.dynamics: dt, tau_v, a_max and tau_yaw must be positive");
  }
  if (w.spawn_z_min > w.spawn_z_max || w.target_z_min > w.target_z_max || w.d_long_min > w.d_long_max ||
      w.obstacle_z_min > w.obstacle_z_max || w.gate_fraction_min > w.gate_fraction_max || w.d_lat_min > w.d_lat_max) {
    fail("world: a *_min bound exceeds its *_max");
  }
  if (w.obstacle_count < 0 || w.object_speed < 0 || !(w.episode_time > 0) || !(w.success_radius > 0)) {
    fail("world: obstacle_count and object_speed must be >= 0, episode_time and success_radius > 0");
  }
  if (w.gate_probability < 0 || w.gate_probability > 1) fail("world.gate_probability must lie in [0, 1]");
  if (eval.n_trials < 1 || !(eval.time_cap > 0)) fail("eval: n_trials >= 1 and time_cap > 0 required");
  for (int id : eval.cases) {
    if (id < 1 || id > 5) fail("eval.cases: ids must be in 1..5");
  }
  for (int id : eval.perception_cases) {
    if (id < 6 || id > 8) fail("eval.perception_cases: ids must be in 6..8");
  }
}

inline RunConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

inline std::string dump_config(const RunConfig& c) { return config_to_json(c).dump(2) + "\n"; }

}  // namespace agile
