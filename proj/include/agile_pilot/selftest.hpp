#pragma once

// Perception self-test: pose round trip, Monte-Carlo noise and tracker
// consistency, reported check by check.

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "agile_pilot/perception.hpp"

namespace agile {

struct SelftestCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelftestReport {
  std::vector<SelftestCheck> checks;
  std::vector<MeasurementLogRow> log;
  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const SelftestCheck& c) { return c.passed; });
  }
};

namespace selftest_detail {

inline std::string printf_str(const char* fmt, double a, double b = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, a, b);
  return buf;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::infinity();
  std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

}  // namespace selftest_detail

/// The statistical checks need noise; with pixel_noise = 0 they run at 1 px.
inline SelftestReport run_perception_selftest(const PerceptionConfig& cfg, std::uint64_t seed) {
  using namespace selftest_detail;
  cfg.validate();
  const CameraIntrinsics& intr = cfg.intrinsics;
  const double noise = cfg.pixel_noise > 0.0 ? cfg.pixel_noise : 1.0;
  SelftestReport rep;
  Rng rng(seed);
  const auto model = gate_model();

  {
    double max_pos = 0.0, max_yaw = 0.0;
    int failures = 0;
    for (int i = 0; i < 1000; ++i) {
      const double cam_yaw = uniform(rng, -kPi, kPi);
      const CameraPose cam = camera_on_drone(Vec3(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, 0.5, 2.5)),
                                             cam_yaw);
      Vec3 p;
      double yaw;
      KeypointSet k;
      do {
        const double r = uniform(rng, 1.5, 7.0), a = cam_yaw + uniform(rng, -0.5, 0.5);
        p = cam.position + Vec3(r * std::cos(a), r * std::sin(a), uniform(rng, -0.8, 0.8));
        yaw = wrap_angle(cam_yaw + uniform(rng, -1.0, 1.0));
        k = project_points(model, gate_rotation(yaw), p, cam, intr, 0.0, nullptr);
      } while (!k.visible);
      const PnpResult r = solve_planar_pnp(k.pixels, model, intr);
      if (!r.ok) {
        ++failures;
        continue;
      }
      const Vec4 est = gate_pose_in_world(r.best, cam);
      max_pos = std::max(max_pos, (est.head<3>() - p).norm());
      max_yaw = std::max(max_yaw, std::abs(wrap_angle(est(3) - yaw)));
    }
    rep.checks.push_back({"noiseless round trip (1000 poses)", failures == 0 && max_pos < 1e-6 && max_yaw < 1e-6,
                          printf_str("max position error %.3g m, max yaw error %.3g rad", max_pos, max_yaw)});
  }

  {
    const CameraPose cam = camera_on_drone(Vec3(0, 0, 1.5), 0.0);
    std::vector<double> err;
    for (int i = 0; i < 1000; ++i) {
      const Vec3 p(3.0, uniform(rng, -0.3, 0.3), 1.5 + uniform(rng, -0.3, 0.3));
      const auto k = project_points(model, gate_rotation(uniform(rng, -0.5, 0.5)), p, cam, intr, noise, &rng);
      if (!k.visible) continue;
      const PnpResult r = solve_planar_pnp(k.pixels, model, intr);
      if (r.ok) err.push_back((gate_pose_in_world(r.best, cam).head<3>() - p).norm());
    }
    const double m = median(err);
    rep.checks.push_back({"gate pose under pixel noise at 3 m", err.size() > 900 && m < 0.1,
                          printf_str("median position error %.4f m at %.2f px", m, noise)});
  }

  {
    const CameraPose cam = camera_on_drone(Vec3(0, 0, 1.5), 0.0);
    std::vector<Vec3> om;
    for (double h : obstacle_keypoint_heights()) om.emplace_back(0, 0, h);
    std::vector<double> err;
    for (int i = 0; i < 1000; ++i) {
      const Vec3 base(3.0, uniform(rng, -0.5, 0.5), 0.0);
      const auto k = project_points(om, Mat3::Identity(), base, cam, intr, noise, &rng);
      if (!k.visible) continue;
      const auto est = estimate_obstacle(k.pixels, obstacle_keypoint_heights(), cam, intr);
      if (est) err.push_back((*est - base.head<2>()).norm());
    }
    const double m = median(err);
    rep.checks.push_back({"obstacle position under pixel noise at 3 m", err.size() > 900 && m < 0.05,
                          printf_str("median position error %.4f m at %.2f px", m, noise)});
  }

  {
    PerceptionConfig pc = cfg;
    pc.pixel_noise = noise;
    PerceptionPipeline pipe(pc, seed + 1);
    WorldState w;
    w.drone.position = {0, 0, 1.5};
    Gate g;
    g.center = {4.0, 0.0, 1.5};
    w.gate = g;
    w.gate_passed = false;
    w.obstacles = {Obstacle{Vec2(2.5, 0.8), 0.0, 0.05}};
    PingPongMotion motion{Vec2(4.0, 0.0), Vec2::UnitY(), 0.3, 0.6};
    double raw = 0.0, filt = 0.0;
    int n = 0;
    const double dt = 1.0 / pc.rate;
    for (int i = 0; i < 600; ++i) {
      w.t = i * dt;
      if (i > 0) w.gate->center.head<2>() = motion.advance(dt);
      const auto ms = pipe.measure(w, w.t);
      pipe.tracker().process(w.t, ms);
      for (const auto& m : ms) {
        if (m.kind != ObjectKind::kGate) continue;
        for (const auto& tr : pipe.tracker().tracks()) {
          if (tr.kind != ObjectKind::kGate) continue;
          rep.log.push_back({w.t, tr.id, m.kind, m.z, tr.x});
          if (i >= 30) {
            raw += (m.position() - w.gate->center).squaredNorm();
            filt += (tr.position() - w.gate->center).squaredNorm();
            ++n;
          }
        }
      }
    }
    const double rr = n ? std::sqrt(raw / n) : 0.0, fr = n ? std::sqrt(filt / n) : 0.0;
    rep.checks.push_back({"tracker on a 0.3 m/s gate: filtered RMSE <= raw RMSE", n > 400 && fr <= rr,
                          printf_str("filtered %.4f m, raw %.4f m", fr, rr)});
  }

  {
    TrackEstimate t;
    t.kind = ObjectKind::kGate;
    t.x = Vec4(0, 0, 1.5, 0);
    t.P = Eigen::Matrix4d::Identity();
    std::normal_distribution<double> n01;
    bool ok = true;
    int i = 0;
    for (; i < 10000 && ok; ++i) {
      if (i % 2 == 0) {
        t = ekf_predict(t, uniform(rng, 0.0, 0.1), cfg.tracker.q);
      } else {
        Eigen::Matrix4d L = Eigen::Matrix4d::Zero();
        for (int r = 0; r < 4; ++r)
          for (int c = 0; c <= r; ++c) L(r, c) = n01(rng) * (r == c ? 1.0 : 0.3);
        const Eigen::Matrix4d R = L * L.transpose() * std::pow(10.0, uniform(rng, -6, 1));
        t = ekf_update(t, t.x + Vec4(n01(rng), n01(rng), n01(rng), n01(rng)), R);
      }
      ok = Eigen::LLT<Eigen::MatrixXd>(t.P).info() == Eigen::Success;
    }
    rep.checks.push_back({"covariance positive definite over 1e4 cycles", ok,
                          printf_str("%.0f cycles, final trace %.4g", static_cast<double>(i), t.P.trace())});
  }
  return rep;
}

inline void write_measurement_log(const std::filesystem::path& path, const std::vector<MeasurementLogRow>& log) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "t,object_id,kind,raw_x,raw_y,raw_z,raw_yaw,filt_x,filt_y,filt_z,filt_yaw\n";
  char buf[320];
  for (const auto& r : log) {
    const bool gate = r.kind == ObjectKind::kGate;
    auto g = [&](const Eigen::VectorXd& v, int i) { return i < v.size() ? v(i) : 0.0; };
    std::snprintf(buf, sizeof buf, "%.4f,%d,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.t, r.track_id,
                  gate ? "gate" : "obstacle", g(r.raw, 0), g(r.raw, 1), g(r.raw, 2), g(r.raw, 3), g(r.filtered, 0),
                  g(r.filtered, 1), g(r.filtered, 2), g(r.filtered, 3));
    f << buf;
  }
}

}  // namespace agile
