#pragma once

// Synthetic perception front end: pinhole projection of object keypoints,
// planar pose recovery for gates, ray triangulation for obstacles, and
// per-object Kalman tracks with proximity association.

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "agile_pilot/world.hpp"

namespace agile {

using Mat3 = Eigen::Matrix3d;

struct CameraIntrinsics {
  double fx = 290.0;
  double fy = 290.0;
  double cx = 212.0;
  double cy = 200.0;
  int width = 424;
  int height = 400;

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0)) throw std::invalid_argument("CameraIntrinsics: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw std::invalid_argument("CameraIntrinsics: image size must be positive");
    if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
      throw std::invalid_argument("CameraIntrinsics: principal point outside the image");
    }
  }

  Vec2 to_normalized(const Vec2& px) const { return {(px.x() - cx) / fx, (px.y() - cy) / fy}; }
  Vec2 to_pixels(const Vec2& n) const { return {fx * n.x() + cx, fy * n.y() + cy}; }
};

/// Camera pose in the world: x_world = R_wc * x_cam + position. The camera
/// frame has x right, y down, z along the optical axis.
struct CameraPose {
  Mat3 R_wc = Mat3::Identity();
  Vec3 position = Vec3::Zero();

  Vec3 to_camera(const Vec3& pw) const { return R_wc.transpose() * (pw - position); }
  Vec3 to_world(const Vec3& pc) const { return R_wc * pc + position; }
};

/// Forward-looking camera on a level drone with the given heading.
inline CameraPose camera_on_drone(const Vec3& position, double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  CameraPose cam;
  cam.R_wc.col(0) = Vec3(s, -c, 0.0);
  cam.R_wc.col(1) = Vec3(0.0, 0.0, -1.0);
  cam.R_wc.col(2) = Vec3(c, s, 0.0);
  cam.position = position;
  return cam;
}

/// Gate body frame: columns are the lateral, up and normal axes.
inline Mat3 gate_rotation(double yaw) {
  Mat3 R;
  R.col(0) = Vec3(-std::sin(yaw), std::cos(yaw), 0.0);
  R.col(1) = Vec3::UnitZ();
  R.col(2) = Vec3(std::cos(yaw), std::sin(yaw), 0.0);
  return R;
}

enum class ObjectKind { kGate, kObstacle };

struct KeypointSet {
  int object_id = 0;
  ObjectKind kind = ObjectKind::kGate;
  std::vector<Vec2> pixels;
  double stamp = 0.0;
  bool visible = false;
};

/// Gate corners in the gate frame (lateral, up, 0).
inline std::vector<Vec3> gate_model(double half_width = 0.75, double half_height = 0.75) {
  return {{-half_width, half_height, 0.0},
          {half_width, half_height, 0.0},
          {half_width, -half_height, 0.0},
          {-half_width, -half_height, 0.0}};
}

/// Heights of the obstacle keypoints along its axis, above its base.
inline const std::vector<double>& obstacle_keypoint_heights() {
  static const std::vector<double> h{0.0, 0.5, 1.0};
  return h;
}

/// Projects object points (in the object frame R_wo, p_wo) into the camera.
/// The set is invisible, with no pixels, when any point is behind the camera
/// or, if require_in_image, outside the image.
inline KeypointSet project_points(const std::vector<Vec3>& model, const Mat3& R_wo, const Vec3& p_wo,
                                  const CameraPose& cam, const CameraIntrinsics& intr, double noise_std,
                                  Rng* rng, bool require_in_image = true) {
  KeypointSet k;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Vec2> px;
  for (const auto& m : model) {
    const Vec3 pc = cam.to_camera(R_wo * m + p_wo);
    if (!(pc.z() > 1e-9)) return k;
    Vec2 uv(intr.fx * pc.x() / pc.z() + intr.cx, intr.fy * pc.y() / pc.z() + intr.cy);
    if (require_in_image && (uv.x() < 0.0 || uv.x() > intr.width || uv.y() < 0.0 || uv.y() > intr.height)) {
      return k;
    }
    px.push_back(uv);
  }
  if (noise_std > 0.0) {
    if (!rng) throw std::invalid_argument("project_points: noise requested without a random stream");
    for (auto& p : px) p += noise_std * Vec2(noise(*rng), noise(*rng));
  }
  k.pixels = std::move(px);
  k.visible = true;
  return k;
}

struct PlanarPose {
  Mat3 R = Mat3::Identity();  // object -> camera
  Vec3 t = Vec3::Zero();      // object origin in the camera frame
  double reprojection_error = 0.0;  // px, RMS over the points
};

struct PnpResult {
  bool ok = false;
  std::string reason;
  PlanarPose best;
  PlanarPose second;
};

namespace detail {

// Similarity transform that moves the centroid to the origin and sets the
// mean distance to sqrt(2).
inline Eigen::Matrix3d hartley(const std::vector<Vec2>& p) {
  Vec2 c = Vec2::Zero();
  for (const auto& x : p) c += x;
  c /= static_cast<double>(p.size());
  double d = 0.0;
  for (const auto& x : p) d += (x - c).norm();
  d /= static_cast<double>(p.size());
  const double s = d > 0.0 ? std::sqrt(2.0) / d : 1.0;
  Eigen::Matrix3d T;
  T << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return T;
}

inline double min_triangle_area(const std::vector<Vec2>& p) {
  double m = std::numeric_limits<double>::infinity();
  const std::size_t n = p.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t k = j + 1; k < n; ++k) {
        const Vec2 a = p[j] - p[i], b = p[k] - p[i];
        m = std::min(m, 0.5 * std::abs(a.x() * b.y() - a.y() * b.x()));
      }
  return m;
}

// Rotation taking the unit z axis onto the unit vector u.
inline Mat3 rotation_z_to(const Vec3& u) {
  return Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), u).toRotationMatrix();
}

inline Vec3 translation_for(const Mat3& R, const std::vector<Vec3>& model, const std::vector<Vec2>& xn) {
  const int n = static_cast<int>(model.size());
  Eigen::MatrixXd A(2 * n, 3);
  Eigen::VectorXd b(2 * n);
  for (int i = 0; i < n; ++i) {
    const Vec3 rp = R * model[i];
    A.row(2 * i) << 1.0, 0.0, -xn[i].x();
    A.row(2 * i + 1) << 0.0, 1.0, -xn[i].y();
    b(2 * i) = xn[i].x() * rp.z() - rp.x();
    b(2 * i + 1) = xn[i].y() * rp.z() - rp.y();
  }
  return A.colPivHouseholderQr().solve(b);
}

inline double reprojection_rms(const Mat3& R, const Vec3& t, const std::vector<Vec3>& model,
                               const std::vector<Vec2>& px, const CameraIntrinsics& intr) {
  double s = 0.0;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const Vec3 pc = R * model[i] + t;
    if (!(pc.z() > 0.0)) return std::numeric_limits<double>::infinity();
    const Vec2 uv = intr.to_pixels(Vec2(pc.x() / pc.z(), pc.y() / pc.z()));
    s += (uv - px[i]).squaredNorm();
  }
  return std::sqrt(s / static_cast<double>(model.size()));
}

}  // namespace detail

inline constexpr double kPnpRejectPx = 5.0;

/// Planar pose from >= 4 correspondences with model points on z = 0 centred
/// at the origin. Homography by normalized DLT, then the two-fold planar pose
/// ambiguity is resolved from the homography Jacobian at the model origin;
/// the candidate with the smaller reprojection error wins.
inline PnpResult solve_planar_pnp(const std::vector<Vec2>& pixels, const std::vector<Vec3>& model,
                                  const CameraIntrinsics& intr, double reject_px = kPnpRejectPx) {
  PnpResult res;
  const std::size_t n = model.size();
  if (n < 4 || pixels.size() != n) {
    res.reason = "need at least 4 matching correspondences";
    return res;
  }
  std::vector<Vec2> xn(n), m2(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(model[i].z()) > 1e-12) throw std::invalid_argument("solve_planar_pnp: model must lie on z = 0");
    xn[i] = intr.to_normalized(pixels[i]);
    m2[i] = model[i].head<2>();
  }
  // Collinear configurations admit no unique homography.
  const double scale_img = (pixels[0] - pixels[2]).squaredNorm() + 1e-300;
  if (detail::min_triangle_area(pixels) < 1e-6 * scale_img || detail::min_triangle_area(m2) < 1e-12) {
    res.reason = "degenerate (collinear) points";
    return res;
  }

  const Eigen::Matrix3d Tm = detail::hartley(m2), Ti = detail::hartley(xn);
  Eigen::MatrixXd A(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 p = Tm * Vec3(m2[i].x(), m2[i].y(), 1.0);
    const Vec3 q = Ti * Vec3(xn[i].x(), xn[i].y(), 1.0);
    const double u = q.x() / q.z(), v = q.y() / q.z();
    A.row(2 * i) << -p.x(), -p.y(), -p.z(), 0, 0, 0, u * p.x(), u * p.y(), u * p.z();
    A.row(2 * i + 1) << 0, 0, 0, -p.x(), -p.y(), -p.z(), v * p.x(), v * p.y(), v * p.z();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d Hn;
  Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  Eigen::Matrix3d H = Ti.inverse() * Hn * Tm;
  if (!H.allFinite() || std::abs(H(2, 2)) < 1e-12) {
    res.reason = "homography estimation failed";
    return res;
  }
  H /= H(2, 2);

  // Image of the model origin and the homography Jacobian there.
  const Vec2 v(H(0, 2), H(1, 2));
  Eigen::Matrix2d J;
  J << H(0, 0) - H(2, 0) * v.x(), H(0, 1) - H(2, 1) * v.x(),
       H(1, 0) - H(2, 0) * v.y(), H(1, 1) - H(2, 1) * v.y();

  const Mat3 Rv = detail::rotation_z_to(Vec3(v.x(), v.y(), 1.0).normalized());
  Eigen::Matrix2d B = Rv.topLeftCorner<2, 2>() - v * Rv.block<1, 2>(2, 0);
  if (std::abs(B.determinant()) < 1e-12) {
    res.reason = "degenerate viewing geometry";
    return res;
  }
  const Eigen::Matrix2d Am = B.inverse() * J;
  const double gamma = Eigen::JacobiSVD<Eigen::Matrix2d>(Am).singularValues()(0);
  if (!(gamma > 1e-12)) {
    res.reason = "degenerate viewing geometry";
    return res;
  }
  const Eigen::Matrix2d R22 = Am / gamma;
  double b0 = std::sqrt(std::max(0.0, 1.0 - R22.col(0).squaredNorm()));
  double b1 = std::sqrt(std::max(0.0, 1.0 - R22.col(1).squaredNorm()));
  if (-R22.col(0).dot(R22.col(1)) < 0.0) b1 = -b1;

  auto candidate = [&](double sgn) {
    const Vec3 c0(R22(0, 0), R22(1, 0), sgn * b0);
    const Vec3 c1(R22(0, 1), R22(1, 1), sgn * b1);
    Mat3 Rl;
    Rl << c0, c1, c0.cross(c1);
    PlanarPose p;
    p.R = Rv * Rl;
    p.t = detail::translation_for(p.R, model, xn);
    p.reprojection_error = detail::reprojection_rms(p.R, p.t, model, pixels, intr);
    return p;
  };
  PlanarPose p1 = candidate(1.0), p2 = candidate(-1.0);
  if (p2.reprojection_error < p1.reprojection_error) std::swap(p1, p2);
  res.best = p1;
  res.second = p2;
  if (!(p1.reprojection_error <= reject_px)) {
    res.reason = "reprojection error above threshold";
    return res;
  }
  res.ok = true;
  return res;
}

/// Gate measurement in the world: [x, y, z, yaw].
inline Vec4 gate_pose_in_world(const PlanarPose& p, const CameraPose& cam) {
  const Vec3 c = cam.to_world(p.t);
  const Vec3 n = cam.R_wc * p.R.col(2);
  return {c.x(), c.y(), c.z(), std::atan2(n.y(), n.x())};
}

/// Horizontal axis position of a vertical cylinder whose axis points at the
/// given world heights project to `pixels`. Solves for (X, Y) and the three
/// ray depths so that each ray point lands on the axis at its height, in the
/// least-squares sense.
inline std::optional<Vec2> estimate_obstacle(const std::vector<Vec2>& pixels, const std::vector<double>& heights,
                                             const CameraPose& cam, const CameraIntrinsics& intr) {
  const int n = static_cast<int>(pixels.size());
  if (n < 2 || static_cast<int>(heights.size()) != n) return std::nullopt;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(3 * n, 2 + n);
  Eigen::VectorXd b(3 * n);
  const Vec3& c = cam.position;
  for (int i = 0; i < n; ++i) {
    const Vec2 xn = intr.to_normalized(pixels[i]);
    const Vec3 d = cam.R_wc * Vec3(xn.x(), xn.y(), 1.0).normalized();
    // c + s_i d = (X, Y, h_i)
    A(3 * i, 0) = 1.0;
    A(3 * i, 2 + i) = -d.x();
    b(3 * i) = c.x();
    A(3 * i + 1, 1) = 1.0;
    A(3 * i + 1, 2 + i) = -d.y();
    b(3 * i + 1) = c.y();
    A(3 * i + 2, 2 + i) = d.z();
    b(3 * i + 2) = heights[i] - c.z();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (!(sv(sv.size() - 1) > 1e-9 * sv(0))) return std::nullopt;
  const Eigen::VectorXd x = svd.solve(b);
  for (int i = 0; i < n; ++i) {
    if (!(x(2 + i) > 0.0)) return std::nullopt;
  }
  return Vec2(x(0), x(1));
}

// ---------------------------------------------------------------------------
// Tracking

struct TrackEstimate {
  int id = 0;
  ObjectKind kind = ObjectKind::kGate;
  Eigen::VectorXd x;  // gate [x y z yaw], obstacle [x y]
  Eigen::MatrixXd P;
  double last_update = 0.0;
  double stamp = 0.0;  // time the estimate refers to

  Vec3 position() const {
    return kind == ObjectKind::kGate ? Vec3(x(0), x(1), x(2)) : Vec3(x(0), x(1), 0.0);
  }
};

inline int state_dim(ObjectKind k) { return k == ObjectKind::kGate ? 4 : 2; }

struct ProcessNoise {
  double gate_position = 0.5;  // m^2/s
  double gate_yaw = 0.2;       // rad^2/s
  double obstacle = 0.5;       // m^2/s

  Eigen::VectorXd diagonal(ObjectKind k) const {
    Eigen::VectorXd q(state_dim(k));
    if (k == ObjectKind::kGate) {
      q << gate_position, gate_position, gate_position, gate_yaw;
    } else {
      q << obstacle, obstacle;
    }
    return q;
  }
};

inline TrackEstimate ekf_predict(TrackEstimate t, double dt, const ProcessNoise& q = {}) {
  if (dt < 0.0) throw std::invalid_argument("ekf_predict: dt must be >= 0");
  t.P.diagonal() += q.diagonal(t.kind) * dt;
  t.stamp += dt;
  return t;
}

inline bool is_psd(const Eigen::MatrixXd& M, double tol = 1e-12) {
  if (M.rows() != M.cols() || !M.allFinite()) return false;
  if (!M.isApprox(M.transpose(), 1e-9) && (M - M.transpose()).norm() > tol) return false;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()));
  return es.eigenvalues().minCoeff() >= -tol * std::max(1.0, M.norm());
}

/// Kalman update with a direct full-state measurement (H = I).
inline TrackEstimate ekf_update(TrackEstimate t, const Eigen::VectorXd& z, const Eigen::MatrixXd& R) {
  const int n = static_cast<int>(t.x.size());
  if (z.size() != n || R.rows() != n || R.cols() != n) {
    throw std::invalid_argument("ekf_update: measurement dimension does not match the state");
  }
  if (!is_psd(R)) throw std::invalid_argument("ekf_update: measurement covariance is not positive semidefinite");
  Eigen::VectorXd y = z - t.x;
  if (t.kind == ObjectKind::kGate) y(3) = wrap_angle(y(3));
  const Eigen::MatrixXd S = t.P + R;
  const Eigen::MatrixXd K = S.ldlt().solve(t.P).transpose();  // P S^-1, S and P symmetric
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  t.x += K * y;
  if (t.kind == ObjectKind::kGate) t.x(3) = wrap_angle(t.x(3));
  const Eigen::MatrixXd IK = I - K;
  t.P = IK * t.P * IK.transpose() + K * R * K.transpose();
  t.P = 0.5 * (t.P + t.P.transpose());
  return t;
}

struct Measurement {
  ObjectKind kind = ObjectKind::kGate;
  Eigen::VectorXd z;
  Eigen::MatrixXd R;
  double capture_time = 0.0;

  Vec3 position() const { return kind == ObjectKind::kGate ? Vec3(z(0), z(1), z(2)) : Vec3(z(0), z(1), 0.0); }
};

/// Greedy nearest-neighbour association: repeatedly pairs the closest
/// remaining (track, measurement) of the same kind within `gate_distance`.
/// Returns, per measurement, the index of its track or -1.
inline std::vector<int> associate(const std::vector<TrackEstimate>& tracks, const std::vector<Measurement>& meas,
                                  double gate_distance) {
  struct Pair {
    double d;
    int t, m;
  };
  std::vector<Pair> pairs;
  for (int i = 0; i < static_cast<int>(tracks.size()); ++i) {
    for (int j = 0; j < static_cast<int>(meas.size()); ++j) {
      if (tracks[i].kind != meas[j].kind) continue;
      const double d = (tracks[i].position() - meas[j].position()).norm();
      if (d < gate_distance) pairs.push_back({d, i, j});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.d < b.d; });
  std::vector<int> out(meas.size(), -1);
  std::vector<bool> used(tracks.size(), false);
  for (const auto& p : pairs) {
    if (used[p.t] || out[p.m] >= 0) continue;
    used[p.t] = true;
    out[p.m] = p.t;
  }
  return out;
}

struct TrackerConfig {
  ProcessNoise q;
  double gate_distance = 0.8;  // m
  double drop_after = 1.0;     // s without an update
  double init_variance_scale = 1.0;  // new tracks start at P = scale * R
};

class Tracker {
 public:
  explicit Tracker(TrackerConfig cfg = {}) : cfg_(cfg) {}

  /// Predicts all tracks to time t, folds in the measurements (captured at or
  /// before t, processed in capture order), spawns tracks for unmatched ones
  /// and drops stale tracks.
  void process(double t, std::vector<Measurement> meas) {
    std::stable_sort(meas.begin(), meas.end(),
                     [](const Measurement& a, const Measurement& b) { return a.capture_time < b.capture_time; });
    std::size_t i = 0;
    while (i < meas.size()) {
      std::size_t j = i;
      const double tc = meas[i].capture_time;
      while (j < meas.size() && meas[j].capture_time == tc) ++j;
      advance_to(tc);
      std::vector<Measurement> batch(meas.begin() + static_cast<long>(i), meas.begin() + static_cast<long>(j));
      const auto a = associate(tracks_, batch, cfg_.gate_distance);
      for (std::size_t k = 0; k < batch.size(); ++k) {
        if (a[k] >= 0) {
          TrackEstimate& tr = tracks_[a[k]];
          tr = ekf_update(tr, batch[k].z, batch[k].R);
          tr.last_update = tc;
        } else {
          add_track(batch[k]);
        }
      }
      i = j;
    }
    advance_to(t);
    std::erase_if(tracks_, [&](const TrackEstimate& tr) { return t - tr.last_update > cfg_.drop_after; });
  }

  /// Starts a track from a measurement-like prior.
  int add_track(const Measurement& m) {
    TrackEstimate tr;
    tr.id = next_id_++;
    tr.kind = m.kind;
    tr.x = m.z;
    tr.P = cfg_.init_variance_scale * m.R;
    tr.P.diagonal().array() += 1e-9;
    tr.last_update = m.capture_time;
    tr.stamp = m.capture_time;
    tracks_.push_back(tr);
    return tr.id;
  }

  const std::vector<TrackEstimate>& tracks() const { return tracks_; }
  const TrackerConfig& config() const { return cfg_; }

 private:
  void advance_to(double t) {
    for (auto& tr : tracks_) {
      if (t > tr.stamp) tr = ekf_predict(tr, t - tr.stamp, cfg_.q);
    }
  }

  TrackerConfig cfg_;
  std::vector<TrackEstimate> tracks_;
  int next_id_ = 0;
};

// ---------------------------------------------------------------------------
// Measurement noise calibration

struct GateNoiseModel {
  Eigen::Matrix4d R_ref = Eigen::Matrix4d::Identity();  // camera-aligned axes, at ref_range
  double ref_range = 3.0;
  int rejected = 0;

  /// World-frame covariance for a gate seen at `range` by a camera with heading yaw.
  Eigen::Matrix4d at(double range, double camera_yaw) const {
    Eigen::Matrix4d G = Eigen::Matrix4d::Identity();
    G.topLeftCorner<2, 2>() = Eigen::Rotation2Dd(camera_yaw).toRotationMatrix();
    const double s = (range / ref_range) * (range / ref_range);
    return s * G * R_ref * G.transpose();
  }
};

struct ObstacleNoiseModel {
  Eigen::Matrix2d R_ref = Eigen::Matrix2d::Identity();
  double ref_range = 3.0;

  Eigen::Matrix2d at(double range, double camera_yaw) const {
    const Eigen::Matrix2d G = Eigen::Rotation2Dd(camera_yaw).toRotationMatrix();
    const double s = (range / ref_range) * (range / ref_range);
    return s * G * R_ref * G.transpose();
  }
};

/// Monte-Carlo covariance of the gate pose error at ref_range straight ahead
/// of a camera with heading 0, gate yaw jittered within +-0.5 rad.
inline GateNoiseModel calibrate_gate_noise(const CameraIntrinsics& intr, double pixel_noise, int samples, Rng& rng,
                                           double ref_range = 3.0) {
  GateNoiseModel m;
  m.ref_range = ref_range;
  const CameraPose cam = camera_on_drone(Vec3(0, 0, 1.5), 0.0);
  const auto model = gate_model();
  std::vector<Vec4> err;
  for (int i = 0; i < samples; ++i) {
    const double yaw = uniform(rng, -0.5, 0.5);
    const Vec3 p(ref_range, uniform(rng, -0.3, 0.3), 1.5 + uniform(rng, -0.3, 0.3));
    const auto k = project_points(model, gate_rotation(yaw), p, cam, intr, pixel_noise, &rng);
    if (!k.visible) continue;
    const auto r = solve_planar_pnp(k.pixels, model, intr);
    if (!r.ok) {
      ++m.rejected;
      continue;
    }
    Vec4 e = gate_pose_in_world(r.best, cam) - Vec4(p.x(), p.y(), p.z(), yaw);
    e(3) = wrap_angle(e(3));
    err.push_back(e);
  }
  if (err.size() < 2) throw std::runtime_error("calibrate_gate_noise: too few valid samples");
  Eigen::Matrix4d C = Eigen::Matrix4d::Zero();
  for (const auto& e : err) C += e * e.transpose();
  m.R_ref = C / static_cast<double>(err.size());
  return m;
}

inline ObstacleNoiseModel calibrate_obstacle_noise(const CameraIntrinsics& intr, double pixel_noise, int samples,
                                                   Rng& rng, double ref_range = 3.0) {
  ObstacleNoiseModel m;
  m.ref_range = ref_range;
  const CameraPose cam = camera_on_drone(Vec3(0, 0, 1.5), 0.0);
  std::vector<Vec3> model;
  for (double h : obstacle_keypoint_heights()) model.emplace_back(0.0, 0.0, h);
  std::vector<Vec2> err;
  for (int i = 0; i < samples; ++i) {
    const Vec3 p(ref_range, uniform(rng, -0.5, 0.5), 0.0);
    const auto k = project_points(model, Mat3::Identity(), p, cam, intr, pixel_noise, &rng);
    if (!k.visible) continue;
    const auto est = estimate_obstacle(k.pixels, obstacle_keypoint_heights(), cam, intr);
    if (!est) continue;
    err.push_back(*est - p.head<2>());
  }
  if (err.size() < 2) throw std::runtime_error("calibrate_obstacle_noise: too few valid samples");
  Eigen::Matrix2d C = Eigen::Matrix2d::Zero();
  for (const auto& e : err) C += e * e.transpose();
  m.R_ref = C / static_cast<double>(err.size());
  return m;
}

// ---------------------------------------------------------------------------
// Pipeline: camera -> detector stand-in -> pose solvers -> delayed tracker

struct PerceptionConfig {
  CameraIntrinsics intrinsics;
  double pixel_noise = 1.0;  // px
  double rate = 30.0;        // Hz
  double latency = 0.0;      // s from capture to tracker input
  int calibration_samples = 500;
  TrackerConfig tracker;

  void validate() const {
    intrinsics.validate();
    if (pixel_noise < 0 || !(rate > 0) || latency < 0 || calibration_samples < 2) {
      throw std::invalid_argument("PerceptionConfig: invalid noise, rate, latency or calibration size");
    }
  }
};

struct LatencyStats {
  long measurements = 0;
  double total = 0.0;
  double max = 0.0;
  double mean() const { return measurements ? total / static_cast<double>(measurements) : 0.0; }
};

/// Raw and filtered pose of one object at one processing instant.
struct MeasurementLogRow {
  double t;
  int track_id;
  ObjectKind kind;
  Eigen::VectorXd raw;
  Eigen::VectorXd filtered;
};

class PerceptionPipeline {
 public:
  PerceptionPipeline(PerceptionConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), rng_(seed), tracker_(cfg_.tracker) {
    cfg_.validate();
    Rng cal(seed ^ 0x9e3779b97f4a7c15ULL);
    gate_noise_ = calibrate_gate_noise(cfg_.intrinsics, std::max(cfg_.pixel_noise, 1e-3), cfg_.calibration_samples, cal);
    obstacle_noise_ =
        calibrate_obstacle_noise(cfg_.intrinsics, std::max(cfg_.pixel_noise, 1e-3), cfg_.calibration_samples, cal);
  }

  /// Advances to world time w.t: captures frames due since the last call and
  /// hands measurements whose latency has elapsed to the tracker.
  void observe(const WorldState& w) {
    const double period = 1.0 / cfg_.rate;
    while (next_capture_ <= w.t + 1e-12) {
      capture(w, next_capture_);
      next_capture_ += period;
    }
    std::vector<Measurement> ready;
    while (!pending_.empty() && pending_.front().capture_time + cfg_.latency <= w.t + 1e-12) {
      ready.push_back(pending_.front());
      const double lag = w.t - pending_.front().capture_time;
      ++latency_.measurements;
      latency_.total += lag;
      latency_.max = std::max(latency_.max, lag);
      pending_.pop_front();
    }
    tracker_.process(w.t, ready);
    if (log_enabled_) {
      for (const auto& m : ready) {
        const TrackEstimate* best = nullptr;
        double bd = std::numeric_limits<double>::infinity();
        for (const auto& tr : tracker_.tracks()) {
          if (tr.kind != m.kind) continue;
          const double d = (tr.position() - m.position()).norm();
          if (d < bd) bd = d, best = &tr;
        }
        if (best) log_.push_back({w.t, best->id, m.kind, m.z, best->x});
      }
    }
  }

  Tracker& tracker() { return tracker_; }
  const Tracker& tracker() const { return tracker_; }
  const GateNoiseModel& gate_noise() const { return gate_noise_; }
  const ObstacleNoiseModel& obstacle_noise() const { return obstacle_noise_; }
  const LatencyStats& latency() const { return latency_; }
  const PerceptionConfig& config() const { return cfg_; }
  void enable_log(bool on) { log_enabled_ = on; }
  const std::vector<MeasurementLogRow>& log() const { return log_; }

  /// Pose measurements of every visible object from a camera on the drone.
  std::vector<Measurement> measure(const WorldState& w, double stamp) {
    std::vector<Measurement> out;
    const CameraPose cam = camera_on_drone(w.drone.position, w.drone.yaw);
    const auto& intr = cfg_.intrinsics;
    if (w.gate) {
      const auto model = gate_model(w.gate->half_width, w.gate->half_height);
      const auto k = project_points(model, gate_rotation(w.gate->yaw), w.gate->center, cam, intr, cfg_.pixel_noise,
                                    &rng_);
      if (k.visible) {
        const auto r = solve_planar_pnp(k.pixels, model, intr);
        if (r.ok) {
          Measurement m;
          m.kind = ObjectKind::kGate;
          m.z = gate_pose_in_world(r.best, cam);
          m.R = gate_noise_.at(std::max(r.best.t.norm(), 0.5), w.drone.yaw);
          m.capture_time = stamp;
          out.push_back(m);
        }
      }
    }
    for (const auto& o : w.obstacles) {
      std::vector<Vec3> model;
      for (double h : obstacle_keypoint_heights()) model.emplace_back(0.0, 0.0, h);
      const Vec3 base(o.center_xy.x(), o.center_xy.y(), o.z);
      const auto k = project_points(model, Mat3::Identity(), base, cam, intr, cfg_.pixel_noise, &rng_);
      if (!k.visible) continue;
      std::vector<double> hs;
      for (double h : obstacle_keypoint_heights()) hs.push_back(o.z + h);
      const auto est = estimate_obstacle(k.pixels, hs, cam, intr);
      if (!est) continue;
      Measurement m;
      m.kind = ObjectKind::kObstacle;
      m.z = *est;
      const double range = std::max((*est - w.drone.position.head<2>()).norm(), 0.5);
      m.R = obstacle_noise_.at(range, w.drone.yaw);
      m.capture_time = stamp;
      out.push_back(m);
    }
    return out;
  }

 private:
  void capture(const WorldState& w, double stamp) {
    for (auto& m : measure(w, stamp)) pending_.push_back(std::move(m));
  }

  PerceptionConfig cfg_;
  Rng rng_;
  Tracker tracker_;
  GateNoiseModel gate_noise_;
  ObstacleNoiseModel obstacle_noise_;
  std::deque<Measurement> pending_;
  double next_capture_ = 0.0;
  LatencyStats latency_;
  bool log_enabled_ = false;
  std::vector<MeasurementLogRow> log_;
};

/// Wraps a ground-truth controller so that it sees the gate and obstacles as
/// estimated by the pipeline. Objects no longer tracked keep their last
/// estimate; before the first estimate the prior layout is used.
class PerceivedController {
 public:
  PerceivedController(Controller inner, PerceptionConfig cfg, const WorldState& prior, std::uint64_t seed)
      : inner_(std::move(inner)), pipeline_(std::move(cfg), seed) {
    if (prior.gate) gate_ = Vec4(prior.gate->center.x(), prior.gate->center.y(), prior.gate->center.z(), prior.gate->yaw);
    for (const auto& o : prior.obstacles) obstacles_.push_back(o.center_xy);
  }

  VelocityCommand operator()(const WorldState& truth) {
    pipeline_.observe(truth);
    WorldState est = truth;
    const TrackEstimate* g = nullptr;
    for (const auto& tr : pipeline_.tracker().tracks()) {
      if (tr.kind == ObjectKind::kGate && (!g || tr.last_update > g->last_update)) g = &tr;
    }
    if (g) gate_ = g->x.head<4>();
    if (est.gate && gate_) {
      est.gate->center = gate_->head<3>();
      est.gate->yaw = (*gate_)(3);
    }
    // Refresh held obstacle estimates with the closest live track.
    for (auto& held : obstacles_) {
      double bd = pipeline_.tracker().config().gate_distance;
      for (const auto& tr : pipeline_.tracker().tracks()) {
        if (tr.kind != ObjectKind::kObstacle) continue;
        const double d = (tr.x.head<2>() - held).norm();
        if (d < bd) bd = d, held = tr.x.head<2>();
      }
    }
    for (std::size_t i = 0; i < est.obstacles.size() && i < obstacles_.size(); ++i) {
      est.obstacles[i].center_xy = obstacles_[i];
    }
    return inner_(est);
  }

  const PerceptionPipeline& pipeline() const { return pipeline_; }

 private:
  Controller inner_;
  PerceptionPipeline pipeline_;
  std::optional<Vec4> gate_;
  std::vector<Vec2> obstacles_;
};

}  // namespace agile
