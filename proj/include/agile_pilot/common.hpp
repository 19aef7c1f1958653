#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace agile {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;

inline constexpr double kPi = std::numbers::pi;

/// Raised when a caller breaks an operation's documented precondition
/// (e.g. stepping an episode that already finished).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

inline double clamp_abs(double x, double cap) {
  return x > cap ? cap : (x < -cap ? -cap : x);
}

}  // namespace agile
