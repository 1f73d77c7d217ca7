#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace vio_obs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Cross-product matrix: skew(v) * w == v.cross(w).
Mat3 skew(const Vec3& v);

/// Inverse of skew() for (near) skew-symmetric input.
Vec3 vee(const Mat3& m);

/// Inverse left Jacobian: Log(Exp(d) Exp(phi)) = phi + J_l^-1(phi) d + O(|d|^2).
Mat3 left_jacobian_inverse(const Vec3& phi);

/**
 * Element of SO(3).
 *
 * Stored as a Hamilton unit quaternion (scalar first when constructed from
 * components) together with the equivalent rotation matrix. Every factory and
 * composition renormalizes, so the quaternion stays on the unit sphere over
 * long integrations.
 *
 * The class is frame-agnostic; callers name instances by the frames they map,
 * e.g. `R_IG` maps global-frame vectors into the IMU frame.
 */
class Rotation {
 public:
  Rotation();

  static Rotation identity() { return Rotation(); }
  static Rotation from_quaternion(double w, double x, double y, double z);
  static Rotation from_quaternion(const Eigen::Quaterniond& q);
  /// Projects `m` onto the nearest rotation (SVD) before converting.
  static Rotation from_matrix(const Mat3& m);
  /// Exponential map of a rotation vector (axis * angle, radians).
  static Rotation exp(const Vec3& rotvec);

  const Eigen::Quaterniond& quaternion() const { return q_; }
  const Mat3& matrix() const { return m_; }

  /// Rotation vector with angle in [0, pi].
  Vec3 log() const;
  Rotation inverse() const;

  Rotation operator*(const Rotation& rhs) const;
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

 private:
  explicit Rotation(const Eigen::Quaterniond& q);

  Eigen::Quaterniond q_;
  Mat3 m_;
};

/// Roll/pitch/yaw triple in degrees, intrinsic Z-Y-X: R = Rz(yaw) Ry(pitch) Rx(roll).
struct Rpy {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
};

Rotation rotation_from_rpy(const Rpy& rpy);
Rpy rpy_from_rotation(const Rotation& r);

/// Euler decomposition of R_est * R_true^T.
Rpy rotation_error_rpy(const Rotation& R_est, const Rotation& R_true);

constexpr double kDegToRad = 0.017453292519943295;
constexpr double kRadToDeg = 57.29577951308232;

}  // namespace vio_obs
