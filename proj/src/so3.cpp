#include "vio_obs/so3.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

namespace vio_obs {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3& m) {
  return Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)) * 0.5;
}

Mat3 left_jacobian_inverse(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  // Series of (1 - (theta/2) cot(theta/2)) / theta^2 near zero.
  const double c = theta < 1e-4 ? 1.0 / 12.0 + theta * theta / 720.0
                                : (1.0 - 0.5 * theta / std::tan(0.5 * theta)) / (theta * theta);
  return Mat3::Identity() - 0.5 * K + c * K * K;
}

Rotation::Rotation() : q_(Eigen::Quaterniond::Identity()), m_(Mat3::Identity()) {}

Rotation::Rotation(const Eigen::Quaterniond& q) : q_(q.normalized()) {
  // Canonical sign: non-negative scalar part.
  if (q_.w() < 0.0) q_.coeffs() *= -1.0;
  m_ = q_.toRotationMatrix();
}

Rotation Rotation::from_quaternion(double w, double x, double y, double z) {
  return Rotation(Eigen::Quaterniond(w, x, y, z));
}

Rotation Rotation::from_quaternion(const Eigen::Quaterniond& q) { return Rotation(q); }

Rotation Rotation::from_matrix(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Mat3 r = svd.matrixU() * d * svd.matrixV().transpose();
  return Rotation(Eigen::Quaterniond(r));
}

Rotation Rotation::exp(const Vec3& rotvec) {
  const double angle = rotvec.norm();
  if (angle < 1e-12) {
    // Second-order expansion keeps tiny increments exact to round-off.
    return Rotation(Eigen::Quaterniond(1.0, 0.5 * rotvec.x(), 0.5 * rotvec.y(), 0.5 * rotvec.z()));
  }
  return Rotation(Eigen::Quaterniond(Eigen::AngleAxisd(angle, rotvec / angle)));
}

Vec3 Rotation::log() const {
  const Vec3 v = q_.vec();
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v;
  const double angle = 2.0 * std::atan2(s, q_.w());
  return v * (angle / s);
}

Rotation Rotation::inverse() const { return Rotation(q_.conjugate()); }

Rotation Rotation::operator*(const Rotation& rhs) const { return Rotation(q_ * rhs.q_); }

Rotation rotation_from_rpy(const Rpy& rpy) {
  const Eigen::AngleAxisd rz(rpy.yaw * kDegToRad, Vec3::UnitZ());
  const Eigen::AngleAxisd ry(rpy.pitch * kDegToRad, Vec3::UnitY());
  const Eigen::AngleAxisd rx(rpy.roll * kDegToRad, Vec3::UnitX());
  return Rotation::from_quaternion(Eigen::Quaterniond(rz * ry * rx));
}

Rpy rpy_from_rotation(const Rotation& r) {
  const Mat3& m = r.matrix();
  Rpy out;
  out.pitch = std::asin(std::clamp(-m(2, 0), -1.0, 1.0)) * kRadToDeg;
  out.roll = std::atan2(m(2, 1), m(2, 2)) * kRadToDeg;
  out.yaw = std::atan2(m(1, 0), m(0, 0)) * kRadToDeg;
  return out;
}

Rpy rotation_error_rpy(const Rotation& R_est, const Rotation& R_true) {
  return rpy_from_rotation(R_est * R_true.inverse());
}

}  // namespace vio_obs
