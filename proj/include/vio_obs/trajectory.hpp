#pragma once

#include <string>

#include "vio_obs/so3.hpp"

namespace vio_obs {

enum class TrajectoryKind {
  kStraightSinusoid,          // p(t) = origin + A cos(w t) * d_G
  kStraightConstantVelocity,  // p(t) = origin + speed t * d_G
  kGenericExcitation,         // 3-axis translation, 2-axis rotation
};

std::string to_string(TrajectoryKind kind);

/// Ground-truth kinematics at one instant.
struct KinematicSample {
  double t = 0.0;
  Vec3 p = Vec3::Zero();      // IMU position in global frame [m]
  Vec3 v = Vec3::Zero();      // [m/s]
  Vec3 a = Vec3::Zero();      // [m/s^2]
  Rotation R_IG;              // global -> IMU
  Vec3 omega = Vec3::Zero();  // body angular rate, IMU frame [rad/s]
};

struct GenericExcitationParams {
  Vec3 amplitude{1.5, 1.0, 0.6};   // [m]
  Vec3 frequency{0.5, 0.7, 0.9};   // [rad/s]
  double yaw_amplitude = 0.35;     // [rad]
  double yaw_frequency = 0.6;      // [rad/s]
  double pitch_amplitude = 0.25;   // [rad]
  double pitch_frequency = 0.8;    // [rad/s]
};

/**
 * Closed-form 6-DoF trajectory with exact derivatives.
 *
 * Straight-line kinds hold a constant orientation `R_IG0` and translate along
 * `direction` (expressed in the IMU frame), so every displacement is parallel to
 * R_IG0^T * direction.
 */
class Trajectory {
 public:
  Trajectory(TrajectoryKind kind, const Vec3& direction, double amplitude, double angular_rate,
             double duration, const Vec3& origin = Vec3::Zero(),
             const Rotation& R_IG0 = Rotation());

  static Trajectory generic(const GenericExcitationParams& params, double duration);

  TrajectoryKind kind() const { return kind_; }
  const Vec3& direction() const { return direction_; }
  Vec3 global_direction() const { return R_IG0_.matrix().transpose() * direction_; }
  double duration() const { return duration_; }
  bool is_straight_line() const { return kind_ != TrajectoryKind::kGenericExcitation; }
  double amplitude() const { return amplitude_; }
  double angular_rate() const { return angular_rate_; }
  const Vec3& origin() const { return origin_; }
  const Rotation& initial_orientation() const { return R_IG0_; }
  const GenericExcitationParams& generic_params() const { return generic_; }

  /// Throws std::domain_error if t lies outside [0, duration].
  KinematicSample sample(double t) const;
  /// Same as sample() without the range check; used by integrators that may
  /// touch the interval end with round-off.
  KinematicSample evaluate(double t) const;

 private:
  TrajectoryKind kind_;
  Vec3 direction_;
  double amplitude_;     // [m] for sinusoid, [m/s] for constant velocity
  double angular_rate_;  // [rad/s] for sinusoid
  double duration_;
  Vec3 origin_;
  Rotation R_IG0_;
  GenericExcitationParams generic_;
};

/// Trajectory-1: p = [2 cos(pi t / 5), 0, 0], identity orientation.
Trajectory make_trajectory_1(double duration = 60.0);
/// Trajectory-2: p = [0.5 t, 0, 0], identity orientation.
Trajectory make_trajectory_2(double duration = 60.0);
Trajectory make_generic_excitation(double duration = 60.0,
                                   const GenericExcitationParams& params = {});

}  // namespace vio_obs
