#include "vio_obs/trajectory.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vio_obs {

std::string to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::kStraightSinusoid: return "straight-line-sinusoid";
    case TrajectoryKind::kStraightConstantVelocity: return "straight-line-constant-velocity";
    case TrajectoryKind::kGenericExcitation: return "generic-excitation";
  }
  return "unknown";
}

Trajectory::Trajectory(TrajectoryKind kind, const Vec3& direction, double amplitude,
                       double angular_rate, double duration, const Vec3& origin,
                       const Rotation& R_IG0)
    : kind_(kind),
      direction_(direction),
      amplitude_(amplitude),
      angular_rate_(angular_rate),
      duration_(duration),
      origin_(origin),
      R_IG0_(R_IG0) {
  const double n = direction.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("trajectory direction must be non-zero");
  direction_ /= n;
  if (!(duration > 0.0)) throw std::invalid_argument("trajectory duration must be positive");
}

Trajectory Trajectory::generic(const GenericExcitationParams& params, double duration) {
  Trajectory t(TrajectoryKind::kGenericExcitation, Vec3::UnitX(), 0.0, 0.0, duration);
  t.generic_ = params;
  return t;
}

KinematicSample Trajectory::sample(double t) const {
  if (!(t >= 0.0 && t <= duration_)) {
    throw std::domain_error("trajectory sampled outside [0, duration]");
  }
  return evaluate(t);
}

KinematicSample Trajectory::evaluate(double t) const {
  KinematicSample s;
  s.t = t;
  switch (kind_) {
    case TrajectoryKind::kStraightSinusoid: {
      const Vec3 dg = global_direction();
      const double w = angular_rate_;
      s.p = origin_ + amplitude_ * std::cos(w * t) * dg;
      s.v = -amplitude_ * w * std::sin(w * t) * dg;
      s.a = -amplitude_ * w * w * std::cos(w * t) * dg;
      s.R_IG = R_IG0_;
      return s;
    }
    case TrajectoryKind::kStraightConstantVelocity: {
      const Vec3 dg = global_direction();
      s.p = origin_ + amplitude_ * t * dg;
      s.v = amplitude_ * dg;
      s.R_IG = R_IG0_;
      return s;
    }
    case TrajectoryKind::kGenericExcitation: {
      const auto& g = generic_;
      for (int i = 0; i < 3; ++i) {
        const double w = g.frequency[i];
        s.p[i] = g.amplitude[i] * std::sin(w * t);
        s.v[i] = g.amplitude[i] * w * std::cos(w * t);
        s.a[i] = -g.amplitude[i] * w * w * std::sin(w * t);
      }
      // R_GI = Rz(yaw) Ry(pitch); body rate = Ry^T e_z yaw' + e_y pitch'.
      const double yaw = g.yaw_amplitude * std::sin(g.yaw_frequency * t);
      const double yaw_rate = g.yaw_amplitude * g.yaw_frequency * std::cos(g.yaw_frequency * t);
      const double pitch = g.pitch_amplitude * std::sin(g.pitch_frequency * t);
      const double pitch_rate =
          g.pitch_amplitude * g.pitch_frequency * std::cos(g.pitch_frequency * t);
      const Rotation Rz = Rotation::exp(Vec3(0.0, 0.0, yaw));
      const Rotation Ry = Rotation::exp(Vec3(0.0, pitch, 0.0));
      s.R_IG = (Rz * Ry).inverse();
      s.omega = Ry.matrix().transpose() * Vec3(0.0, 0.0, yaw_rate) + Vec3(0.0, pitch_rate, 0.0);
      return s;
    }
  }
  return s;
}

Trajectory make_trajectory_1(double duration) {
  return Trajectory(TrajectoryKind::kStraightSinusoid, Vec3::UnitX(), 2.0,
                    std::numbers::pi / 5.0, duration);
}

Trajectory make_trajectory_2(double duration) {
  return Trajectory(TrajectoryKind::kStraightConstantVelocity, Vec3::UnitX(), 0.5, 0.0,
                    duration);
}

Trajectory make_generic_excitation(double duration, const GenericExcitationParams& params) {
  return Trajectory::generic(params, duration);
}

}  // namespace vio_obs
