#pragma once

#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "vio_obs/sensors.hpp"
#include "vio_obs/so3.hpp"
#include "vio_obs/trajectory.hpp"

namespace vio_obs {

/// Error-state blocks, in state order.
enum class StateBlock {
  kOrientation = 0,  // d_theta of R_IG (left, IMU-frame error: R = (I - [d_theta]x) R_hat)
  kGyroBias,
  kVelocity,
  kAccelBias,
  kPosition,
  kExtrinsicRotation,  // d_theta of R_CI, same left convention
  kFeatures,
};

class ErrorStateLayout {
 public:
  static constexpr int kImuDim = 15;
  static constexpr int kCoreDim = 18;

  explicit ErrorStateLayout(int num_features = 0);

  int num_features() const { return num_features_; }
  int dim() const { return kCoreDim + 3 * num_features_; }
  static constexpr int offset(StateBlock b) { return 3 * static_cast<int>(b); }
  int feature_offset(int i) const { return kCoreDim + 3 * i; }
  /// (first column, width) of a block; the feature block spans all features.
  std::pair<int, int> range(StateBlock b) const;

  bool operator==(const ErrorStateLayout&) const = default;

 private:
  int num_features_;
};

using ImuMatrix = Eigen::Matrix<double, 15, 15>;

/// Inputs of the continuous error-state Jacobian at one instant.
struct InertialSignal {
  Rotation R_IG;
  Vec3 omega = Vec3::Zero();           // bias-free body rate
  Vec3 specific_force = Vec3::Zero();  // bias-free R_IG (a - g)
};

/// Continuous-time error-state Jacobian F restricted to the inertial blocks.
ImuMatrix error_state_jacobian(const InertialSignal& s);

/**
 * Phi(t_end, t_begin) of the error state.
 *
 * Only the inertial 15x15 block is stored; extrinsic and feature blocks are
 * identity. Block accessors use 1-based block indices matching the state order
 * (1 = orientation, 2 = gyro bias, 3 = velocity, 4 = accel bias, 5 = position).
 */
class TransitionMatrix {
 public:
  TransitionMatrix(ErrorStateLayout layout, double t_begin, double t_end, const ImuMatrix& imu);
  static TransitionMatrix identity(ErrorStateLayout layout, double t);

  const ErrorStateLayout& layout() const { return layout_; }
  double t_begin() const { return t_begin_; }
  double t_end() const { return t_end_; }
  const ImuMatrix& imu_block() const { return imu_; }

  Mat3 block(int row, int col) const { return imu_.block<3, 3>(3 * (row - 1), 3 * (col - 1)); }
  Mat3 phi11() const { return block(1, 1); }
  Mat3 phi12() const { return block(1, 2); }
  Mat3 phi31() const { return block(3, 1); }
  Mat3 phi32() const { return block(3, 2); }
  Mat3 phi34() const { return block(3, 4); }
  Mat3 phi51() const { return block(5, 1); }
  Mat3 phi52() const { return block(5, 2); }
  Mat3 phi53() const { return block(5, 3); }
  Mat3 phi54() const { return block(5, 4); }

  Eigen::MatrixXd dense() const;

  /// (*this) * earlier == Phi(t_end, earlier.t_begin); intervals must abut.
  TransitionMatrix operator*(const TransitionMatrix& earlier) const;

 private:
  ErrorStateLayout layout_;
  double t_begin_;
  double t_end_;
  ImuMatrix imu_;
};

/// Phi along the analytic trajectory, RK4 with steps no longer than `max_step`.
TransitionMatrix compute_phi(const Trajectory& traj, const Vec3& gravity, double t1, double tk,
                             const ErrorStateLayout& layout, double max_step = 1e-3);

/// Phi at each requested time relative to times.front(), in one forward sweep.
std::vector<TransitionMatrix> compute_phi_sequence(const Trajectory& traj, const Vec3& gravity,
                                                   std::span<const double> times,
                                                   const ErrorStateLayout& layout,
                                                   double max_step = 1e-3);

/// Navigation part of the state propagated by the inertial kernel.
struct NavState {
  Rotation R_IG;
  Vec3 v = Vec3::Zero();
  Vec3 p = Vec3::Zero();
};

struct ImuStep {
  NavState next;
  ImuMatrix phi;
};

/**
 * One IMU interval [a.t, b.t]: bias-corrected rate is held at the midpoint value,
 * specific force is interpolated linearly, and mean and Phi are integrated with
 * one RK4 step over the same signal.
 */
ImuStep propagate_imu_step(const NavState& x, const ImuSample& a, const ImuSample& b,
                           const ImuBias& bias, const Vec3& gravity);

/// Phi over a run of IMU samples using the same per-interval rule as the filter.
/// Throws std::invalid_argument on non-increasing timestamps.
TransitionMatrix compute_phi(std::span<const ImuSample> samples, const Rotation& R_IG_first,
                             const ImuBias& bias, const Vec3& gravity,
                             const ErrorStateLayout& layout);

}  // namespace vio_obs
