#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "vio_obs/so3.hpp"
#include "vio_obs/trajectory.hpp"

namespace vio_obs {

/// Continuous-time IMU noise densities.
struct ImuNoise {
  double gyro_density = 1.7e-4;   // rad/s/sqrt(Hz)
  double accel_density = 2.0e-3;  // m/s^2/sqrt(Hz)
  double gyro_bias_rw = 2.0e-5;   // rad/s^2/sqrt(Hz)
  double accel_bias_rw = 3.0e-3;  // m/s^3/sqrt(Hz)

  static ImuNoise zero() { return {0.0, 0.0, 0.0, 0.0}; }
};

struct ImuBias {
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
};

struct ImuSample {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();   // omega_m [rad/s]
  Vec3 accel = Vec3::Zero();  // a_m [m/s^2]
};

/// Ideal pinhole camera rigidly attached to the IMU.
struct CameraRig {
  Rotation R_CI;                // IMU -> camera
  Vec3 p_CI = Vec3::Zero();     // IMU origin expressed in the camera frame [m]
  double fov_deg = 90.0;        // full field of view, both axes
  double min_depth = 0.1;       // [m]

  /// Feature position in the camera frame for an IMU pose.
  Vec3 to_camera(const Rotation& R_IG, const Vec3& p_I, const Vec3& p_f) const {
    return R_CI * (R_IG * (p_f - p_I)) + p_CI;
  }
  /// Camera center in the global frame.
  Vec3 camera_center(const Rotation& R_IG, const Vec3& p_I) const {
    return p_I - R_IG.matrix().transpose() * (R_CI.matrix().transpose() * p_CI);
  }
  bool in_view(const Vec3& p_C) const;
};

/// Normalized image coordinates (x/z, y/z).
Vec2 project(const Vec3& p_C);

struct FeatureObservation {
  double t = 0.0;
  int id = -1;
  Vec2 uv = Vec2::Zero();   // normalized image coordinates
  double sigma = 0.0;       // per-axis noise std, normalized units
};

struct GlobalPoseObservation {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
  Rotation R_IG;
};

/**
 * Region in which landmarks are drawn: the trajectory's bounding box, grown by
 * `along_margin` / `lateral_half_width` horizontally and shifted up by
 * [height_min, height_max] so no landmark lies on the motion axis.
 */
struct FeatureEnvelope {
  double along_margin = 8.0;        // [m]
  double lateral_half_width = 6.0;  // [m]
  double height_min = 3.0;          // [m]
  double height_max = 10.0;         // [m]
  double min_parallax_deg = 1.0;
  double view_rate_hz = 10.0;
  int max_attempts_per_feature = 500;
};

struct FeatureMap {
  std::vector<Vec3> points;
  std::uint64_t seed = 0;
  FeatureEnvelope envelope;
};

/// Number of poses (at envelope.view_rate_hz) that see `p_f`; `max_parallax_deg`
/// receives the largest ray angle between the first view and any later one.
int count_views(const Trajectory& traj, const CameraRig& rig, const Vec3& p_f,
                double view_rate_hz, double* max_parallax_deg = nullptr);

/// Throws std::runtime_error when no admissible placement is found.
FeatureMap generate_features(const Trajectory& traj, int count, const FeatureEnvelope& envelope,
                             const CameraRig& rig, std::uint64_t seed);

/// IMU samples at t_i = i / rate for i in [0, duration * rate). Biases start at
/// `bias` and random-walk with the configured densities.
std::vector<ImuSample> generate_imu(const Trajectory& traj, double rate_hz, const ImuBias& bias,
                                    const ImuNoise& noise, const Vec3& gravity,
                                    std::uint64_t seed);

std::vector<FeatureObservation> observe_features(const FeatureMap& map, const KinematicSample& pose,
                                                 const CameraRig& rig, double sigma,
                                                 std::mt19937_64& rng);
std::vector<FeatureObservation> observe_features(const FeatureMap& map, const KinematicSample& pose,
                                                 const CameraRig& rig, double sigma,
                                                 std::uint64_t seed);

/// Position perturbed by N(0, sigma_p^2 I); orientation by R_meas = Exp(-n) R_true
/// with n ~ N(0, sigma_theta^2 I), so Log(R_true R_meas^T) = n.
GlobalPoseObservation observe_global_pose(const KinematicSample& pose, double sigma_p,
                                          double sigma_theta, std::mt19937_64& rng);
GlobalPoseObservation observe_global_pose(const KinematicSample& pose, double sigma_p,
                                          double sigma_theta, std::uint64_t seed);

struct SensorConfig {
  double imu_rate_hz = 400.0;
  double camera_rate_hz = 10.0;
  double global_rate_hz = 10.0;
  ImuNoise imu_noise;
  ImuBias imu_bias;
  double pixel_sigma_px = 1.0;
  double focal_px = 460.0;
  double global_sigma_p = 0.1;      // [m]
  double global_sigma_theta = 0.1;  // [rad]
  Vec3 gravity{0.0, 0.0, -9.81};    // gravitational acceleration in G [m/s^2]

  double pixel_sigma() const { return pixel_sigma_px / focal_px; }
};

struct CameraFrame {
  double t = 0.0;
  std::size_t imu_index = 0;
  std::vector<FeatureObservation> observations;
};

struct GlobalPoseFrame {
  std::size_t imu_index = 0;
  GlobalPoseObservation observation;
};

/// Time-aligned measurement streams for one run.
struct SimulatedDataset {
  std::vector<ImuSample> imu;
  std::vector<CameraFrame> camera;
  std::vector<GlobalPoseFrame> global;
};

SimulatedDataset simulate_dataset(const Trajectory& traj, const FeatureMap& map,
                                  const CameraRig& rig, const SensorConfig& config,
                                  bool with_global_pose, std::uint64_t seed);

/// SplitMix64 step; used to derive independent sub-stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace vio_obs
