#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "vio_obs/observability.hpp"
#include "vio_obs/sensors.hpp"
#include "vio_obs/so3.hpp"
#include "vio_obs/trajectory.hpp"
#include "vio_obs/transition.hpp"

namespace vio_obs {

/// Initial 1-sigma uncertainties. The inertial states start at truth, so their
/// priors are tight; the extrinsic prior covers the perturbation range.
struct FilterPriors {
  double sigma_theta_deg = 0.2;  // IMU attitude
  double sigma_bg = 0.001;       // [rad/s]
  double sigma_v = 0.01;         // [m/s]
  double sigma_ba = 0.02;        // [m/s^2]
  double sigma_p = 0.01;         // [m]
  double sigma_ext_deg = 5.0;    // camera-IMU rotation
};

struct FilterOptions {
  FilterPriors priors;
  double perturbation_limit_deg = 5.0;  // <= 0 disables the range check
  double chi2_gate = 5.991;             // 95%, 2 DoF per bearing
  double bearing_noise_scale = 3.0;     // filter bearing sigma relative to the simulated one
  int max_features = 40;
  int update_iterations = 1;            // > 1 relinearizes camera updates (iterated EKF)
  int max_rejections = 3;               // consecutive gated epochs before a feature is dropped
  double min_parallax_deg = 5.0;
  double depth_sigma_ratio = 0.2;       // max depth std of a new feature, relative to its depth
  int max_track_views = 2;              // views kept per pending feature; the first is always kept
  double divergence_limit = 1e6;        // on any covariance diagonal entry
  bool check_covariance = false;        // PSD check after every update (slow)
};

/**
 * Mean of the filter: IMU pose and velocity, biases, camera-IMU rotation and
 * SLAM features, with the error-state covariance in ErrorStateLayout order.
 */
struct FilterState {
  double t = 0.0;
  Rotation R_IG;
  Vec3 bg = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 ba = Vec3::Zero();
  Vec3 p = Vec3::Zero();
  Rotation R_CI;
  std::vector<int> feature_ids;
  std::vector<Vec3> features;
  Eigen::MatrixXd P;

  ErrorStateLayout layout() const { return ErrorStateLayout(static_cast<int>(features.size())); }
  int slot_of(int feature_id) const;
};

/// x (+) dx with R = Exp(-d_theta) R_hat for both rotations.
FilterState boxplus(const FilterState& x, const Eigen::VectorXd& dx);

/// Truth everywhere except R_CI = rotation_from_rpy(perturbation) * R_CI_true.
/// Throws std::invalid_argument if a component exceeds the configured limit.
FilterState init_filter(const KinematicSample& truth, const ImuBias& bias,
                        const Rotation& R_CI_true, const Rpy& perturbation,
                        const FilterOptions& options = {});

/// Discrete IMU noise over one interval of length dt, inertial block only.
ImuMatrix discrete_imu_noise(const ImuNoise& noise, double dt);

/// One IMU interval: mean by strapdown integration, P <- Phi P Phi^T + Q.
/// Returns the step transition. Throws std::invalid_argument if b.t <= a.t.
ImuMatrix propagate(FilterState& x, const ImuSample& a, const ImuSample& b, const ImuNoise& noise,
                    const Vec3& gravity);

/// Predicted normalized image coordinates of the feature in `slot`.
Vec3 feature_in_camera(const FilterState& x, const CameraRig& rig, int slot);
Vec2 predict_bearing(const FilterState& x, const CameraRig& rig, int slot);

/// d(bearing)/d(error state) at the current estimate; 2 x dim.
Eigen::MatrixXd camera_measurement_jacobian(const FilterState& x, const CameraRig& rig, int slot);

/// Residual [Log(R_hat R_meas^T); p_meas - p_hat] and its Jacobian (6 x dim).
Eigen::Matrix<double, 6, 1> global_pose_residual(const FilterState& x,
                                                 const GlobalPoseObservation& obs);
Eigen::MatrixXd global_pose_jacobian(const FilterState& x, const GlobalPoseObservation& obs);

struct UpdateStats {
  int used = 0;
  int gated = 0;
  int initialized = 0;
  int marginalized = 0;
  int dropped = 0;  // removed after repeated gating
};

struct CovarianceHealth {
  double max_asymmetry = 0.0;   // relative, measured before re-symmetrization
  double min_eig_ratio = 0.0;   // min eigenvalue / trace, most negative seen
  int checks = 0;
  bool psd = true;
};

/// Error-state EKF with SLAM features and online camera-IMU rotation.
class CalibrationFilter {
 public:
  CalibrationFilter(FilterState init, const CameraRig& rig, const SensorConfig& sensors,
                    const FilterOptions& options = {});

  const FilterState& state() const { return x_; }
  const CovarianceHealth& health() const { return health_; }
  bool diverged() const { return diverged_; }
  const std::string& divergence_reason() const { return reason_; }

  /// Mean over one IMU interval; covariance is accumulated and applied lazily.
  void propagate(const ImuSample& a, const ImuSample& b);
  /// Applies the accumulated transition and noise to the covariance.
  void flush();

  UpdateStats update_camera(double t, const std::vector<FeatureObservation>& observations);
  void update_global_pose(const GlobalPoseObservation& obs);

 private:
  struct PendingView {
    Rotation R_IG;
    Vec3 p;
    Vec2 uv;
    ImuMatrix phi_at;  // phi_total_ when the view was taken
  };
  using Track = std::vector<PendingView>;

  void ekf_update(const Eigen::MatrixXd& H, const Eigen::VectorXd& r, const Eigen::MatrixXd& R);
  void apply_update(const Eigen::MatrixXd& K, const Eigen::MatrixXd& PHt, const Eigen::VectorXd& dx);
  void marginalize(const std::vector<int>& keep_slots);
  bool try_initialize(int id, const Track& track);
  void check_health();

  FilterState x_;
  CameraRig rig_;
  SensorConfig sensors_;
  FilterOptions options_;
  ImuMatrix phi_acc_ = ImuMatrix::Identity();
  ImuMatrix q_acc_ = ImuMatrix::Zero();
  ImuMatrix phi_total_ = ImuMatrix::Identity();  // IMU transition since the start
  bool pending_cov_ = false;
  std::map<int, Track> pending_;
  std::map<int, int> rejections_;
  CovarianceHealth health_;
  bool diverged_ = false;
  std::string reason_;
};

struct ErrorSample {
  double t = 0.0;
  Rpy error;  // degrees
};

struct RunSetup {
  AidingMode mode = AidingMode::kPureVio;
  std::string trajectory_id = "1";
  int case_id = 1;
  Trajectory trajectory = make_trajectory_1();
  FeatureMap map;
  CameraRig rig;  // ground truth
  SensorConfig sensors;
  Rpy perturbation;
  std::uint64_t seed = 0;
  FilterOptions options;
};

struct CalibrationRun {
  AidingMode mode = AidingMode::kPureVio;
  std::string trajectory_id;
  int case_id = 1;
  Rpy perturbation;
  std::uint64_t seed = 0;
  std::vector<ErrorSample> series;
  Rpy final_error;
  double final_time = 0.0;
  bool diverged = false;
  std::string divergence_reason;
  UpdateStats totals;
  CovarianceHealth health;
};

/// Throws std::invalid_argument for an empty feature map.
CalibrationRun run_calibration(const RunSetup& setup);

/// Same, over pre-generated streams (the filter still models setup.sensors noise).
CalibrationRun run_calibration(const RunSetup& setup, const SimulatedDataset& data);

void write_run_csv(const CalibrationRun& run, const std::string& path);
nlohmann::json run_metadata(const CalibrationRun& run);

}  // namespace vio_obs
