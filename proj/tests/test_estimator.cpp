#include <cmath>
#include <filesystem>
#include <fstream>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "vio_obs/estimator.hpp"

namespace vio_obs {
namespace {

FilterState state_with_features() {
  const KinematicSample truth = make_generic_excitation().sample(4.0);
  FilterState x = init_filter(truth, {}, Rotation::exp(Vec3(0.4, -0.3, 1.2)), {1, -2, 3});
  x.features = {Vec3(5, 2, 8), Vec3(-3, 1, 6), Vec3(2, -4, 7)};
  x.feature_ids = {4, 9, 11};
  const int n = x.layout().dim();
  x.P = Eigen::MatrixXd::Identity(n, n) * 1e-4;
  return x;
}

CameraRig rig_for(const FilterState& x) {
  CameraRig rig;
  rig.R_CI = x.R_CI;
  rig.p_CI = Vec3(0.05, 0.02, -0.03);
  return rig;
}

double rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / b.norm();
}

TEST(Estimator, BoxplusConvention) {
  const FilterState x = state_with_features();
  Eigen::VectorXd dx = Eigen::VectorXd::Zero(x.layout().dim());
  dx.segment<3>(0) = Vec3(1e-3, 0, 0);
  dx.segment<3>(15) = Vec3(0, 2e-3, 0);
  dx.segment<3>(21) = Vec3(0.1, 0.2, 0.3);
  const FilterState y = boxplus(x, dx);
  // R = Exp(-d_theta) R_hat
  EXPECT_LT(((x.R_IG * y.R_IG.inverse()).log() - Vec3(1e-3, 0, 0)).norm(), 1e-15);
  EXPECT_LT(((x.R_CI * y.R_CI.inverse()).log() - Vec3(0, 2e-3, 0)).norm(), 1e-15);
  EXPECT_LT((y.features[1] - x.features[1] - Vec3(0.1, 0.2, 0.3)).norm(), 1e-15);
  EXPECT_THROW(boxplus(x, Eigen::VectorXd::Zero(3)), std::invalid_argument);
}

TEST(Estimator, CameraJacobianMatchesFiniteDifferences) {
  const FilterState x = state_with_features();
  const CameraRig rig = rig_for(x);
  const int n = x.layout().dim();
  const double h = 1e-6;
  for (int slot = 0; slot < 3; ++slot) {
    ASSERT_GT(feature_in_camera(x, rig, slot).z(), 0.0);
    const Eigen::MatrixXd H = camera_measurement_jacobian(x, rig, slot);
    Eigen::MatrixXd fd(2, n);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
      e[i] = h;
      fd.col(i) = (predict_bearing(boxplus(x, e), rig, slot) -
                   predict_bearing(boxplus(x, -e), rig, slot)) / (2 * h);
    }
    EXPECT_LT(rel(H, fd), 1e-5) << "slot " << slot;
  }
}

TEST(Estimator, GlobalPoseJacobianMatchesFiniteDifferences) {
  FilterState x = state_with_features();
  GlobalPoseObservation obs;
  obs.R_IG = Rotation::exp(Vec3(0.01, -0.02, 0.03)) * x.R_IG;
  obs.p = x.p + Vec3(0.1, -0.2, 0.05);
  const int n = x.layout().dim();
  const Eigen::MatrixXd H = global_pose_jacobian(x, obs);
  // The residual is z - h(x), so its derivative is -H.
  Eigen::MatrixXd fd(6, n);
  const double h = 1e-6;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    e[i] = h;
    fd.col(i) = -(global_pose_residual(boxplus(x, e), obs) -
                  global_pose_residual(boxplus(x, -e), obs)) / (2 * h);
  }
  EXPECT_LT(rel(H, fd), 1e-5);
}

TEST(Estimator, InitFilterAppliesPerturbation) {
  const KinematicSample truth = make_trajectory_1().sample(0.0);
  const Rotation R_CI = Rotation::exp(Vec3(0.1, 0.2, 0.3));
  const Rpy p{2, -4, -5};
  const FilterState x = init_filter(truth, {}, R_CI, p);
  const Rpy e = rotation_error_rpy(x.R_CI, R_CI);
  EXPECT_NEAR(e.roll, 2.0, 1e-12);
  EXPECT_NEAR(e.pitch, -4.0, 1e-12);
  EXPECT_NEAR(e.yaw, -5.0, 1e-12);
  EXPECT_EQ(x.P.rows(), 18);
  EXPECT_NEAR(std::sqrt(x.P(15, 15)), 5.0 * kDegToRad, 1e-15);
  EXPECT_THROW(init_filter(truth, {}, R_CI, {6, 0, 0}), std::invalid_argument);
  FilterOptions wide;
  wide.perturbation_limit_deg = 0.0;
  EXPECT_NO_THROW(init_filter(truth, {}, R_CI, {6, 0, 0}, wide));
}

TEST(Estimator, PropagationKeepsCovarianceSymmetric) {
  FilterState x = state_with_features();
  const ImuSample a{x.t, Vec3(0.1, 0.2, -0.1), Vec3(0.3, 0.1, 9.8)};
  const ImuSample b{x.t + 0.0025, Vec3(0.12, 0.18, -0.1), Vec3(0.31, 0.12, 9.79)};
  const Eigen::MatrixXd P0 = x.P;
  const ImuMatrix phi = propagate(x, a, b, ImuNoise{}, Vec3(0, 0, -9.81));
  EXPECT_LT((x.P - x.P.transpose()).norm(), 1e-18);
  // Cross terms follow Phi; static blocks do not move.
  EXPECT_LT((x.P.topRightCorner(15, 9) - phi * P0.topRightCorner(15, 9)).norm(), 1e-18);
  EXPECT_EQ(x.P.bottomRightCorner(12, 12), P0.bottomRightCorner(12, 12));
  EXPECT_THROW(propagate(x, b, a, ImuNoise{}, Vec3(0, 0, -9.81)), std::invalid_argument);
}

TEST(Estimator, DiscreteNoiseScalesWithInterval) {
  const ImuNoise n;
  const ImuMatrix Q = discrete_imu_noise(n, 0.01);
  EXPECT_DOUBLE_EQ(Q(0, 0), n.gyro_density * n.gyro_density * 0.01);
  EXPECT_DOUBLE_EQ(Q(9, 9), n.accel_bias_rw * n.accel_bias_rw * 0.01);
  EXPECT_EQ(Q(12, 12), 0.0);
}

TEST(Estimator, ExactGlobalPoseLeavesStateUnchanged) {
  const KinematicSample truth = make_trajectory_1().sample(0.0);
  const Rotation R_CI;
  const FilterState x0 = init_filter(truth, {}, R_CI, {1, 1, 1});
  SensorConfig sensors;
  CalibrationFilter f(x0, CameraRig{}, sensors);
  f.update_global_pose({0.0, truth.p, truth.R_IG});
  EXPECT_LT((f.state().p - x0.p).norm(), 1e-15);
  EXPECT_LT((f.state().R_CI * x0.R_CI.inverse()).log().norm(), 1e-15);
  // Information only shrinks the covariance.
  EXPECT_LT(f.state().P(12, 12), x0.P(12, 12));
  EXPECT_LE(f.state().P.diagonal().maxCoeff(), x0.P.diagonal().maxCoeff());
}

TEST(Estimator, GlobalPoseUpdatePullsTowardMeasurement) {
  const KinematicSample truth = make_trajectory_1().sample(0.0);
  FilterState x0 = init_filter(truth, {}, Rotation(), {0, 0, 0});
  x0.P.block<3, 3>(12, 12) = Mat3::Identity();  // 1 m prior
  SensorConfig sensors;
  sensors.global_sigma_p = 1.0;
  CalibrationFilter f(x0, CameraRig{}, sensors);
  f.update_global_pose({0.0, truth.p + Vec3(2, 0, 0), truth.R_IG});
  // Equal weights: half way.
  EXPECT_NEAR(f.state().p.x() - truth.p.x(), 1.0, 1e-9);
  EXPECT_NEAR(f.state().P(12, 12), 0.5, 1e-9);
}

TEST(Estimator, RejectsEmptyMap) {
  RunSetup s;
  EXPECT_THROW(run_calibration(s), std::invalid_argument);
}

RunSetup short_setup(AidingMode mode, double duration) {
  RunSetup s;
  s.mode = mode;
  s.trajectory = make_trajectory_1(duration);
  s.rig.p_CI = Vec3(0.05, 0.02, -0.03);
  s.sensors.imu_bias.gyro = Vec3(0.002, -0.001, 0.0015);
  s.sensors.imu_bias.accel = Vec3(0.02, -0.01, 0.015);
  s.map = generate_features(s.trajectory, 50, {}, s.rig, 101);
  s.perturbation = {2, -4, -5};
  s.seed = 5;
  s.options.check_covariance = true;
  return s;
}

TEST(Estimator, ShortRunStaysHealthyAndDeterministic) {
  const RunSetup s = short_setup(AidingMode::kGlobalPose, 10.0);
  const CalibrationRun a = run_calibration(s);
  EXPECT_FALSE(a.diverged);
  EXPECT_TRUE(a.health.psd);
  EXPECT_GT(a.health.checks, 100);
  EXPECT_LT(a.health.max_asymmetry, 1e-9);
  EXPECT_GT(a.totals.initialized, 0);
  EXPECT_GT(a.totals.used, 0);
  EXPECT_NEAR(a.final_time, 10.0, 0.01);
  EXPECT_EQ(a.series.front().t, 0.0);
  EXPECT_NEAR(a.series.front().error.yaw, -5.0, 1e-9);
  // Pitch and yaw are observable on this trajectory and start converging.
  EXPECT_LT(std::abs(a.final_error.pitch), 2.0);
  EXPECT_LT(std::abs(a.final_error.yaw), 2.0);

  const CalibrationRun b = run_calibration(s);
  ASSERT_EQ(a.series.size(), b.series.size());
  for (std::size_t i = 0; i < a.series.size(); ++i) {
    EXPECT_EQ(a.series[i].error.roll, b.series[i].error.roll);
  }
}

TEST(Estimator, RunCsvAndMetadata) {
  const RunSetup s = short_setup(AidingMode::kPureVio, 2.0);
  const CalibrationRun run = run_calibration(s);
  const auto path = std::filesystem::temp_directory_path() / "vio_obs_run_test.csv";
  write_run_csv(run, path.string());
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "t_s,roll_err_deg,pitch_err_deg,yaw_err_deg");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, static_cast<int>(run.series.size()));
  std::filesystem::remove(path);

  const auto j = run_metadata(run);
  EXPECT_EQ(j["mode"], "pure");
  EXPECT_EQ(j["samples"], run.series.size());
  EXPECT_EQ(j["final_error_deg"]["yaw"], run.final_error.yaw);
  EXPECT_FALSE(j.contains("divergence_reason"));
}

}  // namespace
}  // namespace vio_obs
