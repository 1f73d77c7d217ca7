#include <cmath>
#include <random>

#include <Eigen/QR>
#include <gtest/gtest.h>

#include "vio_obs/observability.hpp"

namespace vio_obs {
namespace {

Mat3 case_matrix(int id) {
  const double h = std::sqrt(0.5);
  Mat3 m = Mat3::Identity();
  if (id == 2) m << h, h, 0, -h, h, 0, 0, 0, 1;
  if (id == 3) m << 0.5, h, -0.5, -0.5, h, 0.5, h, 0, h;
  return m;
}

AnalysisScenario scenario(const Trajectory& traj, int case_id, int features = 12) {
  AnalysisScenario s;
  s.trajectory = traj;
  s.rig.R_CI = Rotation::from_matrix(case_matrix(case_id));
  s.rig.p_CI = Vec3(0.05, 0.02, -0.03);
  FeatureEnvelope env;
  env.view_rate_hz = 1.0;
  s.features = generate_features(traj, features, env, s.rig, 17 + case_id).points;
  s.times = keyframe_times(60.0, 61);
  return s;
}

TEST(Observability, KeyframeTimes) {
  const auto t = keyframe_times(60.0, 61);
  ASSERT_EQ(t.size(), 61u);
  EXPECT_EQ(t.front(), 0.0);
  EXPECT_EQ(t.back(), 60.0);
  EXPECT_NEAR(t[30], 30.0, 1e-12);
}

TEST(Observability, ProjectionJacobianMatchesFiniteDifferences) {
  const Vec3 p(0.3, -0.4, 2.5);
  const Mat23 J = projection_jacobian(p);
  const double h = 1e-6;
  for (int i = 0; i < 3; ++i) {
    Vec3 e = Vec3::Zero();
    e[i] = h;
    const Vec2 fd = (project(p + e) - project(p - e)) / (2 * h);
    EXPECT_LT((J.col(i) - fd).norm(), 1e-9);
  }
}

TEST(Observability, ParallelStackEqualsSerial) {
  const AnalysisScenario s = scenario(make_generic_excitation(), 3);
  for (auto mode : {AidingMode::kPureVio, AidingMode::kGlobalPose}) {
    for (auto form : {StackForm::kProjected, StackForm::kGamma}) {
      const ObservabilityMatrix a = build_stack(s, mode, form);
      const ObservabilityMatrix b = build_stack_serial(s, mode, form);
      ASSERT_EQ(a.matrix.rows(), b.matrix.rows());
      EXPECT_TRUE(a.matrix == b.matrix);
      EXPECT_EQ(a.blocks.size(), b.blocks.size());
      EXPECT_EQ(a.skipped_observations, b.skipped_observations);
    }
  }
}

TEST(Observability, StackShape) {
  const AnalysisScenario s = scenario(make_trajectory_1(), 1);
  const ObservabilityMatrix pure = build_stack(s, AidingMode::kPureVio);
  EXPECT_EQ(pure.matrix.cols(), 18 + 3 * 12);
  int visible = 0;
  for (const auto& b : pure.blocks) {
    EXPECT_EQ(b.rows, 2);
    visible += 1;
  }
  EXPECT_EQ(pure.matrix.rows(), 2 * visible);
  EXPECT_EQ(visible + pure.skipped_observations, 61 * 12);

  const ObservabilityMatrix aided = build_stack(s, AidingMode::kGlobalPose);
  EXPECT_EQ(aided.matrix.rows(), pure.matrix.rows() + 6 * 61);
}

TEST(Observability, GlobalRowsSelectAttitudeAndPosition) {
  const TransitionMatrix phi =
      compute_phi(make_generic_excitation(), Vec3(0, 0, -9.81), 0.0, 2.0, ErrorStateLayout(1));
  const Eigen::MatrixXd rows = build_global_rows(phi);
  const Eigen::MatrixXd d = phi.dense();
  EXPECT_LT((rows.topRows(3) - d.middleRows(0, 3)).norm(), 1e-15);
  EXPECT_LT((rows.bottomRows(3) - d.middleRows(12, 3)).norm(), 1e-15);
}

TEST(Observability, NullSpaceOfKnownRank) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd A(40, 6), B(6, 12);
  for (int i = 0; i < A.size(); ++i) A.data()[i] = n(rng);
  for (int i = 0; i < B.size(); ++i) B.data()[i] = n(rng);
  const Eigen::MatrixXd M = A * B;  // rank 6, 12 columns
  const NullSpaceReport r = null_space(M, -1);
  EXPECT_EQ(r.rank, 6);
  EXPECT_EQ(r.null_dim(), 6);
  EXPECT_LT((M * r.null_basis).norm() / M.norm(), 1e-12);
  EXPECT_LT((r.null_basis.transpose() * r.null_basis - Eigen::MatrixXd::Identity(6, 6)).norm(),
            1e-12);
  EXPECT_THROW(null_space(Eigen::MatrixXd(0, 3), -1), std::invalid_argument);
}

TEST(Observability, ExtrinsicProjectionRank) {
  // Null space spanned by e_15 and e_0 + e_16: two extrinsic directions.
  Eigen::MatrixXd N = Eigen::MatrixXd::Zero(18, 2);
  N(15, 0) = 1.0;
  N(0, 1) = 1.0;
  N(16, 1) = 1.0;
  const Eigen::MatrixXd Q = Eigen::MatrixXd::Identity(18, 18) -
                            N * (N.transpose() * N).inverse() * N.transpose();
  const NullSpaceReport r = null_space(Q, 15);
  EXPECT_EQ(r.null_dim(), 2);
  EXPECT_EQ(r.extrinsic_null_dim, 2);
}

TEST(Observability, CandidateResidualScale) {
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(3, 3);
  M(2, 2) = 0.0;
  const Eigen::MatrixXd n = Eigen::Vector3d(0, 0, 5);
  EXPECT_LT(candidate_residual(M, n, "z").max(), 1e-15);
  const Eigen::MatrixXd m = Eigen::Vector3d(1, 0, 0);
  EXPECT_GT(candidate_residual(M, m, "x").max(), 0.1);
}

TEST(Observability, StraightLineCandidatesAreNullVectors) {
  for (const Trajectory& traj : {make_trajectory_1(), make_trajectory_2()}) {
    for (int c = 1; c <= 3; ++c) {
      const AnalysisScenario s = scenario(traj, c);
      const ObservabilityMatrix M = build_stack(s, AidingMode::kPureVio);
      const KinematicSample s1 = traj.sample(0.0);
      const auto n1 = candidate_n1(traj.direction(), s.rig.R_CI, s1.R_IG, s.features, s1.p,
                                   M.layout);
      EXPECT_LT(candidate_residual(M.matrix, n1, "N1").max(), 1e-9);
      const auto gauge = gauge_directions(s1, s.features, s.gravity, M.layout);
      EXPECT_LT(candidate_residual(M.matrix, gauge, "gauge").max(), 1e-9);
    }
  }
}

TEST(Observability, N2OnlyForConstantVelocity) {
  const AnalysisScenario s = scenario(make_trajectory_1(), 2);
  const ObservabilityMatrix M = build_stack(s, AidingMode::kPureVio);
  const KinematicSample s1 = s.trajectory.sample(0.0);
  const auto n2 = candidate_n2(s1.R_IG, s.rig.R_CI, s.gravity, M.layout);
  EXPECT_GT(candidate_residual(M.matrix, n2, "N2").max(), 1e-3);
}

TEST(Observability, GenericMotionLeavesOnlyTheGauge) {
  const AnalysisScenario s = scenario(make_generic_excitation(), 2);
  const NullSpaceReport r = null_space(build_stack(s, AidingMode::kPureVio));
  EXPECT_EQ(r.null_dim(), 4);
  EXPECT_EQ(r.extrinsic_null_dim, 0);
  const NullSpaceReport g = null_space(build_stack(s, AidingMode::kGlobalPose));
  EXPECT_EQ(g.null_dim(), 0);
}

TEST(Observability, ClassifierFlagsRotatedDirection) {
  const Vec3 d = Vec3::UnitX();
  const auto c1 = classify_unobservable_dof(d, Rotation::from_matrix(case_matrix(1)), 0.1);
  EXPECT_EQ(c1.flags, (std::array<bool, 3>{true, false, false}));
  const auto c2 = classify_unobservable_dof(d, Rotation::from_matrix(case_matrix(2)), 0.1);
  EXPECT_EQ(c2.flags, (std::array<bool, 3>{true, true, false}));
  const auto c3 = classify_unobservable_dof(d, Rotation::from_matrix(case_matrix(3)), 0.1);
  EXPECT_EQ(c3.flags, (std::array<bool, 3>{true, true, true}));
  EXPECT_EQ(c3.count(), 3);
  // Non-unit direction is normalized first.
  EXPECT_EQ(classify_unobservable_dof(Vec3(5, 0, 0), Rotation(), 0.1).flags, c1.flags);
}

TEST(Observability, ClassifierOnMeasuredAxis) {
  const auto c = classify_axis(Vec3(-0.00413, -0.01966, 0.99980), 0.1);
  EXPECT_EQ(c.flags, (std::array<bool, 3>{false, false, true}));
}

TEST(Observability, ReportJson) {
  const NullSpaceReport r = null_space(Eigen::MatrixXd::Identity(3, 4), -1);
  const auto j = to_json(r);
  EXPECT_EQ(j["rank"], 3);
  EXPECT_EQ(j["null_dim"], 1);
  EXPECT_EQ(j["singular_values"].size(), 3u);
}

}  // namespace
}  // namespace vio_obs
