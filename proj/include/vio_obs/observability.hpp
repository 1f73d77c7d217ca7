#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "vio_obs/sensors.hpp"
#include "vio_obs/so3.hpp"
#include "vio_obs/trajectory.hpp"
#include "vio_obs/transition.hpp"

namespace vio_obs {

using Mat23 = Eigen::Matrix<double, 2, 3>;

enum class AidingMode { kPureVio, kGlobalPose };
enum class StackForm {
  kProjected,  // Xi_k * [Gamma1 ... I], two rows per feature
  kGamma,      // [Gamma1 ... I] without the projection, three rows per feature
};
enum class RowSource { kCameraFeature, kGlobalPosition, kGlobalOrientation };

std::string to_string(AidingMode mode);
std::string to_string(RowSource source);

/// Geometry the observability stack is built from.
struct AnalysisScenario {
  Trajectory trajectory = make_trajectory_1();
  std::vector<Vec3> features;
  CameraRig rig;
  Vec3 gravity{0.0, 0.0, -9.81};
  std::vector<double> times;  // stacking epochs; times.front() is t1
};

/// `count` evenly spaced epochs over [0, duration] (both ends included).
std::vector<double> keyframe_times(double duration, int count);

struct GammaBlocks {
  Mat3 gamma1;
  Mat3 gamma2;
  Mat3 gamma3;
  Mat3 gamma4;
};

/// d(normalized coordinates)/d(camera-frame point).
Mat23 projection_jacobian(const Vec3& p_C);

/// Xi_k = J(p_C) * R_CI * R_IG(k): maps the global-frame block row to the image plane.
Mat23 xi_projection(const CameraRig& rig, const KinematicSample& sk, const Vec3& p_f);

GammaBlocks compute_gamma(const KinematicSample& s1, const KinematicSample& sk,
                          const TransitionMatrix& phi, const Vec3& p_f, const Rotation& R_CI,
                          const Vec3& gravity);

/// Camera block row for feature `feature` at epoch k, in the requested form.
Eigen::MatrixXd build_pure_vio_rows(const GammaBlocks& g, double dt, const Mat23& xi,
                                    const ErrorStateLayout& layout, int feature, StackForm form);

/// Orientation rows (first three) and position rows (last three).
Eigen::MatrixXd build_global_rows(const TransitionMatrix& phi);

struct RowBlock {
  int k = 0;
  double t = 0.0;
  RowSource source = RowSource::kCameraFeature;
  int feature = -1;
  int first_row = 0;
  int rows = 0;
};

struct ObservabilityMatrix {
  ErrorStateLayout layout;
  Eigen::MatrixXd matrix;
  std::vector<RowBlock> blocks;
  int skipped_observations = 0;  // feature behind the camera or outside the field of view
};

/// Stacked rows for every epoch in scenario.times. Epochs are filled in parallel.
ObservabilityMatrix build_stack(const AnalysisScenario& scenario, AidingMode mode,
                                StackForm form = StackForm::kProjected, double max_step = 1e-3);
/// Sequential reference of build_stack(); identical output.
ObservabilityMatrix build_stack_serial(const AnalysisScenario& scenario, AidingMode mode,
                                       StackForm form = StackForm::kProjected,
                                       double max_step = 1e-3);

/// d is the motion direction in the IMU frame.
Eigen::VectorXd candidate_n1(const Vec3& d, const Rotation& R_CI, const Rotation& R_IG,
                             const std::vector<Vec3>& features, const Vec3& p_I1,
                             const ErrorStateLayout& layout);

/// Three columns; `gravity` is the gravitational acceleration in G (e.g. [0,0,-9.81]).
Eigen::MatrixXd candidate_n2(const Rotation& R_IG, const Rotation& R_CI, const Vec3& gravity,
                             const ErrorStateLayout& layout);

/// Global translation (3 columns) and rotation about gravity (1 column) at epoch 1.
Eigen::MatrixXd gauge_directions(const KinematicSample& s1, const std::vector<Vec3>& features,
                                 const Vec3& gravity, const ErrorStateLayout& layout);

struct TolPolicy {
  double relative = 1e-10;        // sigma_i < sigma_max * max(rows, cols) * relative is zero
  bool equilibrate_rows = true;   // scale rows to unit norm before the SVD
  bool equilibrate_cols = true;   // then columns; the basis is mapped back and re-orthonormalized
  double projection_tol = 1e-6;   // rank tolerance on the extrinsic block of the null basis
};

struct CandidateResidual {
  std::string name;
  std::vector<double> columns;  // ||M n|| / (||M|| ||n||) per column
  double max() const;
};

struct NullSpaceReport {
  int rows = 0;
  int cols = 0;
  int rank = 0;
  double threshold = 0.0;
  std::vector<double> singular_values;
  Eigen::MatrixXd null_basis;            // cols x (cols - rank), orthonormal
  Eigen::MatrixXd extrinsic_projection;  // 3 x (cols - rank)
  int extrinsic_null_dim = 0;
  std::vector<CandidateResidual> candidates;

  int null_dim() const { return cols - rank; }
};

/// Throws std::invalid_argument on an empty matrix. `extrinsic_offset` < 0 skips
/// the extrinsic projection.
NullSpaceReport null_space(const Eigen::MatrixXd& M, int extrinsic_offset,
                           const TolPolicy& policy = {});
NullSpaceReport null_space(const ObservabilityMatrix& M, const TolPolicy& policy = {});

/// Per-column residuals of `N` against M, using the same row scaling as null_space().
CandidateResidual candidate_residual(const Eigen::MatrixXd& M, const Eigen::MatrixXd& N,
                                     const std::string& name, const TolPolicy& policy = {});

struct DofClassification {
  Vec3 axis = Vec3::Zero();            // R_CI * d
  std::array<bool, 3> flags{};         // roll, pitch, yaw
  int count() const { return int(flags[0]) + int(flags[1]) + int(flags[2]); }
};

DofClassification classify_unobservable_dof(const Vec3& d, const Rotation& R_CI, double tol);
/// Same rule applied to an already rotated axis, e.g. a measured R_CI * d.
DofClassification classify_axis(const Vec3& axis, double tol);

nlohmann::json to_json(const NullSpaceReport& report);

}  // namespace vio_obs
