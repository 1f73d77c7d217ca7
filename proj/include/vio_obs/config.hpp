#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "vio_obs/estimator.hpp"
#include "vio_obs/observability.hpp"
#include "vio_obs/sensors.hpp"
#include "vio_obs/so3.hpp"
#include "vio_obs/trajectory.hpp"

namespace vio_obs {

/// Settings of the observability analysis.
struct AnalysisSettings {
  int poses = 61;
  int features = 12;
  double feature_view_rate_hz = 1.0;  // visibility check rate when placing landmarks
  double residual_tol = 1e-9;         // candidate null vectors
  double n2_reject_tol = 1e-3;        // N2 must leave at least this residual when aided
  double classify_tol = 0.1;
  TolPolicy policy;
};

/// Thresholds that turn final errors into convergence verdicts.
struct VerdictSettings {
  double converged_deg = 0.3;  // every run of an observable axis ends below this
  double spread_deg = 0.5;     // flagged axes spread at least this much over perturbations
};

/**
 * Everything one experiment needs. The defaults reproduce the full study:
 * two aiding modes, two trajectories, three camera mountings and eleven
 * initial perturbations of the camera-IMU rotation.
 */
struct ExperimentConfig {
  std::vector<AidingMode> modes{AidingMode::kPureVio, AidingMode::kGlobalPose};
  std::vector<std::string> trajectories{"1", "2"};
  std::vector<int> cases{1, 2, 3};
  std::vector<Mat3> case_rotations;  // ground-truth R_CI per case id (1-based)
  std::vector<Rpy> perturbations;    // degrees
  double perturbation_limit_deg = 5.0;
  std::uint64_t seed = 20250101;
  int workers = 0;  // <= 0 uses every available thread
  double duration = 60.0;
  SensorConfig sensors;
  Vec3 p_CI{0.05, 0.02, -0.03};
  double fov_deg = 90.0;
  int feature_count = 50;
  FeatureEnvelope envelope;
  FilterOptions filter;
  AnalysisSettings analysis;
  VerdictSettings verdict;
  std::string out_dir = "out";
};

ExperimentConfig default_config();

/// Throws std::invalid_argument on a non-orthonormal case matrix, an unknown
/// trajectory or case id, or a perturbation outside the configured limit.
void validate(const ExperimentConfig& config);

/// JSON fields override the defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& config);

AidingMode parse_mode(const std::string& name);
/// "1", "2" or "generic".
Trajectory make_trajectory(const std::string& id, double duration);
Rotation case_rotation(const ExperimentConfig& config, int case_id);
CameraRig make_rig(const ExperimentConfig& config, int case_id);

}  // namespace vio_obs
