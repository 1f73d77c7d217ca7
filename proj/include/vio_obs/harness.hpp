#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vio_obs/config.hpp"
#include "vio_obs/estimator.hpp"
#include "vio_obs/observability.hpp"

namespace vio_obs {

/// One cell of the experiment matrix; `perturbation` indexes config.perturbations.
struct RunKey {
  AidingMode mode = AidingMode::kPureVio;
  std::string trajectory = "1";
  int case_id = 1;
  int perturbation = 0;

  auto operator<=>(const RunKey&) const = default;
  /// File stem, e.g. "pure_traj1_case2_p03".
  std::string name() const;
};

/// Every configured (mode, trajectory, case, perturbation), sorted.
std::vector<RunKey> run_matrix(const ExperimentConfig& config);

/// Landmarks for one (trajectory, case); shared by both modes and all perturbations.
FeatureMap feature_map_for(const ExperimentConfig& config, const std::string& trajectory,
                           int case_id);
std::uint64_t run_seed(const ExperimentConfig& config, const RunKey& key);
RunSetup make_run_setup(const ExperimentConfig& config, const RunKey& key, const FeatureMap& map);

/// Runs in parallel over `workers` threads (<= 0: all). Output order follows `keys`.
std::vector<CalibrationRun> run_experiment(const ExperimentConfig& config,
                                           const std::vector<RunKey>& keys, int workers);
/// Sequential reference of run_experiment(); identical output.
std::vector<CalibrationRun> run_experiment_serial(const ExperimentConfig& config,
                                                  const std::vector<RunKey>& keys);

/// Absolute final errors for one (mode, trajectory), perturbations by cases.
struct ResultTable {
  AidingMode mode = AidingMode::kPureVio;
  std::string trajectory;
  std::vector<int> cases;
  std::vector<Rpy> perturbations;
  std::vector<std::vector<Rpy>> cells;       // [perturbation][case]
  std::vector<std::vector<bool>> diverged;   // [perturbation][case]
  std::vector<Rpy> average;                  // [case]
};

/// Throws std::invalid_argument when a cell of a table has no run.
std::vector<ResultTable> make_result_tables(const ExperimentConfig& config,
                                            const std::vector<RunKey>& keys,
                                            const std::vector<CalibrationRun>& runs);
/// Diverged cells carry a trailing '*'. The last row is "Avg".
void write_result_table_csv(const ResultTable& table, const std::string& path);

struct AxisVerdict {
  bool flagged = false;    // predicted unobservable
  bool converged = false;  // every run ended within the threshold
  double mean_abs = 0.0;
  double max_abs = 0.0;
  double spread = 0.0;     // max - min of the signed final errors
};

struct CellVerdict {
  AidingMode mode = AidingMode::kPureVio;
  std::string trajectory;
  int case_id = 1;
  int runs = 0;
  int diverged = 0;
  std::array<AxisVerdict, 3> axes;  // roll, pitch, yaw
  /// Converged iff not flagged, and flagged axes spread beyond the configured minimum.
  bool consistent(const VerdictSettings& v) const;
};

/// Axes the analysis predicts to be unobservable: all three for a constant
/// velocity line without global pose, R_CI * d components otherwise, none for
/// the generic trajectory.
std::array<bool, 3> predicted_flags(const ExperimentConfig& config, AidingMode mode,
                                    const std::string& trajectory, int case_id);
std::vector<CellVerdict> check_routing(const ExperimentConfig& config,
                                       const std::vector<RunKey>& keys,
                                       const std::vector<CalibrationRun>& runs);
nlohmann::json to_json(const CellVerdict& verdict, const VerdictSettings& settings);

struct LemmaCheck {
  enum class Compare { kBelow, kAbove, kEqual };
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  Compare compare = Compare::kBelow;
  bool pass() const;
};

struct AnalysisCase {
  AidingMode mode = AidingMode::kPureVio;
  std::string trajectory;
  int case_id = 1;
  NullSpaceReport report;        // projected stack
  NullSpaceReport gamma_report;  // unprojected stack
  DofClassification classification;
  int skipped_observations = 0;
  double seconds = 0.0;
  std::vector<LemmaCheck> checks;
  bool pass() const;
};

AnalysisScenario make_scenario(const ExperimentConfig& config, const std::string& trajectory,
                               int case_id);
AnalysisCase analyze_case(const ExperimentConfig& config, AidingMode mode,
                          const std::string& trajectory, int case_id);
nlohmann::json to_json(const AnalysisCase& result);

/// A run CSV together with its JSON sidecar.
struct RunSeries {
  nlohmann::json meta;
  std::vector<ErrorSample> series;
};

/// Reads `path` and the sidecar next to it (same stem, .json).
RunSeries read_run(const std::string& path);
void write_run(const CalibrationRun& run, const RunKey& key, const std::string& dir);
/// Long format t_s,axis,perturbation,err_deg. Throws std::invalid_argument for
/// an empty input or runs of different (mode, trajectory, case).
void write_plot_csv(const std::vector<RunSeries>& runs, const std::string& path);

/// imu.csv, camera.csv, global_pose.csv (when present), features.csv, truth.csv.
void write_dataset(const SimulatedDataset& data, const FeatureMap& map, const Trajectory& traj,
                   const std::string& dir);

/// Command-line overrides applied on top of the configuration file.
struct CommandOptions {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> trajectory;
  std::optional<int> case_id;
  std::optional<std::string> mode;
  std::optional<Rpy> perturbation;
  std::vector<std::string> inputs;
};

ExperimentConfig resolve_config(const CommandOptions& options);

// Each command returns the process exit code.
int cmd_analyze(const ExperimentConfig& config, std::ostream& log);
int cmd_simulate(const ExperimentConfig& config, std::ostream& log);
int cmd_calibrate(const ExperimentConfig& config, std::ostream& log);
int cmd_experiment(const ExperimentConfig& config, std::ostream& log);
int cmd_plot(const std::vector<std::string>& inputs, const std::string& out_dir,
             std::ostream& log);

}  // namespace vio_obs
