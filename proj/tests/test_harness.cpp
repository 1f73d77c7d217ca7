#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "vio_obs/harness.hpp"

namespace vio_obs {
namespace {

namespace fs = std::filesystem;

ExperimentConfig small_config() {
  ExperimentConfig c = default_config();
  c.trajectories = {"1"};
  c.cases = {1, 2};
  c.perturbations.resize(3);
  c.duration = 4.0;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vio_obs_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

TEST(Harness, DefaultMatrixHas132SortedRuns) {
  const auto keys = run_matrix(default_config());
  ASSERT_EQ(keys.size(), 132u);
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
  EXPECT_EQ(keys.front().name(), "pure_traj1_case1_p01");
  EXPECT_EQ(keys.back().name(), "global_traj2_case3_p11");
}

TEST(Harness, SeedsAndMapsAreSharedWhereIntended) {
  const ExperimentConfig c = default_config();
  const RunKey pure{AidingMode::kPureVio, "1", 2, 4};
  RunKey global = pure;
  global.mode = AidingMode::kGlobalPose;
  RunKey other = pure;
  other.perturbation = 5;
  EXPECT_EQ(run_seed(c, pure), run_seed(c, global));
  EXPECT_NE(run_seed(c, pure), run_seed(c, other));

  const FeatureMap a = feature_map_for(c, "1", 2);
  const FeatureMap b = feature_map_for(c, "1", 2);
  const FeatureMap d = feature_map_for(c, "1", 3);
  ASSERT_EQ(a.points.size(), static_cast<std::size_t>(c.feature_count));
  EXPECT_EQ(a.points[7], b.points[7]);
  EXPECT_NE(a.points[7], d.points[7]);

  const RunSetup s = make_run_setup(c, other, a);
  EXPECT_EQ(s.perturbation.roll, c.perturbations[5].roll);
  EXPECT_EQ(s.rig.R_CI.matrix(), make_rig(c, 2).R_CI.matrix());
  RunKey bad = pure;
  bad.perturbation = 11;
  EXPECT_THROW(make_run_setup(c, bad, a), std::invalid_argument);
}

TEST(Harness, ParallelEqualsSerial) {
  const ExperimentConfig c = small_config();
  const auto keys = run_matrix(c);
  const auto par = run_experiment(c, keys, 4);
  const auto ser = run_experiment_serial(c, keys);
  ASSERT_EQ(par.size(), ser.size());
  for (std::size_t i = 0; i < par.size(); ++i) {
    EXPECT_EQ(par[i].case_id, keys[i].case_id);
    EXPECT_EQ(par[i].mode, keys[i].mode);
    ASSERT_EQ(par[i].series.size(), ser[i].series.size());
    for (std::size_t k = 0; k < par[i].series.size(); ++k) {
      EXPECT_EQ(par[i].series[k].error.roll, ser[i].series[k].error.roll);
      EXPECT_EQ(par[i].series[k].error.yaw, ser[i].series[k].error.yaw);
    }
  }
}

TEST(Harness, TableAverageIsColumnMean) {
  const ExperimentConfig c = small_config();
  const auto keys = run_matrix(c);
  auto runs = run_experiment(c, keys, 0);
  runs[1].diverged = true;
  const auto tables = make_result_tables(c, keys, runs);
  ASSERT_EQ(tables.size(), 2u);  // pure and global, one trajectory
  const ResultTable& t = tables.front();
  EXPECT_EQ(t.mode, AidingMode::kPureVio);
  ASSERT_EQ(t.cells.size(), 3u);
  ASSERT_EQ(t.cases, (std::vector<int>{1, 2}));
  for (std::size_t c2 = 0; c2 < 2; ++c2) {
    double roll = 0.0;
    for (std::size_t r = 0; r < 3; ++r) roll += t.cells[r][c2].roll;
    EXPECT_NEAR(t.average[c2].roll, roll / 3.0, 1e-12);
  }

  const fs::path dir = scratch_dir("table");
  write_result_table_csv(t, (dir / "t.csv").string());
  std::ifstream in(dir / "t.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "perturbation,c1_roll,c1_pitch,c1_yaw,c2_roll,c2_pitch,c2_yaw");
  std::vector<double> sum(6, 0.0);
  int rows = 0;
  bool marked = false;
  std::vector<std::string> avg;
  while (std::getline(in, line)) {
    const auto f = split(line);
    ASSERT_EQ(f.size(), 7u);
    if (f[0] == "Avg") {
      avg = f;
      continue;
    }
    ++rows;
    for (int i = 0; i < 6; ++i) {
      std::string v = f[i + 1];
      if (!v.empty() && v.back() == '*') {
        marked = true;
        v.pop_back();
      }
      sum[i] += std::stod(v);
    }
  }
  EXPECT_EQ(rows, 3);
  EXPECT_TRUE(marked);
  ASSERT_EQ(avg.size(), 7u);
  // Recomputed from the printed cells, as a spreadsheet would.
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(std::stod(avg[i + 1]), sum[i] / rows, 1e-9);
  fs::remove_all(dir);

  std::vector<RunKey> partial(keys.begin(), keys.end() - 1);
  std::vector<CalibrationRun> partial_runs(runs.begin(), runs.end() - 1);
  EXPECT_THROW(make_result_tables(c, partial, partial_runs), std::invalid_argument);
}

TEST(Harness, PredictedFlags) {
  const ExperimentConfig c = default_config();
  using F = std::array<bool, 3>;
  EXPECT_EQ(predicted_flags(c, AidingMode::kPureVio, "1", 1), (F{true, false, false}));
  EXPECT_EQ(predicted_flags(c, AidingMode::kPureVio, "1", 2), (F{true, true, false}));
  EXPECT_EQ(predicted_flags(c, AidingMode::kPureVio, "1", 3), (F{true, true, true}));
  EXPECT_EQ(predicted_flags(c, AidingMode::kGlobalPose, "2", 1), (F{true, false, false}));
  EXPECT_EQ(predicted_flags(c, AidingMode::kPureVio, "2", 1), (F{true, true, true}));
  EXPECT_EQ(predicted_flags(c, AidingMode::kPureVio, "generic", 3), (F{false, false, false}));
}

TEST(Harness, RoutingVerdicts) {
  ExperimentConfig c = default_config();
  c.perturbations.resize(2);
  std::vector<RunKey> keys{{AidingMode::kPureVio, "1", 1, 0}, {AidingMode::kPureVio, "1", 1, 1}};
  std::vector<CalibrationRun> runs(2);
  runs[0].final_error = {2.0, 0.1, -0.2};
  runs[1].final_error = {-1.0, -0.05, 0.25};
  auto v = check_routing(c, keys, runs);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_TRUE(v[0].axes[0].flagged);
  EXPECT_FALSE(v[0].axes[0].converged);
  EXPECT_NEAR(v[0].axes[0].spread, 3.0, 1e-15);
  EXPECT_TRUE(v[0].axes[2].converged);
  EXPECT_NEAR(v[0].axes[2].mean_abs, 0.225, 1e-15);
  EXPECT_TRUE(v[0].consistent(c.verdict));

  runs[1].final_error.yaw = 0.31;
  EXPECT_FALSE(check_routing(c, keys, runs)[0].consistent(c.verdict));
  runs[1].final_error = {2.2, -0.05, 0.25};  // flagged axis too tight
  EXPECT_FALSE(check_routing(c, keys, runs)[0].consistent(c.verdict));
  runs[1].final_error = {-1.0, -0.05, 0.25};
  runs[1].diverged = true;
  v = check_routing(c, keys, runs);
  EXPECT_EQ(v[0].diverged, 1);
  EXPECT_FALSE(v[0].consistent(c.verdict));
  EXPECT_EQ(to_json(v[0], c.verdict)["axes"]["yaw"]["converged"], false);
}

TEST(Harness, RunFilesAndPlot) {
  ExperimentConfig c = small_config();
  c.modes = {AidingMode::kPureVio};
  c.cases = {1};
  const auto keys = run_matrix(c);
  const auto runs = run_experiment(c, keys, 0);
  const fs::path dir = scratch_dir("plot");
  for (std::size_t i = 0; i < keys.size(); ++i) write_run(runs[i], keys[i], (dir / "runs").string());

  std::vector<RunSeries> series;
  for (const auto& k : keys) series.push_back(read_run((dir / "runs" / (k.name() + ".csv")).string()));
  EXPECT_EQ(series[1].meta["perturbation_index"], 1);
  ASSERT_EQ(series[1].series.size(), runs[1].series.size());
  EXPECT_NEAR(series[1].series.back().error.yaw, runs[1].final_error.yaw, 1e-8);

  write_plot_csv(series, (dir / "plot.csv").string());
  std::ifstream in(dir / "plot.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "t_s,axis,perturbation,err_deg");
  std::map<std::string, std::set<int>> per_axis;
  int rows = 0;
  while (std::getline(in, line)) {
    const auto f = split(line);
    ASSERT_EQ(f.size(), 4u);
    per_axis[f[1]].insert(std::stoi(f[2]));
    ++rows;
  }
  EXPECT_EQ(per_axis.size(), 3u);
  for (const auto& [axis, ids] : per_axis) EXPECT_EQ(ids, (std::set<int>{1, 2, 3})) << axis;
  std::size_t expected = 0;
  for (const auto& r : runs) expected += 3 * r.series.size();
  EXPECT_EQ(static_cast<std::size_t>(rows), expected);

  // A run from another case cannot join the aggregation.
  RunSeries foreign = series.front();
  foreign.meta["case"] = 2;
  series.push_back(foreign);
  EXPECT_THROW(write_plot_csv(series, (dir / "mixed.csv").string()), std::invalid_argument);
  EXPECT_THROW(write_plot_csv({}, (dir / "empty.csv").string()), std::invalid_argument);

  // The command splits a directory per cell.
  std::ostringstream log;
  EXPECT_EQ(cmd_plot({(dir / "runs").string()}, dir.string(), log), 0);
  EXPECT_TRUE(fs::exists(dir / "plots" / "pure_traj1_case1.csv"));
  fs::remove_all(dir);
}

TEST(Harness, ReadRunRejectsBadInput) {
  const fs::path dir = scratch_dir("bad_run");
  fs::create_directories(dir);
  { std::ofstream(dir / "a.csv") << "t_s,roll_err_deg,pitch_err_deg,yaw_err_deg\n0,1,2,3\n"; }
  EXPECT_THROW(read_run((dir / "a.csv").string()), std::invalid_argument);  // no sidecar
  { std::ofstream(dir / "a.json") << "{}"; }
  EXPECT_EQ(read_run((dir / "a.csv").string()).series.size(), 1u);
  { std::ofstream(dir / "b.csv") << "t,x\n"; }
  { std::ofstream(dir / "b.json") << "{}"; }
  EXPECT_THROW(read_run((dir / "b.csv").string()), std::invalid_argument);
  fs::remove_all(dir);
}

TEST(Harness, ExperimentIsDeterministic) {
  ExperimentConfig c = small_config();
  c.cases = {1};
  std::ostringstream log;
  c.out_dir = scratch_dir("exp_a").string();
  c.workers = 3;
  ASSERT_EQ(cmd_experiment(c, log), 0);
  const std::string a_table = slurp(fs::path(c.out_dir) / "tables" / "global_traj1.csv");
  const std::string a_run = slurp(fs::path(c.out_dir) / "runs" / "pure_traj1_case1_p02.csv");
  const std::string a_route = slurp(fs::path(c.out_dir) / "routing.json");
  fs::remove_all(c.out_dir);
  c.out_dir = scratch_dir("exp_b").string();
  c.workers = 1;
  ASSERT_EQ(cmd_experiment(c, log), 0);
  EXPECT_EQ(a_table, slurp(fs::path(c.out_dir) / "tables" / "global_traj1.csv"));
  EXPECT_EQ(a_run, slurp(fs::path(c.out_dir) / "runs" / "pure_traj1_case1_p02.csv"));
  EXPECT_EQ(a_route, slurp(fs::path(c.out_dir) / "routing.json"));
  EXPECT_FALSE(a_table.empty());
  fs::remove_all(c.out_dir);
}

TEST(Harness, SingleCellCalibration) {
  CommandOptions o;
  o.out_dir = scratch_dir("single").string();
  o.trajectory = "1";
  o.case_id = 1;
  o.mode = "pure";
  o.perturbation = Rpy{3, 0, 1};
  const ExperimentConfig c = resolve_config(o);
  EXPECT_EQ(run_matrix(c).size(), 1u);
  std::ostringstream log;
  ASSERT_EQ(cmd_calibrate(c, log), 0);
  const RunSeries r = read_run((fs::path(o.out_dir) / "runs" / "pure_traj1_case1_p01.csv").string());
  EXPECT_EQ(r.series.front().t, 0.0);
  EXPECT_NEAR(r.series.back().t, 60.0, 0.01);
  EXPECT_EQ(r.meta["perturbation_deg"][0], 3.0);
  fs::remove_all(o.out_dir);
}

TEST(Harness, ResolveConfigOverrides) {
  CommandOptions o;
  o.seed = 9;
  o.workers = 2;
  o.mode = "global";
  const ExperimentConfig c = resolve_config(o);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.workers, 2);
  EXPECT_EQ(c.modes, (std::vector<AidingMode>{AidingMode::kGlobalPose}));
  EXPECT_EQ(c.cases.size(), 3u);
  o.perturbation = Rpy{7, 0, 0};
  EXPECT_THROW(resolve_config(o), std::invalid_argument);
  o.perturbation.reset();
  o.case_id = 5;
  EXPECT_THROW(resolve_config(o), std::invalid_argument);
}

TEST(Harness, SimulateDumpsStreams) {
  ExperimentConfig c = default_config();
  c.trajectories = {"1"};
  c.cases = {1};
  c.out_dir = scratch_dir("sim_a").string();
  std::ostringstream log;
  ASSERT_EQ(cmd_simulate(c, log), 0);
  const fs::path d = fs::path(c.out_dir) / "sim" / "traj1_case1";
  auto lines = [](const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string l; std::getline(in, l);) ++n;
    return n;
  };
  EXPECT_EQ(lines(d / "imu.csv"), 24001u);
  EXPECT_EQ(lines(d / "global_pose.csv"), 601u);
  EXPECT_EQ(lines(d / "features.csv"), 51u);
  EXPECT_EQ(lines(d / "truth.csv"), 24001u);
  std::set<std::string> epochs;
  {
    std::ifstream in(d / "camera.csv");
    std::string l;
    std::getline(in, l);
    EXPECT_EQ(l, "t_s,feature_id,u,v");
    while (std::getline(in, l)) epochs.insert(l.substr(0, l.find(',')));
  }
  EXPECT_EQ(epochs.size(), 600u);

  const std::string first = slurp(d / "camera.csv");
  const std::string other = c.out_dir;
  c.out_dir = scratch_dir("sim_b").string();
  ASSERT_EQ(cmd_simulate(c, log), 0);
  EXPECT_EQ(first, slurp(fs::path(c.out_dir) / "sim" / "traj1_case1" / "camera.csv"));
  EXPECT_EQ(slurp(d / "imu.csv"), slurp(fs::path(c.out_dir) / "sim" / "traj1_case1" / "imu.csv"));
  fs::remove_all(other);
  fs::remove_all(c.out_dir);
}

TEST(Harness, AnalyzeReportsAndFails) {
  ExperimentConfig c = default_config();
  c.trajectories = {"2"};
  c.cases = {1};
  c.out_dir = scratch_dir("analyze").string();
  std::ostringstream log;
  EXPECT_EQ(cmd_analyze(c, log), 0);
  std::ifstream in(fs::path(c.out_dir) / "analysis" / "pure_traj2_case1.json");
  nlohmann::json j;
  in >> j;
  EXPECT_EQ(j["pass"], true);
  EXPECT_EQ(j["projected"]["extrinsic_null_dim"], 3);
  EXPECT_NE(log.str().find("PASS"), std::string::npos);

  c.analysis.residual_tol = 1e-30;  // unreachable threshold
  EXPECT_EQ(cmd_analyze(c, log), 1);
  EXPECT_NE(log.str().find("FAIL"), std::string::npos);
  fs::remove_all(c.out_dir);
}

}  // namespace
}  // namespace vio_obs
