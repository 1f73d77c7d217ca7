#include "vio_obs/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include <omp.h>

namespace vio_obs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kAxisNames[3] = {"roll", "pitch", "yaw"};

// FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t string_salt(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t cell_seed(const ExperimentConfig& config, const std::string& trajectory,
                        int case_id) {
  return mix_seed(mix_seed(config.seed, string_salt(trajectory)),
                  static_cast<std::uint64_t>(case_id));
}

double axis(const Rpy& r, int i) { return i == 0 ? r.roll : (i == 1 ? r.pitch : r.yaw); }

Rpy abs_rpy(const Rpy& r) { return {std::abs(r.roll), std::abs(r.pitch), std::abs(r.yaw)}; }

std::string cell_name(AidingMode mode, const std::string& trajectory, int case_id) {
  return to_string(mode) + "_traj" + trajectory + "_case" + std::to_string(case_id);
}

std::ofstream open_for_write(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out = open_for_write(path);
  out << j.dump(2) << '\n';
}

std::string format_triple(const Rpy& r) {
  std::ostringstream s;
  s << '(' << r.roll << ',' << r.pitch << ',' << r.yaw << ')';
  return s.str();
}

// Runs of one (mode, trajectory, case), in key order.
using CellKey = std::tuple<AidingMode, std::string, int>;
std::map<CellKey, std::vector<std::size_t>> group_by_cell(const std::vector<RunKey>& keys) {
  std::map<CellKey, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    cells[{keys[i].mode, keys[i].trajectory, keys[i].case_id}].push_back(i);
  }
  return cells;
}

}  // namespace

std::string RunKey::name() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "_p%02d", perturbation + 1);
  return cell_name(mode, trajectory, case_id) + buf;
}

std::vector<RunKey> run_matrix(const ExperimentConfig& config) {
  std::vector<RunKey> keys;
  for (AidingMode mode : config.modes) {
    for (const auto& traj : config.trajectories) {
      for (int c : config.cases) {
        for (int p = 0; p < static_cast<int>(config.perturbations.size()); ++p) {
          keys.push_back({mode, traj, c, p});
        }
      }
    }
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  return keys;
}

FeatureMap feature_map_for(const ExperimentConfig& config, const std::string& trajectory,
                           int case_id) {
  return generate_features(make_trajectory(trajectory, config.duration), config.feature_count,
                           config.envelope, make_rig(config, case_id),
                           cell_seed(config, trajectory, case_id));
}

// Both aiding modes share the noise stream of a cell, so they differ only in aiding.
std::uint64_t run_seed(const ExperimentConfig& config, const RunKey& key) {
  return mix_seed(cell_seed(config, key.trajectory, key.case_id),
                  1000 + static_cast<std::uint64_t>(key.perturbation));
}

RunSetup make_run_setup(const ExperimentConfig& config, const RunKey& key, const FeatureMap& map) {
  if (key.perturbation < 0 || key.perturbation >= static_cast<int>(config.perturbations.size())) {
    throw std::invalid_argument("perturbation index out of range");
  }
  RunSetup s;
  s.mode = key.mode;
  s.trajectory_id = key.trajectory;
  s.case_id = key.case_id;
  s.trajectory = make_trajectory(key.trajectory, config.duration);
  s.map = map;
  s.rig = make_rig(config, key.case_id);
  s.sensors = config.sensors;
  s.perturbation = config.perturbations[key.perturbation];
  s.seed = run_seed(config, key);
  s.options = config.filter;
  s.options.perturbation_limit_deg = config.perturbation_limit_deg;
  return s;
}

namespace {

std::map<std::pair<std::string, int>, FeatureMap> feature_maps(const ExperimentConfig& config,
                                                              const std::vector<RunKey>& keys) {
  std::map<std::pair<std::string, int>, FeatureMap> maps;
  for (const auto& k : keys) {
    const auto id = std::make_pair(k.trajectory, k.case_id);
    if (!maps.count(id)) maps.emplace(id, feature_map_for(config, k.trajectory, k.case_id));
  }
  return maps;
}

}  // namespace

std::vector<CalibrationRun> run_experiment(const ExperimentConfig& config,
                                           const std::vector<RunKey>& keys, int workers) {
  const auto maps = feature_maps(config, keys);
  std::vector<CalibrationRun> runs(keys.size());
  std::vector<std::exception_ptr> errors(keys.size());
  const int threads = workers > 0 ? workers : omp_get_max_threads();
  const long n = static_cast<long>(keys.size());

  // Every run owns its filter and streams; the maps are shared read-only.
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (long i = 0; i < n; ++i) {
    try {
      const RunKey& k = keys[i];
      runs[i] = run_calibration(make_run_setup(config, k, maps.at({k.trajectory, k.case_id})));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return runs;
}

std::vector<CalibrationRun> run_experiment_serial(const ExperimentConfig& config,
                                                  const std::vector<RunKey>& keys) {
  const auto maps = feature_maps(config, keys);
  std::vector<CalibrationRun> runs;
  runs.reserve(keys.size());
  for (const auto& k : keys) {
    runs.push_back(run_calibration(make_run_setup(config, k, maps.at({k.trajectory, k.case_id}))));
  }
  return runs;
}

std::vector<ResultTable> make_result_tables(const ExperimentConfig& config,
                                            const std::vector<RunKey>& keys,
                                            const std::vector<CalibrationRun>& runs) {
  if (keys.size() != runs.size()) throw std::invalid_argument("keys and runs differ in size");

  std::map<std::pair<AidingMode, std::string>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    groups[{keys[i].mode, keys[i].trajectory}].push_back(i);
  }

  std::vector<ResultTable> tables;
  for (const auto& [id, members] : groups) {
    std::set<int> cases;
    std::set<int> perts;
    for (auto i : members) {
      cases.insert(keys[i].case_id);
      perts.insert(keys[i].perturbation);
    }
    ResultTable t;
    t.mode = id.first;
    t.trajectory = id.second;
    t.cases.assign(cases.begin(), cases.end());
    const std::vector<int> rows(perts.begin(), perts.end());
    for (int p : rows) t.perturbations.push_back(config.perturbations.at(p));

    const std::size_t nr = rows.size();
    const std::size_t nc = t.cases.size();
    std::vector<std::vector<int>> index(nr, std::vector<int>(nc, -1));
    for (auto i : members) {
      const auto r = std::lower_bound(rows.begin(), rows.end(), keys[i].perturbation) - rows.begin();
      const auto c =
          std::lower_bound(t.cases.begin(), t.cases.end(), keys[i].case_id) - t.cases.begin();
      index[r][c] = static_cast<int>(i);
    }

    t.cells.assign(nr, std::vector<Rpy>(nc));
    t.diverged.assign(nr, std::vector<bool>(nc, false));
    t.average.assign(nc, Rpy{});
    for (std::size_t c = 0; c < nc; ++c) {
      double sum[3] = {0.0, 0.0, 0.0};
      for (std::size_t r = 0; r < nr; ++r) {
        if (index[r][c] < 0) {
          throw std::invalid_argument("table " + to_string(t.mode) + "_traj" + t.trajectory +
                                      " is missing a run");
        }
        const CalibrationRun& run = runs[index[r][c]];
        t.cells[r][c] = abs_rpy(run.final_error);
        t.diverged[r][c] = run.diverged;
        for (int a = 0; a < 3; ++a) sum[a] += axis(t.cells[r][c], a);
      }
      t.average[c] = {sum[0] / nr, sum[1] / nr, sum[2] / nr};
    }
    tables.push_back(std::move(t));
  }
  return tables;
}

void write_result_table_csv(const ResultTable& table, const std::string& path) {
  std::ofstream out = open_for_write(path);
  out << "perturbation";
  for (int c : table.cases) {
    for (const char* a : kAxisNames) out << ",c" << c << '_' << a;
  }
  out << '\n' << std::setprecision(12);
  for (std::size_t r = 0; r < table.perturbations.size(); ++r) {
    out << '"' << format_triple(table.perturbations[r]) << '"';
    for (std::size_t c = 0; c < table.cases.size(); ++c) {
      for (int a = 0; a < 3; ++a) {
        out << ',' << axis(table.cells[r][c], a);
        if (table.diverged[r][c]) out << '*';
      }
    }
    out << '\n';
  }
  out << "Avg";
  for (const auto& avg : table.average) {
    for (int a = 0; a < 3; ++a) out << ',' << axis(avg, a);
  }
  out << '\n';
}

bool CellVerdict::consistent(const VerdictSettings& v) const {
  for (const auto& a : axes) {
    if (!a.flagged && !a.converged) return false;
    if (a.flagged && (a.converged || a.spread < v.spread_deg)) return false;
  }
  return true;
}

std::array<bool, 3> predicted_flags(const ExperimentConfig& config, AidingMode mode,
                                    const std::string& trajectory, int case_id) {
  const Trajectory traj = make_trajectory(trajectory, config.duration);
  if (!traj.is_straight_line()) return {false, false, false};
  // Constant velocity leaves the whole rotation unobservable without global pose.
  if (mode == AidingMode::kPureVio &&
      traj.kind() == TrajectoryKind::kStraightConstantVelocity) {
    return {true, true, true};
  }
  return classify_unobservable_dof(traj.direction(), case_rotation(config, case_id),
                                   config.analysis.classify_tol)
      .flags;
}

std::vector<CellVerdict> check_routing(const ExperimentConfig& config,
                                       const std::vector<RunKey>& keys,
                                       const std::vector<CalibrationRun>& runs) {
  if (keys.size() != runs.size()) throw std::invalid_argument("keys and runs differ in size");
  std::vector<CellVerdict> verdicts;
  for (const auto& [cell, members] : group_by_cell(keys)) {
    CellVerdict v;
    std::tie(v.mode, v.trajectory, v.case_id) = cell;
    v.runs = static_cast<int>(members.size());
    const auto flags = predicted_flags(config, v.mode, v.trajectory, v.case_id);
    for (int a = 0; a < 3; ++a) {
      AxisVerdict& av = v.axes[a];
      av.flagged = flags[a];
      av.converged = true;
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (auto i : members) {
        const double e = axis(runs[i].final_error, a);
        av.mean_abs += std::abs(e) / members.size();
        av.max_abs = std::max(av.max_abs, std::abs(e));
        lo = std::min(lo, e);
        hi = std::max(hi, e);
        if (runs[i].diverged || !(std::abs(e) <= config.verdict.converged_deg)) {
          av.converged = false;
        }
      }
      av.spread = hi - lo;
    }
    for (auto i : members) v.diverged += runs[i].diverged ? 1 : 0;
    verdicts.push_back(v);
  }
  return verdicts;
}

json to_json(const CellVerdict& v, const VerdictSettings& settings) {
  json j;
  j["mode"] = to_string(v.mode);
  j["trajectory"] = v.trajectory;
  j["case"] = v.case_id;
  j["runs"] = v.runs;
  j["diverged"] = v.diverged;
  for (int a = 0; a < 3; ++a) {
    const AxisVerdict& av = v.axes[a];
    j["axes"][kAxisNames[a]] = {{"flagged", av.flagged},
                                {"converged", av.converged},
                                {"mean_abs_deg", av.mean_abs},
                                {"max_abs_deg", av.max_abs},
                                {"spread_deg", av.spread}};
  }
  j["consistent"] = v.consistent(settings);
  return j;
}

bool LemmaCheck::pass() const {
  switch (compare) {
    case Compare::kBelow: return value < threshold;
    case Compare::kAbove: return value > threshold;
    case Compare::kEqual: return value == threshold;
  }
  return false;
}

bool AnalysisCase::pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const LemmaCheck& c) { return c.pass(); });
}

AnalysisScenario make_scenario(const ExperimentConfig& config, const std::string& trajectory,
                               int case_id) {
  AnalysisScenario s;
  s.trajectory = make_trajectory(trajectory, config.duration);
  s.rig = make_rig(config, case_id);
  s.gravity = config.sensors.gravity;
  FeatureEnvelope env = config.envelope;
  env.view_rate_hz = config.analysis.feature_view_rate_hz;
  s.features = generate_features(s.trajectory, config.analysis.features, env, s.rig,
                                 mix_seed(cell_seed(config, trajectory, case_id), 7))
                   .points;
  s.times = keyframe_times(config.duration, config.analysis.poses);
  return s;
}

AnalysisCase analyze_case(const ExperimentConfig& config, AidingMode mode,
                          const std::string& trajectory, int case_id) {
  const auto t0 = std::chrono::steady_clock::now();
  const AnalysisSettings& as = config.analysis;
  TolPolicy policy = as.policy;

  AnalysisCase out;
  out.mode = mode;
  out.trajectory = trajectory;
  out.case_id = case_id;

  const AnalysisScenario sc = make_scenario(config, trajectory, case_id);
  const ObservabilityMatrix M = build_stack(sc, mode, StackForm::kProjected);
  const ObservabilityMatrix G = build_stack(sc, mode, StackForm::kGamma);
  out.skipped_observations = M.skipped_observations;
  out.report = null_space(M, policy);
  out.gamma_report = null_space(G, policy);

  const KinematicSample s1 = sc.trajectory.evaluate(sc.times.front());
  const bool straight = sc.trajectory.is_straight_line();
  if (straight) {
    out.report.candidates.push_back(candidate_residual(
        M.matrix,
        candidate_n1(sc.trajectory.direction(), sc.rig.R_CI, s1.R_IG, sc.features, s1.p, M.layout),
        "N1", policy));
    out.classification = classify_unobservable_dof(sc.trajectory.direction(), sc.rig.R_CI,
                                                   as.classify_tol);
  }
  out.report.candidates.push_back(candidate_residual(
      M.matrix, candidate_n2(s1.R_IG, sc.rig.R_CI, sc.gravity, M.layout), "N2", policy));
  out.report.candidates.push_back(candidate_residual(
      M.matrix, gauge_directions(s1, sc.features, sc.gravity, M.layout), "gauge", policy));

  auto residual = [&](const std::string& name) {
    for (const auto& c : out.report.candidates) {
      if (c.name == name) return c.max();
    }
    throw std::logic_error("missing candidate " + name);
  };
  using C = LemmaCheck::Compare;
  const double ext_dim = out.report.extrinsic_null_dim;
  const bool constant_velocity = sc.trajectory.kind() == TrajectoryKind::kStraightConstantVelocity;

  if (straight && mode == AidingMode::kPureVio) {
    out.checks.push_back({"N1 residual", residual("N1"), as.residual_tol, C::kBelow});
    if (constant_velocity) {
      out.checks.push_back({"N2 residual", residual("N2"), as.residual_tol, C::kBelow});
      out.checks.push_back({"extrinsic null dim", ext_dim, 3.0, C::kEqual});
    }
  } else if (straight) {
    out.checks.push_back({"N1 residual", residual("N1"), as.residual_tol, C::kBelow});
    if (constant_velocity) {
      out.checks.push_back({"N2 rejected", residual("N2"), as.n2_reject_tol, C::kAbove});
      out.checks.push_back({"extrinsic null dim", ext_dim, 1.0, C::kEqual});
    }
  } else {
    out.checks.push_back({"extrinsic null dim", ext_dim, 0.0, C::kEqual});
    if (mode == AidingMode::kPureVio) {
      out.checks.push_back({"gauge residual", residual("gauge"), as.residual_tol, C::kBelow});
      out.checks.push_back(
          {"null dim", static_cast<double>(out.report.null_dim()), 4.0, C::kEqual});
    }
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

json to_json(const AnalysisCase& r) {
  json j;
  j["mode"] = to_string(r.mode);
  j["trajectory"] = r.trajectory;
  j["case"] = r.case_id;
  j["seconds"] = r.seconds;
  j["skipped_observations"] = r.skipped_observations;
  j["projected"] = to_json(r.report);
  j["gamma"] = to_json(r.gamma_report);
  j["classification"] = {
      {"axis", {r.classification.axis.x(), r.classification.axis.y(), r.classification.axis.z()}},
      {"flags",
       {{"roll", r.classification.flags[0]},
        {"pitch", r.classification.flags[1]},
        {"yaw", r.classification.flags[2]}}}};
  j["checks"] = json::array();
  for (const auto& c : r.checks) {
    const char* op = c.compare == LemmaCheck::Compare::kBelow
                         ? "<"
                         : (c.compare == LemmaCheck::Compare::kAbove ? ">" : "==");
    j["checks"].push_back({{"name", c.name},
                           {"value", c.value},
                           {"op", op},
                           {"threshold", c.threshold},
                           {"pass", c.pass()}});
  }
  j["pass"] = r.pass();
  return j;
}

RunSeries read_run(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  const fs::path sidecar = fs::path(path).replace_extension(".json");
  std::ifstream js(sidecar);
  if (!js) throw std::invalid_argument("missing metadata " + sidecar.string());

  RunSeries r;
  try {
    js >> r.meta;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(sidecar.string() + ": " + e.what());
  }
  std::string line;
  std::getline(in, line);
  if (line != "t_s,roll_err_deg,pitch_err_deg,yaw_err_deg") {
    throw std::invalid_argument(path + ": not a run CSV");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ErrorSample s;
    char c1, c2, c3;
    std::istringstream ls(line);
    if (!(ls >> s.t >> c1 >> s.error.roll >> c2 >> s.error.pitch >> c3 >> s.error.yaw) ||
        c1 != ',' || c2 != ',' || c3 != ',') {
      throw std::invalid_argument(path + ": malformed row '" + line + "'");
    }
    r.series.push_back(s);
  }
  return r;
}

void write_run(const CalibrationRun& run, const RunKey& key, const std::string& dir) {
  fs::create_directories(dir);
  const std::string stem = (fs::path(dir) / key.name()).string();
  write_run_csv(run, stem + ".csv");
  json meta = run_metadata(run);
  meta["key"] = key.name();
  meta["perturbation_index"] = key.perturbation;
  write_json(meta, stem + ".json");
}

void write_plot_csv(const std::vector<RunSeries>& runs, const std::string& path) {
  if (runs.empty()) throw std::invalid_argument("no runs to aggregate");
  auto cell = [](const json& m) {
    return m.at("mode").get<std::string>() + "_traj" + m.at("trajectory").get<std::string>() +
           "_case" + std::to_string(m.at("case").get<int>());
  };
  const std::string first = cell(runs.front().meta);
  std::vector<std::pair<int, const RunSeries*>> order;
  for (const auto& r : runs) {
    if (cell(r.meta) != first) {
      throw std::invalid_argument("mixed runs in one aggregation: " + first + " and " +
                                  cell(r.meta));
    }
    order.emplace_back(r.meta.at("perturbation_index").get<int>() + 1, &r);
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  std::ofstream out = open_for_write(path);
  out << "t_s,axis,perturbation,err_deg\n" << std::setprecision(10);
  for (const auto& [id, r] : order) {
    for (int a = 0; a < 3; ++a) {
      for (const auto& s : r->series) {
        out << s.t << ',' << kAxisNames[a] << ',' << id << ',' << axis(s.error, a) << '\n';
      }
    }
  }
}

void write_dataset(const SimulatedDataset& data, const FeatureMap& map, const Trajectory& traj,
                   const std::string& dir) {
  fs::create_directories(dir);
  const fs::path d(dir);
  {
    std::ofstream out = open_for_write((d / "imu.csv").string());
    out << "t_s,gyro_x,gyro_y,gyro_z,accel_x,accel_y,accel_z\n" << std::setprecision(12);
    for (const auto& s : data.imu) {
      out << s.t << ',' << s.gyro.x() << ',' << s.gyro.y() << ',' << s.gyro.z() << ','
          << s.accel.x() << ',' << s.accel.y() << ',' << s.accel.z() << '\n';
    }
  }
  {
    std::ofstream out = open_for_write((d / "camera.csv").string());
    out << "t_s,feature_id,u,v\n" << std::setprecision(12);
    for (const auto& f : data.camera) {
      for (const auto& o : f.observations) {
        out << f.t << ',' << o.id << ',' << o.uv.x() << ',' << o.uv.y() << '\n';
      }
    }
  }
  if (!data.global.empty()) {
    std::ofstream out = open_for_write((d / "global_pose.csv").string());
    out << "t_s,p_x,p_y,p_z,q_w,q_x,q_y,q_z\n" << std::setprecision(12);
    for (const auto& g : data.global) {
      const auto& o = g.observation;
      const auto& q = o.R_IG.quaternion();
      out << o.t << ',' << o.p.x() << ',' << o.p.y() << ',' << o.p.z() << ',' << q.w() << ','
          << q.x() << ',' << q.y() << ',' << q.z() << '\n';
    }
  }
  {
    std::ofstream out = open_for_write((d / "features.csv").string());
    out << "feature_id,x,y,z\n" << std::setprecision(12);
    for (std::size_t i = 0; i < map.points.size(); ++i) {
      const Vec3& p = map.points[i];
      out << i << ',' << p.x() << ',' << p.y() << ',' << p.z() << '\n';
    }
  }
  {
    std::ofstream out = open_for_write((d / "truth.csv").string());
    out << "t_s,p_x,p_y,p_z,v_x,v_y,v_z,q_w,q_x,q_y,q_z\n" << std::setprecision(12);
    for (const auto& s : data.imu) {
      const KinematicSample k = traj.evaluate(s.t);
      const auto& q = k.R_IG.quaternion();
      out << s.t << ',' << k.p.x() << ',' << k.p.y() << ',' << k.p.z() << ',' << k.v.x() << ','
          << k.v.y() << ',' << k.v.z() << ',' << q.w() << ',' << q.x() << ',' << q.y() << ','
          << q.z() << '\n';
    }
  }
}

ExperimentConfig resolve_config(const CommandOptions& o) {
  ExperimentConfig c = o.config_path.empty() ? default_config() : load_config(o.config_path);
  if (!o.out_dir.empty()) c.out_dir = o.out_dir;
  if (o.seed) c.seed = *o.seed;
  if (o.workers) c.workers = *o.workers;
  if (o.trajectory) c.trajectories = {*o.trajectory};
  if (o.case_id) c.cases = {*o.case_id};
  if (o.mode) c.modes = {parse_mode(*o.mode)};
  if (o.perturbation) c.perturbations = {*o.perturbation};
  c.filter.perturbation_limit_deg = c.perturbation_limit_deg;
  validate(c);
  return c;
}

int cmd_analyze(const ExperimentConfig& config, std::ostream& log) {
  bool all = true;
  for (AidingMode mode : config.modes) {
    for (const auto& traj : config.trajectories) {
      for (int c : config.cases) {
        const AnalysisCase r = analyze_case(config, mode, traj, c);
        const std::string name = cell_name(mode, traj, c);
        write_json(to_json(r), (fs::path(config.out_dir) / "analysis" / (name + ".json")).string());
        log << name << ": rank " << r.report.rank << "/" << r.report.cols << ", null dim "
            << r.report.null_dim() << ", extrinsic null dim " << r.report.extrinsic_null_dim
            << " (" << std::fixed << std::setprecision(2) << r.seconds << " s)\n"
            << std::defaultfloat;
        for (const auto& chk : r.checks) {
          log << "  " << (chk.pass() ? "PASS" : "FAIL") << ' ' << chk.name << " = "
              << std::setprecision(3) << chk.value << " (threshold " << chk.threshold << ")\n";
        }
        all = all && r.pass();
      }
    }
  }
  return all ? 0 : 1;
}

int cmd_simulate(const ExperimentConfig& config, std::ostream& log) {
  for (const auto& traj_id : config.trajectories) {
    for (int c : config.cases) {
      const Trajectory traj = make_trajectory(traj_id, config.duration);
      const FeatureMap map = feature_map_for(config, traj_id, c);
      const RunKey key{AidingMode::kGlobalPose, traj_id, c, 0};
      const SimulatedDataset data = simulate_dataset(traj, map, make_rig(config, c),
                                                     config.sensors, true, run_seed(config, key));
      const std::string dir =
          (fs::path(config.out_dir) / "sim" / ("traj" + traj_id + "_case" + std::to_string(c)))
              .string();
      write_dataset(data, map, traj, dir);
      log << dir << ": " << data.imu.size() << " IMU samples, " << data.camera.size()
          << " camera epochs, " << data.global.size() << " global poses, " << map.points.size()
          << " features\n";
    }
  }
  return 0;
}

int cmd_calibrate(const ExperimentConfig& config, std::ostream& log) {
  const RunKey key{config.modes.front(), config.trajectories.front(), config.cases.front(), 0};
  const CalibrationRun run = run_calibration(
      make_run_setup(config, key, feature_map_for(config, key.trajectory, key.case_id)));
  write_run(run, key, (fs::path(config.out_dir) / "runs").string());
  log << key.name() << " perturbation " << format_triple(run.perturbation) << " -> final error "
      << std::fixed << std::setprecision(3) << run.final_error.roll << ' ' << run.final_error.pitch
      << ' ' << run.final_error.yaw << " deg at " << run.final_time << " s"
      << (run.diverged ? " (diverged: " + run.divergence_reason + ")" : std::string()) << '\n'
      << std::defaultfloat;
  return 0;
}

int cmd_experiment(const ExperimentConfig& config, std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<RunKey> keys = run_matrix(config);
  const std::vector<CalibrationRun> runs = run_experiment(config, keys, config.workers);
  const fs::path out(config.out_dir);

  for (std::size_t i = 0; i < keys.size(); ++i) write_run(runs[i], keys[i], (out / "runs").string());
  for (const auto& t : make_result_tables(config, keys, runs)) {
    const std::string path =
        (out / "tables" / (to_string(t.mode) + "_traj" + t.trajectory + ".csv")).string();
    write_result_table_csv(t, path);
    log << path << '\n';
  }

  const auto verdicts = check_routing(config, keys, runs);
  json routing = json::array();
  int consistent = 0;
  for (const auto& v : verdicts) {
    routing.push_back(to_json(v, config.verdict));
    const bool ok = v.consistent(config.verdict);
    consistent += ok ? 1 : 0;
    log << cell_name(v.mode, v.trajectory, v.case_id) << ':';
    for (int a = 0; a < 3; ++a) {
      log << ' ' << kAxisNames[a] << ' ' << std::fixed << std::setprecision(3)
          << v.axes[a].mean_abs << (v.axes[a].flagged ? " (flagged)" : "");
    }
    log << std::defaultfloat << (v.diverged ? ", diverged " + std::to_string(v.diverged) : "")
        << (ok ? "" : "  ROUTING MISMATCH") << '\n';
  }
  write_json(routing, (out / "routing.json").string());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log << keys.size() << " runs, " << consistent << "/" << verdicts.size()
      << " cells consistent with the predicted flags, " << std::fixed << std::setprecision(1)
      << secs << " s\n"
      << std::defaultfloat;
  return 0;
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& out_dir,
             std::ostream& log) {
  if (inputs.empty()) throw std::invalid_argument("plot needs at least one run CSV or directory");
  std::vector<std::string> files;
  bool from_dir = false;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      from_dir = true;
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.path().extension() == ".csv" && fs::exists(fs::path(e.path()).replace_extension(".json"))) {
          files.push_back(e.path().string());
        }
      }
    } else {
      files.push_back(in);
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::invalid_argument("no run CSVs found");

  std::map<std::string, std::vector<RunSeries>> groups;
  for (const auto& f : files) {
    RunSeries r = read_run(f);
    // Explicit file lists form one aggregation; directories are split per cell.
    const std::string group =
        from_dir ? r.meta.at("mode").get<std::string>() + "_traj" +
                       r.meta.at("trajectory").get<std::string>() + "_case" +
                       std::to_string(r.meta.at("case").get<int>())
                 : std::string();
    groups[group].push_back(std::move(r));
  }
  for (auto& [group, runs] : groups) {
    std::string name = group;
    if (name.empty()) {
      const json& m = runs.front().meta;
      name = m.at("mode").get<std::string>() + "_traj" + m.at("trajectory").get<std::string>() +
             "_case" + std::to_string(m.at("case").get<int>());
    }
    const std::string path = (fs::path(out_dir) / "plots" / (name + ".csv")).string();
    write_plot_csv(runs, path);
    log << path << ": " << runs.size() << " runs\n";
  }
  return 0;
}

}  // namespace vio_obs
