#include "vio_obs/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

namespace vio_obs {

namespace {

using nlohmann::json;

Mat3 case_matrix(int id) {
  const double h = std::sqrt(0.5);
  Mat3 m;
  switch (id) {
    case 1: m.setIdentity(); break;
    case 2: m << h, h, 0.0, -h, h, 0.0, 0.0, 0.0, 1.0; break;
    default: m << 0.5, h, -0.5, -0.5, h, 0.5, h, 0.0, h; break;
  }
  return m;
}

// Field visitors shared by the reader and the writer.
template <class F>
void visit(SensorConfig& s, F&& f) {
  f("imu_rate_hz", s.imu_rate_hz);
  f("camera_rate_hz", s.camera_rate_hz);
  f("global_rate_hz", s.global_rate_hz);
  f("pixel_sigma_px", s.pixel_sigma_px);
  f("focal_px", s.focal_px);
  f("global_sigma_p", s.global_sigma_p);
  f("global_sigma_theta_rad", s.global_sigma_theta);
  f("gyro_noise_density", s.imu_noise.gyro_density);
  f("accel_noise_density", s.imu_noise.accel_density);
  f("gyro_bias_random_walk", s.imu_noise.gyro_bias_rw);
  f("accel_bias_random_walk", s.imu_noise.accel_bias_rw);
  f("gyro_bias", s.imu_bias.gyro);
  f("accel_bias", s.imu_bias.accel);
  f("gravity", s.gravity);
}

template <class F>
void visit(FeatureEnvelope& e, F&& f) {
  f("along_margin", e.along_margin);
  f("lateral_half_width", e.lateral_half_width);
  f("height_min", e.height_min);
  f("height_max", e.height_max);
  f("min_parallax_deg", e.min_parallax_deg);
  f("view_rate_hz", e.view_rate_hz);
  f("max_attempts_per_feature", e.max_attempts_per_feature);
}

template <class F>
void visit(FilterOptions& o, F&& f) {
  f("sigma_theta_deg", o.priors.sigma_theta_deg);
  f("sigma_bg", o.priors.sigma_bg);
  f("sigma_v", o.priors.sigma_v);
  f("sigma_ba", o.priors.sigma_ba);
  f("sigma_p", o.priors.sigma_p);
  f("sigma_ext_deg", o.priors.sigma_ext_deg);
  f("chi2_gate", o.chi2_gate);
  f("bearing_noise_scale", o.bearing_noise_scale);
  f("max_features", o.max_features);
  f("update_iterations", o.update_iterations);
  f("max_rejections", o.max_rejections);
  f("min_parallax_deg", o.min_parallax_deg);
  f("depth_sigma_ratio", o.depth_sigma_ratio);
  f("max_track_views", o.max_track_views);
  f("divergence_limit", o.divergence_limit);
  f("check_covariance", o.check_covariance);
}

template <class F>
void visit(AnalysisSettings& a, F&& f) {
  f("poses", a.poses);
  f("features", a.features);
  f("feature_view_rate_hz", a.feature_view_rate_hz);
  f("residual_tol", a.residual_tol);
  f("n2_reject_tol", a.n2_reject_tol);
  f("classify_tol", a.classify_tol);
  f("relative_tol", a.policy.relative);
  f("projection_tol", a.policy.projection_tol);
}

template <class F>
void visit(VerdictSettings& v, F&& f) {
  f("converged_deg", v.converged_deg);
  f("spread_deg", v.spread_deg);
}

void read_value(const json& j, Vec3& v) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-vector");
  for (int i = 0; i < 3; ++i) v(i) = j.at(i).get<double>();
}
template <class T>
void read_value(const json& j, T& v) {
  v = j.get<T>();
}

json write_value(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
template <class T>
json write_value(const T& v) {
  return v;
}

template <class T>
void read_section(const json& j, const std::string& name, T& target) {
  if (!j.is_object()) throw std::invalid_argument("section '" + name + "' must be an object");
  std::set<std::string> known;
  visit(target, [&](const char* key, auto& field) {
    known.insert(key);
    if (auto it = j.find(key); it != j.end()) {
      try {
        read_value(*it, field);
      } catch (const std::exception& e) {
        throw std::invalid_argument(name + "." + key + ": " + e.what());
      }
    }
  });
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown key " + name + "." + key);
  }
}

template <class T>
json write_section(T copy) {
  json j = json::object();
  visit(copy, [&](const char* key, auto& field) { j[key] = write_value(field); });
  return j;
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig c;
  for (int id = 1; id <= 3; ++id) c.case_rotations.push_back(case_matrix(id));
  c.perturbations = {{2, -4, -5}, {-4, 3, 3}, {5, -2, -1}, {-1, -5, -3}, {3, 0, 1}, {1, 2, -4},
                     {0, 5, 2},   {-3, 4, 0}, {-5, 1, 4}, {4, -1, 5},  {-2, -3, -2}};
  c.sensors.imu_bias.gyro = Vec3(0.002, -0.001, 0.0015);
  c.sensors.imu_bias.accel = Vec3(0.02, -0.01, 0.015);
  return c;
}

AidingMode parse_mode(const std::string& name) {
  if (name == "pure") return AidingMode::kPureVio;
  if (name == "global") return AidingMode::kGlobalPose;
  throw std::invalid_argument("unknown mode '" + name + "' (expected pure or global)");
}

Trajectory make_trajectory(const std::string& id, double duration) {
  if (id == "1") return make_trajectory_1(duration);
  if (id == "2") return make_trajectory_2(duration);
  if (id == "generic") return make_generic_excitation(duration);
  throw std::invalid_argument("unknown trajectory '" + id + "' (expected 1, 2 or generic)");
}

Rotation case_rotation(const ExperimentConfig& config, int case_id) {
  if (case_id < 1 || case_id > static_cast<int>(config.case_rotations.size())) {
    throw std::invalid_argument("unknown case " + std::to_string(case_id));
  }
  return Rotation::from_matrix(config.case_rotations[case_id - 1]);
}

CameraRig make_rig(const ExperimentConfig& config, int case_id) {
  CameraRig rig;
  rig.R_CI = case_rotation(config, case_id);
  rig.p_CI = config.p_CI;
  rig.fov_deg = config.fov_deg;
  return rig;
}

void validate(const ExperimentConfig& c) {
  if (c.modes.empty()) throw std::invalid_argument("no aiding modes configured");
  if (c.trajectories.empty()) throw std::invalid_argument("no trajectories configured");
  for (const auto& t : c.trajectories) make_trajectory(t, 1.0);
  if (c.cases.empty()) throw std::invalid_argument("no cases configured");
  for (std::size_t i = 0; i < c.case_rotations.size(); ++i) {
    const Mat3& m = c.case_rotations[i];
    const double err = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (!(err <= 1e-10) || !(m.determinant() > 0.0)) {
      throw std::invalid_argument("case " + std::to_string(i + 1) +
                                  " rotation is not orthonormal within 1e-10");
    }
  }
  for (int id : c.cases) case_rotation(c, id);
  if (c.perturbations.empty()) throw std::invalid_argument("no perturbations configured");
  if (c.perturbation_limit_deg > 0.0) {
    for (const auto& p : c.perturbations) {
      if (std::abs(p.roll) > c.perturbation_limit_deg ||
          std::abs(p.pitch) > c.perturbation_limit_deg ||
          std::abs(p.yaw) > c.perturbation_limit_deg) {
        throw std::invalid_argument("perturbation outside the configured limit");
      }
    }
  }
  if (!(c.duration > 0.0)) throw std::invalid_argument("duration must be positive");
  if (!(c.sensors.imu_rate_hz > 0.0 && c.sensors.camera_rate_hz > 0.0 &&
        c.sensors.global_rate_hz > 0.0)) {
    throw std::invalid_argument("sensor rates must be positive");
  }
  if (c.feature_count < 1) throw std::invalid_argument("feature_count must be positive");
  if (c.analysis.poses < 2) throw std::invalid_argument("analysis needs at least two poses");
  if (c.analysis.features < 1) throw std::invalid_argument("analysis needs features");
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  static const std::set<std::string> known{
      "modes",    "trajectories", "cases",  "case_rotations", "perturbations_deg",
      "perturbation_limit_deg", "seed", "workers", "duration_s", "sensors",
      "p_CI",     "fov_deg",      "feature_count", "feature_envelope", "filter",
      "analysis", "verdict",      "out_dir"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown config key '" + key + "'");
  }

  ExperimentConfig c = default_config();
  if (j.contains("modes")) {
    c.modes.clear();
    for (const auto& m : j["modes"]) c.modes.push_back(parse_mode(m.get<std::string>()));
  }
  if (j.contains("trajectories")) c.trajectories = j["trajectories"].get<std::vector<std::string>>();
  if (j.contains("cases")) c.cases = j["cases"].get<std::vector<int>>();
  if (j.contains("case_rotations")) {
    c.case_rotations.clear();
    for (const auto& rows : j["case_rotations"]) {
      Mat3 m;
      for (int r = 0; r < 3; ++r) {
        for (int k = 0; k < 3; ++k) m(r, k) = rows.at(r).at(k).get<double>();
      }
      c.case_rotations.push_back(m);
    }
  }
  if (j.contains("perturbations_deg")) {
    c.perturbations.clear();
    for (const auto& p : j["perturbations_deg"]) {
      c.perturbations.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
    }
  }
  if (j.contains("perturbation_limit_deg")) c.perturbation_limit_deg = j["perturbation_limit_deg"];
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("workers")) c.workers = j["workers"];
  if (j.contains("duration_s")) c.duration = j["duration_s"];
  if (j.contains("sensors")) read_section(j["sensors"], "sensors", c.sensors);
  if (j.contains("p_CI")) read_value(j["p_CI"], c.p_CI);
  if (j.contains("fov_deg")) c.fov_deg = j["fov_deg"];
  if (j.contains("feature_count")) c.feature_count = j["feature_count"];
  if (j.contains("feature_envelope")) read_section(j["feature_envelope"], "feature_envelope", c.envelope);
  if (j.contains("filter")) read_section(j["filter"], "filter", c.filter);
  if (j.contains("analysis")) read_section(j["analysis"], "analysis", c.analysis);
  if (j.contains("verdict")) read_section(j["verdict"], "verdict", c.verdict);
  if (j.contains("out_dir")) c.out_dir = j["out_dir"];
  c.filter.perturbation_limit_deg = c.perturbation_limit_deg;
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["modes"] = json::array();
  for (auto m : c.modes) j["modes"].push_back(to_string(m));
  j["trajectories"] = c.trajectories;
  j["cases"] = c.cases;
  j["case_rotations"] = json::array();
  for (const auto& m : c.case_rotations) {
    json rows = json::array();
    for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
    j["case_rotations"].push_back(rows);
  }
  j["perturbations_deg"] = json::array();
  for (const auto& p : c.perturbations) j["perturbations_deg"].push_back({p.roll, p.pitch, p.yaw});
  j["perturbation_limit_deg"] = c.perturbation_limit_deg;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["duration_s"] = c.duration;
  j["sensors"] = write_section(c.sensors);
  j["p_CI"] = write_value(c.p_CI);
  j["fov_deg"] = c.fov_deg;
  j["feature_count"] = c.feature_count;
  j["feature_envelope"] = write_section(c.envelope);
  j["filter"] = write_section(c.filter);
  j["analysis"] = write_section(c.analysis);
  j["verdict"] = write_section(c.verdict);
  j["out_dir"] = c.out_dir;
  return j;
}

}  // namespace vio_obs
