#include "vio_obs/sensors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vio_obs {

namespace {

Vec3 gaussian3(std::mt19937_64& rng, double sigma) {
  if (sigma <= 0.0) return Vec3::Zero();
  std::normal_distribution<double> n(0.0, sigma);
  const double x = n(rng);
  const double y = n(rng);
  const double z = n(rng);
  return Vec3(x, y, z);
}

std::size_t sample_count(double duration, double rate_hz) {
  return static_cast<std::size_t>(std::llround(duration * rate_hz));
}

std::size_t rate_ratio(double fast_hz, double slow_hz) {
  const double r = fast_hz / slow_hz;
  const auto n = static_cast<std::size_t>(std::llround(r));
  if (n == 0 || std::abs(r - static_cast<double>(n)) > 1e-9) {
    throw std::invalid_argument("sensor rates must be integer multiples of each other");
  }
  return n;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

bool CameraRig::in_view(const Vec3& p_C) const {
  if (!(p_C.z() > min_depth)) return false;
  const double half = std::tan(0.5 * fov_deg * kDegToRad);
  return std::abs(p_C.x() / p_C.z()) <= half && std::abs(p_C.y() / p_C.z()) <= half;
}

Vec2 project(const Vec3& p_C) { return Vec2(p_C.x() / p_C.z(), p_C.y() / p_C.z()); }

int count_views(const Trajectory& traj, const CameraRig& rig, const Vec3& p_f,
                double view_rate_hz, double* max_parallax_deg) {
  const std::size_t n = sample_count(traj.duration(), view_rate_hz);
  int views = 0;
  Vec3 first_ray = Vec3::Zero();
  double best = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const KinematicSample s = traj.evaluate(static_cast<double>(i) / view_rate_hz);
    if (!rig.in_view(rig.to_camera(s.R_IG, s.p, p_f))) continue;
    const Vec3 ray = (p_f - rig.camera_center(s.R_IG, s.p)).normalized();
    if (views == 0) {
      first_ray = ray;
    } else {
      best = std::max(best, std::acos(std::clamp(first_ray.dot(ray), -1.0, 1.0)) * kRadToDeg);
    }
    ++views;
  }
  if (max_parallax_deg) *max_parallax_deg = best;
  return views;
}

FeatureMap generate_features(const Trajectory& traj, int count, const FeatureEnvelope& envelope,
                             const CameraRig& rig, std::uint64_t seed) {
  FeatureMap map;
  map.seed = seed;
  map.envelope = envelope;
  if (count <= 0) return map;

  Vec3 lo = Vec3::Constant(1e300);
  Vec3 hi = Vec3::Constant(-1e300);
  const std::size_t n = std::max<std::size_t>(2, sample_count(traj.duration(), envelope.view_rate_hz));
  for (std::size_t i = 0; i <= n; ++i) {
    const Vec3 p = traj.evaluate(traj.duration() * static_cast<double>(i) / static_cast<double>(n)).p;
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  lo += Vec3(-envelope.along_margin, -envelope.lateral_half_width, envelope.height_min);
  hi += Vec3(envelope.along_margin, envelope.lateral_half_width, envelope.height_max);
  // The vertical band sits above the highest point of the path.
  lo.z() = hi.z() - envelope.height_max + envelope.height_min;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(lo.x(), hi.x());
  std::uniform_real_distribution<double> uy(lo.y(), hi.y());
  std::uniform_real_distribution<double> uz(lo.z(), hi.z());

  const long max_attempts = static_cast<long>(envelope.max_attempts_per_feature) * count;
  long attempts = 0;
  while (static_cast<int>(map.points.size()) < count) {
    if (attempts++ >= max_attempts) {
      throw std::runtime_error("feature envelope infeasible: no visible placement found");
    }
    const double x = ux(rng);
    const double y = uy(rng);
    const double z = uz(rng);
    const Vec3 p(x, y, z);
    double parallax = 0.0;
    if (count_views(traj, rig, p, envelope.view_rate_hz, &parallax) >= 2 &&
        parallax >= envelope.min_parallax_deg) {
      map.points.push_back(p);
    }
  }
  return map;
}

std::vector<ImuSample> generate_imu(const Trajectory& traj, double rate_hz, const ImuBias& bias,
                                    const ImuNoise& noise, const Vec3& gravity,
                                    std::uint64_t seed) {
  if (!(rate_hz > 0.0)) throw std::invalid_argument("IMU rate must be positive");
  const std::size_t n = sample_count(traj.duration(), rate_hz);
  const double dt = 1.0 / rate_hz;
  std::mt19937_64 rng(seed);
  std::vector<ImuSample> out;
  out.reserve(n);
  Vec3 bg = bias.gyro;
  Vec3 ba = bias.accel;
  const double sg = noise.gyro_density / std::sqrt(dt);
  const double sa = noise.accel_density / std::sqrt(dt);
  const double swg = noise.gyro_bias_rw * std::sqrt(dt);
  const double swa = noise.accel_bias_rw * std::sqrt(dt);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    const KinematicSample s = traj.evaluate(t);
    ImuSample m;
    m.t = t;
    m.gyro = s.omega + bg + gaussian3(rng, sg);
    m.accel = s.R_IG * (s.a - gravity) + ba + gaussian3(rng, sa);
    out.push_back(m);
    bg += gaussian3(rng, swg);
    ba += gaussian3(rng, swa);
  }
  return out;
}

std::vector<FeatureObservation> observe_features(const FeatureMap& map, const KinematicSample& pose,
                                                 const CameraRig& rig, double sigma,
                                                 std::mt19937_64& rng) {
  std::vector<FeatureObservation> out;
  for (std::size_t i = 0; i < map.points.size(); ++i) {
    const Vec3 p_C = rig.to_camera(pose.R_IG, pose.p, map.points[i]);
    if (!rig.in_view(p_C)) continue;
    FeatureObservation o;
    o.t = pose.t;
    o.id = static_cast<int>(i);
    o.sigma = sigma;
    o.uv = project(p_C);
    if (sigma > 0.0) {
      std::normal_distribution<double> n(0.0, sigma);
      const double du = n(rng);
      const double dv = n(rng);
      o.uv += Vec2(du, dv);
    }
    out.push_back(o);
  }
  return out;
}

std::vector<FeatureObservation> observe_features(const FeatureMap& map, const KinematicSample& pose,
                                                 const CameraRig& rig, double sigma,
                                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return observe_features(map, pose, rig, sigma, rng);
}

GlobalPoseObservation observe_global_pose(const KinematicSample& pose, double sigma_p,
                                          double sigma_theta, std::mt19937_64& rng) {
  if (sigma_p < 0.0 || sigma_theta < 0.0) throw std::invalid_argument("negative noise sigma");
  GlobalPoseObservation o;
  o.t = pose.t;
  o.p = pose.p + gaussian3(rng, sigma_p);
  o.R_IG = Rotation::exp(-gaussian3(rng, sigma_theta)) * pose.R_IG;
  return o;
}

GlobalPoseObservation observe_global_pose(const KinematicSample& pose, double sigma_p,
                                          double sigma_theta, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return observe_global_pose(pose, sigma_p, sigma_theta, rng);
}

SimulatedDataset simulate_dataset(const Trajectory& traj, const FeatureMap& map,
                                  const CameraRig& rig, const SensorConfig& config,
                                  bool with_global_pose, std::uint64_t seed) {
  SimulatedDataset data;
  data.imu = generate_imu(traj, config.imu_rate_hz, config.imu_bias, config.imu_noise,
                          config.gravity, mix_seed(seed, 1));
  const std::size_t cam_every = rate_ratio(config.imu_rate_hz, config.camera_rate_hz);
  const std::size_t gps_every = rate_ratio(config.imu_rate_hz, config.global_rate_hz);
  std::mt19937_64 cam_rng(mix_seed(seed, 2));
  std::mt19937_64 gps_rng(mix_seed(seed, 3));
  const double sigma = config.pixel_sigma();
  for (std::size_t i = 0; i < data.imu.size(); ++i) {
    const double t = data.imu[i].t;
    if (i % cam_every == 0) {
      const KinematicSample s = traj.evaluate(t);
      data.camera.push_back({t, i, observe_features(map, s, rig, sigma, cam_rng)});
    }
    if (with_global_pose && i % gps_every == 0) {
      const KinematicSample s = traj.evaluate(t);
      data.global.push_back(
          {i, observe_global_pose(s, config.global_sigma_p, config.global_sigma_theta, gps_rng)});
    }
  }
  return data;
}

}  // namespace vio_obs
