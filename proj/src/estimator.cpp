#include "vio_obs/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

namespace vio_obs {

namespace {

constexpr int kTheta = ErrorStateLayout::offset(StateBlock::kOrientation);
constexpr int kBg = ErrorStateLayout::offset(StateBlock::kGyroBias);
constexpr int kVel = ErrorStateLayout::offset(StateBlock::kVelocity);
constexpr int kBa = ErrorStateLayout::offset(StateBlock::kAccelBias);
constexpr int kPos = ErrorStateLayout::offset(StateBlock::kPosition);
constexpr int kExt = ErrorStateLayout::offset(StateBlock::kExtrinsicRotation);

Vec3 homogeneous(const Vec2& uv) { return Vec3(uv.x(), uv.y(), 1.0); }

bool finite_vec(const Vec3& v) { return v.allFinite(); }

}  // namespace

int FilterState::slot_of(int feature_id) const {
  for (std::size_t i = 0; i < feature_ids.size(); ++i) {
    if (feature_ids[i] == feature_id) return static_cast<int>(i);
  }
  return -1;
}

FilterState boxplus(const FilterState& x, const Eigen::VectorXd& dx) {
  if (dx.size() != x.layout().dim()) throw std::invalid_argument("error-state size mismatch");
  FilterState y = x;
  y.R_IG = Rotation::exp(-dx.segment<3>(kTheta)) * x.R_IG;
  y.bg += dx.segment<3>(kBg);
  y.v += dx.segment<3>(kVel);
  y.ba += dx.segment<3>(kBa);
  y.p += dx.segment<3>(kPos);
  y.R_CI = Rotation::exp(-dx.segment<3>(kExt)) * x.R_CI;
  for (std::size_t i = 0; i < y.features.size(); ++i) {
    y.features[i] += dx.segment<3>(ErrorStateLayout::kCoreDim + 3 * static_cast<int>(i));
  }
  return y;
}

FilterState init_filter(const KinematicSample& truth, const ImuBias& bias,
                        const Rotation& R_CI_true, const Rpy& perturbation,
                        const FilterOptions& options) {
  const double lim = options.perturbation_limit_deg;
  if (lim > 0.0 && (std::abs(perturbation.roll) > lim || std::abs(perturbation.pitch) > lim ||
                    std::abs(perturbation.yaw) > lim)) {
    throw std::invalid_argument("perturbation outside the configured range");
  }
  FilterState x;
  x.t = truth.t;
  x.R_IG = truth.R_IG;
  x.bg = bias.gyro;
  x.v = truth.v;
  x.ba = bias.accel;
  x.p = truth.p;
  x.R_CI = rotation_from_rpy(perturbation) * R_CI_true;

  const FilterPriors& pr = options.priors;
  Eigen::VectorXd d(ErrorStateLayout::kCoreDim);
  const double st = pr.sigma_theta_deg * kDegToRad;
  const double se = pr.sigma_ext_deg * kDegToRad;
  d << Vec3::Constant(st * st), Vec3::Constant(pr.sigma_bg * pr.sigma_bg),
      Vec3::Constant(pr.sigma_v * pr.sigma_v), Vec3::Constant(pr.sigma_ba * pr.sigma_ba),
      Vec3::Constant(pr.sigma_p * pr.sigma_p), Vec3::Constant(se * se);
  x.P = d.asDiagonal();
  return x;
}

ImuMatrix discrete_imu_noise(const ImuNoise& noise, double dt) {
  ImuMatrix Q = ImuMatrix::Zero();
  Q.block<3, 3>(kTheta, kTheta).diagonal().setConstant(noise.gyro_density * noise.gyro_density * dt);
  Q.block<3, 3>(kBg, kBg).diagonal().setConstant(noise.gyro_bias_rw * noise.gyro_bias_rw * dt);
  Q.block<3, 3>(kVel, kVel).diagonal().setConstant(noise.accel_density * noise.accel_density * dt);
  Q.block<3, 3>(kBa, kBa).diagonal().setConstant(noise.accel_bias_rw * noise.accel_bias_rw * dt);
  return Q;
}

ImuMatrix propagate(FilterState& x, const ImuSample& a, const ImuSample& b, const ImuNoise& noise,
                    const Vec3& gravity) {
  const ImuStep step =
      propagate_imu_step({x.R_IG, x.v, x.p}, a, b, ImuBias{x.bg, x.ba}, gravity);
  x.R_IG = step.next.R_IG;
  x.v = step.next.v;
  x.p = step.next.p;
  x.t = b.t;
  const int n = static_cast<int>(x.P.rows());
  const Eigen::MatrixXd PII = x.P.topLeftCorner<15, 15>();
  x.P.topLeftCorner<15, 15>() =
      step.phi * PII * step.phi.transpose() + discrete_imu_noise(noise, b.t - a.t);
  if (n > 15) {
    x.P.topRightCorner(15, n - 15) = step.phi * x.P.topRightCorner(15, n - 15);
    x.P.bottomLeftCorner(n - 15, 15) = x.P.topRightCorner(15, n - 15).transpose();
  }
  return step.phi;
}

Vec3 feature_in_camera(const FilterState& x, const CameraRig& rig, int slot) {
  return x.R_CI * (x.R_IG * (x.features.at(slot) - x.p)) + rig.p_CI;
}

Vec2 predict_bearing(const FilterState& x, const CameraRig& rig, int slot) {
  return project(feature_in_camera(x, rig, slot));
}

Eigen::MatrixXd camera_measurement_jacobian(const FilterState& x, const CameraRig& rig,
                                            int slot) {
  const ErrorStateLayout layout = x.layout();
  const Mat3& R = x.R_IG.matrix();
  const Mat3& C = x.R_CI.matrix();
  const Vec3 y = R * (x.features.at(slot) - x.p);
  const Mat23 J = projection_jacobian(C * y + rig.p_CI);
  const Mat23 JCR = J * C * R;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(2, layout.dim());
  H.block<2, 3>(0, kTheta) = J * C * skew(y);
  H.block<2, 3>(0, kPos) = -JCR;
  H.block<2, 3>(0, kExt) = J * skew(C * y);
  H.block<2, 3>(0, layout.feature_offset(slot)) = JCR;
  return H;
}

Eigen::Matrix<double, 6, 1> global_pose_residual(const FilterState& x,
                                                 const GlobalPoseObservation& obs) {
  Eigen::Matrix<double, 6, 1> r;
  r.head<3>() = (x.R_IG * obs.R_IG.inverse()).log();
  r.tail<3>() = obs.p - x.p;
  return r;
}

Eigen::MatrixXd global_pose_jacobian(const FilterState& x, const GlobalPoseObservation& obs) {
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(6, x.layout().dim());
  // Exact for any residual size; the identity at zero residual.
  H.block<3, 3>(0, kTheta) = left_jacobian_inverse((x.R_IG * obs.R_IG.inverse()).log());
  H.block<3, 3>(3, kPos) = Mat3::Identity();
  return H;
}

CalibrationFilter::CalibrationFilter(FilterState init, const CameraRig& rig,
                                     const SensorConfig& sensors, const FilterOptions& options)
    : x_(std::move(init)), rig_(rig), sensors_(sensors), options_(options) {
  if (x_.P.rows() != x_.layout().dim() || x_.P.cols() != x_.layout().dim()) {
    throw std::invalid_argument("covariance does not match the state layout");
  }
}

void CalibrationFilter::propagate(const ImuSample& a, const ImuSample& b) {
  const double dt = b.t - a.t;
  if (!(dt > 0.0)) throw std::invalid_argument("IMU timestamps must increase");
  const ImuStep step =
      propagate_imu_step({x_.R_IG, x_.v, x_.p}, a, b, ImuBias{x_.bg, x_.ba}, sensors_.gravity);
  x_.R_IG = step.next.R_IG;
  x_.v = step.next.v;
  x_.p = step.next.p;
  x_.t = b.t;
  phi_acc_ = step.phi * phi_acc_;
  q_acc_ = step.phi * q_acc_ * step.phi.transpose() + discrete_imu_noise(sensors_.imu_noise, dt);
  pending_cov_ = true;
}

void CalibrationFilter::flush() {
  if (!pending_cov_) return;
  const int n = static_cast<int>(x_.P.rows());
  const Eigen::MatrixXd PII = x_.P.topLeftCorner<15, 15>();
  x_.P.topLeftCorner<15, 15>() = phi_acc_ * PII * phi_acc_.transpose() + q_acc_;
  if (n > 15) {
    x_.P.topRightCorner(15, n - 15) = phi_acc_ * x_.P.topRightCorner(15, n - 15);
    x_.P.bottomLeftCorner(n - 15, 15) = x_.P.topRightCorner(15, n - 15).transpose();
  }
  phi_total_ = phi_acc_ * phi_total_;
  phi_acc_.setIdentity();
  q_acc_.setZero();
  pending_cov_ = false;
  check_health();
}

void CalibrationFilter::ekf_update(const Eigen::MatrixXd& H, const Eigen::VectorXd& r,
                                   const Eigen::MatrixXd& R) {
  const Eigen::MatrixXd PHt = x_.P * H.transpose();
  const Eigen::MatrixXd S = H * PHt + R;
  const Eigen::MatrixXd K = S.ldlt().solve(PHt.transpose()).transpose();
  apply_update(K, PHt, K * r);
}

void CalibrationFilter::apply_update(const Eigen::MatrixXd& K, const Eigen::MatrixXd& PHt,
                                     const Eigen::VectorXd& dx) {
  x_.P -= K * PHt.transpose();
  const double norm = x_.P.norm();
  if (norm > 0.0) {
    health_.max_asymmetry =
        std::max(health_.max_asymmetry, (x_.P - x_.P.transpose()).norm() / norm);
  }
  x_.P = 0.5 * (x_.P + x_.P.transpose());
  // Pending views take the correction mapped back through their transition.
  if (!pending_.empty()) {
    const Eigen::Matrix<double, 15, 1> u = phi_total_.partialPivLu().solve(dx.head<15>());
    for (auto& [id, track] : pending_) {
      for (auto& v : track) {
        const Eigen::Matrix<double, 15, 1> d = v.phi_at * u;
        v.R_IG = Rotation::exp(-d.segment<3>(kTheta)) * v.R_IG;
        v.p += d.segment<3>(kPos);
      }
    }
  }
  x_ = boxplus(x_, dx);
  check_health();
}

void CalibrationFilter::check_health() {
  if (diverged_) return;
  const Eigen::VectorXd d = x_.P.diagonal();
  if (!x_.P.allFinite() || !finite_vec(x_.p) || !finite_vec(x_.v) || !finite_vec(x_.ba) ||
      !finite_vec(x_.bg) || !x_.R_CI.matrix().allFinite() || !x_.R_IG.matrix().allFinite()) {
    diverged_ = true;
    reason_ = "non-finite state or covariance";
    return;
  }
  if (d.maxCoeff() > options_.divergence_limit) {
    diverged_ = true;
    reason_ = "covariance diagonal above limit";
    return;
  }
  if (!options_.check_covariance) return;
  const double tr = d.sum();
  const int n = static_cast<int>(x_.P.rows());
  Eigen::MatrixXd shifted = x_.P + 1e-12 * tr * Eigen::MatrixXd::Identity(n, n);
  Eigen::LLT<Eigen::MatrixXd> llt(shifted);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x_.P, Eigen::EigenvaluesOnly);
  const double ratio = es.eigenvalues().minCoeff() / tr;
  if (health_.checks == 0 || ratio < health_.min_eig_ratio) health_.min_eig_ratio = ratio;
  ++health_.checks;
  if (llt.info() != Eigen::Success || ratio < -1e-12) health_.psd = false;
}

void CalibrationFilter::marginalize(const std::vector<int>& keep_slots) {
  std::vector<int> idx;
  for (int i = 0; i < ErrorStateLayout::kCoreDim; ++i) idx.push_back(i);
  std::vector<int> ids;
  std::vector<Vec3> pts;
  for (int s : keep_slots) {
    for (int j = 0; j < 3; ++j) idx.push_back(ErrorStateLayout::kCoreDim + 3 * s + j);
    ids.push_back(x_.feature_ids[s]);
    pts.push_back(x_.features[s]);
  }
  x_.P = Eigen::MatrixXd(x_.P(idx, idx));
  x_.feature_ids = std::move(ids);
  x_.features = std::move(pts);
}

namespace {

Vec3 camera_point(const Rotation& R_IG, const Vec3& p, const Rotation& R_CI, const Vec3& p_CI,
                  const Vec3& X) {
  return R_CI * (R_IG * (X - p)) + p_CI;
}

// Midpoint of the closest points on two viewing rays.
bool midpoint(const Vec3& c1, const Vec3& d1, const Vec3& c2, const Vec3& d2, Vec3& out) {
  Eigen::Matrix<double, 3, 2> A;
  A << d1, -d2;
  const Eigen::Vector2d st = (A.transpose() * A).ldlt().solve(A.transpose() * (c2 - c1));
  if (!(st(0) > 0.0 && st(1) > 0.0)) return false;
  out = 0.5 * (c1 + st(0) * d1 + c2 + st(1) * d2);
  return out.allFinite();
}

}  // namespace

bool CalibrationFilter::try_initialize(int id, const Track& track) {
  const Rotation& R_CI = x_.R_CI;
  const Vec3& p_CI = rig_.p_CI;
  const int m = static_cast<int>(track.size());
  auto center = [&](const PendingView& v) {
    return Vec3(v.p - v.R_IG.matrix().transpose() * (R_CI.matrix().transpose() * p_CI));
  };
  auto ray = [&](const PendingView& v) {
    return Vec3((v.R_IG.matrix().transpose() * (R_CI.matrix().transpose() * homogeneous(v.uv)))
                    .normalized());
  };
  const PendingView& first = track.front();
  const PendingView& last = track.back();
  const double parallax =
      std::acos(std::clamp(ray(first).dot(ray(last)), -1.0, 1.0)) * kRadToDeg;
  if (parallax < options_.min_parallax_deg) return false;

  Vec3 X;
  if (!midpoint(center(first), ray(first), center(last), ray(last), X)) return false;

  // Gauss-Newton on the reprojection error over every view.
  Eigen::MatrixXd J(2 * m, 3);
  Eigen::VectorXd r(2 * m);
  auto linearize = [&](const Vec3& Xi) {
    for (int j = 0; j < m; ++j) {
      const PendingView& v = track[j];
      const Vec3 pc = camera_point(v.R_IG, v.p, R_CI, p_CI, Xi);
      if (!(pc.z() > rig_.min_depth)) return false;
      J.middleRows<2>(2 * j) = projection_jacobian(pc) * R_CI.matrix() * v.R_IG.matrix();
      r.segment<2>(2 * j) = v.uv - project(pc);
    }
    return true;
  };
  for (int it = 0; it < 10; ++it) {
    if (!linearize(X)) return false;
    const Vec3 step = (J.transpose() * J).ldlt().solve(J.transpose() * r);
    X += step;
    if (!X.allFinite()) return false;
    if (step.norm() < 1e-10 * X.norm()) break;
  }
  if (!linearize(X)) return false;
  const Mat3 info = J.transpose() * J;
  const Eigen::LDLT<Mat3> ldlt(info);
  if (ldlt.info() != Eigen::Success) return false;

  // dX/dparam = -(J^T J)^-1 J^T dh/dparam at the solution.
  constexpr double h = 1e-6;
  const int n = static_cast<int>(x_.P.rows());
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(3, n);
  const ImuMatrix back_total = phi_total_.inverse();
  Eigen::Matrix<double, 3, 3> G_ext = Mat3::Zero();
  for (int j = 0; j < m; ++j) {
    const PendingView& v = track[j];
    Eigen::Matrix<double, 2, 9> Hj;
    for (int k = 0; k < 9; ++k) {
      auto eval = [&](double step) {
        Eigen::Matrix<double, 9, 1> e = Eigen::Matrix<double, 9, 1>::Zero();
        e(k) = step;
        const Rotation R = Rotation::exp(-e.segment<3>(0)) * v.R_IG;
        const Rotation Rc = Rotation::exp(-e.segment<3>(6)) * R_CI;
        return Vec2(project(camera_point(R, v.p + e.segment<3>(3), Rc, p_CI, X)));
      };
      Hj.col(k) = (eval(h) - eval(-h)) / (2.0 * h);
    }
    const Eigen::Matrix<double, 3, 9> Dj =
        -ldlt.solve(J.middleRows<2>(2 * j).transpose() * Hj);
    // View errors follow from the current IMU error through the inverse transition.
    const ImuMatrix back = v.phi_at * back_total;
    G.leftCols<15>() += Dj.middleCols<3>(0) * back.middleRows<3>(kTheta) +
                        Dj.middleCols<3>(3) * back.middleRows<3>(kPos);
    G_ext += Dj.middleCols<3>(6);
  }
  G.middleCols<3>(kExt) = G_ext;
  if (!G.allFinite()) return false;
  const double sp = options_.bearing_noise_scale * sensors_.pixel_sigma();
  const Eigen::MatrixXd GP = G * x_.P;
  const Mat3 Pff = GP * G.transpose() + sp * sp * ldlt.solve(Mat3::Identity());

  const Vec3 pc = camera_point(last.R_IG, last.p, R_CI, p_CI, X);
  const Vec3 u = (X - center(last)).normalized();
  const double depth_sd = std::sqrt(std::max(0.0, u.dot(Pff * u)));
  if (depth_sd > options_.depth_sigma_ratio * pc.z()) return false;

  Eigen::MatrixXd P(n + 3, n + 3);
  P.topLeftCorner(n, n) = x_.P;
  P.bottomLeftCorner(3, n) = GP;
  P.topRightCorner(n, 3) = GP.transpose();
  P.bottomRightCorner<3, 3>() = Pff;
  x_.P = 0.5 * (P + P.transpose());
  x_.feature_ids.push_back(id);
  x_.features.push_back(X);
  return true;
}

UpdateStats CalibrationFilter::update_camera(double t, const std::vector<FeatureObservation>& obs) {
  UpdateStats st;
  if (diverged_) return st;
  flush();
  x_.t = t;

  std::set<int> seen;
  for (const auto& o : obs) seen.insert(o.id);
  std::vector<int> keep;
  for (std::size_t s = 0; s < x_.feature_ids.size(); ++s) {
    if (seen.count(x_.feature_ids[s])) keep.push_back(static_cast<int>(s));
  }
  if (keep.size() < x_.feature_ids.size()) {
    st.marginalized = static_cast<int>(x_.feature_ids.size() - keep.size());
    marginalize(keep);
  }
  for (auto it = rejections_.begin(); it != rejections_.end();) {
    it = seen.count(it->first) ? std::next(it) : rejections_.erase(it);
  }
  for (auto it = pending_.begin(); it != pending_.end();) {
    it = seen.count(it->first) ? std::next(it) : pending_.erase(it);
  }

  const double sigma = options_.bearing_noise_scale * sensors_.pixel_sigma();
  const double var = sigma * sigma;
  const int n = x_.layout().dim();
  std::vector<std::pair<int, Vec2>> accepted;
  for (const auto& o : obs) {
    const int slot = x_.slot_of(o.id);
    if (slot < 0) continue;
    const Vec3 pc = feature_in_camera(x_, rig_, slot);
    if (!(pc.z() > rig_.min_depth)) {
      ++st.gated;
      ++rejections_[o.id];
      continue;
    }
    const Vec2 r = o.uv - project(pc);
    const Eigen::MatrixXd H = camera_measurement_jacobian(x_, rig_, slot);
    const Eigen::Matrix2d S = H * x_.P * H.transpose() + var * Eigen::Matrix2d::Identity();
    if (r.dot(S.ldlt().solve(r)) > options_.chi2_gate) {
      ++st.gated;
      ++rejections_[o.id];
      continue;
    }
    rejections_.erase(o.id);
    accepted.emplace_back(slot, o.uv);
  }
  if (!accepted.empty()) {
    const int m = static_cast<int>(accepted.size());
    auto linearize = [&](const FilterState& xi, Eigen::MatrixXd& H, Eigen::VectorXd& r) {
      H.resize(2 * m, n);
      r.resize(2 * m);
      for (int i = 0; i < m; ++i) {
        const auto& [slot, uv] = accepted[i];
        H.middleRows(2 * i, 2) = camera_measurement_jacobian(xi, rig_, slot);
        r.segment<2>(2 * i) = uv - predict_bearing(xi, rig_, slot);
      }
    };
    const Eigen::MatrixXd R = var * Eigen::MatrixXd::Identity(2 * m, 2 * m);
    Eigen::MatrixXd H, K, PHt;
    Eigen::VectorXd r, dx = Eigen::VectorXd::Zero(n);
    FilterState xi = x_;
    const int iterations = std::max(1, options_.update_iterations);
    for (int it = 0; it < iterations; ++it) {
      linearize(xi, H, r);
      PHt = x_.P * H.transpose();
      const Eigen::MatrixXd S = H * PHt + R;
      K = S.ldlt().solve(PHt.transpose()).transpose();
      dx = K * (r + H * dx);
      if (it + 1 < iterations) xi = boxplus(x_, dx);
    }
    apply_update(K, PHt, dx);
    st.used = m;
  }
  if (diverged_) return st;

  // Features rejected too often in a row are dropped and re-triangulated.
  keep.clear();
  for (std::size_t s = 0; s < x_.feature_ids.size(); ++s) {
    auto it = rejections_.find(x_.feature_ids[s]);
    if (it != rejections_.end() && it->second >= options_.max_rejections) {
      rejections_.erase(it);
      continue;
    }
    keep.push_back(static_cast<int>(s));
  }
  if (keep.size() < x_.feature_ids.size()) {
    st.dropped = static_cast<int>(x_.feature_ids.size() - keep.size());
    marginalize(keep);
  }

  for (const auto& o : obs) {
    if (x_.slot_of(o.id) >= 0) continue;
    Track& track = pending_[o.id];
    track.push_back({x_.R_IG, x_.p, o.uv, phi_total_});
    if (static_cast<int>(track.size()) > std::max(2, options_.max_track_views)) {
      track.erase(track.begin() + 1);
    }
    if (track.size() < 2) continue;
    if (static_cast<int>(x_.features.size()) >= options_.max_features) continue;
    if (try_initialize(o.id, track)) {
      pending_.erase(o.id);
      ++st.initialized;
    }
  }
  check_health();
  return st;
}

void CalibrationFilter::update_global_pose(const GlobalPoseObservation& obs) {
  if (diverged_) return;
  flush();
  const Eigen::Matrix<double, 6, 1> r = global_pose_residual(x_, obs);
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(6, 6);
  R.topLeftCorner<3, 3>().diagonal().setConstant(sensors_.global_sigma_theta *
                                                 sensors_.global_sigma_theta);
  R.bottomRightCorner<3, 3>().diagonal().setConstant(sensors_.global_sigma_p *
                                                     sensors_.global_sigma_p);
  ekf_update(global_pose_jacobian(x_, obs), r, R);
}

CalibrationRun run_calibration(const RunSetup& setup) {
  if (setup.map.points.empty()) throw std::invalid_argument("feature map is empty");
  const SimulatedDataset data =
      simulate_dataset(setup.trajectory, setup.map, setup.rig, setup.sensors,
                       setup.mode == AidingMode::kGlobalPose, setup.seed);
  return run_calibration(setup, data);
}

CalibrationRun run_calibration(const RunSetup& setup, const SimulatedDataset& data) {
  if (setup.map.points.empty()) throw std::invalid_argument("feature map is empty");
  if (data.imu.empty()) throw std::invalid_argument("empty IMU stream");

  CalibrationRun run;
  run.mode = setup.mode;
  run.trajectory_id = setup.trajectory_id;
  run.case_id = setup.case_id;
  run.perturbation = setup.perturbation;
  run.seed = setup.seed;

  const KinematicSample truth0 = setup.trajectory.evaluate(data.imu.front().t);
  CalibrationFilter filter(
      init_filter(truth0, setup.sensors.imu_bias, setup.rig.R_CI, setup.perturbation,
                  setup.options),
      setup.rig, setup.sensors, setup.options);

  auto record = [&](double t) {
    run.series.push_back({t, rotation_error_rpy(filter.state().R_CI, setup.rig.R_CI)});
  };
  auto accumulate = [&](const UpdateStats& s) {
    run.totals.used += s.used;
    run.totals.gated += s.gated;
    run.totals.initialized += s.initialized;
    run.totals.marginalized += s.marginalized;
    run.totals.dropped += s.dropped;
  };

  std::size_t ci = 0;
  std::size_t gi = 0;
  for (std::size_t i = 0; i < data.imu.size(); ++i) {
    if (i > 0) filter.propagate(data.imu[i - 1], data.imu[i]);
    bool epoch = false;
    while (setup.mode == AidingMode::kGlobalPose && gi < data.global.size() &&
           data.global[gi].imu_index == i) {
      filter.update_global_pose(data.global[gi++].observation);
      epoch = true;
    }
    while (ci < data.camera.size() && data.camera[ci].imu_index == i) {
      accumulate(filter.update_camera(data.camera[ci].t, data.camera[ci].observations));
      ++ci;
      epoch = true;
    }
    if (epoch) record(data.imu[i].t);
    if (filter.diverged()) break;
  }
  if (!filter.diverged()) {
    filter.flush();
    if (run.series.empty() || run.series.back().t < data.imu.back().t) record(data.imu.back().t);
  }
  run.diverged = filter.diverged();
  run.divergence_reason = filter.divergence_reason();
  run.health = filter.health();
  if (!run.series.empty()) {
    run.final_error = run.series.back().error;
    run.final_time = run.series.back().t;
  }
  return run;
}

void write_run_csv(const CalibrationRun& run, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "t_s,roll_err_deg,pitch_err_deg,yaw_err_deg\n";
  out << std::setprecision(10);
  for (const auto& s : run.series) {
    out << s.t << ',' << s.error.roll << ',' << s.error.pitch << ',' << s.error.yaw << '\n';
  }
}

nlohmann::json run_metadata(const CalibrationRun& run) {
  nlohmann::json j;
  j["mode"] = to_string(run.mode);
  j["trajectory"] = run.trajectory_id;
  j["case"] = run.case_id;
  j["perturbation_deg"] = {run.perturbation.roll, run.perturbation.pitch, run.perturbation.yaw};
  j["seed"] = run.seed;
  j["final_time_s"] = run.final_time;
  j["final_error_deg"] = {{"roll", run.final_error.roll},
                          {"pitch", run.final_error.pitch},
                          {"yaw", run.final_error.yaw}};
  j["samples"] = run.series.size();
  j["diverged"] = run.diverged;
  if (run.diverged) j["divergence_reason"] = run.divergence_reason;
  j["updates"] = {{"used", run.totals.used},
                  {"gated", run.totals.gated},
                  {"initialized", run.totals.initialized},
                  {"marginalized", run.totals.marginalized},
                  {"dropped", run.totals.dropped}};
  return j;
}

}  // namespace vio_obs
