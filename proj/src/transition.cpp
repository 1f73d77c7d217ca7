#include "vio_obs/transition.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vio_obs {

ErrorStateLayout::ErrorStateLayout(int num_features) : num_features_(num_features) {
  if (num_features < 0) throw std::invalid_argument("negative feature count");
}

std::pair<int, int> ErrorStateLayout::range(StateBlock b) const {
  if (b == StateBlock::kFeatures) return {kCoreDim, 3 * num_features_};
  return {offset(b), 3};
}

ImuMatrix error_state_jacobian(const InertialSignal& s) {
  ImuMatrix F = ImuMatrix::Zero();
  const Mat3 Rt = s.R_IG.matrix().transpose();
  F.block<3, 3>(0, 0) = -skew(s.omega);
  F.block<3, 3>(0, 3) = -Mat3::Identity();
  F.block<3, 3>(6, 0) = -Rt * skew(s.specific_force);
  F.block<3, 3>(6, 9) = -Rt;
  F.block<3, 3>(12, 6) = Mat3::Identity();
  return F;
}

namespace {

// F * phi without forming F.
ImuMatrix apply_jacobian(const InertialSignal& s, const ImuMatrix& phi) {
  ImuMatrix out = ImuMatrix::Zero();
  const Mat3 Rt = s.R_IG.matrix().transpose();
  out.middleRows<3>(0) = -skew(s.omega) * phi.middleRows<3>(0) - phi.middleRows<3>(3);
  out.middleRows<3>(6) =
      -(Rt * skew(s.specific_force)) * phi.middleRows<3>(0) - Rt * phi.middleRows<3>(9);
  out.middleRows<3>(12) = phi.middleRows<3>(6);
  return out;
}

void rk4_phi(ImuMatrix& phi, const InertialSignal& s0, const InertialSignal& sm,
             const InertialSignal& s1, double h) {
  const ImuMatrix k1 = apply_jacobian(s0, phi);
  const ImuMatrix k2 = apply_jacobian(sm, phi + 0.5 * h * k1);
  const ImuMatrix k3 = apply_jacobian(sm, phi + 0.5 * h * k2);
  const ImuMatrix k4 = apply_jacobian(s1, phi + h * k3);
  phi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

InertialSignal analytic_signal(const Trajectory& traj, const Vec3& gravity, double t) {
  const KinematicSample s = traj.evaluate(t);
  return {s.R_IG, s.omega, s.R_IG * (s.a - gravity)};
}

// Integrates phi from t0 to t1 in place.
void integrate_analytic(ImuMatrix& phi, const Trajectory& traj, const Vec3& gravity, double t0,
                        double t1, double max_step) {
  if (t1 <= t0) return;
  const int n = std::max(1, static_cast<int>(std::ceil((t1 - t0) / max_step - 1e-9)));
  const double h = (t1 - t0) / n;
  InertialSignal s0 = analytic_signal(traj, gravity, t0);
  for (int i = 0; i < n; ++i) {
    const double ta = t0 + h * i;
    const double tb = (i + 1 == n) ? t1 : ta + h;
    const InertialSignal sm = analytic_signal(traj, gravity, 0.5 * (ta + tb));
    const InertialSignal s1 = analytic_signal(traj, gravity, tb);
    rk4_phi(phi, s0, sm, s1, tb - ta);
    s0 = s1;
  }
}

}  // namespace

TransitionMatrix::TransitionMatrix(ErrorStateLayout layout, double t_begin, double t_end,
                                   const ImuMatrix& imu)
    : layout_(layout), t_begin_(t_begin), t_end_(t_end), imu_(imu) {}

TransitionMatrix TransitionMatrix::identity(ErrorStateLayout layout, double t) {
  return TransitionMatrix(layout, t, t, ImuMatrix::Identity());
}

Eigen::MatrixXd TransitionMatrix::dense() const {
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(layout_.dim(), layout_.dim());
  m.topLeftCorner<15, 15>() = imu_;
  return m;
}

TransitionMatrix TransitionMatrix::operator*(const TransitionMatrix& earlier) const {
  if (!(layout_ == earlier.layout_)) throw std::invalid_argument("layout mismatch");
  if (std::abs(earlier.t_end_ - t_begin_) > 1e-9) {
    throw std::invalid_argument("transition intervals do not abut");
  }
  return TransitionMatrix(layout_, earlier.t_begin_, t_end_, imu_ * earlier.imu_);
}

TransitionMatrix compute_phi(const Trajectory& traj, const Vec3& gravity, double t1, double tk,
                             const ErrorStateLayout& layout, double max_step) {
  if (tk < t1) throw std::invalid_argument("compute_phi requires tk >= t1");
  ImuMatrix phi = ImuMatrix::Identity();
  integrate_analytic(phi, traj, gravity, t1, tk, max_step);
  return TransitionMatrix(layout, t1, tk, phi);
}

std::vector<TransitionMatrix> compute_phi_sequence(const Trajectory& traj, const Vec3& gravity,
                                                   std::span<const double> times,
                                                   const ErrorStateLayout& layout,
                                                   double max_step) {
  std::vector<TransitionMatrix> out;
  if (times.empty()) return out;
  out.reserve(times.size());
  ImuMatrix phi = ImuMatrix::Identity();
  out.emplace_back(layout, times[0], times[0], phi);
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (times[i] < times[i - 1]) throw std::invalid_argument("times must be non-decreasing");
    integrate_analytic(phi, traj, gravity, times[i - 1], times[i], max_step);
    out.emplace_back(layout, times[0], times[i], phi);
  }
  return out;
}

ImuStep propagate_imu_step(const NavState& x, const ImuSample& a, const ImuSample& b,
                           const ImuBias& bias, const Vec3& gravity) {
  const double h = b.t - a.t;
  if (!(h > 0.0)) throw std::invalid_argument("IMU timestamps must increase");
  const Vec3 w = 0.5 * (a.gyro + b.gyro) - bias.gyro;
  const Vec3 f0 = a.accel - bias.accel;
  const Vec3 f1 = b.accel - bias.accel;
  const Vec3 fm = 0.5 * (f0 + f1);

  // R(s) = Exp(-w s) R_a solves dR/ds = -[w]x R for constant w.
  const Rotation Rm = Rotation::exp(-0.5 * h * w) * x.R_IG;
  const Rotation R1 = Rotation::exp(-h * w) * x.R_IG;

  const InertialSignal s0{x.R_IG, w, f0};
  const InertialSignal sm{Rm, w, fm};
  const InertialSignal s1{R1, w, f1};

  const Vec3 acc0 = x.R_IG.matrix().transpose() * f0 + gravity;
  const Vec3 accm = Rm.matrix().transpose() * fm + gravity;
  const Vec3 acc1 = R1.matrix().transpose() * f1 + gravity;
  // RK4 on (v, p) with v' = R^T f + g, p' = v.
  const Vec3 kv1 = acc0, kp1 = x.v;
  const Vec3 kv2 = accm, kp2 = x.v + 0.5 * h * kv1;
  const Vec3 kv3 = accm, kp3 = x.v + 0.5 * h * kv2;
  const Vec3 kv4 = acc1, kp4 = x.v + h * kv3;

  ImuStep out;
  out.next.R_IG = R1;
  out.next.v = x.v + (h / 6.0) * (kv1 + 2.0 * kv2 + 2.0 * kv3 + kv4);
  out.next.p = x.p + (h / 6.0) * (kp1 + 2.0 * kp2 + 2.0 * kp3 + kp4);
  out.phi = ImuMatrix::Identity();
  rk4_phi(out.phi, s0, sm, s1, h);
  return out;
}

TransitionMatrix compute_phi(std::span<const ImuSample> samples, const Rotation& R_IG_first,
                             const ImuBias& bias, const Vec3& gravity,
                             const ErrorStateLayout& layout) {
  if (samples.empty()) throw std::invalid_argument("compute_phi needs at least one IMU sample");
  ImuMatrix phi = ImuMatrix::Identity();
  NavState x;
  x.R_IG = R_IG_first;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (!(samples[i].t > samples[i - 1].t)) {
      throw std::invalid_argument("IMU timestamps must be strictly increasing");
    }
    const ImuStep step = propagate_imu_step(x, samples[i - 1], samples[i], bias, gravity);
    phi = step.phi * phi;
    x = step.next;
  }
  return TransitionMatrix(layout, samples.front().t, samples.back().t, phi);
}

}  // namespace vio_obs
