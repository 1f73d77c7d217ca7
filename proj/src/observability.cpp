#include "vio_obs/observability.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/QR>
#include <Eigen/SVD>

namespace vio_obs {

std::string to_string(AidingMode mode) {
  return mode == AidingMode::kPureVio ? "pure" : "global";
}

std::string to_string(RowSource source) {
  switch (source) {
    case RowSource::kCameraFeature: return "camera-feature";
    case RowSource::kGlobalPosition: return "global-position";
    case RowSource::kGlobalOrientation: return "global-orientation";
  }
  return "unknown";
}

std::vector<double> keyframe_times(double duration, int count) {
  if (count < 1) throw std::invalid_argument("keyframe count must be positive");
  std::vector<double> t(count, 0.0);
  if (count == 1) return t;
  for (int i = 0; i < count; ++i) t[i] = duration * i / (count - 1);
  return t;
}

Mat23 projection_jacobian(const Vec3& p_C) {
  const double iz = 1.0 / p_C.z();
  Mat23 J;
  J << iz, 0.0, -p_C.x() * iz * iz,
       0.0, iz, -p_C.y() * iz * iz;
  return J;
}

Mat23 xi_projection(const CameraRig& rig, const KinematicSample& sk, const Vec3& p_f) {
  const Vec3 p_C = rig.to_camera(sk.R_IG, sk.p, p_f);
  return projection_jacobian(p_C) * rig.R_CI.matrix() * sk.R_IG.matrix();
}

GammaBlocks compute_gamma(const KinematicSample& s1, const KinematicSample& sk,
                          const TransitionMatrix& phi, const Vec3& p_f, const Rotation& R_CI,
                          const Vec3& gravity) {
  const double dt = sk.t - s1.t;
  const Mat3 R1t = s1.R_IG.matrix().transpose();
  const Mat3 Rkt = sk.R_IG.matrix().transpose();
  const Mat3 fk = skew(p_f - sk.p);
  GammaBlocks g;
  g.gamma1 = skew(p_f - s1.p - s1.v * dt - 0.5 * gravity * dt * dt) * R1t;
  g.gamma2 = fk * Rkt * phi.phi12() - phi.phi52();
  g.gamma3 = -phi.phi54();
  g.gamma4 = fk * Rkt * R_CI.matrix().transpose();
  return g;
}

Eigen::MatrixXd build_pure_vio_rows(const GammaBlocks& g, double dt, const Mat23& xi,
                                    const ErrorStateLayout& layout, int feature,
                                    StackForm form) {
  if (feature < 0 || feature >= layout.num_features()) {
    throw std::out_of_range("feature index outside layout");
  }
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(3, layout.dim());
  G.block<3, 3>(0, ErrorStateLayout::offset(StateBlock::kOrientation)) = g.gamma1;
  G.block<3, 3>(0, ErrorStateLayout::offset(StateBlock::kGyroBias)) = g.gamma2;
  G.block<3, 3>(0, ErrorStateLayout::offset(StateBlock::kVelocity)) = -dt * Mat3::Identity();
  G.block<3, 3>(0, ErrorStateLayout::offset(StateBlock::kAccelBias)) = g.gamma3;
  G.block<3, 3>(0, ErrorStateLayout::offset(StateBlock::kPosition)) = -Mat3::Identity();
  G.block<3, 3>(0, ErrorStateLayout::offset(StateBlock::kExtrinsicRotation)) = g.gamma4;
  G.block<3, 3>(0, layout.feature_offset(feature)) = Mat3::Identity();
  if (form == StackForm::kGamma) return G;
  return xi * G;
}

Eigen::MatrixXd build_global_rows(const TransitionMatrix& phi) {
  Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(6, phi.layout().dim());
  rows.topLeftCorner<3, 15>() = phi.imu_block().middleRows<3>(0);
  rows.bottomLeftCorner<3, 15>() = phi.imu_block().middleRows<3>(12);
  return rows;
}

namespace {

struct EpochPlan {
  KinematicSample sample;
  std::vector<int> features;
  int skipped = 0;
  int first_row = 0;
  int rows = 0;
};

int rows_per_feature(StackForm form) { return form == StackForm::kProjected ? 2 : 3; }

std::vector<EpochPlan> plan_epochs(const AnalysisScenario& sc, AidingMode mode, StackForm form) {
  std::vector<EpochPlan> plan(sc.times.size());
  int row = 0;
  for (std::size_t k = 0; k < sc.times.size(); ++k) {
    EpochPlan& e = plan[k];
    e.sample = sc.trajectory.evaluate(sc.times[k]);
    for (std::size_t i = 0; i < sc.features.size(); ++i) {
      if (sc.rig.in_view(sc.rig.to_camera(e.sample.R_IG, e.sample.p, sc.features[i]))) {
        e.features.push_back(static_cast<int>(i));
      } else {
        ++e.skipped;
      }
    }
    e.first_row = row;
    e.rows = rows_per_feature(form) * static_cast<int>(e.features.size()) +
             (mode == AidingMode::kGlobalPose ? 6 : 0);
    row += e.rows;
  }
  return plan;
}

void fill_epoch(const AnalysisScenario& sc, const EpochPlan& e, int k,
                const KinematicSample& s1, const TransitionMatrix& phi, AidingMode mode,
                StackForm form, Eigen::MatrixXd& M, std::vector<RowBlock>& blocks) {
  const ErrorStateLayout& layout = phi.layout();
  const int rpf = rows_per_feature(form);
  const double dt = e.sample.t - s1.t;
  int row = e.first_row;
  for (int f : e.features) {
    const Vec3& pf = sc.features[f];
    const GammaBlocks g = compute_gamma(s1, e.sample, phi, pf, sc.rig.R_CI, sc.gravity);
    M.middleRows(row, rpf) =
        build_pure_vio_rows(g, dt, xi_projection(sc.rig, e.sample, pf), layout, f, form);
    blocks.push_back({k, e.sample.t, RowSource::kCameraFeature, f, row, rpf});
    row += rpf;
  }
  if (mode == AidingMode::kGlobalPose) {
    M.middleRows(row, 6) = build_global_rows(phi);
    blocks.push_back({k, e.sample.t, RowSource::kGlobalOrientation, -1, row, 3});
    blocks.push_back({k, e.sample.t, RowSource::kGlobalPosition, -1, row + 3, 3});
  }
}

void check_scenario(const AnalysisScenario& sc) {
  if (sc.times.empty()) throw std::invalid_argument("scenario has no stacking epochs");
}

}  // namespace

ObservabilityMatrix build_stack(const AnalysisScenario& sc, AidingMode mode, StackForm form,
                                double max_step) {
  check_scenario(sc);
  const ErrorStateLayout layout(static_cast<int>(sc.features.size()));
  const std::vector<TransitionMatrix> phis =
      compute_phi_sequence(sc.trajectory, sc.gravity, sc.times, layout, max_step);
  const std::vector<EpochPlan> plan = plan_epochs(sc, mode, form);
  const KinematicSample s1 = plan.front().sample;

  ObservabilityMatrix out{layout, {}, {}, 0};
  const int total = plan.back().first_row + plan.back().rows;
  out.matrix = Eigen::MatrixXd::Zero(total, layout.dim());
  std::vector<std::vector<RowBlock>> per_epoch(plan.size());
  const int n = static_cast<int>(plan.size());
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < n; ++k) {
    fill_epoch(sc, plan[k], k, s1, phis[k], mode, form, out.matrix, per_epoch[k]);
  }
  for (std::size_t k = 0; k < plan.size(); ++k) {
    out.blocks.insert(out.blocks.end(), per_epoch[k].begin(), per_epoch[k].end());
    out.skipped_observations += plan[k].skipped;
  }
  return out;
}

ObservabilityMatrix build_stack_serial(const AnalysisScenario& sc, AidingMode mode,
                                       StackForm form, double max_step) {
  check_scenario(sc);
  const ErrorStateLayout layout(static_cast<int>(sc.features.size()));
  ObservabilityMatrix out{layout, Eigen::MatrixXd(0, layout.dim()), {}, 0};
  const KinematicSample s1 = sc.trajectory.evaluate(sc.times.front());
  const int rpf = rows_per_feature(form);
  const std::vector<TransitionMatrix> phis =
      compute_phi_sequence(sc.trajectory, sc.gravity, sc.times, layout, max_step);
  for (std::size_t k = 0; k < sc.times.size(); ++k) {
    const KinematicSample sk = sc.trajectory.evaluate(sc.times[k]);
    const TransitionMatrix& phi = phis[k];
    for (std::size_t i = 0; i < sc.features.size(); ++i) {
      const Vec3& pf = sc.features[i];
      if (!sc.rig.in_view(sc.rig.to_camera(sk.R_IG, sk.p, pf))) {
        ++out.skipped_observations;
        continue;
      }
      const GammaBlocks g = compute_gamma(s1, sk, phi, pf, sc.rig.R_CI, sc.gravity);
      const Eigen::MatrixXd rows = build_pure_vio_rows(
          g, sk.t - s1.t, xi_projection(sc.rig, sk, pf), layout, static_cast<int>(i), form);
      const int r0 = static_cast<int>(out.matrix.rows());
      out.matrix.conservativeResize(r0 + rpf, Eigen::NoChange);
      out.matrix.middleRows(r0, rpf) = rows;
      out.blocks.push_back({static_cast<int>(k), sk.t, RowSource::kCameraFeature,
                            static_cast<int>(i), r0, rpf});
    }
    if (mode == AidingMode::kGlobalPose) {
      const int r0 = static_cast<int>(out.matrix.rows());
      out.matrix.conservativeResize(r0 + 6, Eigen::NoChange);
      out.matrix.middleRows(r0, 6) = build_global_rows(phi);
      out.blocks.push_back({static_cast<int>(k), sk.t, RowSource::kGlobalOrientation, -1, r0, 3});
      out.blocks.push_back(
          {static_cast<int>(k), sk.t, RowSource::kGlobalPosition, -1, r0 + 3, 3});
    }
  }
  return out;
}

Eigen::VectorXd candidate_n1(const Vec3& d, const Rotation& R_CI, const Rotation& R_IG,
                             const std::vector<Vec3>& features, const Vec3& p_I1,
                             const ErrorStateLayout& layout) {
  if (static_cast<int>(features.size()) != layout.num_features()) {
    throw std::invalid_argument("feature count does not match layout");
  }
  Eigen::VectorXd n = Eigen::VectorXd::Zero(layout.dim());
  const Vec3 dG = R_IG.matrix().transpose() * d;
  n.segment<3>(ErrorStateLayout::offset(StateBlock::kExtrinsicRotation)) = R_CI * d;
  for (std::size_t i = 0; i < features.size(); ++i) {
    n.segment<3>(layout.feature_offset(static_cast<int>(i))) = -skew(features[i] - p_I1) * dG;
  }
  return n;
}

Eigen::MatrixXd candidate_n2(const Rotation& R_IG, const Rotation& R_CI, const Vec3& gravity,
                             const ErrorStateLayout& layout) {
  Eigen::MatrixXd N = Eigen::MatrixXd::Zero(layout.dim(), 3);
  const Mat3& R = R_IG.matrix();
  N.block<3, 3>(ErrorStateLayout::offset(StateBlock::kOrientation), 0) = R;
  // Gravity enters as the physical acceleration g (pointing down).
  N.block<3, 3>(ErrorStateLayout::offset(StateBlock::kAccelBias), 0) = R * skew(gravity);
  N.block<3, 3>(ErrorStateLayout::offset(StateBlock::kExtrinsicRotation), 0) =
      -R_CI.matrix() * R;
  return N;
}

Eigen::MatrixXd gauge_directions(const KinematicSample& s1, const std::vector<Vec3>& features,
                                 const Vec3& gravity, const ErrorStateLayout& layout) {
  if (static_cast<int>(features.size()) != layout.num_features()) {
    throw std::invalid_argument("feature count does not match layout");
  }
  Eigen::MatrixXd N = Eigen::MatrixXd::Zero(layout.dim(), 4);
  const Vec3 g = gravity.normalized();
  N.block<3, 3>(ErrorStateLayout::offset(StateBlock::kPosition), 0) = Mat3::Identity();
  N.block<3, 1>(ErrorStateLayout::offset(StateBlock::kOrientation), 3) = s1.R_IG * g;
  N.block<3, 1>(ErrorStateLayout::offset(StateBlock::kVelocity), 3) = -skew(s1.v) * g;
  N.block<3, 1>(ErrorStateLayout::offset(StateBlock::kPosition), 3) = -skew(s1.p) * g;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const int off = layout.feature_offset(static_cast<int>(i));
    N.block<3, 3>(off, 0) = Mat3::Identity();
    N.block<3, 1>(off, 3) = -skew(features[i]) * g;
  }
  return N;
}

namespace {

Eigen::MatrixXd equilibrated(const Eigen::MatrixXd& M, const TolPolicy& policy) {
  Eigen::MatrixXd A = M;
  if (!policy.equilibrate_rows) return A;
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    const double n = A.row(r).norm();
    if (n > 0.0) A.row(r) /= n;
  }
  return A;
}

}  // namespace

double CandidateResidual::max() const {
  double m = 0.0;
  for (double c : columns) m = std::max(m, c);
  return m;
}

NullSpaceReport null_space(const Eigen::MatrixXd& M, int extrinsic_offset,
                           const TolPolicy& policy) {
  if (M.rows() == 0 || M.cols() == 0) throw std::invalid_argument("empty observability matrix");
  Eigen::MatrixXd A = equilibrated(M, policy);
  Eigen::VectorXd col_scale = Eigen::VectorXd::Ones(A.cols());
  if (policy.equilibrate_cols) {
    for (Eigen::Index c = 0; c < A.cols(); ++c) {
      const double n = A.col(c).norm();
      if (n > 0.0) col_scale(c) = 1.0 / n;
    }
    A = A * col_scale.asDiagonal();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd& s = svd.singularValues();

  NullSpaceReport rep;
  rep.rows = static_cast<int>(A.rows());
  rep.cols = static_cast<int>(A.cols());
  rep.threshold = s(0) * static_cast<double>(std::max(rep.rows, rep.cols)) * policy.relative;
  rep.singular_values.assign(s.data(), s.data() + s.size());
  rep.rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > rep.threshold) ++rep.rank;
  }
  const int nd = rep.cols - rep.rank;
  if (nd > 0) {
    // null(M) = D * null(M D)
    const Eigen::MatrixXd B = col_scale.asDiagonal() * svd.matrixV().rightCols(nd);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(B);
    rep.null_basis = qr.householderQ() * Eigen::MatrixXd::Identity(rep.cols, nd);
  } else {
    rep.null_basis = Eigen::MatrixXd(rep.cols, 0);
  }
  if (extrinsic_offset >= 0 && nd > 0) {
    rep.extrinsic_projection = rep.null_basis.middleRows(extrinsic_offset, 3);
    Eigen::JacobiSVD<Eigen::MatrixXd> ps(rep.extrinsic_projection);
    for (Eigen::Index i = 0; i < ps.singularValues().size(); ++i) {
      if (ps.singularValues()(i) > policy.projection_tol) ++rep.extrinsic_null_dim;
    }
  }
  return rep;
}

NullSpaceReport null_space(const ObservabilityMatrix& M, const TolPolicy& policy) {
  return null_space(M.matrix, ErrorStateLayout::offset(StateBlock::kExtrinsicRotation), policy);
}

CandidateResidual candidate_residual(const Eigen::MatrixXd& M, const Eigen::MatrixXd& N,
                                     const std::string& name, const TolPolicy& policy) {
  if (M.cols() != N.rows()) throw std::invalid_argument("candidate dimension mismatch");
  const Eigen::MatrixXd A = equilibrated(M, policy);
  const double norm_a = Eigen::JacobiSVD<Eigen::MatrixXd>(A).singularValues()(0);
  CandidateResidual r{name, {}};
  for (Eigen::Index j = 0; j < N.cols(); ++j) {
    const double nn = N.col(j).norm();
    r.columns.push_back(nn > 0.0 ? (A * N.col(j)).norm() / (norm_a * nn) : 0.0);
  }
  return r;
}

DofClassification classify_axis(const Vec3& axis, double tol) {
  DofClassification c;
  c.axis = axis;
  for (int i = 0; i < 3; ++i) c.flags[i] = std::abs(axis[i]) > tol;
  return c;
}

DofClassification classify_unobservable_dof(const Vec3& d, const Rotation& R_CI, double tol) {
  return classify_axis(R_CI * d.normalized(), tol);
}

nlohmann::json to_json(const NullSpaceReport& report) {
  nlohmann::json j;
  j["rows"] = report.rows;
  j["cols"] = report.cols;
  j["rank"] = report.rank;
  j["null_dim"] = report.null_dim();
  j["threshold"] = report.threshold;
  j["extrinsic_null_dim"] = report.extrinsic_null_dim;
  j["singular_values"] = report.singular_values;
  nlohmann::json cands = nlohmann::json::object();
  for (const auto& c : report.candidates) {
    cands[c.name] = {{"columns", c.columns}, {"max", c.max()}};
  }
  j["candidates"] = cands;
  return j;
}

}  // namespace vio_obs
