#include "vicl/stiffness.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace vicl::stiffness {

void StiffnessEllipsoid::validate() const {
  if ((K - K.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
    throw NumericError("stiffness: K not symmetric");
  }
  Matrix3d recon = V * h_diag.asDiagonal() * V.transpose();
  if ((K - recon).cwiseAbs().maxCoeff() > 1e-8) {
    throw NumericError("stiffness: K != V H V^T");
  }
  if (h_diag.minCoeff() <= 0.0) throw NumericError("stiffness: nonpositive eigenvalue");
}

ArmGeometry arm_geometry(const ArmPose& pose) {
  pose.validate();
  ArmGeometry g;
  g.l1 = pose.elbow - pose.shoulder;
  g.l2 = pose.wrist - pose.shoulder;
  Vector3d c = g.l2.cross(g.l1);
  if (c.norm() <= 1e-9) throw ValidationError("arm_geometry: degenerate configuration");
  Vector3d in_plane = c.cross(g.l2);  // = |l2|^2 * (l1 component perpendicular to l2)
  Vector3d u2 = in_plane.normalized();
  g.d1 = g.l2.norm();
  g.d2 = std::abs(g.l1.dot(u2));
  g.l3 = g.d2 * u2;
  g.l4 = c.normalized();
  return g;
}

Matrix3d eigen_axes(const ArmGeometry& geom) {
  Vector3d c = geom.l2.cross(geom.l1);
  if (c.norm() <= 1e-9) throw ValidationError("eigen_axes: degenerate geometry");
  Matrix3d v;
  v.col(0) = geom.l2.normalized();
  v.col(1) = c.cross(geom.l2).normalized();
  v.col(2) = c.normalized();
  return v;
}

double alpha(double cocontraction_level, const SubjectParams& params) {
  params.validate();
  if (cocontraction_level < 0.0 || cocontraction_level > 1.0) {
    throw ValidationError("alpha: co-contraction must lie in [0,1]");
  }
  double a = params.b1 * cocontraction_level + params.b2;
  if (!(a > 0.0)) throw NumericError("alpha: nonpositive synergistic contribution");
  return a;
}

StiffnessEllipsoid endpoint_stiffness(const ArmPose& pose, double cocontraction_level,
                                      const SubjectParams& params) {
  ArmGeometry geom = arm_geometry(pose);
  double a = alpha(cocontraction_level, params);
  StiffnessEllipsoid e;
  e.V = eigen_axes(geom);
  e.h_diag = a * Vector3d(1.0, params.a1 / geom.d1, params.a2 * geom.d2);
  e.K = e.V * e.h_diag.asDiagonal() * e.V.transpose();
  e.K = 0.5 * (e.K + e.K.transpose());
  return e;
}

Matrix3d damping_from_stiffness(const Matrix3d& K, double delta) {
  if (!is_spd(K, 0.0, 1e-8 * std::max(1.0, K.cwiseAbs().maxCoeff()))) {
    throw NumericError("damping_from_stiffness: K must be SPD");
  }
  return delta * spd_sqrt(K);
}

// ---------------------------------------------------------------------------
// Calibration

namespace {

struct TrialBasis {
  Matrix3d V;
  double d1, d2;
  double A;
  Matrix3d K_measured;
};

// Residual of the whole trial set given (a1, a2), with (b1, b2) eliminated by
// the closed-form inner least squares.
double residual_given_shape(const std::vector<TrialBasis>& trials, double a1, double a2,
                            double* b1_out, double* b2_out) {
  double s_ww = 0.0, s_w = 0.0, s_1 = 0.0, s_bk_a = 0.0, s_bk = 0.0;
  std::vector<Matrix3d> bases(trials.size());
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const TrialBasis& t = trials[i];
    Vector3d hs(1.0, a1 / t.d1, a2 * t.d2);
    bases[i] = t.V * hs.asDiagonal() * t.V.transpose();
    double w = bases[i].squaredNorm();
    double bk = (bases[i].array() * t.K_measured.array()).sum();
    s_ww += t.A * t.A * w;
    s_w += t.A * w;
    s_1 += w;
    s_bk_a += t.A * bk;
    s_bk += bk;
  }
  double det = s_ww * s_1 - s_w * s_w;
  if (std::abs(det) < 1e-9 * std::max(1.0, s_ww * s_1)) {
    throw ValidationError(
        "calibrate: rank deficient (b1, b2 not separable; need >= 2 distinct "
        "co-contraction levels)");
  }
  double b1 = (s_bk_a * s_1 - s_bk * s_w) / det;
  double b2 = (s_ww * s_bk - s_w * s_bk_a) / det;
  if (b1_out) *b1_out = b1;
  if (b2_out) *b2_out = b2;
  double r = 0.0;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    double a = b1 * trials[i].A + b2;
    r += (a * bases[i] - trials[i].K_measured).squaredNorm();
  }
  return r;
}

// Minimal 2-D Nelder-Mead on log-parameters, which keeps (a1, a2) positive.
Eigen::Vector2d nelder_mead_2d(const std::function<double(const Eigen::Vector2d&)>& f,
                               Eigen::Vector2d x0, int max_iter = 400, double tol = 1e-14) {
  std::array<Eigen::Vector2d, 3> pts = {x0, x0 + Eigen::Vector2d(0.25, 0.0),
                                        x0 + Eigen::Vector2d(0.0, 0.25)};
  std::array<double, 3> vals;
  for (int i = 0; i < 3; ++i) vals[i] = f(pts[i]);
  for (int it = 0; it < max_iter; ++it) {
    std::array<int, 3> idx = {0, 1, 2};
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return vals[a] < vals[b]; });
    int best = idx[0], mid = idx[1], worst = idx[2];
    if (std::abs(vals[worst] - vals[best]) <= tol * (std::abs(vals[best]) + tol)) break;
    Eigen::Vector2d centroid = 0.5 * (pts[best] + pts[mid]);
    Eigen::Vector2d refl = centroid + (centroid - pts[worst]);
    double f_refl = f(refl);
    if (f_refl < vals[best]) {
      Eigen::Vector2d exp_pt = centroid + 2.0 * (centroid - pts[worst]);
      double f_exp = f(exp_pt);
      if (f_exp < f_refl) {
        pts[worst] = exp_pt; vals[worst] = f_exp;
      } else {
        pts[worst] = refl; vals[worst] = f_refl;
      }
    } else if (f_refl < vals[mid]) {
      pts[worst] = refl; vals[worst] = f_refl;
    } else {
      Eigen::Vector2d contr = centroid + 0.5 * (pts[worst] - centroid);
      double f_contr = f(contr);
      if (f_contr < vals[worst]) {
        pts[worst] = contr; vals[worst] = f_contr;
      } else {
        pts[mid] = pts[best] + 0.5 * (pts[mid] - pts[best]);
        pts[worst] = pts[best] + 0.5 * (pts[worst] - pts[best]);
        vals[mid] = f(pts[mid]);
        vals[worst] = f(pts[worst]);
      }
    }
  }
  std::array<int, 3> idx = {0, 1, 2};
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return vals[a] < vals[b]; });
  return pts[idx[0]];
}

}  // namespace

CalibrationResult calibrate(const std::vector<CalibrationObservation>& observations,
                            double delta) {
  if (observations.size() < 4) {
    throw ValidationError("calibrate: need >= 4 observations");
  }
  std::vector<TrialBasis> trials;
  trials.reserve(observations.size());
  double a_min = 1e9, a_max = -1e9;
  std::vector<Vector3d> wrists;
  for (const auto& obs : observations) {
    ArmGeometry g = arm_geometry(obs.pose);
    TrialBasis t;
    t.V = eigen_axes(g);
    t.d1 = g.d1;
    t.d2 = g.d2;
    t.A = obs.cocontraction;
    t.K_measured = 0.5 * (obs.K_measured + obs.K_measured.transpose());
    trials.push_back(t);
    a_min = std::min(a_min, t.A);
    a_max = std::max(a_max, t.A);
    wrists.push_back(obs.pose.wrist - obs.pose.shoulder);
  }
  if (a_max - a_min < 1e-9) {
    throw ValidationError(
        "calibrate: rank deficient (b1, b2 not separable; need >= 2 distinct "
        "co-contraction levels)");
  }
  bool distinct_pose = false;
  for (std::size_t i = 1; i < wrists.size() && !distinct_pose; ++i) {
    if ((wrists[i] - wrists[0]).norm() > 1e-9) distinct_pose = true;
  }
  if (!distinct_pose) throw ValidationError("calibrate: need >= 2 distinct arm poses");

  auto objective = [&](const Eigen::Vector2d& log_a) {
    double a1 = std::exp(log_a(0));
    double a2 = std::exp(log_a(1));
    return residual_given_shape(trials, a1, a2, nullptr, nullptr);
  };

  // Restarts around unit shape parameters; spans Table-style magnitudes.
  const std::array<Eigen::Vector2d, 5> seeds = {
      Eigen::Vector2d(std::log(0.3), std::log(2.0)), Eigen::Vector2d(std::log(0.1), std::log(0.5)),
      Eigen::Vector2d(std::log(1.0), std::log(1.0)), Eigen::Vector2d(std::log(0.05), std::log(5.0)),
      Eigen::Vector2d(std::log(0.5), std::log(4.0))};
  Eigen::Vector2d best_pt = seeds[0];
  double best_val = std::numeric_limits<double>::infinity();
  for (const auto& s : seeds) {
    Eigen::Vector2d pt = nelder_mead_2d(objective, s);
    double v = objective(pt);
    if (v < best_val) {
      best_val = v;
      best_pt = pt;
    }
  }
  // Polish from the winner.
  best_pt = nelder_mead_2d(objective, best_pt, 600, 1e-16);

  CalibrationResult result;
  result.params.a1 = std::exp(best_pt(0));
  result.params.a2 = std::exp(best_pt(1));
  result.params.delta = delta;
  result.residual = residual_given_shape(trials, result.params.a1, result.params.a2,
                                         &result.params.b1, &result.params.b2);
  if (result.params.b1 <= 0.0 || result.params.b2 <= 0.0) {
    throw NumericError("calibrate: fitted b1/b2 not positive; data inconsistent with the model");
  }
  result.per_observation.reserve(trials.size());
  for (const auto& t : trials) {
    Vector3d hs(1.0, result.params.a1 / t.d1, result.params.a2 * t.d2);
    Matrix3d model =
        (result.params.b1 * t.A + result.params.b2) * t.V * hs.asDiagonal() * t.V.transpose();
    result.per_observation.push_back((model - t.K_measured).norm());
  }
  result.params.validate();
  return result;
}

Matrix3d perturbation_stiffness(const std::vector<Vector3d>& displacements,
                                const std::vector<Vector3d>& forces) {
  if (displacements.size() != forces.size()) {
    throw ValidationError("perturbation_stiffness: displacement/force count mismatch");
  }
  if (displacements.size() < 6) {
    throw ValidationError("perturbation_stiffness: need >= 6 samples");
  }
  Matrix3d xxt = Matrix3d::Zero();
  Matrix3d fxt = Matrix3d::Zero();
  for (std::size_t i = 0; i < displacements.size(); ++i) {
    xxt += displacements[i] * displacements[i].transpose();
    fxt += forces[i] * displacements[i].transpose();
  }
  Eigen::SelfAdjointEigenSolver<Matrix3d> es(xxt);
  if (es.eigenvalues().minCoeff() < 1e-10 * std::max(1e-12, es.eigenvalues().maxCoeff())) {
    throw ValidationError(
        "perturbation_stiffness: displacements rank deficient (need 3 independent directions)");
  }
  Matrix3d k = fxt * xxt.inverse();
  return 0.5 * (k + k.transpose());
}

// ---------------------------------------------------------------------------
// EKF

void EkfState::validate() const {
  if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-8) {
    throw NumericError("ekf: covariance not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> es(P);
  if (es.eigenvalues().minCoeff() < -1e-9) throw NumericError("ekf: covariance not PSD");
  if (k_hat.minCoeff() < 0.0 || d_hat.minCoeff() < 0.0) {
    throw NumericError("ekf: negative estimate after projection");
  }
}

namespace {

using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat36 = Eigen::Matrix<double, 3, 6>;

Mat36 measurement_jacobian(const EkfObservation& obs) {
  Mat36 h = Mat36::Zero();
  for (int i = 0; i < 3; ++i) {
    h(i, i) = obs.position_error(i);
    h(i, 3 + i) = -obs.velocity(i);
  }
  return h;
}

Vector3d measurement_model(const Vector3d& k, const Vector3d& d, const EkfObservation& obs) {
  return k.cwiseProduct(obs.position_error) - d.cwiseProduct(obs.velocity);
}

}  // namespace

EkfState ekf_step(const EkfState& state, const EkfObservation& obs, double dt,
                  const EkfNoise& noise) {
  if (!(dt > 0.0)) throw ValidationError("ekf_step: dt must be > 0");

  // Predict: random walk.
  Eigen::Matrix<double, 6, 1> s;
  s << state.k_hat, state.d_hat;
  Mat6 p = state.P;
  for (int i = 0; i < 3; ++i) {
    p(i, i) += noise.q_k * dt;
    p(3 + i, 3 + i) += noise.q_d * dt;
  }

  // Update.
  Mat36 h = measurement_jacobian(obs);
  Matrix3d r = noise.r_force * Matrix3d::Identity();
  Matrix3d innov_cov = h * p * h.transpose() + r;
  Eigen::Matrix<double, 6, 3> gain = p * h.transpose() * innov_cov.inverse();
  Vector3d innovation = obs.force - measurement_model(state.k_hat, state.d_hat, obs);
  s += gain * innovation;
  Mat6 ikh = Mat6::Identity() - gain * h;
  p = ikh * p * ikh.transpose() + gain * r * gain.transpose();
  p = 0.5 * (p + p.transpose());

  EkfState out;
  out.k_hat = s.head<3>().cwiseMax(0.0);
  out.d_hat = s.tail<3>().cwiseMax(0.0);
  out.P = p;
  out.reconditioned = false;

  Eigen::SelfAdjointEigenSolver<Mat6> es(out.P);
  if (es.eigenvalues().minCoeff() < 0.0) {
    // Floor tiny negative eigenvalues from roundoff and flag it.
    Eigen::Matrix<double, 6, 1> ev = es.eigenvalues().cwiseMax(1e-12);
    out.P = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    out.reconditioned = true;
  }
  return out;
}

double ekf_nis(const EkfState& state, const EkfObservation& obs, const EkfNoise& noise) {
  Mat36 h = measurement_jacobian(obs);
  Matrix3d innov_cov =
      h * state.P * h.transpose() + noise.r_force * Matrix3d::Identity();
  Vector3d innovation = obs.force - measurement_model(state.k_hat, state.d_hat, obs);
  return innovation.dot(innov_cov.inverse() * innovation);
}

}  // namespace vicl::stiffness
