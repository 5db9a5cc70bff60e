#include "vicl/lqt.hpp"

#include <cmath>

namespace vicl::lqt {

void LqtProblem::validate() const {
  if (T < 2) throw ValidationError("lqt: T must be >= 2");
  if (dim < 1) throw ValidationError("lqt: dim must be >= 1");
  if (!(dt > 0.0)) throw ValidationError("lqt: dt must be > 0");
  if (static_cast<int>(targets.size()) != T || static_cast<int>(precisions.size()) != T) {
    throw ValidationError("lqt: targets/precisions must have T entries");
  }
  if (R.rows() != dim || R.cols() != dim || !is_spd(R, 0.0, 1e-9 * std::max(1.0, R.norm()))) {
    throw ValidationError("lqt: R must be SPD dim x dim");
  }
  if (x0.size() != dim) throw ValidationError("lqt: x0 dimension mismatch");
  for (int t = 0; t < T; ++t) {
    if (targets[t].size() != dim) throw ValidationError("lqt: target dimension mismatch");
    const MatrixXd& w = precisions[t];
    if (w.rows() != dim || w.cols() != dim) throw ValidationError("lqt: precision shape mismatch");
    if ((w - w.transpose()).cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, w.norm())) {
      throw ValidationError("lqt: precision not symmetric at step " + std::to_string(t));
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(w);
    if (es.eigenvalues().minCoeff() < -1e-9 * std::max(1.0, w.norm())) {
      throw ValidationError("lqt: precision not PSD at step " + std::to_string(t));
    }
  }
}

LqtProblem build_problem(const std::vector<tpgmm::GaussianSeq>& frame_targets, const MatrixXd& R,
                         double dt, double precision_reg) {
  if (frame_targets.empty()) throw ValidationError("build_problem: no target sequences");
  const auto T = static_cast<int>(frame_targets[0].mean.size());
  if (T < 2) throw ValidationError("build_problem: need >= 2 steps");
  const auto dim = static_cast<int>(frame_targets[0].mean[0].size());
  for (const auto& seq : frame_targets) {
    if (static_cast<int>(seq.mean.size()) != T || static_cast<int>(seq.cov.size()) != T) {
      throw ValidationError("build_problem: sequences must share the timebase");
    }
  }

  LqtProblem p;
  p.T = T;
  p.dim = dim;
  p.dt = dt;
  p.R = R;
  p.targets.resize(T);
  p.precisions.resize(T);
  for (int t = 0; t < T; ++t) {
    MatrixXd w_sum = MatrixXd::Zero(dim, dim);
    VectorXd wy = VectorXd::Zero(dim);
    for (const auto& seq : frame_targets) {
      if (seq.mean[t].size() != dim) throw ValidationError("build_problem: dim mismatch");
      Eigen::LLT<MatrixXd> llt(seq.cov[t]);
      if (llt.info() != Eigen::Success) {
        throw NumericError("build_problem: non-SPD covariance at step " + std::to_string(t));
      }
      MatrixXd w = llt.solve(MatrixXd::Identity(dim, dim));
      w_sum += w;
      wy += w * seq.mean[t];
    }
    // The two-frame quadratic sum collapses to one precision-weighted target.
    MatrixXd w_reg = w_sum + precision_reg * MatrixXd::Identity(dim, dim);
    p.targets[t] = w_reg.ldlt().solve(wy);
    p.precisions[t] = 0.5 * (w_sum + w_sum.transpose());
  }
  p.x0 = p.targets[0];
  return p;
}

LqtSolution solve(const LqtProblem& problem) {
  problem.validate();
  const int T = problem.T;
  const int d = problem.dim;
  const double dt = problem.dt;
  const int nu = d * (T - 1);

  // Position response of the double integrator: p_t = p0 + sum_s dt^2 (t-s-1/2) u_s.
  MatrixXd S = MatrixXd::Zero(nu, nu);  // rows: positions t=1..T-1, cols: u_0..u_{T-2}
  for (int t = 1; t <= T - 1; ++t) {
    for (int s = 0; s < t; ++s) {
      double c = dt * dt * (static_cast<double>(t - s) - 0.5);
      S.block((t - 1) * d, s * d, d, d) = c * MatrixXd::Identity(d, d);
    }
  }

  // Normal equations H U = g with H = S' W S + I (x) R.
  MatrixXd WS(nu, nu);
  VectorXd wr(nu);
  for (int t = 1; t <= T - 1; ++t) {
    const MatrixXd& w = problem.precisions[t];
    WS.middleRows((t - 1) * d, d) = w * S.middleRows((t - 1) * d, d);
    wr.segment((t - 1) * d, d) = w * (problem.targets[t] - problem.x0);
  }
  MatrixXd H = S.transpose() * WS;
  for (int s = 0; s < T - 1; ++s) H.block(s * d, s * d, d, d) += problem.R;
  VectorXd g = S.transpose() * wr;

  LqtSolution sol;
  Eigen::LDLT<MatrixXd> ldlt(H);
  VectorXd u = ldlt.solve(g);
  // Iterative refinement recovers the digits the normal equations lose on
  // stiff via-point weights.
  for (int it = 0; it < 3 && ldlt.info() == Eigen::Success; ++it) {
    u += ldlt.solve(g - H * u);
  }
  double rel = (H * u - g).norm() / std::max(g.norm(), 1e-300);
  if (ldlt.info() != Eigen::Success || !u.allFinite() || rel > 1e-6) {
    H += 1e-10 * MatrixXd::Identity(nu, nu);
    Eigen::LDLT<MatrixXd> ridged(H);
    u = ridged.solve(g);
    for (int it = 0; it < 3; ++it) u += ridged.solve(g - H * u);
    rel = (H * u - g).norm() / std::max(g.norm(), 1e-300);
    sol.ridged = true;
  }
  sol.kkt_residual = rel;

  // Roll the control through the dynamics so the trajectory is feasible by
  // construction.
  sol.position.resize(T);
  sol.velocity.resize(T);
  sol.control.resize(T - 1);
  VectorXd pos = problem.x0;
  VectorXd vel = VectorXd::Zero(d);
  sol.position[0] = pos;
  sol.velocity[0] = vel;
  for (int t = 0; t < T - 1; ++t) {
    VectorXd ut = u.segment(t * d, d);
    sol.control[t] = ut;
    pos = pos + dt * vel + 0.5 * dt * dt * ut;
    vel = vel + dt * ut;
    sol.position[t + 1] = pos;
    sol.velocity[t + 1] = vel;
  }

  double cost = 0.0;
  for (int t = 0; t < T; ++t) {
    VectorXd e = sol.position[t] - problem.targets[t];
    cost += e.dot(problem.precisions[t] * e);
  }
  for (int t = 0; t < T - 1; ++t) cost += sol.control[t].dot(problem.R * sol.control[t]);
  sol.cost = cost;
  return sol;
}

ImpedanceSchedule schedule(const LqtSolution& solution,
                           const std::vector<Eigen::Vector4d>& quaternions,
                           const std::vector<Vector3d>& stiffness_diag,
                           const std::vector<Matrix3d>& axes, double delta, double dt) {
  const auto T = solution.position.size();
  if (T < 2) throw ValidationError("schedule: empty solution");
  if (stiffness_diag.size() != T || quaternions.size() != T) {
    throw ValidationError("schedule: stiffness/orientation length mismatch");
  }
  if (axes.size() != 1 && axes.size() != T) {
    throw ValidationError("schedule: axes must be constant or per-step");
  }
  if (!(delta > 0.0)) throw ValidationError("schedule: delta must be > 0");
  if (!(dt > 0.0)) throw ValidationError("schedule: dt must be > 0");

  ImpedanceSchedule out;
  out.timebase.n = static_cast<int>(T);
  out.timebase.dt = dt;
  for (std::size_t t = 0; t < T; ++t) {
    if (solution.position[t].size() != 3) {
      throw ValidationError("schedule: expected 3-D positions");
    }
    if (stiffness_diag[t].minCoeff() <= 0.0) {
      throw ValidationError("schedule: nonpositive stiffness at step " + std::to_string(t));
    }
    const Matrix3d& v = axes.size() == 1 ? axes[0] : axes[t];
    Matrix3d k = v * stiffness_diag[t].asDiagonal() * v.transpose();
    k = 0.5 * (k + k.transpose());
    out.K.push_back(k);
    out.D.push_back(delta * spd_sqrt(k));
    out.x_d.push_back(make_pose(solution.position[t], quaternions[t]));
  }
  return out;
}

}  // namespace vicl::lqt
