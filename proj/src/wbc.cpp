#include "vicl/wbc.hpp"

#include <cmath>

namespace vicl::wbc {

namespace {

// Small-angle orientation error from quaternions (w,x,y,z): vector part of
// q_d * q^-1, doubled, hemisphere-fixed.
Vector3d orientation_error(const Eigen::Vector4d& quat, const Eigen::Vector4d& quat_d) {
  Eigen::Quaterniond q(quat(0), quat(1), quat(2), quat(3));
  Eigen::Quaterniond qd(quat_d(0), quat_d(1), quat_d(2), quat_d(3));
  Eigen::Quaterniond err = qd * q.conjugate();
  if (err.w() < 0.0) err.coeffs() = -err.coeffs();
  return 2.0 * Vector3d(err.x(), err.y(), err.z());
}

}  // namespace

VectorXd task_torque(const ChainState& chain, const TaskReference& ref,
                     const ControllerConfig& cfg) {
  const auto dof = chain.q.size();
  if (chain.jacobian.rows() != 6 || chain.jacobian.cols() != dof) {
    throw ValidationError("task_torque: jacobian shape mismatch with chain dof");
  }
  double k_scale = std::max(1.0, ref.K.cwiseAbs().maxCoeff());
  if (!is_spd(ref.K, 0.0, 1e-8 * k_scale) ||
      !is_spd(ref.D, 0.0, 1e-8 * std::max(1.0, ref.D.cwiseAbs().maxCoeff()))) {
    throw ValidationError("task_torque: K and D must be SPD");
  }
  Vector3d v = cfg.relative_velocity_damping ? Vector3d(chain.tcp_vel - ref.v_d) : chain.tcp_vel;
  Eigen::Matrix<double, 6, 1> wrench;
  wrench.head<3>() = -ref.K * (chain.tcp - ref.x_d) - ref.D * v;
  wrench.tail<3>() =
      cfg.rot_stiffness * orientation_error(chain.quat, ref.quat_d) - cfg.rot_damping * chain.omega;
  return chain.jacobian.transpose() * wrench;
}

Projector nullspace_projector(const MatrixXd& jacobian, const ControllerConfig& cfg,
                              const MatrixXd* mass_matrix) {
  const auto rows = jacobian.rows();
  const auto cols = jacobian.cols();
  if (rows == 0 || cols == 0) throw ValidationError("nullspace_projector: empty jacobian");

  Projector out;
  Eigen::JacobiSVD<MatrixXd> svd(jacobian);
  double sigma_min = svd.singularValues()(svd.singularValues().size() - 1);
  out.damped = sigma_min < cfg.sigma_threshold;

  if (cfg.inverse == InverseKind::InertiaWeighted && mass_matrix != nullptr) {
    MatrixXd minv_jt = mass_matrix->ldlt().solve(jacobian.transpose());
    MatrixXd gram = jacobian * minv_jt;
    if (out.damped) gram += cfg.dls_lambda * cfg.dls_lambda * MatrixXd::Identity(rows, rows);
    out.j_pinv = minv_jt * gram.ldlt().solve(MatrixXd::Identity(rows, rows));
  } else {
    MatrixXd gram = jacobian * jacobian.transpose();
    if (out.damped) gram += cfg.dls_lambda * cfg.dls_lambda * MatrixXd::Identity(rows, rows);
    out.j_pinv = jacobian.transpose() * gram.ldlt().solve(MatrixXd::Identity(rows, rows));
  }
  out.N = MatrixXd::Identity(cols, cols) - jacobian.transpose() * out.j_pinv.transpose();
  return out;
}

VectorXd follower_tau0(const Vector3d& tau_torso_from_leader, int arm_dof) {
  if (arm_dof < 0) throw ValidationError("follower_tau0: negative arm dof");
  VectorXd out = VectorXd::Zero(3 + arm_dof);
  out.head<3>() = tau_torso_from_leader;
  return out;
}

Vector3d TorsoAdmittance::step(const Vector3d& tau_vir, const Vector3d& tau_ext, double dt,
                               double v_limit) {
  if (!(dt > 0.0)) throw ValidationError("torso_admittance: dt must be > 0");
  // (M + dt D) v_new = M v + dt tau
  Matrix3d lhs = M_adm + dt * D_adm;
  qdot = lhs.ldlt().solve(M_adm * qdot + dt * (tau_vir + tau_ext));
  saturated = false;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(qdot(i)) > v_limit) {
      qdot(i) = std::copysign(v_limit, qdot(i));
      saturated = true;
    }
  }
  return qdot;
}

double HybridForceOverlay::step(double f_measured, double f_target, double dt) {
  if (!std::isfinite(f_target)) throw ValidationError("hybrid overlay: target must be finite");
  double error = f_target - f_measured;
  integral = std::clamp(integral + ki * error * dt, -windup_limit, windup_limit);
  return kp * error + integral;
}

double passivity_rate_bound(const Matrix3d& K, const Matrix3d& D, double gamma,
                            double mass_scale) {
  Eigen::SelfAdjointEigenSolver<Matrix3d> es_k(K);
  Eigen::SelfAdjointEigenSolver<Matrix3d> es_d(D);
  return 2.0 * gamma * es_d.eigenvalues().minCoeff() * es_k.eigenvalues().minCoeff() / mass_scale;
}

PassivityResult passivity_check(const ImpedanceSchedule& schedule, double gamma,
                                double mass_scale) {
  schedule.validate();
  PassivityResult res;
  const double dt = schedule.timebase.dt;
  for (int t = 0; t + 1 < schedule.timebase.n; ++t) {
    Matrix3d kdot = (schedule.K[t + 1] - schedule.K[t]) / dt;
    Eigen::SelfAdjointEigenSolver<Matrix3d> es(0.5 * (kdot + kdot.transpose()));
    double rate = es.eigenvalues().maxCoeff();
    double bound = passivity_rate_bound(schedule.K[t], schedule.D[t], gamma, mass_scale);
    double margin = bound - rate;
    res.min_margin = std::min(res.min_margin, margin);
    if (rate > bound && res.pass) {
      res.pass = false;
      res.first_violation = t;
    }
  }
  return res;
}

WholeBodyController::WholeBodyController(ControllerConfig cfg, TorsoAdmittance torso)
    : cfg_(cfg), torso_(torso) {}

void WholeBodyController::enable_hybrid_z(const HybridForceOverlay& overlay, double f_target) {
  hybrid_ = overlay;
  hybrid_enabled_ = true;
  hybrid_target_ = f_target;
}

void WholeBodyController::disable_hybrid_z() {
  hybrid_enabled_ = false;
  hybrid_.reset();
}

ControlOutput WholeBodyController::step(const ChainState& left, const TaskReference& ref_left,
                                        const std::optional<ChainState>& right,
                                        const std::optional<TaskReference>& ref_right,
                                        double rho, const Vector3d& torso_posture_ref,
                                        const Vector3d& torso_tau_ext, double measured_fz,
                                        double dt) {
  ControlOutput out;
  out.rho = rho;
  try {
    if (!(rho > 0.0) || !std::isfinite(rho)) {
      throw NumericError("control_step: regulatory factor must be positive and finite");
    }
    // Scale the scheduled stiffness, then hold the realized rate inside the
    // passivity bound.
    Matrix3d k_target = rho * ref_left.K;
    Matrix3d d_target = ref_left.D * std::sqrt(rho);
    if (has_prev_) {
      double bound = passivity_rate_bound(k_prev_, d_target, cfg_.gamma, cfg_.mass_scale);
      Matrix3d dk = (k_target - k_prev_) / dt;
      Eigen::SelfAdjointEigenSolver<Matrix3d> es(0.5 * (dk + dk.transpose()));
      double rate = es.eigenvalues().maxCoeff();
      if (rate > bound) {
        k_target = k_prev_ + (k_target - k_prev_) * (bound / rate);
        out.rate_limited = true;
      }
      out.passivity_margin = bound - rate;
    } else {
      out.passivity_margin =
          passivity_rate_bound(k_target, d_target, cfg_.gamma, cfg_.mass_scale);
    }
    k_prev_ = k_target;
    has_prev_ = true;

    TaskReference lref = ref_left;
    lref.K = k_target;
    lref.D = d_target;
    out.K_commanded_left = k_target;

    const auto arm_dof = static_cast<int>(left.q.size()) - 3;
    if (arm_dof < 1) throw ValidationError("control_step: chain must have torso(3) + arm");

    VectorXd tau_task_l = task_torque(left, lref, cfg_);
    if (hybrid_enabled_) {
      // Replace the Z-axis impedance wrench with the PI force command.
      double fz_cmd = hybrid_.step(measured_fz, hybrid_target_, dt);
      Eigen::Matrix<double, 6, 1> wrench_z = Eigen::Matrix<double, 6, 1>::Zero();
      Vector3d v = cfg_.relative_velocity_damping ? Vector3d(left.tcp_vel - lref.v_d)
                                                  : left.tcp_vel;
      double impedance_z =
          -lref.K.row(2).dot(left.tcp - lref.x_d) - lref.D.row(2).dot(v);
      // Press along -z with the target as feedforward plus the PI correction.
      wrench_z(2) = -impedance_z - (hybrid_target_ + fz_cmd);
      tau_task_l += left.jacobian.transpose() * wrench_z;
    }

    Projector proj_l = nullspace_projector(left.jacobian, cfg_);
    out.left.damped_inverse = proj_l.damped;

    // Leader sub-task: joint-space PD pulling the torso toward the
    // demonstrated posture.
    VectorXd tau0_l = VectorXd::Zero(left.q.size());
    tau0_l.head<3>() = cfg_.torso_kp * (torso_posture_ref - left.q.head<3>()) -
                       cfg_.torso_kd * left.qd.head<3>();
    VectorXd tau_null_l = proj_l.N * tau0_l;

    out.left.tau_task = tau_task_l;
    out.left.tau_null = tau_null_l;
    out.left.tau_total = tau_task_l + tau_null_l;
    out.left.tau_total.tail(arm_dof) += left.gravity.tail(arm_dof);
    out.left.torso_torque = (tau_task_l + tau_null_l).head<3>();

    Vector3d torso_vir = out.left.torso_torque;

    if (right.has_value()) {
      if (!ref_right.has_value()) throw ValidationError("control_step: right reference missing");
      TaskReference rref = *ref_right;
      rref.K = rho * ref_right->K;
      rref.D = ref_right->D * std::sqrt(rho);
      const auto arm_dof_r = static_cast<int>(right->q.size()) - 3;
      VectorXd tau_task_r = task_torque(*right, rref, cfg_);
      Projector proj_r = nullspace_projector(right->jacobian, cfg_);
      VectorXd tau0_r = follower_tau0(out.left.torso_torque, arm_dof_r);
      VectorXd tau_null_r = proj_r.N * tau0_r;
      ChainCommand rc;
      rc.tau_task = tau_task_r;
      rc.tau_null = tau_null_r;
      rc.tau_total = tau_task_r + tau_null_r;
      rc.tau_total.tail(arm_dof_r) += right->gravity.tail(arm_dof_r);
      rc.torso_torque = (tau_task_r + tau_null_r).head<3>();
      rc.damped_inverse = proj_r.damped;
      out.right = rc;
      // The shared torso realizes the follower-chain torso rows, which carry
      // the leader's wish through the null-space seed.
      torso_vir = rc.torso_torque;
    }

    out.torso_velocity_cmd = torso_.step(torso_vir, torso_tau_ext, dt, cfg_.torso_v_limit);
    out.torso_saturated = torso_.saturated;
  } catch (const std::exception&) {
    // Safe fallback: zero torques, zero torso motion.
    out.aborted = true;
    out.left.tau_total = VectorXd::Zero(left.q.size());
    out.left.tau_task = VectorXd::Zero(left.q.size());
    out.left.tau_null = VectorXd::Zero(left.q.size());
    if (right.has_value()) {
      ChainCommand rc;
      rc.tau_total = VectorXd::Zero(right->q.size());
      rc.tau_task = rc.tau_total;
      rc.tau_null = rc.tau_total;
      out.right = rc;
    }
    out.torso_velocity_cmd.setZero();
  }
  return out;
}

}  // namespace vicl::wbc
