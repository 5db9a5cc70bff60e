#pragma once

#include <optional>
#include <vector>

#include "vicl/common.hpp"
#include "vicl/schedule.hpp"

namespace vicl::wbc {

/// Joint-space state of one torso+arm chain as the controller sees it.
struct ChainState {
  VectorXd q;
  VectorXd qd;
  Vector3d tcp = Vector3d::Zero();
  Vector3d tcp_vel = Vector3d::Zero();
  Eigen::Vector4d quat = Eigen::Vector4d(1, 0, 0, 0);  // w,x,y,z
  Vector3d omega = Vector3d::Zero();
  MatrixXd jacobian;   // 6 x dof, rows [linear; angular]
  VectorXd gravity;    // G(q) of the chain
};

/// Cartesian reference for one chain at the current cycle.
struct TaskReference {
  Vector3d x_d = Vector3d::Zero();
  Eigen::Vector4d quat_d = Eigen::Vector4d(1, 0, 0, 0);
  Vector3d v_d = Vector3d::Zero();  // used only with relative-velocity damping
  Matrix3d K = Matrix3d::Zero();
  Matrix3d D = Matrix3d::Zero();
};

enum class InverseKind { DampedLeastSquares, InertiaWeighted };

struct ControllerConfig {
  double rot_stiffness = 15.0;   // N*m/rad on the orientation rows
  double rot_damping = 4.0;
  InverseKind inverse = InverseKind::DampedLeastSquares;
  double dls_lambda = 1e-4;
  double sigma_threshold = 1e-3;  // damping engages below this singular value
  double torso_kp = 40.0;         // leader null-space posture gains
  double torso_kd = 12.0;
  double gamma = 0.5;             // passivity rate margin
  double mass_scale = 1.0;        // reference virtual mass in the rate bound
  bool relative_velocity_damping = false;
  double torso_v_limit = 0.5;     // m/s per torso joint
};

/// tau = J^T (-K (x - x_d) - D xdot) with a fixed rotational stiffness on the
/// orientation rows. The damping term uses absolute TCP velocity unless the
/// relative-velocity variant is enabled.
VectorXd task_torque(const ChainState& chain, const TaskReference& ref,
                     const ControllerConfig& cfg);

struct Projector {
  MatrixXd N;       // I - J^T J^{+T}
  MatrixXd j_pinv;  // generalized inverse used
  bool damped = false;
};

/// Exact generalized inverse away from singularities; damped least squares
/// (lambda) engages below the singular-value threshold and is flagged.
/// Inertia-weighted variant uses M^-1 J^T (J M^-1 J^T)^-1.
Projector nullspace_projector(const MatrixXd& jacobian, const ControllerConfig& cfg,
                              const MatrixXd* mass_matrix = nullptr);

/// Follower null-space seed: leader torso torque stacked over a zero arm block.
VectorXd follower_tau0(const Vector3d& tau_torso_from_leader, int arm_dof);

/// Velocity interface for the torso: M_adm qddot + D_adm qdot = tau_vir + tau_ext.
struct TorsoAdmittance {
  Matrix3d M_adm = 8.0 * Matrix3d::Identity();
  Matrix3d D_adm = 60.0 * Matrix3d::Identity();
  Vector3d qdot = Vector3d::Zero();
  bool saturated = false;

  /// Semi-implicit Euler step; returns the commanded torso joint velocity,
  /// clipped to v_limit with the saturation flag set.
  Vector3d step(const Vector3d& tau_vir, const Vector3d& tau_ext, double dt, double v_limit);
};

/// PI normal-force regulator replacing the Z-axis impedance term while sawing.
struct HybridForceOverlay {
  double kp = 0.8;
  double ki = 6.0;
  double windup_limit = 15.0;  // N on the integral term
  double integral = 0.0;

  double step(double f_measured, double f_target, double dt);
  void reset() { integral = 0.0; }
};

struct PassivityResult {
  bool pass = true;
  int first_violation = -1;
  double min_margin = std::numeric_limits<double>::infinity();  // bound - rate, N/m/s
};

/// Conservative rate-bound stand-in: lambda_max(Kdot_t) <= 2 gamma
/// lambda_min(D_t) lambda_min(K_t) / mass_scale at every step.
PassivityResult passivity_check(const ImpedanceSchedule& schedule, double gamma = 0.5,
                                double mass_scale = 1.0);

/// Maximum admissible stiffness rate at gains (K, D).
double passivity_rate_bound(const Matrix3d& K, const Matrix3d& D, double gamma,
                            double mass_scale);

struct ChainCommand {
  VectorXd tau_task;
  VectorXd tau_null;
  VectorXd tau_total;       // task + null + arm gravity compensation
  Vector3d torso_torque = Vector3d::Zero();  // torso rows before admittance
  bool damped_inverse = false;
};

struct ControlOutput {
  ChainCommand left;
  std::optional<ChainCommand> right;
  Vector3d torso_velocity_cmd = Vector3d::Zero();
  Matrix3d K_commanded_left = Matrix3d::Zero();
  double rho = 1.0;
  double passivity_margin = 0.0;
  bool rate_limited = false;
  bool aborted = false;     // safe zero-torque fallback engaged
  bool torso_saturated = false;
};

/// One whole-body controller owning the torso admittance state, the stiffness
/// rate limiter, and the optional Z-force overlay. Leader chain is the left
/// one; a right chain, when present, follows through the shared torso term.
class WholeBodyController {
 public:
  WholeBodyController(ControllerConfig cfg, TorsoAdmittance torso);

  void enable_hybrid_z(const HybridForceOverlay& overlay, double f_target);
  void disable_hybrid_z();

  /// `rho` scales the scheduled stiffness before the passivity rate limiter.
  ControlOutput step(const ChainState& left, const TaskReference& ref_left,
                     const std::optional<ChainState>& right,
                     const std::optional<TaskReference>& ref_right, double rho,
                     const Vector3d& torso_posture_ref, const Vector3d& torso_tau_ext,
                     double measured_fz, double dt);

  const ControllerConfig& config() const { return cfg_; }

 private:
  ControllerConfig cfg_;
  TorsoAdmittance torso_;
  HybridForceOverlay hybrid_;
  bool hybrid_enabled_ = false;
  double hybrid_target_ = 0.0;
  Matrix3d k_prev_ = Matrix3d::Zero();
  bool has_prev_ = false;
};

}  // namespace vicl::wbc
