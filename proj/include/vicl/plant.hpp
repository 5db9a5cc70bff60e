#pragma once

#include <functional>
#include <optional>
#include <string>

#include "vicl/chain.hpp"
#include "vicl/common.hpp"
#include "vicl/wbc.hpp"

namespace vicl::sim {

/// Torque-driven single-chain step: forward dynamics via M^-1 solve + RK4,
/// with per-step energy bookkeeping.
struct ChainSimState {
  VectorXd q;
  VectorXd qd;
  double work_in = 0.0;      // integral of qd' tau + tcp_v . f_ext
  double dissipated = 0.0;   // integral of qd' B qd
};

ChainSimState step_chain(const KinematicChain& chain, const ChainSimState& state,
                         const VectorXd& tau, const Vector3d& f_tcp, double dt,
                         int substeps = 1);

enum class PlantVariant { Reduced, Full };

KinematicChain make_chain(PlantVariant variant, bool left_side);

/// Home joint vector whose TCP is a comfortable workspace point.
VectorXd chain_home(PlantVariant variant);

/// Articulated torso + arm(s) robot. The torso joints are shared between the
/// two chains and velocity-servoed (first-order lag on the commanded rate);
/// arm joints are torque-driven with the full coupled chain dynamics.
class Plant {
 public:
  Plant(PlantVariant variant, bool bimanual);

  struct ExternalForces {
    Vector3d f_left = Vector3d::Zero();
    Vector3d f_right = Vector3d::Zero();
  };

  /// Force model evaluated inside every integrator stage: (time, tcp/vel per
  /// chain, object position/velocity) -> forces on the TCPs and the object.
  using ForceModel = std::function<ExternalForces(
      double t, const Vector3d& tcp_l, const Vector3d& vel_l, const Vector3d& tcp_r,
      const Vector3d& vel_r, const Vector3d& x_obj, const Vector3d& v_obj, Vector3d* f_obj)>;

  /// Attach a free point mass coupled only through the force model.
  void add_object(double mass, const Vector3d& x0);
  bool has_object() const { return object_mass_ > 0.0; }
  Vector3d object_position() const { return x_obj_; }
  Vector3d object_velocity() const { return v_obj_; }

  void set_torso_command(const Vector3d& v_cmd) { v_cmd_ = v_cmd; }

  /// Overwrite one arm's joint configuration (used to seed the start pose).
  void set_arm_configuration(bool left, const VectorXd& q_arm);

  /// One RK4 step of the coupled system with zero-order-held torques.
  void step(double t, double dt, const VectorXd& tau_arm_left, const VectorXd& tau_arm_right,
            const ForceModel& forces);

  wbc::ChainState chain_state(bool left) const;
  int arm_dof() const { return arm_dof_; }
  bool bimanual() const { return bimanual_; }

  /// Magnitude of the arm-to-torso inertial coupling the admittance model
  /// neglects; tracked as a running maximum.
  double max_torso_coupling() const { return max_coupling_; }

  /// External torque on the torso rows from the TCP forces (for admittance).
  Vector3d torso_external_torque(const ExternalForces& f) const;

  const KinematicChain& left_chain() const { return left_; }
  const KinematicChain& right_chain() const { return right_; }

  Vector3d torso_q() const { return q_t_; }
  Vector3d torso_qd() const { return qd_t_; }

 private:
  VectorXd pack_state() const;
  void unpack_state(const VectorXd& x);
  VectorXd derivative(double t, const VectorXd& x, const VectorXd& tau_l, const VectorXd& tau_r,
                      const ForceModel& forces);

  KinematicChain left_, right_;
  bool bimanual_;
  int arm_dof_;
  Vector3d q_t_ = Vector3d::Zero();
  Vector3d qd_t_ = Vector3d::Zero();
  VectorXd q_al_, qd_al_, q_ar_, qd_ar_;
  Vector3d v_cmd_ = Vector3d::Zero();
  double servo_tau_ = 0.02;  // torso velocity-loop time constant
  double object_mass_ = 0.0;
  Vector3d x_obj_ = Vector3d::Zero();
  Vector3d v_obj_ = Vector3d::Zero();
  double max_coupling_ = 0.0;
};

}  // namespace vicl::sim
