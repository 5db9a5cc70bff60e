#pragma once

#include <string>
#include <vector>

#include "vicl/common.hpp"

namespace vicl::sim {

/// One joint plus the link rigidly attached after it. The fixed transform
/// (rotation, translation) is expressed in the parent's moving frame.
struct Joint {
  enum class Type { Revolute, Prismatic };
  Type type = Type::Revolute;
  Vector3d axis = Vector3d::UnitZ();      // in the pre-motion joint frame
  Vector3d offset = Vector3d::Zero();     // fixed translation from parent
  Matrix3d orient = Matrix3d::Identity(); // fixed rotation from parent
  double mass = 1.0;
  Vector3d com = Vector3d::Zero();        // link frame
  Matrix3d inertia = 1e-3 * Matrix3d::Identity();  // about com, link frame
  double q_min = -1e9, q_max = 1e9;
  double v_max = 1e9;
  double viscous = 0.0;                   // joint-level viscous friction
  std::string name;
};

/// Serial kinematic chain with spatial-algebra inverse dynamics. All public
/// quantities are world frame; Jacobian rows are [linear(3); angular(3)].
class KinematicChain {
 public:
  std::vector<Joint> joints;
  Vector3d tcp_offset = Vector3d::Zero();  // on the last link
  Vector3d gravity = Vector3d(0.0, 0.0, -9.81);

  struct Kinematics {
    std::vector<Matrix3d> R;      // link frames after joint motion
    std::vector<Vector3d> p;      // joint origins
    std::vector<Vector3d> axis_w; // world joint axes
    std::vector<Vector3d> com_w;
    Vector3d tcp = Vector3d::Zero();
    Matrix3d tcp_R = Matrix3d::Identity();
  };

  int dof() const { return static_cast<int>(joints.size()); }

  Kinematics fk(const VectorXd& q) const;
  MatrixXd jacobian(const VectorXd& q) const;

  /// Joint torque realizing (qdd, external TCP wrench) at state (q, qd):
  /// tau = M qdd + C qd + G - J^T wrench.
  VectorXd inverse_dynamics(const VectorXd& q, const VectorXd& qd, const VectorXd& qdd,
                            const Vector3d& f_tcp = Vector3d::Zero(),
                            const Vector3d& tau_tcp = Vector3d::Zero(),
                            bool with_gravity = true) const;

  MatrixXd mass_matrix(const VectorXd& q) const;
  VectorXd gravity_vector(const VectorXd& q) const;
  VectorXd bias(const VectorXd& q, const VectorXd& qd) const;  // C qd + G

  /// qdd = M^-1 (tau + J^T wrench - bias - viscous).
  VectorXd forward_dynamics(const VectorXd& q, const VectorXd& qd, const VectorXd& tau,
                            const Vector3d& f_tcp = Vector3d::Zero(),
                            const Vector3d& tau_tcp = Vector3d::Zero()) const;

  double kinetic_energy(const VectorXd& q, const VectorXd& qd) const;
  double potential_energy(const VectorXd& q) const;

  void validate_state(const VectorXd& q, const VectorXd& qd) const;
};

}  // namespace vicl::sim
