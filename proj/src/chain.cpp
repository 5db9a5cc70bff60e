#include "vicl/chain.hpp"

#include <cmath>

namespace vicl::sim {

namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;

Matrix3d axis_rotation(const Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

// Spatial vectors at world-origin Plucker coordinates: motion [w; v_origin],
// force [n_origin; f].
Vec6 cross_motion(const Vec6& a, const Vec6& b) {
  Vec6 out;
  Vector3d aw = a.head<3>(), av = a.tail<3>();
  Vector3d bw = b.head<3>(), bv = b.tail<3>();
  out.head<3>() = aw.cross(bw);
  out.tail<3>() = aw.cross(bv) + av.cross(bw);
  return out;
}

Vec6 cross_force(const Vec6& v, const Vec6& f) {
  Vec6 out;
  Vector3d w = v.head<3>(), vo = v.tail<3>();
  Vector3d n = f.head<3>(), fl = f.tail<3>();
  out.head<3>() = w.cross(n) + vo.cross(fl);
  out.tail<3>() = w.cross(fl);
  return out;
}

// Momentum of a rigid body (mass m, world com c, world rotational inertia Ic
// about com) moving with spatial velocity [w; v_origin].
Vec6 apply_inertia(double m, const Vector3d& c, const Matrix3d& ic, const Vec6& v) {
  Vector3d w = v.head<3>(), vo = v.tail<3>();
  Vector3d lin = m * (vo + w.cross(c));
  Vector3d ang = ic * w + c.cross(lin);
  Vec6 out;
  out << ang, lin;
  return out;
}

}  // namespace

KinematicChain::Kinematics KinematicChain::fk(const VectorXd& q) const {
  if (q.size() != dof()) throw ValidationError("chain fk: q dimension mismatch");
  Kinematics k;
  k.R.resize(dof());
  k.p.resize(dof());
  k.axis_w.resize(dof());
  k.com_w.resize(dof());
  Matrix3d r = Matrix3d::Identity();
  Vector3d p = Vector3d::Zero();
  for (int i = 0; i < dof(); ++i) {
    const Joint& j = joints[i];
    p = p + r * j.offset;
    Matrix3d r0 = r * j.orient;
    k.axis_w[i] = (r0 * j.axis).normalized();
    if (j.type == Joint::Type::Revolute) {
      r = r0 * axis_rotation(j.axis, q(i));
      k.p[i] = p;
    } else {
      r = r0;
      p = p + k.axis_w[i] * q(i);
      k.p[i] = p;
    }
    k.R[i] = r;
    k.com_w[i] = p + r * j.com;
  }
  k.tcp = p + r * tcp_offset;
  k.tcp_R = r;
  return k;
}

MatrixXd KinematicChain::jacobian(const VectorXd& q) const {
  Kinematics k = fk(q);
  MatrixXd jac = MatrixXd::Zero(6, dof());
  for (int i = 0; i < dof(); ++i) {
    if (joints[i].type == Joint::Type::Revolute) {
      // Axis passes through the joint origin. For a prismatic joint the
      // origin already includes its own translation, which lies on the axis.
      Vector3d lever = k.tcp - k.p[i];
      jac.block<3, 1>(0, i) = k.axis_w[i].cross(lever);
      jac.block<3, 1>(3, i) = k.axis_w[i];
    } else {
      jac.block<3, 1>(0, i) = k.axis_w[i];
    }
  }
  return jac;
}

VectorXd KinematicChain::inverse_dynamics(const VectorXd& q, const VectorXd& qd,
                                          const VectorXd& qdd, const Vector3d& f_tcp,
                                          const Vector3d& tau_tcp, bool with_gravity) const {
  const int n = dof();
  if (qd.size() != n || qdd.size() != n) {
    throw ValidationError("chain inverse_dynamics: state dimension mismatch");
  }
  Kinematics k = fk(q);

  std::vector<Vec6> s(n), vel(n), acc(n), force(n);
  Vec6 v_parent = Vec6::Zero();
  Vec6 a_parent = Vec6::Zero();
  if (with_gravity) a_parent.tail<3>() = -gravity;  // fictitious base acceleration

  for (int i = 0; i < n; ++i) {
    if (joints[i].type == Joint::Type::Revolute) {
      s[i].head<3>() = k.axis_w[i];
      s[i].tail<3>() = k.p[i].cross(k.axis_w[i]);
    } else {
      s[i].head<3>().setZero();
      s[i].tail<3>() = k.axis_w[i];
    }
    vel[i] = v_parent + s[i] * qd(i);
    acc[i] = a_parent + s[i] * qdd(i) + cross_motion(vel[i], s[i] * qd(i));

    Matrix3d ic_world = k.R[i] * joints[i].inertia * k.R[i].transpose();
    Vec6 momentum = apply_inertia(joints[i].mass, k.com_w[i], ic_world, vel[i]);
    Vec6 momentum_rate = apply_inertia(joints[i].mass, k.com_w[i], ic_world, acc[i]);
    force[i] = momentum_rate + cross_force(vel[i], momentum);

    v_parent = vel[i];
    a_parent = acc[i];
  }

  // External TCP wrench acts on the last link.
  if (n > 0) {
    Vec6 ext;
    ext.head<3>() = tau_tcp + k.tcp.cross(f_tcp);
    ext.tail<3>() = f_tcp;
    force[n - 1] -= ext;
  }

  VectorXd tau(n);
  Vec6 subtree = Vec6::Zero();
  for (int i = n - 1; i >= 0; --i) {
    subtree += force[i];
    tau(i) = s[i].dot(subtree);
  }
  return tau;
}

MatrixXd KinematicChain::mass_matrix(const VectorXd& q) const {
  const int n = dof();
  MatrixXd m(n, n);
  VectorXd zero = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    VectorXd e = VectorXd::Zero(n);
    e(i) = 1.0;
    m.col(i) = inverse_dynamics(q, zero, e, Vector3d::Zero(), Vector3d::Zero(), false);
  }
  return 0.5 * (m + m.transpose());
}

VectorXd KinematicChain::gravity_vector(const VectorXd& q) const {
  VectorXd zero = VectorXd::Zero(dof());
  return inverse_dynamics(q, zero, zero);
}

VectorXd KinematicChain::bias(const VectorXd& q, const VectorXd& qd) const {
  VectorXd zero = VectorXd::Zero(dof());
  return inverse_dynamics(q, qd, zero);
}

VectorXd KinematicChain::forward_dynamics(const VectorXd& q, const VectorXd& qd,
                                          const VectorXd& tau, const Vector3d& f_tcp,
                                          const Vector3d& tau_tcp) const {
  MatrixXd m = mass_matrix(q);
  Eigen::LDLT<MatrixXd> ldlt(m);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-10) {
    throw NumericError("chain forward_dynamics: mass matrix ill-conditioned");
  }
  MatrixXd jac = jacobian(q);
  Eigen::Matrix<double, 6, 1> wrench;
  wrench << f_tcp, tau_tcp;
  VectorXd friction = VectorXd::Zero(dof());
  for (int i = 0; i < dof(); ++i) friction(i) = joints[i].viscous * qd(i);
  VectorXd rhs = tau + jac.transpose() * wrench - bias(q, qd) - friction;
  return ldlt.solve(rhs);
}

double KinematicChain::kinetic_energy(const VectorXd& q, const VectorXd& qd) const {
  // 0.5 qd' M qd through the spatial velocities directly.
  Kinematics k = fk(q);
  const int n = dof();
  Vec6 v = Vec6::Zero();
  double e = 0.0;
  for (int i = 0; i < n; ++i) {
    Vec6 s;
    if (joints[i].type == Joint::Type::Revolute) {
      s.head<3>() = k.axis_w[i];
      s.tail<3>() = k.p[i].cross(k.axis_w[i]);
    } else {
      s.head<3>().setZero();
      s.tail<3>() = k.axis_w[i];
    }
    v += s * qd(i);
    Matrix3d ic_world = k.R[i] * joints[i].inertia * k.R[i].transpose();
    e += 0.5 * v.dot(apply_inertia(joints[i].mass, k.com_w[i], ic_world, v));
  }
  return e;
}

double KinematicChain::potential_energy(const VectorXd& q) const {
  Kinematics k = fk(q);
  double e = 0.0;
  for (int i = 0; i < dof(); ++i) {
    e -= joints[i].mass * gravity.dot(k.com_w[i]);
  }
  return e;
}

void KinematicChain::validate_state(const VectorXd& q, const VectorXd& qd) const {
  if (q.size() != dof() || qd.size() != dof()) {
    throw ValidationError("chain state: dimension mismatch");
  }
  if (!q.allFinite() || !qd.allFinite()) throw NumericError("chain state: non-finite");
  for (int i = 0; i < dof(); ++i) {
    if (q(i) < joints[i].q_min - 1e-9 || q(i) > joints[i].q_max + 1e-9) {
      throw ValidationError("chain state: joint " + joints[i].name + " out of limits");
    }
  }
}

}  // namespace vicl::sim
