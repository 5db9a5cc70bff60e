#include "vicl/plant.hpp"

#include <cmath>

namespace vicl::sim {

ChainSimState step_chain(const KinematicChain& chain, const ChainSimState& state,
                         const VectorXd& tau, const Vector3d& f_tcp, double dt, int substeps) {
  chain.validate_state(state.q, state.qd);
  if (!(dt > 0.0) || substeps < 1) throw ValidationError("step_chain: bad step size");
  const double h = dt / substeps;
  ChainSimState s = state;
  for (int k = 0; k < substeps; ++k) {
    auto accel = [&](const VectorXd& q, const VectorXd& qd) {
      return chain.forward_dynamics(q, qd, tau, f_tcp);
    };
    VectorXd k1q = s.qd, k1v = accel(s.q, s.qd);
    VectorXd k2q = s.qd + 0.5 * h * k1v, k2v = accel(s.q + 0.5 * h * k1q, s.qd + 0.5 * h * k1v);
    VectorXd k3q = s.qd + 0.5 * h * k2v, k3v = accel(s.q + 0.5 * h * k2q, s.qd + 0.5 * h * k2v);
    VectorXd k4q = s.qd + h * k3v, k4v = accel(s.q + h * k3q, s.qd + h * k3v);

    VectorXd q_prev = s.q, qd_prev = s.qd;
    s.q += (h / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
    s.qd += (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    if (!s.q.allFinite() || !s.qd.allFinite()) {
      throw NumericError("step_chain: state diverged");
    }

    // Trapezoidal work/dissipation bookkeeping over the substep.
    Vector3d tcp_v0 = chain.jacobian(q_prev).topRows(3) * qd_prev;
    Vector3d tcp_v1 = chain.jacobian(s.q).topRows(3) * s.qd;
    s.work_in += 0.5 * h * ((qd_prev + s.qd).dot(tau) + (tcp_v0 + tcp_v1).dot(f_tcp));
    for (int i = 0; i < chain.dof(); ++i) {
      s.dissipated += 0.5 * h * chain.joints[i].viscous *
                      (qd_prev(i) * qd_prev(i) + s.qd(i) * s.qd(i));
    }
  }
  return s;
}

namespace {

Joint prismatic(const std::string& name, const Vector3d& axis, double mass, double v_max) {
  Joint j;
  j.type = Joint::Type::Prismatic;
  j.axis = axis;
  j.mass = mass;
  j.inertia = 1e-2 * Matrix3d::Identity();
  j.q_min = -0.8;
  j.q_max = 0.8;
  j.v_max = v_max;
  j.viscous = 2.0;
  j.name = name;
  return j;
}

Joint revolute(const std::string& name, const Vector3d& axis, const Vector3d& offset, double mass,
               const Vector3d& com, double viscous) {
  Joint j;
  j.type = Joint::Type::Revolute;
  j.axis = axis;
  j.offset = offset;
  j.mass = mass;
  j.com = com;
  double len = std::max(0.05, 2.0 * com.norm());
  // Uniform rod about the com, axis-agnostic approximation.
  double i_rod = mass * len * len / 12.0;
  j.inertia = Matrix3d::Identity() * std::max(1e-4, i_rod);
  j.q_min = -2.8;
  j.q_max = 2.8;
  j.v_max = 3.0;
  j.viscous = viscous;
  j.name = name;
  return j;
}

}  // namespace

KinematicChain make_chain(PlantVariant variant, bool left_side) {
  KinematicChain c;
  c.joints.push_back(prismatic("torso_x", Vector3d::UnitX(), 30.0, 0.5));
  c.joints.push_back(prismatic("torso_y", Vector3d::UnitY(), 30.0, 0.5));
  c.joints.push_back(prismatic("torso_z", Vector3d::UnitZ(), 20.0, 0.5));

  const double side = left_side ? 1.0 : -1.0;
  const Vector3d arm_base(0.15, side * 0.25, 0.55);

  if (variant == PlantVariant::Reduced) {
    c.joints.push_back(revolute("shoulder_yaw", Vector3d::UnitZ(), arm_base, 1.5,
                                Vector3d::Zero(), 0.4));
    c.joints.push_back(revolute("shoulder_pitch", Vector3d::UnitY(), Vector3d::Zero(), 2.5,
                                Vector3d(0.175, 0, 0), 0.4));
    c.joints.push_back(revolute("elbow_pitch", Vector3d::UnitY(), Vector3d(0.35, 0, 0), 1.8,
                                Vector3d(0.15, 0, 0), 0.3));
    c.tcp_offset = Vector3d(0.30, 0, 0);
  } else {
    c.joints.push_back(revolute("j1", Vector3d::UnitZ(), arm_base, 1.2, Vector3d::Zero(), 0.4));
    c.joints.push_back(revolute("j2", Vector3d::UnitY(), Vector3d::Zero(), 1.2,
                                Vector3d(0.10, 0, 0), 0.4));
    c.joints.push_back(revolute("j3", Vector3d::UnitX(), Vector3d(0.20, 0, 0), 1.0,
                                Vector3d(0.08, 0, 0), 0.3));
    c.joints.push_back(revolute("j4", Vector3d::UnitY(), Vector3d(0.16, 0, 0), 1.0,
                                Vector3d(0.08, 0, 0), 0.3));
    c.joints.push_back(revolute("j5", Vector3d::UnitX(), Vector3d(0.16, 0, 0), 0.8,
                                Vector3d(0.07, 0, 0), 0.2));
    c.joints.push_back(revolute("j6", Vector3d::UnitY(), Vector3d(0.14, 0, 0), 0.6,
                                Vector3d(0.05, 0, 0), 0.2));
    c.joints.push_back(revolute("j7", Vector3d::UnitX(), Vector3d(0.10, 0, 0), 0.4,
                                Vector3d(0.03, 0, 0), 0.1));
    c.tcp_offset = Vector3d(0.10, 0, 0);
  }
  return c;
}

VectorXd chain_home(PlantVariant variant) {
  if (variant == PlantVariant::Reduced) {
    VectorXd q(6);
    q << 0, 0, 0, 0.0, 0.55, 0.75;
    return q;
  }
  VectorXd q(10);
  q << 0, 0, 0, 0.0, 0.5, 0.0, 0.7, 0.0, 0.4, 0.0;
  return q;
}

Plant::Plant(PlantVariant variant, bool bimanual)
    : left_(make_chain(variant, true)), right_(make_chain(variant, false)), bimanual_(bimanual) {
  arm_dof_ = left_.dof() - 3;
  VectorXd home = chain_home(variant);
  q_t_ = home.head<3>();
  qd_t_.setZero();
  q_al_ = home.tail(arm_dof_);
  qd_al_ = VectorXd::Zero(arm_dof_);
  q_ar_ = home.tail(arm_dof_);
  qd_ar_ = VectorXd::Zero(arm_dof_);
}

void Plant::set_arm_configuration(bool left, const VectorXd& q_arm) {
  if (q_arm.size() != arm_dof_) throw ValidationError("plant: arm configuration size mismatch");
  if (left) {
    q_al_ = q_arm;
    qd_al_.setZero();
  } else {
    q_ar_ = q_arm;
    qd_ar_.setZero();
  }
}

void Plant::add_object(double mass, const Vector3d& x0) {
  if (!(mass > 0.0)) throw ValidationError("plant: object mass must be > 0");
  object_mass_ = mass;
  x_obj_ = x0;
  v_obj_.setZero();
}

VectorXd Plant::pack_state() const {
  int n = 6 + 2 * arm_dof_ + (bimanual_ ? 2 * arm_dof_ : 0) + (object_mass_ > 0.0 ? 6 : 0);
  VectorXd x(n);
  int off = 0;
  x.segment<3>(off) = q_t_; off += 3;
  x.segment<3>(off) = qd_t_; off += 3;
  x.segment(off, arm_dof_) = q_al_; off += arm_dof_;
  x.segment(off, arm_dof_) = qd_al_; off += arm_dof_;
  if (bimanual_) {
    x.segment(off, arm_dof_) = q_ar_; off += arm_dof_;
    x.segment(off, arm_dof_) = qd_ar_; off += arm_dof_;
  }
  if (object_mass_ > 0.0) {
    x.segment<3>(off) = x_obj_; off += 3;
    x.segment<3>(off) = v_obj_; off += 3;
  }
  return x;
}

void Plant::unpack_state(const VectorXd& x) {
  int off = 0;
  q_t_ = x.segment<3>(off); off += 3;
  qd_t_ = x.segment<3>(off); off += 3;
  q_al_ = x.segment(off, arm_dof_); off += arm_dof_;
  qd_al_ = x.segment(off, arm_dof_); off += arm_dof_;
  if (bimanual_) {
    q_ar_ = x.segment(off, arm_dof_); off += arm_dof_;
    qd_ar_ = x.segment(off, arm_dof_); off += arm_dof_;
  }
  if (object_mass_ > 0.0) {
    x_obj_ = x.segment<3>(off); off += 3;
    v_obj_ = x.segment<3>(off); off += 3;
  }
}

VectorXd Plant::derivative(double t, const VectorXd& x, const VectorXd& tau_l,
                           const VectorXd& tau_r, const ForceModel& forces) {
  // Unpack without touching the member state.
  int off = 0;
  Vector3d qt = x.segment<3>(off); off += 3;
  Vector3d qdt = x.segment<3>(off); off += 3;
  VectorXd qal = x.segment(off, arm_dof_); off += arm_dof_;
  VectorXd qdal = x.segment(off, arm_dof_); off += arm_dof_;
  VectorXd qar = q_ar_, qdar = qd_ar_;
  if (bimanual_) {
    qar = x.segment(off, arm_dof_); off += arm_dof_;
    qdar = x.segment(off, arm_dof_); off += arm_dof_;
  }
  Vector3d xo = x_obj_, vo = v_obj_;
  if (object_mass_ > 0.0) {
    xo = x.segment<3>(off); off += 3;
    vo = x.segment<3>(off); off += 3;
  }

  // Velocity-servoed torso: bounded first-order pull toward the command.
  Vector3d qddt = (v_cmd_ - qdt) / servo_tau_;
  for (int i = 0; i < 3; ++i) qddt(i) = std::clamp(qddt(i), -8.0, 8.0);

  auto chain_accel = [&](const KinematicChain& chain, const VectorXd& qa, const VectorXd& qda,
                         const VectorXd& tau_arm, const Vector3d& f_tcp, Vector3d* tcp,
                         Vector3d* tcp_v) -> VectorXd {
    VectorXd q(3 + arm_dof_), qd(3 + arm_dof_);
    q << qt, qa;
    qd << qdt, qda;
    MatrixXd m = chain.mass_matrix(q);
    if (m.ldlt().rcond() < 1e-10) {
      throw NumericError("plant: chain mass matrix conditioning exceeds 1e10");
    }
    VectorXd b = chain.bias(q, qd);
    MatrixXd jac = chain.jacobian(q);
    auto kin = chain.fk(q);
    if (tcp) *tcp = kin.tcp;
    if (tcp_v) *tcp_v = jac.topRows(3) * qd;
    Eigen::Matrix<double, 6, 1> wrench = Eigen::Matrix<double, 6, 1>::Zero();
    wrench.head<3>() = f_tcp;
    VectorXd friction(3 + arm_dof_);
    for (int i = 0; i < chain.dof(); ++i) friction(i) = chain.joints[i].viscous * qd(i);
    VectorXd rhs_full = jac.transpose() * wrench - b - friction;
    rhs_full.tail(arm_dof_) += tau_arm;
    // Arm block with the known torso acceleration moved to the right side.
    MatrixXd maa = m.bottomRightCorner(arm_dof_, arm_dof_);
    MatrixXd mat = m.bottomLeftCorner(arm_dof_, 3);
    VectorXd rhs = rhs_full.tail(arm_dof_) - mat * qddt;
    double coupling = (mat * qddt).norm();
    if (coupling > max_coupling_) max_coupling_ = coupling;
    return maa.ldlt().solve(rhs);
  };

  // TCP kinematics for the force model.
  Vector3d tcp_l, vel_l, tcp_r = Vector3d::Zero(), vel_r = Vector3d::Zero();
  {
    VectorXd q(3 + arm_dof_), qd(3 + arm_dof_);
    q << qt, qal;
    qd << qdt, qdal;
    auto kin = left_.fk(q);
    tcp_l = kin.tcp;
    vel_l = left_.jacobian(q).topRows(3) * qd;
    if (bimanual_) {
      VectorXd qr(3 + arm_dof_), qdr(3 + arm_dof_);
      qr << qt, qar;
      qdr << qdt, qdar;
      auto kin_r = right_.fk(qr);
      tcp_r = kin_r.tcp;
      vel_r = right_.jacobian(qr).topRows(3) * qdr;
    }
  }
  Vector3d f_obj = Vector3d::Zero();
  ExternalForces f = forces(t, tcp_l, vel_l, tcp_r, vel_r, xo, vo, &f_obj);

  VectorXd qdd_al = chain_accel(left_, qal, qdal, tau_l, f.f_left, nullptr, nullptr);
  VectorXd qdd_ar;
  if (bimanual_) qdd_ar = chain_accel(right_, qar, qdar, tau_r, f.f_right, nullptr, nullptr);

  VectorXd dx(x.size());
  off = 0;
  dx.segment<3>(off) = qdt; off += 3;
  dx.segment<3>(off) = qddt; off += 3;
  dx.segment(off, arm_dof_) = qdal; off += arm_dof_;
  dx.segment(off, arm_dof_) = qdd_al; off += arm_dof_;
  if (bimanual_) {
    dx.segment(off, arm_dof_) = qdar; off += arm_dof_;
    dx.segment(off, arm_dof_) = qdd_ar; off += arm_dof_;
  }
  if (object_mass_ > 0.0) {
    Vector3d a_obj = f_obj / object_mass_ + Vector3d(0, 0, -9.81);
    dx.segment<3>(off) = vo; off += 3;
    dx.segment<3>(off) = a_obj; off += 3;
  }
  return dx;
}

void Plant::step(double t, double dt, const VectorXd& tau_arm_left, const VectorXd& tau_arm_right,
                 const ForceModel& forces) {
  if (!(dt > 0.0) || dt > 1e-3 + 1e-12) {
    throw ValidationError("plant step: dt must be positive and <= 1 ms");
  }
  VectorXd x = pack_state();
  VectorXd k1 = derivative(t, x, tau_arm_left, tau_arm_right, forces);
  VectorXd k2 = derivative(t + 0.5 * dt, x + 0.5 * dt * k1, tau_arm_left, tau_arm_right, forces);
  VectorXd k3 = derivative(t + 0.5 * dt, x + 0.5 * dt * k2, tau_arm_left, tau_arm_right, forces);
  VectorXd k4 = derivative(t + dt, x + dt * k3, tau_arm_left, tau_arm_right, forces);
  VectorXd xn = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!xn.allFinite()) throw NumericError("plant step: state diverged");
  unpack_state(xn);
}

wbc::ChainState Plant::chain_state(bool left) const {
  const KinematicChain& chain = left ? left_ : right_;
  const VectorXd& qa = left ? q_al_ : q_ar_;
  const VectorXd& qda = left ? qd_al_ : qd_ar_;
  wbc::ChainState s;
  s.q.resize(3 + arm_dof_);
  s.qd.resize(3 + arm_dof_);
  s.q << q_t_, qa;
  s.qd << qd_t_, qda;
  auto kin = chain.fk(s.q);
  s.tcp = kin.tcp;
  Eigen::Quaterniond q_tcp(kin.tcp_R);
  if (q_tcp.w() < 0.0) q_tcp.coeffs() = -q_tcp.coeffs();
  s.quat = Eigen::Vector4d(q_tcp.w(), q_tcp.x(), q_tcp.y(), q_tcp.z());
  s.jacobian = chain.jacobian(s.q);
  s.tcp_vel = s.jacobian.topRows(3) * s.qd;
  s.omega = s.jacobian.bottomRows(3) * s.qd;
  s.gravity = chain.gravity_vector(s.q);
  return s;
}

Vector3d Plant::torso_external_torque(const ExternalForces& f) const {
  Vector3d out = Vector3d::Zero();
  {
    VectorXd q(3 + arm_dof_);
    q << q_t_, q_al_;
    MatrixXd jac = left_.jacobian(q);
    out += (jac.topRows(3).transpose() * f.f_left).head<3>();
  }
  if (bimanual_) {
    VectorXd q(3 + arm_dof_);
    q << q_t_, q_ar_;
    MatrixXd jac = right_.jacobian(q);
    out += (jac.topRows(3).transpose() * f.f_right).head<3>();
  }
  return out;
}

}  // namespace vicl::sim
