#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vicl/chain.hpp"
#include "vicl/plant.hpp"

using namespace vicl;
using namespace vicl::sim;

namespace {

KinematicChain pendulum() {
  KinematicChain c;
  Joint j;
  j.type = Joint::Type::Revolute;
  j.axis = Vector3d::UnitY();
  j.mass = 2.0;
  j.com = Vector3d(0.5, 0, 0);
  j.inertia = 0.02 * Matrix3d::Identity();
  j.viscous = 0.0;
  j.name = "hinge";
  c.joints.push_back(j);
  c.tcp_offset = Vector3d(1.0, 0, 0);
  return c;
}

KinematicChain frictionless(PlantVariant v) {
  KinematicChain c = make_chain(v, true);
  for (auto& j : c.joints) j.viscous = 0.0;
  return c;
}

}  // namespace

TEST_CASE("pendulum statics match the hand formula") {
  KinematicChain c = pendulum();
  VectorXd q(1);
  q << 0.0;  // arm along +x, horizontal
  // Holding torque about y against gravity: tau = -m g l_com (for -z gravity,
  // rotation about +y swings +x toward -z).
  VectorXd g = c.gravity_vector(q);
  CHECK(g(0) == doctest::Approx(-2.0 * 9.81 * 0.5).epsilon(1e-12));

  q << M_PI / 2.0;  // hanging straight down
  g = c.gravity_vector(q);
  CHECK(std::abs(g(0)) < 1e-12);
}

TEST_CASE("pendulum mass matrix equals m l^2 + I") {
  KinematicChain c = pendulum();
  VectorXd q(1);
  q << 0.7;
  MatrixXd m = c.mass_matrix(q);
  CHECK(m(0, 0) == doctest::Approx(2.0 * 0.25 + 0.02).epsilon(1e-12));
}

TEST_CASE("free pendulum conserves energy over 10 s") {
  KinematicChain c = pendulum();
  ChainSimState s;
  s.q = VectorXd::Zero(1);
  s.qd = VectorXd::Zero(1);
  double e0 = c.kinetic_energy(s.q, s.qd) + c.potential_energy(s.q);
  double scale = std::abs(2.0 * 9.81 * 0.5);  // energy swing scale
  for (int i = 0; i < 10000; ++i) {
    s = step_chain(c, s, VectorXd::Zero(1), Vector3d::Zero(), 1e-3);
  }
  double e1 = c.kinetic_energy(s.q, s.qd) + c.potential_energy(s.q);
  CHECK(std::abs(e1 - e0) / scale < 1e-6);
}

TEST_CASE("gravity compensation holds the full chain at rest") {
  KinematicChain c = frictionless(PlantVariant::Reduced);
  VectorXd q = chain_home(PlantVariant::Reduced);
  ChainSimState s;
  s.q = q;
  s.qd = VectorXd::Zero(c.dof());
  VectorXd tau = c.gravity_vector(q);
  for (int i = 0; i < 500; ++i) {
    s = step_chain(c, s, tau, Vector3d::Zero(), 1e-3);
  }
  CHECK(s.qd.cwiseAbs().maxCoeff() < 1e-6);
  CHECK((s.q - q).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("zero torque in a zero-gravity world keeps the state constant") {
  KinematicChain c = frictionless(PlantVariant::Reduced);
  c.gravity = Vector3d::Zero();
  ChainSimState s;
  s.q = chain_home(PlantVariant::Reduced);
  s.qd = VectorXd::Zero(c.dof());
  for (int i = 0; i < 200; ++i) {
    s = step_chain(c, s, VectorXd::Zero(c.dof()), Vector3d::Zero(), 1e-3);
  }
  CHECK(s.qd.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("energy balance: injected work matches storage change and dissipation") {
  KinematicChain c = make_chain(PlantVariant::Reduced, true);  // viscous friction on
  ChainSimState s;
  s.q = chain_home(PlantVariant::Reduced);
  s.qd = VectorXd::Zero(c.dof());
  double e0 = c.kinetic_energy(s.q, s.qd) + c.potential_energy(s.q);

  Rng rng(4);
  VectorXd tau(c.dof());
  for (int i = 0; i < c.dof(); ++i) tau(i) = rng.uniform(-3.0, 3.0);
  tau += c.gravity_vector(s.q);
  Vector3d f_tcp(1.5, -2.0, 1.0);

  double injected = 0.0;
  for (int i = 0; i < 2000; ++i) {
    s = step_chain(c, s, tau, f_tcp, 1e-3);
  }
  injected = s.work_in;
  double e1 = c.kinetic_energy(s.q, s.qd) + c.potential_energy(s.q);
  double balance = injected - (e1 - e0) - s.dissipated;
  CHECK(std::abs(balance) / std::max(1.0, std::abs(injected)) < 1e-5);
}

TEST_CASE("mass matrix is SPD across random configurations for both variants") {
  for (PlantVariant v : {PlantVariant::Reduced, PlantVariant::Full}) {
    KinematicChain c = make_chain(v, true);
    Rng rng(6);
    for (int k = 0; k < 30; ++k) {
      VectorXd q(c.dof());
      for (int i = 0; i < c.dof(); ++i) {
        q(i) = rng.uniform(std::max(-1.2, c.joints[i].q_min), std::min(1.2, c.joints[i].q_max));
      }
      MatrixXd m = c.mass_matrix(q);
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
      CHECK(es.eigenvalues().minCoeff() > 0.0);
      CHECK((m - m.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("jacobian matches finite differences of forward kinematics") {
  KinematicChain c = make_chain(PlantVariant::Reduced, true);
  VectorXd q = chain_home(PlantVariant::Reduced);
  MatrixXd jac = c.jacobian(q);
  const double eps = 1e-7;
  for (int i = 0; i < c.dof(); ++i) {
    VectorXd qp = q, qm = q;
    qp(i) += eps;
    qm(i) -= eps;
    Vector3d dtcp = (c.fk(qp).tcp - c.fk(qm).tcp) / (2.0 * eps);
    CHECK((jac.block<3, 1>(0, i) - dtcp).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("inverse then forward dynamics round-trips accelerations") {
  KinematicChain c = make_chain(PlantVariant::Full, false);
  for (auto& j : c.joints) j.viscous = 0.0;
  Rng rng(8);
  VectorXd q(c.dof()), qd(c.dof()), qdd(c.dof());
  for (int i = 0; i < c.dof(); ++i) {
    q(i) = rng.uniform(-0.8, 0.8);
    qd(i) = rng.uniform(-1.0, 1.0);
    qdd(i) = rng.uniform(-2.0, 2.0);
  }
  Vector3d f(2.0, 1.0, -3.0);
  VectorXd tau = c.inverse_dynamics(q, qd, qdd, f, Vector3d::Zero());
  VectorXd qdd_back = c.forward_dynamics(q, qd, tau, f, Vector3d::Zero());
  CHECK((qdd_back - qdd).cwiseAbs().maxCoeff() < 1e-8);
}
