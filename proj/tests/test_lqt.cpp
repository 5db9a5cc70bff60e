#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vicl/lqt.hpp"
#include "vicl/wbc.hpp"

using namespace vicl;
using namespace vicl::lqt;

namespace {

// 1-D problem with a single hard via-point.
LqtProblem via_point_problem(int T, double dt, double via, int via_t, double r) {
  LqtProblem p;
  p.T = T;
  p.dim = 1;
  p.dt = dt;
  p.R = r * MatrixXd::Identity(1, 1);
  p.x0 = VectorXd::Zero(1);
  for (int t = 0; t < T; ++t) {
    p.targets.push_back(VectorXd::Zero(1));
    p.precisions.push_back(MatrixXd::Zero(1, 1));
  }
  p.targets[via_t](0) = via;
  p.precisions[via_t](0, 0) = 1e6;
  return p;
}

// Independent dense oracle: stack sqrt(W) S rows and sqrt(r) I, solve by QR.
// S is rebuilt from the closed-form double-integrator response.
VectorXd dense_oracle(const LqtProblem& p) {
  const int T = p.T;
  const int nu = T - 1;
  MatrixXd s = MatrixXd::Zero(nu, nu);
  for (int t = 1; t <= T - 1; ++t) {
    for (int k = 0; k < t; ++k) {
      s(t - 1, k) = p.dt * p.dt * (static_cast<double>(t - k) - 0.5);
    }
  }
  MatrixXd a(2 * nu, nu);
  VectorXd b = VectorXd::Zero(2 * nu);
  for (int t = 1; t <= T - 1; ++t) {
    double w = std::sqrt(p.precisions[t](0, 0));
    a.row(t - 1) = w * s.row(t - 1);
    b(t - 1) = w * (p.targets[t](0) - p.x0(0));
  }
  double sr = std::sqrt(p.R(0, 0));
  a.bottomRows(nu) = sr * MatrixXd::Identity(nu, nu);
  return a.colPivHouseholderQr().solve(b);
}

}  // namespace

TEST_CASE("solution passes the hard via-point and matches the dense oracle") {
  LqtProblem p = via_point_problem(50, 0.02, 0.3, 25, 1e-6);
  LqtSolution sol = solve(p);
  CHECK(std::abs(sol.position[25](0) - 0.3) < 1e-3);
  CHECK(sol.kkt_residual < 1e-8);

  VectorXd oracle = dense_oracle(p);
  double worst = 0.0;
  double scale = oracle.cwiseAbs().maxCoeff();
  for (int t = 0; t < 49; ++t) {
    worst = std::max(worst, std::abs(sol.control[t](0) - oracle(t)) / scale);
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("already-optimal constant target needs no control") {
  LqtProblem p;
  p.T = 40;
  p.dim = 2;
  p.dt = 0.01;
  p.R = 1e-4 * MatrixXd::Identity(2, 2);
  VectorXd x0(2);
  x0 << 0.4, -0.2;
  p.x0 = x0;
  for (int t = 0; t < p.T; ++t) {
    p.targets.push_back(x0);
    p.precisions.push_back(100.0 * MatrixXd::Identity(2, 2));
  }
  LqtSolution sol = solve(p);
  for (const auto& u : sol.control) CHECK(u.norm() < 1e-9);
  for (const auto& x : sol.position) CHECK((x - x0).norm() < 1e-9);
}

TEST_CASE("huge control cost drives the control to zero") {
  LqtProblem p = via_point_problem(50, 0.02, 0.3, 25, 1e9);
  LqtSolution sol = solve(p);
  double target_scale = 0.3;
  for (const auto& u : sol.control) CHECK(u.norm() < 1e-6 * target_scale / (0.02 * 0.02));
  CHECK(std::abs(sol.position.back()(0)) < 1e-3);
}

TEST_CASE("random perturbations of the control never decrease the cost") {
  LqtProblem p = via_point_problem(50, 0.02, 0.25, 30, 1e-5);
  p.precisions[10](0, 0) = 500.0;
  p.targets[10](0) = -0.05;
  LqtSolution sol = solve(p);

  auto cost_of = [&](const std::vector<VectorXd>& control) {
    double pos = p.x0(0), vel = 0.0, c = 0.0;
    std::vector<double> xs = {pos};
    for (const auto& u : control) {
      pos += p.dt * vel + 0.5 * p.dt * p.dt * u(0);
      vel += p.dt * u(0);
      xs.push_back(pos);
    }
    for (int t = 0; t < p.T; ++t) {
      double e = xs[t] - p.targets[t](0);
      c += p.precisions[t](0, 0) * e * e;
      if (t < p.T - 1) c += p.R(0, 0) * control[t](0) * control[t](0);
    }
    return c;
  };

  double base = cost_of(sol.control);
  CHECK(base == doctest::Approx(sol.cost).epsilon(1e-9));
  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<VectorXd> perturbed = sol.control;
    VectorXd delta(perturbed.size());
    for (int i = 0; i < delta.size(); ++i) delta(i) = rng.normal();
    delta *= 1e-3 / delta.norm();
    for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i](0) += delta(i);
    CHECK(cost_of(perturbed) >= base - 1e-12);
  }
}

TEST_CASE("replaying the control reproduces the trajectory exactly") {
  LqtProblem p = via_point_problem(60, 0.01, 0.2, 40, 1e-6);
  LqtSolution sol = solve(p);
  double pos = p.x0(0), vel = 0.0;
  for (int t = 0; t < p.T - 1; ++t) {
    CHECK(std::abs(sol.position[t](0) - pos) < 1e-10);
    pos += p.dt * vel + 0.5 * p.dt * p.dt * sol.control[t](0);
    vel += p.dt * sol.control[t](0);
  }
  CHECK(std::abs(sol.position.back()(0) - pos) < 1e-10);
}

TEST_CASE("scaling all precisions up never increases the tracking error term") {
  LqtProblem p = via_point_problem(50, 0.02, 0.3, 25, 1e-4);
  for (int t = 0; t < p.T; ++t) p.precisions[t](0, 0) = std::max(p.precisions[t](0, 0), 1.0);
  auto tracking = [&](const LqtSolution& sol, const LqtProblem& prob) {
    double c = 0.0;
    for (int t = 0; t < prob.T; ++t) {
      double e = sol.position[t](0) - prob.targets[t](0);
      c += prob.precisions[t](0, 0) * e * e;
    }
    return c;
  };
  LqtSolution base = solve(p);
  LqtProblem scaled = p;
  for (auto& w : scaled.precisions) w *= 4.0;
  LqtSolution more = solve(scaled);
  CHECK(tracking(more, p) <= tracking(base, p) + 1e-9);
}

TEST_CASE("two identical frames double the precision but keep the target") {
  tpgmm::GaussianSeq seq;
  const int T = 10;
  for (int t = 0; t < T; ++t) {
    VectorXd m(3);
    m << 0.1 * t, 0.0, 0.2;
    seq.mean.push_back(m);
    seq.cov.push_back(0.5 * MatrixXd::Identity(3, 3));
  }
  LqtProblem one = build_problem({seq}, 1e-4 * MatrixXd::Identity(3, 3), 0.01);
  LqtProblem two = build_problem({seq, seq}, 1e-4 * MatrixXd::Identity(3, 3), 0.01);
  for (int t = 0; t < T; ++t) {
    CHECK((two.precisions[t] - 2.0 * one.precisions[t]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((two.targets[t] - one.targets[t]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("a frame with (near) zero precision reduces to single-frame tracking") {
  tpgmm::GaussianSeq seq, wide;
  const int T = 12;
  for (int t = 0; t < T; ++t) {
    VectorXd m(2);
    m << std::sin(0.3 * t), std::cos(0.3 * t);
    seq.mean.push_back(m);
    seq.cov.push_back(0.2 * MatrixXd::Identity(2, 2));
    wide.mean.push_back(10.0 * VectorXd::Ones(2));  // far away but uninformative
    wide.cov.push_back(1e12 * MatrixXd::Identity(2, 2));
  }
  MatrixXd r = 1e-4 * MatrixXd::Identity(2, 2);
  LqtProblem a = build_problem({seq}, r, 0.01);
  LqtProblem b = build_problem({seq, wide}, r, 0.01);
  LqtSolution sa = solve(a), sb = solve(b);
  for (int t = 0; t < T; ++t) {
    CHECK((sa.position[t] - sb.position[t]).norm() < 1e-6);
  }
}

TEST_CASE("schedule couples stiffness with the trajectory and passes the rate check") {
  const int T = 80;
  LqtProblem p;
  p.T = T;
  p.dim = 3;
  p.dt = 0.01;
  p.R = 1e-4 * MatrixXd::Identity(3, 3);
  p.x0 = VectorXd::Zero(3);
  for (int t = 0; t < T; ++t) {
    VectorXd m(3);
    double u = static_cast<double>(t) / (T - 1);
    m << 0.3 * u, 0.1 * std::sin(M_PI * u), 0.0;
    p.targets.push_back(m);
    p.precisions.push_back(1e3 * MatrixXd::Identity(3, 3));
  }
  LqtSolution sol = solve(p);

  std::vector<Eigen::Vector4d> quats(T, Eigen::Vector4d(1, 0, 0, 0));
  std::vector<Vector3d> stiff;
  for (int t = 0; t < T; ++t) {
    double u = static_cast<double>(t) / (T - 1);
    stiff.push_back(Vector3d(150 + 40 * std::sin(2 * M_PI * u), 90.0, 120 - 20 * u));
  }
  std::vector<Matrix3d> axes = {Matrix3d::Identity()};
  ImpedanceSchedule sched = schedule(sol, quats, stiff, axes, 2.0, p.dt);
  sched.validate();
  for (int t = 0; t < T; ++t) {
    CHECK(sched.K[t].isApprox(Matrix3d(stiff[t].asDiagonal()), 1e-10));
    Matrix3d dd = sched.D[t] * sched.D[t];
    CHECK((dd - 4.0 * sched.K[t]).cwiseAbs().maxCoeff() < 1e-8);
  }
  auto pass = wbc::passivity_check(sched);
  CHECK(pass.pass);

  // Constant stiffness gives constant damping.
  std::vector<Vector3d> const_stiff(T, Vector3d(200, 100, 50));
  ImpedanceSchedule s2 = schedule(sol, quats, const_stiff, axes, 2.0, p.dt);
  for (int t = 1; t < T; ++t) CHECK((s2.D[t] - s2.D[0]).cwiseAbs().maxCoeff() < 1e-12);

  // Nonpositive stiffness is rejected.
  std::vector<Vector3d> bad = const_stiff;
  bad[5](1) = 0.0;
  CHECK_THROWS_AS(schedule(sol, quats, bad, axes, 2.0, p.dt), ValidationError);
}
