#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vicl/scenario.hpp"
#include "vicl/stiffness.hpp"

using namespace vicl;
using namespace vicl::stiffness;

namespace {

// Canonical geometry: l1 = (0.2, 0.2, 0), l2 = (0.5, 0, 0) -> V = I, d1 = 0.5, d2 = 0.2.
ArmPose canonical_pose() {
  ArmPose p;
  p.shoulder = Vector3d(0, 0, 0);
  p.elbow = Vector3d(0.2, 0.2, 0);
  p.wrist = Vector3d(0.5, 0, 0);
  return p;
}

ArmPose random_pose(Rng& rng) {
  for (;;) {
    ArmPose p;
    p.shoulder = Vector3d(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
    p.elbow = p.shoulder + Vector3d(rng.uniform(0.1, 0.3), rng.uniform(-0.2, 0.2),
                                    rng.uniform(-0.2, 0.2));
    p.wrist = p.shoulder + Vector3d(rng.uniform(0.3, 0.55), rng.uniform(-0.2, 0.2),
                                    rng.uniform(-0.2, 0.2));
    try {
      p.validate();
      if (arm_geometry(p).d2 > 0.03) return p;
    } catch (const ValidationError&) {
    }
  }
}

Matrix3d random_spd(Rng& rng, double scale) {
  Matrix3d a;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) a(r, c) = rng.normal();
  }
  return a * a.transpose() + scale * Matrix3d::Identity();
}

}  // namespace

TEST_CASE("arm geometry lengths and plane normal") {
  ArmPose p;
  p.shoulder = Vector3d(0, 0, 0);
  p.elbow = Vector3d(0.2, 0.2, 0);
  p.wrist = Vector3d(0.3, 0.4, 0);
  CHECK(arm_geometry(p).d1 == doctest::Approx(0.5));

  ArmPose q = canonical_pose();
  ArmGeometry g = arm_geometry(q);
  // l2 x l1 = (0, 0, 0.1) -> unit plane normal +z.
  CHECK(g.l4.isApprox(Vector3d(0, 0, 1), 1e-12));
  CHECK(g.d1 == doctest::Approx(0.5));
  CHECK(g.d2 == doctest::Approx(0.2));
  CHECK(std::abs(g.l4.dot(g.l1)) < 1e-9);
  CHECK(std::abs(g.l4.dot(g.l2)) < 1e-9);

  ArmPose collinear;
  collinear.shoulder = Vector3d(0, 0, 0);
  collinear.elbow = Vector3d(0.2, 0, 0);
  collinear.wrist = Vector3d(0.4, 0, 0);
  CHECK_THROWS_AS(arm_geometry(collinear), ValidationError);
}

TEST_CASE("eigen axes of the canonical pose are the identity") {
  ArmGeometry g = arm_geometry(canonical_pose());
  Matrix3d v = eigen_axes(g);
  CHECK(v.isApprox(Matrix3d::Identity(), 1e-12));
}

TEST_CASE("eigen axes are orthonormal with det +1 for any valid geometry") {
  Rng rng(5);
  for (int k = 0; k < 200; ++k) {
    Matrix3d v = eigen_axes(arm_geometry(random_pose(rng)));
    CHECK((v.transpose() * v - Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(v.determinant() == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("flipping the elbow side flips columns 2 and 3 only") {
  ArmPose p = canonical_pose();
  ArmPose flipped = p;
  flipped.elbow = Vector3d(0.2, -0.2, 0);  // l1 y component negated
  Matrix3d v = eigen_axes(arm_geometry(p));
  Matrix3d w = eigen_axes(arm_geometry(flipped));
  CHECK(w.col(0).isApprox(v.col(0), 1e-12));
  CHECK(w.col(1).isApprox(Vector3d(-v.col(1)), 1e-12));
  CHECK(w.col(2).isApprox(Vector3d(-v.col(2)), 1e-12));
  CHECK((w.transpose() * w - Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("alpha reproduces the published subject values") {
  SubjectParams s1 = subject_table("S1");
  CHECK(alpha(0.0, s1) == doctest::Approx(151.684).epsilon(1e-12));
  CHECK(alpha(0.1, s1) == doctest::Approx(536.3981).epsilon(1e-9));
  SubjectParams s5 = subject_table("S5");
  CHECK(alpha(0.0, s5) == doctest::Approx(94.951).epsilon(1e-12));
}

TEST_CASE("endpoint stiffness on the canonical S1 configuration") {
  // Direct evaluation oracle: alpha * diag(1, a1/d1, a2*d2) with V = I.
  SubjectParams s1 = subject_table("S1");
  StiffnessEllipsoid e = endpoint_stiffness(canonical_pose(), 0.0, s1);
  double a = 151.684;
  Vector3d expected(a, a * 0.272 / 0.5, a * 1.314 * 0.2);
  CHECK(e.K(0, 0) == doctest::Approx(expected(0)).epsilon(1e-9));
  CHECK(e.K(1, 1) == doctest::Approx(expected(1)).epsilon(1e-9));
  CHECK(e.K(2, 2) == doctest::Approx(expected(2)).epsilon(1e-9));
  CHECK((e.K - e.K.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  e.validate();
}

TEST_CASE("stiffness grows monotonically with co-contraction") {
  SubjectParams s2 = subject_table("S2");
  ArmPose p = canonical_pose();
  auto low = endpoint_stiffness(p, 0.1, s2);
  auto high = endpoint_stiffness(p, 0.3, s2);
  for (int i = 0; i < 3; ++i) CHECK(high.h_diag(i) > low.h_diag(i));
}

TEST_CASE("K = V H V^T reconstruction and SPD over random inputs") {
  Rng rng(17);
  SubjectParams s3 = subject_table("S3");
  for (int k = 0; k < 100; ++k) {
    StiffnessEllipsoid e = endpoint_stiffness(random_pose(rng), rng.uniform(), s3);
    Matrix3d recon = e.V * e.h_diag.asDiagonal() * e.V.transpose();
    CHECK((e.K - recon).cwiseAbs().maxCoeff() < 1e-8);
    Eigen::SelfAdjointEigenSolver<Matrix3d> es(e.K);
    CHECK(es.eigenvalues().minCoeff() > 1e-9);
  }
}

TEST_CASE("damping law reproduces the published fixed-gain pairing") {
  Matrix3d k = 300.0 * Matrix3d::Identity();
  Matrix3d d = damping_from_stiffness(k, 2.0);
  CHECK(d(0, 0) == doctest::Approx(34.641).epsilon(1e-4));
  CHECK(damping_from_stiffness(Matrix3d::Identity(), 1.0).isApprox(Matrix3d::Identity(), 1e-12));
}

TEST_CASE("damping square equals delta^2 K for random SPD inputs") {
  Rng rng(23);
  for (int k = 0; k < 50; ++k) {
    Matrix3d m = random_spd(rng, 0.5);
    double delta = rng.uniform(0.5, 3.0);
    Matrix3d d = damping_from_stiffness(m, delta);
    CHECK((d * d - delta * delta * m).cwiseAbs().maxCoeff() <
          1e-8 * std::max(1.0, m.cwiseAbs().maxCoeff()));
  }
  Matrix3d not_spd = Matrix3d::Identity();
  not_spd(0, 0) = -1.0;
  CHECK_THROWS_AS(damping_from_stiffness(not_spd, 1.0), NumericError);
}

TEST_CASE("perturbation stiffness recovers a diagonal truth exactly") {
  Matrix3d truth = Vector3d(100, 200, 300).asDiagonal();
  std::vector<Vector3d> xs, fs;
  for (int axis = 0; axis < 3; ++axis) {
    for (double s : {0.02, -0.02}) {
      Vector3d x = Vector3d::Zero();
      x(axis) = s;
      xs.push_back(x);
      fs.push_back(truth * x);
    }
  }
  Matrix3d rec = perturbation_stiffness(xs, fs);
  CHECK((rec - truth).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("perturbation stiffness rejects rank-deficient directions") {
  std::vector<Vector3d> xs, fs;
  for (int i = 0; i < 8; ++i) {
    Vector3d x = (i % 2 == 0) ? Vector3d(0.02, 0, 0) : Vector3d(0, 0.02, 0);
    xs.push_back(x);
    fs.push_back(100.0 * x);
  }
  CHECK_THROWS_AS(perturbation_stiffness(xs, fs), ValidationError);
}

TEST_CASE("perturbation stiffness tolerates 0.5 N force noise within 5%") {
  // Each 0.5 s perturbation contributes the whole sampled ramp to the fit,
  // not just the 0.02 m peak.
  Matrix3d truth = Vector3d(180, 240, 320).asDiagonal();
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 100);
    std::vector<Vector3d> xs, fs;
    const Vector3d dirs[6] = {Vector3d::UnitX(), Vector3d::UnitY(), Vector3d::UnitZ(),
                              Vector3d(1, 1, 0).normalized(), Vector3d(1, 0, 1).normalized(),
                              Vector3d(0, 1, 1).normalized()};
    for (const auto& d : dirs) {
      for (int step = 1; step <= 20; ++step) {
        double mag = 0.02 * std::sin(M_PI * step / 20.0);  // out and back
        for (double sign : {1.0, -1.0}) {
          Vector3d x = sign * mag * d;
          Vector3d f = truth * x;
          for (int a = 0; a < 3; ++a) f(a) += rng.normal(0, 0.5);
          xs.push_back(x);
          fs.push_back(f);
        }
      }
    }
    Matrix3d rec = perturbation_stiffness(xs, fs);
    if ((rec - truth).norm() / truth.norm() < 0.05) ++ok;
  }
  CHECK(ok == 20);
}

TEST_CASE("calibration recovers generating parameters exactly on noiseless data") {
  SubjectParams truth = subject_table("S2");
  auto observations = sim::synth_calibration(truth, 42, 0.0);
  REQUIRE(observations.size() == 18);
  CalibrationResult fit = calibrate(observations);
  CHECK(std::abs(fit.params.a1 - truth.a1) / truth.a1 < 1e-6);
  CHECK(std::abs(fit.params.a2 - truth.a2) / truth.a2 < 1e-6);
  CHECK(std::abs(fit.params.b1 - truth.b1) / truth.b1 < 1e-6);
  CHECK(std::abs(fit.params.b2 - truth.b2) / truth.b2 < 1e-6);
}

TEST_CASE("calibration stays within 5% under 1% multiplicative noise over 20 seeds") {
  SubjectParams truth = subject_table("S4");
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto observations = sim::synth_calibration(truth, seed, 0.0);
    Rng rng(seed * 7 + 1);
    for (auto& obs : observations) {
      Matrix3d noise;
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) noise(r, c) = 1.0 + 0.01 * rng.normal();
      }
      obs.K_measured = obs.K_measured.cwiseProduct(noise);
      obs.K_measured = 0.5 * (obs.K_measured + obs.K_measured.transpose());
    }
    CalibrationResult fit = calibrate(observations);
    bool within = std::abs(fit.params.a1 - truth.a1) / truth.a1 < 0.05 &&
                  std::abs(fit.params.a2 - truth.a2) / truth.a2 < 0.05 &&
                  std::abs(fit.params.b1 - truth.b1) / truth.b1 < 0.05 &&
                  std::abs(fit.params.b2 - truth.b2) / truth.b2 < 0.05;
    if (within) ++ok;
  }
  CHECK(ok == 20);
}

TEST_CASE("calibration rejects a single co-contraction level") {
  SubjectParams truth = subject_table("S1");
  auto observations = sim::synth_calibration(truth, 9, 0.0);
  std::vector<CalibrationObservation> single;
  for (const auto& o : observations) {
    if (o.cocontraction == 0.2) single.push_back(o);
  }
  REQUIRE(single.size() == 6);
  CHECK_THROWS_WITH_AS(calibrate(single), doctest::Contains("rank deficient"), ValidationError);
}

// ---------------------------------------------------------------------------
// EKF

TEST_CASE("ekf converges on simulated noiseless contact data") {
  // Generate motion with the interaction model, then feed the filter the
  // exact spring-damper force k (x_d - x) - d xdot (= inertial residual minus
  // external force along the simulated trajectory).
  const double k_true = 150.0, d_true = 20.0;
  const double dt = 0.01;
  const int steps = 500;
  Vector3d x_d(0.1, -0.2, 0.3);

  EkfState state;
  state.k_hat = Vector3d::Constant(50.0);
  state.d_hat = Vector3d::Constant(5.0);
  state.P = 1e4 * Eigen::Matrix<double, 6, 6>::Identity();
  EkfNoise noise;
  noise.q_k = 0.0;
  noise.q_d = 0.0;
  noise.r_force = 1e-4;

  double prev_trace = state.P.trace();
  for (int i = 0; i < steps; ++i) {
    double t = i * dt;
    EkfObservation obs;
    for (int a = 0; a < 3; ++a) {
      double amp = 0.02 + 0.005 * a;
      double w = 2.0 * M_PI * (0.8 + 0.3 * a);
      obs.position_error(a) = amp * std::sin(w * t + 0.4 * a);
      obs.velocity(a) = -amp * w * std::cos(w * t + 0.4 * a);  // xdot = -d/dt(x_d - x)
    }
    obs.force = k_true * obs.position_error - d_true * obs.velocity;
    state = ekf_step(state, obs, dt, noise);
    CHECK(state.P.trace() <= prev_trace + 1e-9);  // no process noise
    prev_trace = state.P.trace();
  }
  (void)x_d;
  for (int a = 0; a < 3; ++a) {
    CHECK(std::abs(state.k_hat(a) - k_true) < 1.0);
    CHECK(std::abs(state.d_hat(a) - d_true) < 0.5);
  }
  state.validate();
}

TEST_CASE("ekf zero-motion window leaves the state and grows P by process noise") {
  EkfState state;
  state.k_hat = Vector3d::Constant(100.0);
  state.d_hat = Vector3d::Constant(10.0);
  state.P = Eigen::Matrix<double, 6, 6>::Identity();
  EkfNoise noise;
  noise.q_k = 2.0;
  noise.q_d = 1.0;
  noise.r_force = 1e-2;
  EkfObservation obs;  // zero error, zero velocity, zero force
  EkfState next = ekf_step(state, obs, 0.1, noise);
  CHECK(next.k_hat.isApprox(state.k_hat, 1e-12));
  CHECK(next.d_hat.isApprox(state.d_hat, 1e-12));
  for (int i = 0; i < 3; ++i) {
    CHECK(next.P(i, i) == doctest::Approx(1.0 + 2.0 * 0.1));
    CHECK(next.P(3 + i, 3 + i) == doctest::Approx(1.0 + 1.0 * 0.1));
  }
}

TEST_CASE("ekf normalized innovation stays inside the chi-square band") {
  // chi2(3) 95% quantile ~ 7.815; on well-modeled noisy data the NIS should
  // rarely exceed it.
  const double k_true = 220.0, d_true = 18.0;
  const double dt = 0.01;
  Rng rng(31);
  EkfState state;
  state.k_hat = Vector3d::Constant(100.0);
  state.d_hat = Vector3d::Constant(5.0);
  state.P = 1e4 * Eigen::Matrix<double, 6, 6>::Identity();
  EkfNoise noise;
  noise.q_k = 1e-3;
  noise.q_d = 1e-4;
  noise.r_force = 0.01;  // sigma = 0.1 N
  int exceed = 0, total = 0;
  for (int i = 0; i < 800; ++i) {
    double t = i * dt;
    EkfObservation obs;
    for (int a = 0; a < 3; ++a) {
      double amp = 0.03, w = 2.0 * M_PI * (0.7 + 0.25 * a);
      obs.position_error(a) = amp * std::sin(w * t + a);
      obs.velocity(a) = -amp * w * std::cos(w * t + a);
    }
    obs.force = k_true * obs.position_error - d_true * obs.velocity;
    for (int a = 0; a < 3; ++a) obs.force(a) += rng.normal(0, 0.1);
    if (i > 100) {  // after burn-in
      if (ekf_nis(state, obs, noise) > 7.815) ++exceed;
      ++total;
    }
    state = ekf_step(state, obs, dt, noise);
  }
  CHECK(static_cast<double>(exceed) / total < 0.15);
}
