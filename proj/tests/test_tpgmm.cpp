#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vicl/tpgmm.hpp"

using namespace vicl;
using namespace vicl::tpgmm;

namespace {

MatrixXd sample_gaussian(Rng& rng, const VectorXd& mean, const MatrixXd& chol_like, int n) {
  MatrixXd out(n, mean.size());
  for (int i = 0; i < n; ++i) {
    VectorXd z(mean.size());
    for (int d = 0; d < mean.size(); ++d) z(d) = rng.normal();
    out.row(i) = (mean + chol_like * z).transpose();
  }
  return out;
}

}  // namespace

TEST_CASE("frame projection identity and start-anchored forms") {
  TaskFrame id;
  id.A = MatrixXd::Identity(3, 3);
  id.b = VectorXd::Zero(3);
  MatrixXd traj(4, 3);
  traj << 1, 2, 3, 4, 5, 6, 7, 8, 9, 1, 0, -1;
  CHECK(to_frame(traj, id).isApprox(traj, 1e-14));

  TaskFrame anchored = id;
  anchored.b = traj.row(0).transpose();
  MatrixXd local = to_frame(traj, anchored);
  CHECK(local.row(0).norm() < 1e-14);
}

TEST_CASE("random frames round-trip to 1e-10") {
  Rng rng(12);
  for (int k = 0; k < 100; ++k) {
    TaskFrame f;
    f.A = MatrixXd(3, 3);
    do {
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) f.A(r, c) = rng.normal();
      }
    } while (std::abs(f.A.determinant()) < 1e-3);
    f.b = VectorXd(3);
    for (int r = 0; r < 3; ++r) f.b(r) = rng.normal();
    MatrixXd traj(5, 3);
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 3; ++c) traj(r, c) = rng.normal();
    }
    CHECK((from_frame(to_frame(traj, f), f) - traj).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("single-component fit equals the sample moments") {
  Rng rng(5);
  const int dim = 3, n = 400;
  MatrixXd data(n, dim);
  for (int i = 0; i < n; ++i) {
    data(i, 0) = rng.normal(1.0, 0.5);
    data(i, 1) = rng.normal(-2.0, 1.5);
    data(i, 2) = rng.normal(0.3, 0.2);
  }
  EmOptions opt;
  opt.seed = 3;
  opt.regularization = 0.0;
  TpgmmModel m = em_fit({data}, 1, opt);
  VectorXd mean = data.colwise().mean();
  MatrixXd centered = data.rowwise() - mean.transpose();
  MatrixXd cov = centered.transpose() * centered / n;
  CHECK((m.frames[0][0].mean - mean).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((m.frames[0][0].cov - cov).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(m.weights(0) == doctest::Approx(1.0));
}

TEST_CASE("em recovers a planted two-component mixture") {
  Rng rng(77);
  const int dim = 2;
  VectorXd mu1(dim), mu2(dim);
  mu1 << 0.0, 0.0;
  mu2 << 3.0, -2.0;
  MatrixXd c1 = 0.3 * MatrixXd::Identity(dim, dim);
  MatrixXd c2 = 0.4 * MatrixXd::Identity(dim, dim);
  MatrixXd data(5000, dim);
  data.topRows(2500) = sample_gaussian(rng, mu1, c1, 2500);
  data.bottomRows(2500) = sample_gaussian(rng, mu2, c2, 2500);

  EmOptions opt;
  opt.seed = 1;
  EmReport report;
  TpgmmModel m = em_fit({data}, 2, opt, &report);

  // Likelihood trace never decreases.
  for (std::size_t i = 1; i < report.log_likelihood.size(); ++i) {
    CHECK(report.log_likelihood[i] >=
          report.log_likelihood[i - 1] - 1e-9 * (1.0 + std::abs(report.log_likelihood[i - 1])));
  }
  // Match components to truth by nearest mean.
  VectorXd a = m.frames[0][0].mean, b = m.frames[0][1].mean;
  if ((a - mu1).norm() > (b - mu1).norm()) std::swap(a, b);
  CHECK((a - mu1).norm() < 0.05);
  CHECK((b - mu2).norm() < 0.05);
}

TEST_CASE("em rejects too little data") {
  MatrixXd data(10, 4);
  data.setRandom();
  EmOptions opt;
  CHECK_THROWS_AS(em_fit({data}, 2, opt), ValidationError);
}

TEST_CASE("transport through identity, rotation, and scale frames") {
  Rng rng(9);
  MatrixXd data = sample_gaussian(rng, VectorXd::Zero(3), MatrixXd::Identity(3, 3), 400);
  EmOptions opt;
  opt.seed = 2;
  TpgmmModel m = em_fit({data}, 1, opt);

  TaskFrame id;
  id.A = MatrixXd::Identity(3, 3);
  id.b = VectorXd::Zero(3);
  auto same = transport(m, {id});
  CHECK(same[0][0].mean.isApprox(m.frames[0][0].mean, 1e-12));
  CHECK(same[0][0].cov.isApprox(m.frames[0][0].cov, 1e-12));

  // Pure rotation keeps covariance eigenvalues.
  TaskFrame rot = id;
  rot.A = Eigen::AngleAxisd(0.7, Vector3d::UnitZ()).toRotationMatrix();
  auto rotated = transport(m, {rot});
  Eigen::SelfAdjointEigenSolver<MatrixXd> e0(m.frames[0][0].cov);
  Eigen::SelfAdjointEigenSolver<MatrixXd> e1(rotated[0][0].cov);
  CHECK((e0.eigenvalues() - e1.eigenvalues()).cwiseAbs().maxCoeff() < 1e-10);

  TaskFrame scale = id;
  scale.A = 2.0 * MatrixXd::Identity(3, 3);
  auto scaled = transport(m, {scale});
  CHECK(scaled[0][0].cov.isApprox(4.0 * m.frames[0][0].cov, 1e-10));
}

TEST_CASE("product of experts on closed-form cases") {
  Gaussian a{VectorXd::Zero(2), MatrixXd::Identity(2, 2)};
  Gaussian b{2.0 * VectorXd::Ones(2), MatrixXd::Identity(2, 2)};
  Gaussian p = poe({a, b});
  CHECK(p.mean.isApprox(VectorXd::Ones(2), 1e-12));
  CHECK(p.cov.isApprox(0.5 * MatrixXd::Identity(2, 2), 1e-12));

  Gaussian same = poe({a, a});
  CHECK(same.mean.isApprox(a.mean, 1e-12));
  CHECK(same.cov.isApprox(0.5 * a.cov, 1e-12));

  // One nearly uninformative expert leaves the other.
  Gaussian wide{5.0 * VectorXd::Ones(2), 1e9 * MatrixXd::Identity(2, 2)};
  Gaussian c{VectorXd::Ones(2), 0.3 * MatrixXd::Identity(2, 2)};
  Gaussian almost = poe({c, wide});
  CHECK((almost.mean - c.mean).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((almost.cov - c.cov).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("poe mean stays on the segment between isotropic expert means") {
  Rng rng(41);
  for (int k = 0; k < 50; ++k) {
    VectorXd m1(3), m2(3);
    for (int d = 0; d < 3; ++d) {
      m1(d) = rng.normal();
      m2(d) = rng.normal();
    }
    Gaussian a{m1, rng.uniform(0.1, 2.0) * MatrixXd::Identity(3, 3)};
    Gaussian b{m2, rng.uniform(0.1, 2.0) * MatrixXd::Identity(3, 3)};
    Gaussian p = poe({a, b});
    // p.mean = m1 + t (m2 - m1) for t in [0, 1]
    VectorXd dir = m2 - m1;
    double t = dir.dot(p.mean - m1) / dir.squaredNorm();
    CHECK(t >= -1e-9);
    CHECK(t <= 1.0 + 1e-9);
    CHECK((p.mean - (m1 + t * dir)).norm() < 1e-9);
  }
}

TEST_CASE("single-component conditioning matches linear-Gaussian regression") {
  // Closed form: y | x ~ N(mu_y + S_yx S_xx^-1 (x - mu_x), S_yy - S_yx S_xx^-1 S_xy).
  Rng rng(8);
  MatrixXd a(3, 3);
  a << 1.0, 0.2, 0.0, 0.2, 0.8, 0.3, 0.0, 0.3, 0.9;
  MatrixXd cov = a * a.transpose();
  VectorXd mean(3);
  mean << 1.0, -2.0, 0.5;
  Gaussian g{mean, cov};
  VectorXd weights = VectorXd::Ones(1);
  VectorXd x(1);
  x << 1.7;
  Gaussian cond = gmr_condition(weights, {g}, {0}, {1, 2}, x);

  double gain_scale = 1.0 / cov(0, 0);
  VectorXd expect_mean(2);
  expect_mean << mean(1) + cov(1, 0) * gain_scale * (x(0) - mean(0)),
      mean(2) + cov(2, 0) * gain_scale * (x(0) - mean(0));
  CHECK((cond.mean - expect_mean).cwiseAbs().maxCoeff() < 1e-12);
  MatrixXd expect_cov(2, 2);
  expect_cov << cov(1, 1) - cov(1, 0) * gain_scale * cov(0, 1),
      cov(1, 2) - cov(1, 0) * gain_scale * cov(0, 2),
      cov(2, 1) - cov(2, 0) * gain_scale * cov(0, 1),
      cov(2, 2) - cov(2, 0) * gain_scale * cov(0, 2);
  CHECK((cond.cov - expect_cov).cwiseAbs().maxCoeff() < 1e-12);
}

namespace {

// Synthetic two-frame demo set over the full 11-D feature.
struct DemoSet {
  std::vector<MatrixXd> per_frame;  // stacked projections
  std::vector<TaskFrame> frames;    // canonical frames
  std::vector<MatrixXd> raw;        // world-space demos
  int T = 80;
};

DemoSet make_demo_set(Rng& rng, int demos) {
  DemoSet setd;
  Vector3d start_c(0.5, 0.2, 0.1);
  Vector3d goal_c(0.9, 0.15, 0.08);
  std::vector<MatrixXd> world;
  std::vector<TaskFrame> fs, fg;
  for (int d = 0; d < demos; ++d) {
    Vector3d start = start_c + 0.02 * Vector3d(rng.normal(), rng.normal(), rng.normal());
    Vector3d goal = goal_c + 0.02 * Vector3d(rng.normal(), rng.normal(), rng.normal());
    MatrixXd traj(setd.T, kFeatureDim);
    for (int t = 0; t < setd.T; ++t) {
      double u = static_cast<double>(t) / (setd.T - 1);
      double s = u * u * (3 - 2 * u);
      Vector3d p = start + s * (goal - start);
      p(2) += 0.1 * std::sin(M_PI * u);
      traj(t, kPhaseDim) = u;
      traj.block<1, 3>(t, kPosDim) = p.transpose();
      traj.block<1, 4>(t, kQuatDim) = Eigen::RowVector4d(1, 0, 0, 0);
      traj.block<1, 3>(t, kStiffDim) =
          Eigen::RowVector3d(std::log(150 + 60 * s), std::log(80.0), std::log(120 - 30 * s));
    }
    world.push_back(traj);
    fs.push_back(lift_pose_frame(Matrix3d::Identity(), start));
    fg.push_back(lift_pose_frame(Matrix3d::Identity(), goal));
  }
  MatrixXd stacked_s(demos * setd.T, kFeatureDim), stacked_g(demos * setd.T, kFeatureDim);
  for (int d = 0; d < demos; ++d) {
    stacked_s.middleRows(d * setd.T, setd.T) = to_frame(world[d], fs[d]);
    stacked_g.middleRows(d * setd.T, setd.T) = to_frame(world[d], fg[d]);
  }
  setd.per_frame = {stacked_s, stacked_g};
  setd.frames = {lift_pose_frame(Matrix3d::Identity(), start_c),
                 lift_pose_frame(Matrix3d::Identity(), goal_c)};
  setd.raw = world;
  return setd;
}

}  // namespace

TEST_CASE("reproduction stays inside the demo spread and adapts to shifted goals") {
  Rng rng(123);
  DemoSet demos = make_demo_set(rng, 6);
  EmOptions opt;
  opt.seed = 4;
  opt.regularization = 1e-6;
  EmReport report;
  TpgmmModel m = em_fit(demos.per_frame, 4, opt, &report);
  for (std::size_t i = 1; i < report.log_likelihood.size(); ++i) {
    CHECK(report.log_likelihood[i] >=
          report.log_likelihood[i - 1] - 1e-9 * (1.0 + std::abs(report.log_likelihood[i - 1])));
  }

  Reproduction rep = reproduce(m, demos.frames, demos.T);
  REQUIRE(static_cast<int>(rep.position.size()) == demos.T);
  for (const auto& s : rep.stiffness_diag) CHECK(s.minCoeff() > 0.0);

  // Mean distance to the closest demo stays below the demo spread.
  double spread = 0.0;
  int pairs = 0;
  for (std::size_t a = 0; a < demos.raw.size(); ++a) {
    for (std::size_t b = a + 1; b < demos.raw.size(); ++b) {
      double acc = 0.0;
      for (int t = 0; t < demos.T; ++t) {
        acc += (demos.raw[a].block<1, 3>(t, kPosDim) - demos.raw[b].block<1, 3>(t, kPosDim))
                   .norm();
      }
      spread += acc / demos.T;
      ++pairs;
    }
  }
  spread /= pairs;
  double dist = 0.0;
  for (int t = 0; t < demos.T; ++t) {
    Vector3d mean_demo = Vector3d::Zero();
    for (const auto& d : demos.raw) mean_demo += d.block<1, 3>(t, kPosDim).transpose();
    mean_demo /= static_cast<double>(demos.raw.size());
    dist += (rep.position[t] - mean_demo).norm();
  }
  dist /= demos.T;
  CHECK(dist < spread);

  // Shifting the goal frame moves the endpoint accordingly.
  std::vector<TaskFrame> shifted = demos.frames;
  shifted[1].b(kPosDim) += 0.1;  // +x
  Reproduction rep2 = reproduce(m, shifted, demos.T);
  Vector3d delta = rep2.position.back() - rep.position.back();
  CHECK(std::abs(delta(0) - 0.1) < 0.02);
  CHECK(std::abs(delta(1)) < 0.02);
  CHECK(std::abs(delta(2)) < 0.02);
}

TEST_CASE("model serialization round-trips") {
  Rng rng(55);
  DemoSet demos = make_demo_set(rng, 6);
  EmOptions opt;
  opt.seed = 9;
  TpgmmModel m = em_fit(demos.per_frame, 3, opt);
  std::string text = model_to_json(m);
  TpgmmModel back = model_from_json(text);
  CHECK(model_to_json(back) == text);
  CHECK(back.components == m.components);
  CHECK((back.weights - m.weights).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(model_from_json("{ not json"), ValidationError);
}

TEST_CASE("fit is deterministic under a fixed seed") {
  Rng rng(31);
  DemoSet demos = make_demo_set(rng, 6);
  EmOptions opt;
  opt.seed = 13;
  TpgmmModel a = em_fit(demos.per_frame, 3, opt);
  TpgmmModel b = em_fit(demos.per_frame, 3, opt);
  CHECK(model_to_json(a) == model_to_json(b));
}
