#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vicl/datamodel.hpp"

using namespace vicl;

namespace {

DemonstrationRecord tiny_record(int n = 12) {
  DemonstrationRecord rec;
  rec.task = "transport";
  rec.timebase.dt = 0.01;
  rec.timebase.n = n;
  for (int i = 0; i < n; ++i) {
    double t = rec.timebase.time(i);
    Vector3d p(0.5 + 0.01 * t, 0.2, 0.1 + 0.317 * t);
    rec.tcp_pose.push_back(make_pose(p, Eigen::Vector4d(0.9, 0.1, -0.2, 0.05)));
    rec.partner_tcp_pose.push_back(make_pose(p + Vector3d(0.3, 0, 0), Eigen::Vector4d(1, 0, 0, 0)));
    ArmPose arm;
    arm.shoulder = p - Vector3d(0.45, 0, 0);
    arm.elbow = arm.shoulder + Vector3d(0.22, -0.14, -0.02);
    arm.wrist = p;
    rec.arm_c.push_back(arm);
    ArmPose armp = arm;
    armp.shoulder += Vector3d(0.9, 0, 0);
    armp.elbow = armp.shoulder + Vector3d(-0.22, 0.14, -0.02);
    armp.wrist = p + Vector3d(0.3, 0, 0);
    rec.arm_p.push_back(armp);
    rec.activation_bb_c.push_back(0.25 + 0.01 * i);
    rec.activation_tb_c.push_back(0.15);
    rec.activation_bb_p.push_back(0.5);
    rec.activation_tb_p.push_back(0.125);
    rec.f_ext.push_back(Vector3d(0.1 * i, -0.2, 5.0));
  }
  return rec;
}

}  // namespace

TEST_CASE("resample keeps a constant series constant") {
  std::vector<double> src(2001, 5.0);
  Timebase to{0.01, 101};
  auto out = resample(src, 2000.0, to);
  REQUIRE(out.size() == 101);
  for (double v : out) CHECK(v == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("resample hits linear interpolation exactly on a ramp") {
  // ramp 0 -> 1 over 1 s at 2000 Hz
  std::vector<double> src(2001);
  for (int i = 0; i <= 2000; ++i) src[i] = i / 2000.0;
  Timebase to{0.5, 3};
  auto out = resample(src, 2000.0, to);
  CHECK(out[0] == doctest::Approx(0.0));
  CHECK(out[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out[2] == doctest::Approx(1.0));
}

TEST_CASE("resampled sine tracks the closed form within 1e-3") {
  // 1 Hz sine, 2000 Hz -> 100 Hz
  std::vector<double> src(2001);
  for (int i = 0; i <= 2000; ++i) src[i] = std::sin(2.0 * M_PI * i / 2000.0);
  Timebase to{0.01, 101};
  auto out = resample(src, 2000.0, to);
  double worst = 0.0;
  for (int i = 0; i < 101; ++i) {
    worst = std::max(worst, std::abs(out[i] - std::sin(2.0 * M_PI * to.time(i))));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("resample rejects empty channels and overlong windows") {
  CHECK_THROWS_AS(resample({}, 100.0, Timebase{0.01, 10}), ValidationError);
  std::vector<double> src(11, 1.0);  // 0.1 s span at 100 Hz
  CHECK_THROWS_AS(resample(src, 100.0, Timebase{0.05, 10}), ValidationError);
}

TEST_CASE("record round-trip is bit exact") {
  DemonstrationRecord rec = tiny_record();
  // Awkward doubles that expose lossy formatting.
  rec.f_ext[3] = Vector3d(1.0 / 3.0, std::nextafter(2.0, 3.0), 1e-301);
  std::string text = record_to_string(rec);
  DemonstrationRecord back = record_from_string(text);
  CHECK(record_to_string(back) == text);
  for (int i = 0; i < rec.timebase.n; ++i) {
    CHECK(back.f_ext[i] == rec.f_ext[i]);
    CHECK(back.tcp_pose[i] == rec.tcp_pose[i]);
  }
}

TEST_CASE("loader rejects out-of-range activation") {
  DemonstrationRecord rec = tiny_record();
  std::string text = record_to_string(rec);
  // Patch one activation column to 1.2 in the payload.
  DemonstrationRecord bad = rec;
  bad.activation_bb_c[5] = 1.2;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("activation out of [0,1]"),
                       ValidationError);
}

TEST_CASE("loader rejects n too small") {
  DemonstrationRecord rec = tiny_record();
  std::string text = record_to_string(rec);
  auto pos = text.find("n 12");
  text.replace(pos, 4, "n 1");
  CHECK_THROWS_WITH_AS(record_from_string(text), doctest::Contains(">= 2 samples"),
                       ValidationError);
}

TEST_CASE("fuzzed corrupt records never load silently") {
  DemonstrationRecord rec = tiny_record();
  std::string text = record_to_string(rec);
  Rng rng(99);
  int rejected = 0;
  const int trials = 200;
  for (int k = 0; k < trials; ++k) {
    std::string corrupt = text;
    switch (rng.index(5)) {
      case 0: {  // truncate
        corrupt = corrupt.substr(0, corrupt.size() / 2 + rng.index(corrupt.size() / 4));
        break;
      }
      case 1: {  // flip a character to junk
        std::size_t pos = 30 + rng.index(corrupt.size() - 31);
        corrupt[pos] = 'x';
        break;
      }
      case 2: {  // break a quaternion
        auto p = corrupt.find("0.9");
        if (p != std::string::npos) corrupt.replace(p, 3, "9.9");
        break;
      }
      case 3: {  // negative dt
        auto p = corrupt.find("dt 0.01");
        if (p != std::string::npos) corrupt.replace(p, 7, "dt -0.1");
        break;
      }
      case 4: {  // activation out of range
        auto p = corrupt.find("0.5 0.125");
        if (p != std::string::npos) corrupt.replace(p, 9, "1.5 0.125");
        break;
      }
    }
    try {
      DemonstrationRecord r = record_from_string(corrupt);
      // Only acceptable if corruption happened to preserve validity.
      r.validate();
    } catch (const ValidationError&) {
      ++rejected;
    }
  }
  CHECK(rejected > trials / 2);
}

TEST_CASE("quaternion canonical sign") {
  auto q = canonical_quat(Eigen::Vector4d(-1, 0, 0, 0));
  CHECK(q(0) == 1.0);
  DemonstrationRecord rec = tiny_record();
  for (auto& p : rec.tcp_pose) CHECK(p(3) >= 0.0);
}

TEST_CASE("task frame round trip") {
  TaskFrame f;
  f.A = MatrixXd::Identity(3, 3) * 2.0;
  f.b = VectorXd::Ones(3);
  VectorXd x(3);
  x << 1, 2, 3;
  CHECK((f.from_frame(f.to_frame(x)) - x).norm() < 1e-12);
  f.A(0, 0) = 0.0;
  f.A(0, 1) = 0.0;
  f.A(1, 0) = 0.0;  // singular
  f.A(1, 1) = 0.0;
  CHECK_THROWS_AS(f.validate(), ValidationError);
}
