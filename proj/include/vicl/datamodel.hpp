#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "vicl/common.hpp"

namespace vicl {

/// Uniform sample clock shared by every channel of a record.
struct Timebase {
  double dt = 0.01;  // seconds per sample
  int n = 0;         // sample count

  double duration() const { return dt * (n - 1); }
  double time(int i) const { return dt * i; }
  void validate() const;
};

/// Canonical rate for learned and recorded channels (controller reference rate).
constexpr double kCanonicalRateHz = 100.0;

/// Shoulder/elbow/wrist positions in the world frame, meters.
struct ArmPose {
  Vector3d shoulder = Vector3d::Zero();
  Vector3d elbow = Vector3d::Zero();
  Vector3d wrist = Vector3d::Zero();

  void validate() const;
};

/// Subject-specific endpoint stiffness model parameters plus the damping scale
/// delta used in D = delta * sqrt(K).
struct SubjectParams {
  double a1 = 0.0;
  double a2 = 0.0;
  double b1 = 0.0;  // N/m per activation unit
  double b2 = 0.0;  // N/m
  double delta = 2.0;

  void validate() const;
};

/// Published calibration rows for subjects S1..S5 (delta defaults to 2).
SubjectParams subject_table(const std::string& name);

/// Affine task frame: y = A * x + b. A must be invertible.
struct TaskFrame {
  MatrixXd A;
  VectorXd b;

  void validate() const;
  VectorXd to_frame(const VectorXd& world) const;    // A^-1 (x - b)
  VectorXd from_frame(const VectorXd& local) const;  // A x + b
};

/// Position + unit quaternion (w,x,y,z), w >= 0 canonical sign.
using Pose7 = Eigen::Matrix<double, 7, 1>;

Pose7 make_pose(const Vector3d& position, const Eigen::Vector4d& quat_wxyz);
void validate_pose(const Pose7& pose, const std::string& field, double norm_tol = 1e-6);
/// Flip sign so w >= 0 and renormalize.
Eigen::Vector4d canonical_quat(const Eigen::Vector4d& q);

/// One time-synchronized human-human demonstration. "c" channels belong to the
/// collaborator whose behavior is being imitated, "p" to the partner.
struct DemonstrationRecord {
  Timebase timebase;
  std::string task;

  std::vector<Pose7> tcp_pose;          // collaborator TCP
  std::vector<Pose7> partner_tcp_pose;  // partner TCP
  std::vector<ArmPose> arm_c;
  std::vector<ArmPose> arm_p;
  std::vector<double> activation_bb_c;
  std::vector<double> activation_tb_c;
  std::vector<double> activation_bb_p;
  std::vector<double> activation_tb_p;
  std::vector<Vector3d> f_ext;  // interaction force on the collaborator TCP, N

  void validate() const;
};

/// Linear interpolation of a uniformly sampled channel onto a target timebase.
/// Endpoints are preserved; the target window must not exceed the source span.
std::vector<double> resample(const std::vector<double>& channel, double from_rate_hz,
                             const Timebase& to);

void save_record(const DemonstrationRecord& record, const std::string& path);
DemonstrationRecord load_record(const std::string& path);

std::string record_to_string(const DemonstrationRecord& record);
DemonstrationRecord record_from_string(const std::string& text);

}  // namespace vicl
