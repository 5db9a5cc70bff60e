#pragma once

#include <vector>

#include "vicl/common.hpp"
#include "vicl/datamodel.hpp"

namespace vicl::stiffness {

/// Arm triangle vectors and the configuration-dependent lengths d1, d2.
struct ArmGeometry {
  Vector3d l1;  // shoulder -> elbow
  Vector3d l2;  // shoulder -> wrist
  Vector3d l3;  // in-plane perpendicular realizing d2
  Vector3d l4;  // unit normal of the arm triangle plane
  double d1 = 0.0;
  double d2 = 0.0;
};

/// SPD endpoint stiffness with its principal-axis factorization K = V H V^T.
struct StiffnessEllipsoid {
  Matrix3d K;
  Matrix3d V;       // orthonormal eigen axes, det +1
  Vector3d h_diag;  // positive eigenvalues along V's columns, N/m

  Matrix3d H() const { return h_diag.asDiagonal(); }
  void validate() const;
};

ArmGeometry arm_geometry(const ArmPose& pose);

/// Principal axes: wrist direction, in-plane perpendicular, plane normal.
Matrix3d eigen_axes(const ArmGeometry& geom);

/// Synergistic co-contraction contribution: alpha = b1 * A + b2, N/m.
double alpha(double cocontraction_level, const SubjectParams& params);

StiffnessEllipsoid endpoint_stiffness(const ArmPose& pose, double cocontraction_level,
                                      const SubjectParams& params);

/// D = delta * sqrt(K) via the principal SPD square root.
Matrix3d damping_from_stiffness(const Matrix3d& K, double delta);

/// One calibration trial: a pose, a co-contraction level, and the stiffness
/// measured by perturbation at that configuration.
struct CalibrationObservation {
  ArmPose pose;
  double cocontraction = 0.0;
  Matrix3d K_measured;
};

struct CalibrationResult {
  SubjectParams params;
  double residual = 0.0;                  // sum of squared Frobenius errors
  std::vector<double> per_observation;    // Frobenius error per trial
};

/// Fit (a1, a2, b1, b2) by minimizing the Frobenius mismatch between modeled
/// and measured stiffness: closed-form (b1, b2) given (a1, a2), Nelder-Mead
/// over (a1, a2), restarted from several seed points.
CalibrationResult calibrate(const std::vector<CalibrationObservation>& observations,
                            double delta = 2.0);

/// Least-squares stiffness from perturbation displacement/force pairs,
/// symmetrized. Requires >= 6 samples spanning three independent directions.
Matrix3d perturbation_stiffness(const std::vector<Vector3d>& displacements,
                                const std::vector<Vector3d>& forces);

// ---------------------------------------------------------------------------
// Online diagonal stiffness/damping observer.

struct EkfNoise {
  double q_k = 0.0;     // stiffness random-walk intensity, (N/m)^2 per s
  double q_d = 0.0;     // damping random-walk intensity
  double r_force = 1e-2;  // force measurement variance, N^2
};

struct EkfState {
  Vector3d k_hat = Vector3d::Zero();  // diagonal stiffness estimate, N/m
  Vector3d d_hat = Vector3d::Zero();  // diagonal damping estimate, N*s/m
  Eigen::Matrix<double, 6, 6> P = Eigen::Matrix<double, 6, 6>::Identity();
  bool reconditioned = false;  // set when P needed an eigenvalue floor

  void validate() const;
};

struct EkfObservation {
  Vector3d position_error = Vector3d::Zero();  // x_d - x, m
  Vector3d velocity = Vector3d::Zero();        // xdot, m/s
  Vector3d force = Vector3d::Zero();           // measured contact force, N
};

/// Random-walk process model with measurement f_i = k_i (x_d - x)_i - d_i v_i
/// per axis; Joseph-form covariance update, negative estimates projected to 0.
EkfState ekf_step(const EkfState& state, const EkfObservation& obs, double dt,
                  const EkfNoise& noise);

/// Normalized innovation squared of the last step, for consistency checks.
double ekf_nis(const EkfState& state, const EkfObservation& obs, const EkfNoise& noise);

}  // namespace vicl::stiffness
