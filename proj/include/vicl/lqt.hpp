#pragma once

#include <vector>

#include "vicl/common.hpp"
#include "vicl/schedule.hpp"
#include "vicl/tpgmm.hpp"

namespace vicl::lqt {

/// Batch tracking problem on a discrete double integrator. Targets and
/// precisions act on positions; velocities are free.
struct LqtProblem {
  int T = 0;       // number of steps (including the fixed initial state)
  int dim = 0;     // position dimension
  double dt = 0.0;
  std::vector<VectorXd> targets;     // fused per-step position targets, size T
  std::vector<MatrixXd> precisions;  // fused per-step PSD precisions, size T
  MatrixXd R;                        // per-step control cost, SPD dim x dim
  VectorXd x0;                       // initial position (velocity starts at 0)

  void validate() const;
};

struct LqtSolution {
  std::vector<VectorXd> position;  // size T
  std::vector<VectorXd> velocity;  // size T
  std::vector<VectorXd> control;   // size T-1 accelerations
  double cost = 0.0;
  double kkt_residual = 0.0;       // relative residual of the normal equations
  bool ridged = false;             // singular normal equations fell back to a ridge
};

/// Fuse the per-frame Gaussian sequences (Eq.-style two-term sum collapses to
/// a precision-weighted target per step).
LqtProblem build_problem(const std::vector<tpgmm::GaussianSeq>& frame_targets, const MatrixXd& R,
                         double dt, double precision_reg = 1e-12);

LqtSolution solve(const LqtProblem& problem);

/// Couple the smoothed trajectory with the stiffness profile: K_t = V_t diag(s_t) V_t',
/// D_t = delta sqrt(K_t). `axes` may hold one constant V or one per step.
ImpedanceSchedule schedule(const LqtSolution& solution,
                           const std::vector<Eigen::Vector4d>& quaternions,
                           const std::vector<Vector3d>& stiffness_diag,
                           const std::vector<Matrix3d>& axes, double delta, double dt);

}  // namespace vicl::lqt
