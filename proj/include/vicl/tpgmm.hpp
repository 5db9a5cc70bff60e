#pragma once

#include <string>
#include <vector>

#include "vicl/common.hpp"
#include "vicl/datamodel.hpp"

namespace vicl::tpgmm {

struct Gaussian {
  VectorXd mean;
  MatrixXd cov;

  double log_pdf(const VectorXd& x) const;
};

/// Joint feature layout used throughout: [phase, position(3), quat wxyz(4),
/// log stiffness diag(3)].
constexpr int kPhaseDim = 0;
constexpr int kPosDim = 1;
constexpr int kQuatDim = 4;
constexpr int kStiffDim = 8;
constexpr int kFeatureDim = 11;

/// Lift a 3-D rigid task frame (rotation + translation of the pose block) to
/// the 11-D feature space. Phase and stiffness dims are left untouched;
/// quaternion components transform by left multiplication with R's quaternion.
TaskFrame lift_pose_frame(const Matrix3d& rotation, const Vector3d& translation);

/// X = A^-1 (zeta - b) applied row-wise.
MatrixXd to_frame(const MatrixXd& zeta, const TaskFrame& frame);
MatrixXd from_frame(const MatrixXd& local, const TaskFrame& frame);

struct TpgmmModel {
  int components = 0;
  int dim = 0;
  VectorXd weights;                            // J, sums to 1
  std::vector<std::vector<Gaussian>> frames;   // [n_frames][J]
  double phase_min = 0.0;
  double phase_max = 1.0;

  int n_frames() const { return static_cast<int>(frames.size()); }
  void validate() const;
};

struct EmOptions {
  int max_iter = 200;
  double tol = 1e-6;          // stop when the log-likelihood gain drops below
  double regularization = 1e-6;
  std::uint64_t seed = 0;
};

struct EmReport {
  std::vector<double> log_likelihood;  // per accepted iteration
  int pruned_components = 0;
};

/// EM over per-frame projected data. `data_per_frame[i]` is N x dim, rows
/// aligned across frames (same sample observed from each frame).
TpgmmModel em_fit(const std::vector<MatrixXd>& data_per_frame, int components,
                  const EmOptions& options, EmReport* report = nullptr);

/// Affine transport of every component into world coordinates through the
/// given frames: mean A mu + b, covariance A Sigma A^T.
std::vector<std::vector<Gaussian>> transport(const TpgmmModel& model,
                                             const std::vector<TaskFrame>& frames);

/// Product of Gaussian experts: precision sum, precision-weighted mean.
/// Near-singular precision sums get a 1e-9 ridge and set *regularized.
Gaussian poe(const std::vector<Gaussian>& experts, bool* regularized = nullptr);

/// Gaussian mixture regression of out_dims given in_dims = value.
Gaussian gmr_condition(const VectorXd& weights, const std::vector<Gaussian>& components,
                       const std::vector<int>& in_dims, const std::vector<int>& out_dims,
                       const VectorXd& in_value);

struct GaussianSeq {
  std::vector<VectorXd> mean;
  std::vector<MatrixXd> cov;
};

struct Reproduction {
  GaussianSeq combined;                 // 10-D pose + log-stiffness per step
  std::vector<GaussianSeq> per_frame;   // position-only (3-D) targets per frame
  std::vector<Vector3d> position;
  std::vector<Eigen::Vector4d> quaternion;       // normalized, w >= 0
  std::vector<Vector3d> stiffness_diag;          // N/m, strictly positive
  bool extrapolated = false;
  bool poe_regularized = false;
};

/// Transport to the new frames, combine per-component via PoE, and condition
/// on a uniform phase grid of T steps.
Reproduction reproduce(const TpgmmModel& model, const std::vector<TaskFrame>& frames, int T);

/// Bayesian information criterion of a fitted model on the training data.
double bic(const TpgmmModel& model, const std::vector<MatrixXd>& data_per_frame);

std::string model_to_json(const TpgmmModel& model);
TpgmmModel model_from_json(const std::string& text);
void save_model(const TpgmmModel& model, const std::string& path);
TpgmmModel load_model(const std::string& path);

}  // namespace vicl::tpgmm
