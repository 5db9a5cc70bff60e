#include "vicl/pipeline.hpp"

#include <cmath>

#include "vicl/emg.hpp"
#include "vicl/interaction.hpp"
#include "vicl/stiffness.hpp"

namespace vicl::pipeline {

DemoFeatures extract_features(const DemonstrationRecord& record, const SubjectParams& subject,
                              int T) {
  record.validate();
  subject.validate();
  if (T < 2) throw ValidationError("extract_features: T must be >= 2");
  const int n = record.timebase.n;
  const double dt = record.timebase.dt;

  std::vector<double> alpha_c =
      emg::cocontraction(record.activation_bb_c, record.activation_tb_c);

  // Per-sample stiffness model of the collaborator arm.
  std::vector<Matrix3d> K(n), D(n), V(n);
  std::vector<Vector3d> h(n), x(n);
  for (int i = 0; i < n; ++i) {
    auto ell = stiffness::endpoint_stiffness(record.arm_c[i], alpha_c[i], subject);
    K[i] = ell.K;
    D[i] = stiffness::damping_from_stiffness(ell.K, subject.delta);
    V[i] = ell.V;
    h[i] = ell.h_diag;
    x[i] = record.tcp_pose[i].head<3>();
  }

  std::vector<Vector3d> x_d = interaction::recover_reference(x, dt, K, D, record.f_ext);

  // Uniform resample of every channel onto T phase steps.
  DemoFeatures out;
  out.features.resize(T, tpgmm::kFeatureDim);
  out.axes.resize(T);
  out.duration = record.timebase.duration();
  auto sample_idx = [&](int t) {
    double pos = static_cast<double>(t) * (n - 1) / (T - 1);
    return pos;
  };
  for (int t = 0; t < T; ++t) {
    double pos = sample_idx(t);
    int k = std::min(static_cast<int>(std::floor(pos)), n - 2);
    double frac = pos - k;
    Vector3d p = x_d[k] + frac * (x_d[k + 1] - x_d[k]);
    Eigen::Vector4d q = record.tcp_pose[k].tail<4>();  // orientation held per sample
    Vector3d hs = h[k] + frac * (h[k + 1] - h[k]);
    out.features(t, tpgmm::kPhaseDim) = static_cast<double>(t) / (T - 1);
    out.features.block<1, 3>(t, tpgmm::kPosDim) = p.transpose();
    out.features.block<1, 4>(t, tpgmm::kQuatDim) = canonical_quat(q).transpose();
    out.features.block<1, 3>(t, tpgmm::kStiffDim) = hs.array().log().matrix().transpose();
    out.axes[t] = V[k];
  }

  out.anchor_start = out.features.block<1, 3>(0, tpgmm::kPosDim).transpose();
  int goal_idx = 0;
  double best = -1.0;
  for (int t = 0; t < T; ++t) {
    double d = (out.features.block<1, 3>(t, tpgmm::kPosDim).transpose() -
                Eigen::Vector3d(out.anchor_start))
                   .norm();
    if (d > best) {
      best = d;
      goal_idx = t;
    }
  }
  out.anchor_goal = out.features.block<1, 3>(goal_idx, tpgmm::kPosDim).transpose();
  return out;
}

std::vector<Matrix3d> mean_axes(const std::vector<DemoFeatures>& features) {
  if (features.empty()) throw ValidationError("mean_axes: no demos");
  const auto T = features[0].axes.size();
  std::vector<Matrix3d> out(T);
  for (std::size_t t = 0; t < T; ++t) {
    Matrix3d acc = Matrix3d::Zero();
    for (const auto& f : features) acc += f.axes[t];
    Eigen::JacobiSVD<Matrix3d> svd(acc, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0.0) {
      Matrix3d flip = Matrix3d::Identity();
      flip(2, 2) = -1.0;
      r = svd.matrixU() * flip * svd.matrixV().transpose();
    }
    out[t] = r;
  }
  return out;
}

ImpedanceSchedule schedule_for_frames(const tpgmm::TpgmmModel& model,
                                      const std::vector<TaskFrame>& frames, int T, double dt,
                                      const std::vector<Matrix3d>& axes, double r_control,
                                      double delta) {
  tpgmm::Reproduction rep = tpgmm::reproduce(model, frames, T);
  MatrixXd r_cost = r_control * Matrix3d::Identity();
  lqt::LqtProblem problem = lqt::build_problem(rep.per_frame, r_cost, dt);
  lqt::LqtSolution sol = lqt::solve(problem);
  return lqt::schedule(sol, rep.quaternion, rep.stiffness_diag, axes, delta, dt);
}

LearnResult learn(const std::vector<DemonstrationRecord>& demos, const LearnOptions& options) {
  if (demos.size() < 2) throw ValidationError("learn: need >= 2 demonstrations");
  SubjectParams subject = subject_table(options.subject);
  subject.delta = options.delta;

  int min_n = demos[0].timebase.n;
  for (const auto& d : demos) min_n = std::min(min_n, d.timebase.n);
  // Largest T <= max_T whose step count divides the demo span, so the
  // schedule dt stays an exact multiple of the sample clock.
  int T = std::min(options.max_T, min_n);
  while (T > 2 && (min_n - 1) % (T - 1) != 0) --T;

  std::vector<DemoFeatures> features;
  features.reserve(demos.size());
  for (const auto& d : demos) features.push_back(extract_features(d, subject, T));

  // Project every demo into its own start/goal frames and stack.
  const int dim = tpgmm::kFeatureDim;
  MatrixXd stacked_start(static_cast<int>(demos.size()) * T, dim);
  MatrixXd stacked_goal(static_cast<int>(demos.size()) * T, dim);
  Vector3d mean_start = Vector3d::Zero(), mean_goal = Vector3d::Zero();
  for (std::size_t d = 0; d < features.size(); ++d) {
    TaskFrame fs = tpgmm::lift_pose_frame(Matrix3d::Identity(), features[d].anchor_start);
    TaskFrame fg = tpgmm::lift_pose_frame(Matrix3d::Identity(), features[d].anchor_goal);
    stacked_start.middleRows(static_cast<int>(d) * T, T) =
        tpgmm::to_frame(features[d].features, fs);
    stacked_goal.middleRows(static_cast<int>(d) * T, T) =
        tpgmm::to_frame(features[d].features, fg);
    mean_start += features[d].anchor_start;
    mean_goal += features[d].anchor_goal;
  }
  mean_start /= static_cast<double>(features.size());
  mean_goal /= static_cast<double>(features.size());

  tpgmm::EmOptions em;
  em.seed = options.seed;
  em.regularization = options.regularization;
  LearnResult result;
  std::vector<MatrixXd> data = {stacked_start, stacked_goal};
  result.model = tpgmm::em_fit(data, options.components, em, &result.em_report);
  if (options.bic_sweep) {
    for (int j = 1; j <= std::max(8, options.components); ++j) {
      try {
        tpgmm::EmReport rep_j;
        tpgmm::TpgmmModel m = tpgmm::em_fit(data, j, em, &rep_j);
        result.bic_table.emplace_back(j, tpgmm::bic(m, data));
      } catch (const ValidationError&) {
        break;  // not enough samples for larger J
      }
    }
  }

  result.canonical_frames = {tpgmm::lift_pose_frame(Matrix3d::Identity(), mean_start),
                             tpgmm::lift_pose_frame(Matrix3d::Identity(), mean_goal)};

  const double dt = features[0].duration / (T - 1);
  tpgmm::Reproduction rep = tpgmm::reproduce(result.model, result.canonical_frames, T);
  MatrixXd r_cost = options.r_control * Matrix3d::Identity();
  lqt::LqtProblem problem = lqt::build_problem(rep.per_frame, r_cost, dt);
  lqt::LqtSolution sol = lqt::solve(problem);
  result.lqt_kkt = sol.kkt_residual;
  result.lqt_ridged = sol.ridged;
  result.schedule =
      lqt::schedule(sol, rep.quaternion, rep.stiffness_diag, mean_axes(features),
                    subject.delta, dt);
  result.passivity = wbc::passivity_check(result.schedule);
  return result;
}

std::vector<regnet::Sequence> regnet_dataset(const std::vector<DemonstrationRecord>& demos) {
  std::vector<regnet::Sequence> out;
  for (const auto& rec : demos) {
    rec.validate();
    std::vector<double> alpha_p =
        emg::cocontraction(rec.activation_bb_p, rec.activation_tb_p);
    std::vector<double> alpha_c =
        emg::cocontraction(rec.activation_bb_c, rec.activation_tb_c);
    regnet::Sequence seq;
    const int n = rec.timebase.n;
    for (int i = 0; i < n; ++i) {
      VectorXd in(5);
      in << alpha_p[i], rec.tcp_pose[i](0), rec.tcp_pose[i](1), rec.tcp_pose[i](2),
          static_cast<double>(i) / (n - 1);
      VectorXd target(1);
      target << alpha_c[i];
      seq.inputs.push_back(in);
      seq.targets.push_back(target);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

double baseline_alpha(const std::vector<DemonstrationRecord>& demos) {
  double acc = 0.0;
  std::size_t count = 0;
  for (const auto& rec : demos) {
    std::vector<double> alpha_c =
        emg::cocontraction(rec.activation_bb_c, rec.activation_tb_c);
    for (double a : alpha_c) acc += a;
    count += alpha_c.size();
  }
  if (count == 0) throw ValidationError("baseline_alpha: no samples");
  return acc / static_cast<double>(count);
}

}  // namespace vicl::pipeline
