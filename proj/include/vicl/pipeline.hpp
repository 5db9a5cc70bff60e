#pragma once

#include <string>
#include <vector>

#include "vicl/common.hpp"
#include "vicl/datamodel.hpp"
#include "vicl/lqt.hpp"
#include "vicl/regnet.hpp"
#include "vicl/schedule.hpp"
#include "vicl/tpgmm.hpp"
#include "vicl/wbc.hpp"

namespace vicl::pipeline {

/// One demonstration reduced to the joint feature trajectory:
/// [phase, recovered reference position, quaternion, log stiffness diagonal],
/// plus the per-step stiffness axes.
struct DemoFeatures {
  MatrixXd features;           // T x 11
  std::vector<Matrix3d> axes;  // stiffness eigen axes per step
  Vector3d anchor_start;
  Vector3d anchor_goal;        // farthest point from the start
  double duration = 0.0;
};

DemoFeatures extract_features(const DemonstrationRecord& record, const SubjectParams& subject,
                              int T);

struct LearnOptions {
  int components = 6;
  double regularization = 1e-6;
  std::uint64_t seed = 0;
  double r_control = 1e-4;  // LQT control cost scale
  int max_T = 1001;
  std::string subject = "S5";
  double delta = 2.0;
  bool bic_sweep = false;  // report-only sweep over component counts
};

struct LearnResult {
  tpgmm::TpgmmModel model;
  ImpedanceSchedule schedule;
  tpgmm::EmReport em_report;
  wbc::PassivityResult passivity;
  double lqt_kkt = 0.0;
  bool lqt_ridged = false;
  std::vector<TaskFrame> canonical_frames;
  std::vector<std::pair<int, double>> bic_table;  // (J, BIC) when swept
};

/// Fit the task-parameterized mixture on the demos and produce the canonical
/// schedule through the tracking solve.
LearnResult learn(const std::vector<DemonstrationRecord>& demos, const LearnOptions& options);

/// Rebuild a schedule from an existing model for shifted task frames.
ImpedanceSchedule schedule_for_frames(const tpgmm::TpgmmModel& model,
                                      const std::vector<TaskFrame>& frames, int T, double dt,
                                      const std::vector<Matrix3d>& axes, double r_control,
                                      double delta);

/// Per-demo regulation sequences: inputs [partner co-contraction, TCP
/// position, phase], target collaborator co-contraction.
std::vector<regnet::Sequence> regnet_dataset(const std::vector<DemonstrationRecord>& demos);

/// Mean collaborator co-contraction over the demos (the rho = 1 operating point).
double baseline_alpha(const std::vector<DemonstrationRecord>& demos);

/// Mean stiffness axes per phase step across demos, projected back to SO(3).
std::vector<Matrix3d> mean_axes(const std::vector<DemoFeatures>& features);

}  // namespace vicl::pipeline
