#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vicl/common.hpp"
#include "vicl/datamodel.hpp"
#include "vicl/plant.hpp"
#include "vicl/regnet.hpp"
#include "vicl/schedule.hpp"
#include "vicl/stiffness.hpp"

namespace vicl::sim {

enum class Scenario { Transport, TaichiUni, TaichiBi, Sawing };
enum class Method { Fic, EmgVic, EkfVic, Ablation, HiImprsl };

Scenario scenario_from_string(const std::string& s);
Method method_from_string(const std::string& s);
std::string to_string(Scenario s);
std::string to_string(Method m);
bool is_mutual_adaptation(Scenario s);

/// Scripted human partner: a hand anchor path, a grip spring-damper, and a
/// co-contraction profile shaped by the collaboration mode.
struct PartnerAgent {
  double k_h = 900.0;   // N/m
  double d_h = 45.0;    // N*s/m
  Vector3d anchor(double t) const;
  Vector3d anchor_vel(double t) const;
  double alpha(double t) const;

  // Piecewise path description filled by the scenario builders.
  struct Segment {
    double t0, t1;
    Vector3d p0, p1;  // min-jerk between the endpoints
  };
  std::vector<Segment> segments;
  // Periodic component added on top (circles, strokes).
  Vector3d circle_center = Vector3d::Zero();
  Vector3d circle_u = Vector3d::Zero(), circle_v = Vector3d::Zero();
  double circle_period = 0.0, circle_phase = 0.0;
  // Co-contraction profile.
  double alpha_base = 0.05, alpha_amp = 0.0, alpha_period = 0.0, alpha_phase = 0.0;
  std::vector<double> alpha_bumps_t;  // gaussian bumps for leader-follower shapes
  double alpha_bump_width = 0.4, alpha_bump_gain = 0.2;
};

struct DemoOptions {
  Scenario scenario = Scenario::Transport;
  int count = 5;
  std::uint64_t seed = 1;
  std::string subject = "S5";   // stiffness parameters used for the collaborator
  double duration = 6.0;        // seconds (per-scenario defaults applied)
  double jitter = 0.025;        // start/goal jitter radius, m
};

/// Synthetic human-human demonstration records on the canonical timebase.
std::vector<DemonstrationRecord> synth_demos(const DemoOptions& options);

/// Learned artifacts consumed by the scenario runner.
struct Artifacts {
  ImpedanceSchedule schedule;
  std::optional<regnet::RegNetParams> regulation;
};

struct ScenarioOptions {
  Scenario scenario = Scenario::Transport;
  Method method = Method::Fic;
  std::uint64_t seed = 1;
  PlantVariant plant = PlantVariant::Reduced;
  bool sensor_noise = true;
  double noise_force = 0.1;   // N, gaussian on the force sensor
  double noise_emg = 0.02;    // on the live partner activation
  bool force_rho_one = false; // pin the regulatory factor to exactly 1
  double rho_min = 0.5, rho_max = 1.8;
  double fic_k = 300.0;
  double emg_k_lo = 80.0, emg_k_hi = 520.0;
  double ekf_k_lo = 60.0, ekf_k_hi = 600.0;
  double sawing_force_target = 10.0;
  double jitter = 0.025;
  std::string cycle_log_path;  // per-cycle controller CSV when non-empty
};

struct ScenarioResult {
  Timebase timebase;                    // 100 Hz sensor clock
  std::vector<Vector3d> force;          // primary-chain measured force
  std::vector<Vector3d> force_left;     // second chain (bimanual only)
  std::vector<double> rho;
  Vector3d force_mean = Vector3d::Zero();
  Vector3d smoothness = Vector3d::Zero();   // N/s^2 (raw, not scaled)
  bool failed = false;
  std::string note;
  double torso_coupling = 0.0;

  std::string serialize() const;  // deterministic byte representation
};

ScenarioResult run_scenario(const ScenarioOptions& options, const Artifacts& artifacts);

/// Time-averaged absolute force per axis.
Vector3d metric_force_mean(const std::vector<Vector3d>& trace);
/// RMS of the second time derivative per axis (uniform weights), N/s^2.
Vector3d metric_smoothness(const std::vector<Vector3d>& trace, double dt);

/// Perturbation-protocol synthetic calibration data (6 poses x 3 levels,
/// 6 directions each, 0.02 m peak displacement).
std::vector<stiffness::CalibrationObservation> synth_calibration(
    const SubjectParams& truth, std::uint64_t seed, double force_noise_n = 0.0);

}  // namespace vicl::sim
