#include "vicl/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "vicl/emg.hpp"
#include "vicl/interaction.hpp"

namespace vicl::sim {

Scenario scenario_from_string(const std::string& s) {
  if (s == "transport") return Scenario::Transport;
  if (s == "taichi-uni" || s == "taichi_uni") return Scenario::TaichiUni;
  if (s == "taichi-bi" || s == "taichi_bi") return Scenario::TaichiBi;
  if (s == "sawing") return Scenario::Sawing;
  throw ValidationError("unknown scenario: " + s +
                        " (expected transport|taichi-uni|taichi-bi|sawing)");
}

Method method_from_string(const std::string& s) {
  if (s == "fic") return Method::Fic;
  if (s == "emg-vic") return Method::EmgVic;
  if (s == "ekf-vic") return Method::EkfVic;
  if (s == "ablation") return Method::Ablation;
  if (s == "hi-imprsl") return Method::HiImprsl;
  throw ValidationError("unknown method: " + s +
                        " (expected fic|emg-vic|ekf-vic|ablation|hi-imprsl)");
}

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::Transport: return "transport";
    case Scenario::TaichiUni: return "taichi-uni";
    case Scenario::TaichiBi: return "taichi-bi";
    case Scenario::Sawing: return "sawing";
  }
  return "?";
}

std::string to_string(Method m) {
  switch (m) {
    case Method::Fic: return "fic";
    case Method::EmgVic: return "emg-vic";
    case Method::EkfVic: return "ekf-vic";
    case Method::Ablation: return "ablation";
    case Method::HiImprsl: return "hi-imprsl";
  }
  return "?";
}

bool is_mutual_adaptation(Scenario s) { return s != Scenario::Transport; }

namespace {

double min_jerk(double u) { return u * u * u * (10.0 - 15.0 * u + 6.0 * u * u); }
double min_jerk_rate(double u) { return u * u * (30.0 - 60.0 * u + 30.0 * u * u); }

Vector3d jitter3(Rng* rng, double scale) {
  if (!rng) return Vector3d::Zero();
  return Vector3d(rng->uniform(-scale, scale), rng->uniform(-scale, scale),
                  rng->uniform(-scale, scale));
}

}  // namespace

Vector3d PartnerAgent::anchor(double t) const {
  Vector3d p = Vector3d::Zero();
  if (!segments.empty()) {
    p = segments.front().p0;
    for (const auto& seg : segments) {
      if (t >= seg.t1) {
        p = seg.p1;
      } else if (t > seg.t0) {
        double u = (t - seg.t0) / (seg.t1 - seg.t0);
        p = seg.p0 + min_jerk(u) * (seg.p1 - seg.p0);
        break;
      } else {
        break;
      }
    }
  }
  if (circle_period > 0.0) {
    double ph = 2.0 * M_PI * t / circle_period + circle_phase;
    p += circle_center + circle_u * std::cos(ph) + circle_v * std::sin(ph);
  }
  return p;
}

Vector3d PartnerAgent::anchor_vel(double t) const {
  Vector3d v = Vector3d::Zero();
  for (const auto& seg : segments) {
    if (t > seg.t0 && t < seg.t1) {
      double dur = seg.t1 - seg.t0;
      double u = (t - seg.t0) / dur;
      v = (min_jerk_rate(u) / dur) * (seg.p1 - seg.p0);
      break;
    }
  }
  if (circle_period > 0.0) {
    double w = 2.0 * M_PI / circle_period;
    double ph = w * t + circle_phase;
    v += w * (-circle_u * std::sin(ph) + circle_v * std::cos(ph));
  }
  return v;
}

double PartnerAgent::alpha(double t) const {
  double a = alpha_base;
  if (alpha_period > 0.0) {
    a += alpha_amp * std::sin(2.0 * M_PI * t / alpha_period + alpha_phase);
  }
  for (double tb : alpha_bumps_t) {
    double z = (t - tb) / alpha_bump_width;
    a += alpha_bump_gain * std::exp(-0.5 * z * z);
  }
  return std::clamp(a, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Shared task geometry so demonstrations and live partners move in the same
// family of paths.

namespace {

struct TaskGeometry {
  PartnerAgent collaborator;  // path of the hand whose skill is learned
  PartnerAgent partner;
  double duration = 6.0;
  Vector3d partner_grip_offset = Vector3d::Zero();
  double wood_level = 0.0;  // sawing only
};

TaskGeometry transport_geometry(Rng* rng, double jitter) {
  TaskGeometry g;
  g.duration = 6.0;
  Vector3d start(0.55, 0.25, 0.10);
  Vector3d goal(0.88, 0.20, 0.08);
  start += jitter3(rng, jitter);
  goal += jitter3(rng, jitter);
  Vector3d lift(0, 0, 0.15);

  PartnerAgent& c = g.collaborator;
  c.segments = {{0.0, 0.6, start, start},
                {0.6, 2.0, start, start + lift},
                {2.0, 4.4, start + lift, goal + lift},
                {4.4, 5.8, goal + lift, goal},
                {5.8, 6.0, goal, goal}};
  c.alpha_base = rng ? 0.04 + rng->uniform(-0.01, 0.01) : 0.04;
  c.alpha_bump_gain = rng ? 0.20 + rng->uniform(-0.02, 0.02) : 0.20;
  c.alpha_bump_width = 0.5;
  double tb1 = 1.3 + (rng ? rng->uniform(-0.1, 0.1) : 0.0);
  double tb2 = 5.1 + (rng ? rng->uniform(-0.1, 0.1) : 0.0);
  c.alpha_bumps_t = {tb1, tb2};

  g.partner = c;
  g.partner_grip_offset = Vector3d(0.30, 0.0, 0.0);
  for (auto& seg : g.partner.segments) {
    seg.p0 += g.partner_grip_offset;
    seg.p1 += g.partner_grip_offset;
  }
  // Leader-follower: the partner leads with a matching profile; the
  // collaborator follows slightly attenuated.
  g.partner.alpha_bump_gain = c.alpha_bump_gain / 0.85;
  g.partner.alpha_base = (c.alpha_base - 0.017) / 0.85;
  return g;
}

TaskGeometry taichi_geometry(Rng* rng, double jitter, bool bimanual) {
  TaskGeometry g;
  g.duration = 8.0;
  double radius = 0.10 + (rng ? rng->uniform(-jitter, jitter) : 0.0);
  double phase = rng ? rng->uniform(-0.3, 0.3) : 0.0;
  Vector3d center(0.62, 0.25, 0.16);
  if (rng) center += Vector3d(rng->uniform(-jitter, jitter), rng->uniform(-jitter, jitter), 0);

  PartnerAgent& c = g.collaborator;
  c.circle_center = center;
  if (!bimanual) {
    c.circle_u = radius * Vector3d::UnitX();  // flat circle in XY
    c.circle_v = radius * Vector3d::UnitY();
  } else {
    c.circle_u = radius * Vector3d::UnitY();  // vertical circle in YZ
    c.circle_v = radius * Vector3d::UnitZ();
  }
  c.circle_period = 4.0;
  c.circle_phase = phase;
  c.alpha_base = 0.30;
  c.alpha_amp = rng ? 0.22 + rng->uniform(-0.02, 0.02) : 0.22;
  c.alpha_period = 4.0;
  c.alpha_phase = phase + M_PI;  // yields while the partner pushes

  g.partner = c;
  g.partner_grip_offset = Vector3d(0.06, 0.0, 0.0);
  g.partner.circle_center += g.partner_grip_offset;
  g.partner.circle_phase = phase + 0.35;  // partner leads the circle
  g.partner.alpha_phase = phase;          // anti-phase co-contraction
  return g;
}

TaskGeometry sawing_geometry(Rng* rng, double jitter) {
  TaskGeometry g;
  g.duration = 8.0;
  g.wood_level = 0.10;
  double amp = 0.12 + (rng ? rng->uniform(-jitter, jitter) : 0.0);
  double phase = rng ? rng->uniform(-0.2, 0.2) : 0.0;
  Vector3d center(0.64, 0.25, g.wood_level - 0.002);

  PartnerAgent& c = g.collaborator;
  c.circle_center = center;
  c.circle_u = Vector3d::Zero();
  c.circle_v = amp * Vector3d::UnitX();  // stroke = amp * sin(w t)
  c.circle_period = 2.0;
  c.circle_phase = phase;
  c.alpha_base = 0.30;
  c.alpha_amp = rng ? 0.20 + rng->uniform(-0.02, 0.02) : 0.20;
  c.alpha_period = 2.0;
  c.alpha_phase = phase + M_PI;

  g.partner = c;
  g.partner_grip_offset = Vector3d(0.28, 0.0, 0.03);
  g.partner.circle_center += g.partner_grip_offset;
  g.partner.circle_v = (amp + 0.03) * Vector3d::UnitX();  // partner pulls harder
  g.partner.alpha_phase = phase;
  return g;
}

TaskGeometry make_geometry(Scenario scenario, Rng* rng, double jitter) {
  switch (scenario) {
    case Scenario::Transport: return transport_geometry(rng, jitter);
    case Scenario::TaichiUni: return taichi_geometry(rng, jitter, false);
    case Scenario::TaichiBi: return taichi_geometry(rng, jitter, true);
    case Scenario::Sawing: return sawing_geometry(rng, jitter);
  }
  throw ValidationError("make_geometry: bad scenario");
}

ArmPose synth_arm_pose(const Vector3d& hand, bool left_side) {
  ArmPose pose;
  double side = left_side ? 1.0 : -1.0;
  pose.wrist = hand;
  pose.shoulder = hand - Vector3d(0.45, 0.0, 0.0);
  pose.elbow = pose.shoulder + Vector3d(0.22, -side * 0.14, -0.02);
  return pose;
}

}  // namespace

std::vector<DemonstrationRecord> synth_demos(const DemoOptions& options) {
  if (options.count < 2) throw ValidationError("synth_demos: need >= 2 demos");
  SubjectParams subject = subject_table(options.subject);
  std::vector<DemonstrationRecord> out;
  Rng root(options.seed);
  for (int d = 0; d < options.count; ++d) {
    Rng rng = root.stream("demo-" + std::to_string(d));
    TaskGeometry geo = make_geometry(options.scenario, &rng, options.jitter);

    DemonstrationRecord rec;
    rec.task = to_string(options.scenario);
    rec.timebase.dt = 1.0 / kCanonicalRateHz;
    rec.timebase.n = static_cast<int>(std::lround(geo.duration * kCanonicalRateHz)) + 1;
    const int n = rec.timebase.n;

    const double m_obj = 1.2;
    const double k_demo = 250.0;
    for (int i = 0; i < n; ++i) {
      double t = rec.timebase.time(i);
      Vector3d xc = geo.collaborator.anchor(t);
      Vector3d xp = geo.partner.anchor(t);
      double ac = geo.collaborator.alpha(t);
      double ap = geo.partner.alpha(t);

      rec.tcp_pose.push_back(make_pose(xc, Eigen::Vector4d(1, 0, 0, 0)));
      rec.partner_tcp_pose.push_back(make_pose(xp, Eigen::Vector4d(1, 0, 0, 0)));
      rec.arm_c.push_back(synth_arm_pose(xc, true));
      rec.arm_p.push_back(synth_arm_pose(xp, false));
      rec.activation_bb_c.push_back(ac);
      rec.activation_tb_c.push_back(ac);
      rec.activation_bb_p.push_back(ap);
      rec.activation_tb_p.push_back(ap);

      Vector3d f;
      if (options.scenario == Scenario::Transport) {
        // Half the object weight plus a lead force along the leader motion.
        f = Vector3d(0, 0, -0.5 * m_obj * 9.81) + 12.0 * geo.partner.anchor_vel(t);
      } else {
        // Hand-to-hand spring toward the partner grip point.
        f = k_demo * (xp - geo.partner_grip_offset - xc);
        if (options.scenario == Scenario::Sawing) f += Vector3d(0, 0, -5.0);
      }
      rec.f_ext.push_back(f);
    }
    rec.validate();
    out.push_back(std::move(rec));
  }
  return out;
}

Vector3d metric_force_mean(const std::vector<Vector3d>& trace) {
  if (trace.empty()) throw ValidationError("metric_force_mean: empty trace");
  Vector3d acc = Vector3d::Zero();
  for (const auto& f : trace) acc += f.cwiseAbs();
  return acc / static_cast<double>(trace.size());
}

Vector3d metric_smoothness(const std::vector<Vector3d>& trace, double dt) {
  if (trace.size() < 5) throw ValidationError("metric_smoothness: need >= 5 samples");
  Vector3d out;
  std::vector<double> axis(trace.size());
  for (int a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < trace.size(); ++i) axis[i] = trace[i](a);
    std::vector<double> jerk = interaction::differentiate(axis, dt, 2);
    double acc = 0.0;
    for (double v : jerk) acc += v * v;
    out(a) = std::sqrt(acc / static_cast<double>(jerk.size()));
  }
  return out;
}

std::vector<stiffness::CalibrationObservation> synth_calibration(const SubjectParams& truth,
                                                                 std::uint64_t seed,
                                                                 double force_noise_n) {
  Rng rng(seed);
  // Six arm configurations spanning direction and elbow bend.
  std::vector<ArmPose> poses;
  const double bends[6] = {-0.18, -0.12, 0.10, 0.16, -0.08, 0.14};
  const double yaw[6] = {0.0, 0.3, -0.3, 0.15, -0.15, 0.45};
  const double reach[6] = {0.45, 0.50, 0.42, 0.55, 0.48, 0.40};
  for (int p = 0; p < 6; ++p) {
    ArmPose pose;
    pose.shoulder = Vector3d(0, 0, 0);
    Vector3d dir(std::cos(yaw[p]), std::sin(yaw[p]), 0.0);
    pose.wrist = reach[p] * dir;
    pose.elbow = 0.5 * pose.wrist + Vector3d(0.02, bends[p], -0.05);
    poses.push_back(pose);
  }
  const double levels[3] = {0.0, 0.2, 0.4};  // minimum, 20% MVC, 40% MVC

  const Vector3d dirs[6] = {Vector3d::UnitX(),
                            Vector3d::UnitY(),
                            Vector3d::UnitZ(),
                            Vector3d(1, 1, 0).normalized(),
                            Vector3d(1, 0, 1).normalized(),
                            Vector3d(0, 1, 1).normalized()};
  const double peak = 0.02;  // m

  std::vector<stiffness::CalibrationObservation> out;
  for (const auto& pose : poses) {
    for (double level : levels) {
      Matrix3d k_true = stiffness::endpoint_stiffness(pose, level, truth).K;
      std::vector<Vector3d> xs, fs;
      for (const auto& dir : dirs) {
        // Sample the 0.5 s out-and-back perturbation, not just its peak.
        for (int step = 1; step <= 12; ++step) {
          double mag = peak * std::sin(M_PI * step / 12.0);
          for (double sign : {1.0, -1.0}) {
            Vector3d x = sign * mag * dir;
            Vector3d f = k_true * x;
            if (force_noise_n > 0.0) {
              f += Vector3d(rng.normal(0, force_noise_n), rng.normal(0, force_noise_n),
                            rng.normal(0, force_noise_n));
            }
            xs.push_back(x);
            fs.push_back(f);
          }
        }
      }
      stiffness::CalibrationObservation obs;
      obs.pose = pose;
      obs.cocontraction = level;
      obs.K_measured = stiffness::perturbation_stiffness(xs, fs);
      out.push_back(obs);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Closed-loop scenario execution.

namespace {

// Seed the arm joints so the TCP starts on the reference.
VectorXd ik_arm(const KinematicChain& chain, VectorXd q, const Vector3d& target, int arm_dof) {
  for (int it = 0; it < 300; ++it) {
    auto kin = chain.fk(q);
    Vector3d err = target - kin.tcp;
    if (err.norm() < 1e-10) break;
    MatrixXd jac = chain.jacobian(q).topRows(3).rightCols(arm_dof);
    MatrixXd gram = jac * jac.transpose() + 1e-6 * Matrix3d::Identity();
    VectorXd dq = jac.transpose() * gram.ldlt().solve(err);
    q.tail(arm_dof) += 0.7 * dq;
    for (int i = 3; i < chain.dof(); ++i) {
      q(i) = std::clamp(q(i), chain.joints[i].q_min + 0.05, chain.joints[i].q_max - 0.05);
    }
  }
  return q;
}

Pose7 mirror_y(const Pose7& pose) {
  Pose7 out = pose;
  out(1) = -pose(1);  // reflect across the torso plane y = 0
  return out;
}

struct MethodState {
  stiffness::EkfState ekf;
  stiffness::EkfNoise ekf_noise;
  std::optional<regnet::OnlinePredictor> predictor;
  double baseline_alpha = 0.0;
};

// All contact models of one scenario instance, shared between the sensor
// sampling, the controller-cycle evaluation, and the integrator stages.
struct ForceField {
  Scenario scenario;
  const PartnerAgent* partner_left = nullptr;   // engages the left TCP
  const PartnerAgent* partner_right = nullptr;  // bimanual only
  Vector3d partner_grip_offset = Vector3d::Zero();
  double k_grip = 600.0, d_grip = 40.0;
  double wood_level = 0.0;
  double k_wood = 5000.0, d_wood = 120.0, mu_wood = 0.45;

  static Vector3d spring(const PartnerAgent& agent, double t, const Vector3d& tcp,
                         const Vector3d& vel) {
    return agent.k_h * (agent.anchor(t) - tcp) + agent.d_h * (agent.anchor_vel(t) - vel);
  }

  Plant::ExternalForces eval(double t, const Vector3d& tcp_l, const Vector3d& vel_l,
                             const Vector3d& tcp_r, const Vector3d& vel_r, const Vector3d& x_obj,
                             const Vector3d& v_obj, Vector3d* f_obj) const {
    Plant::ExternalForces f;
    if (f_obj) f_obj->setZero();
    switch (scenario) {
      case Scenario::Transport: {
        f.f_left = k_grip * (x_obj - tcp_l) + d_grip * (v_obj - vel_l);
        if (f_obj) {
          Vector3d grip = partner_left->anchor(t);
          Vector3d grip_v = partner_left->anchor_vel(t);
          Vector3d f_hand =
              k_grip * (grip - partner_grip_offset - x_obj) + d_grip * (grip_v - v_obj);
          *f_obj = -f.f_left + f_hand;
        }
        break;
      }
      case Scenario::Sawing: {
        double pen = wood_level - tcp_l(2);
        double fz = std::max(0.0, k_wood * pen - d_wood * vel_l(2));
        Vector3d vxy(vel_l(0), vel_l(1), 0.0);
        f.f_left = spring(*partner_left, t, tcp_l, vel_l) + Vector3d(0, 0, fz) -
                   mu_wood * fz * vxy / (vxy.norm() + 0.01);
        break;
      }
      case Scenario::TaichiUni: {
        f.f_left = spring(*partner_left, t, tcp_l, vel_l);
        break;
      }
      case Scenario::TaichiBi: {
        f.f_left = spring(*partner_left, t, tcp_l, vel_l);
        f.f_right = spring(*partner_right, t, tcp_r, vel_r);
        break;
      }
    }
    return f;
  }
};

}  // namespace

std::string ScenarioResult::serialize() const {
  std::ostringstream os;
  os << "vicl-result\n";
  os << "n " << timebase.n << " dt " << format_double(timebase.dt) << "\n";
  os << "failed " << (failed ? 1 : 0) << " note " << note << "\n";
  os << "force_mean";
  for (int a = 0; a < 3; ++a) os << ' ' << format_double(force_mean(a));
  os << "\nsmoothness";
  for (int a = 0; a < 3; ++a) os << ' ' << format_double(smoothness(a));
  os << "\ntorso_coupling " << format_double(torso_coupling) << "\n";
  for (std::size_t i = 0; i < force.size(); ++i) {
    for (int a = 0; a < 3; ++a) os << format_double(force[i](a)) << ' ';
    if (!force_left.empty()) {
      for (int a = 0; a < 3; ++a) os << format_double(force_left[i](a)) << ' ';
    }
    os << format_double(i < rho.size() ? rho[i] : 1.0) << "\n";
  }
  return os.str();
}

ScenarioResult run_scenario(const ScenarioOptions& options, const Artifacts& artifacts) {
  const ImpedanceSchedule& sched = artifacts.schedule;
  sched.validate();
  const bool bimanual = options.scenario == Scenario::TaichiBi;
  const bool hybrid = options.scenario == Scenario::Sawing &&
                      (options.method == Method::Ablation || options.method == Method::HiImprsl);
  const bool needs_regnet = options.method == Method::HiImprsl && !options.force_rho_one;
  if (needs_regnet && !artifacts.regulation.has_value()) {
    throw ValidationError(
        "run_scenario: method hi-imprsl needs a regulation checkpoint; run 'vicl train' first");
  }

  Rng root(options.seed);
  Rng path_rng = root.stream("partner-path");
  Rng force_noise_rng = root.stream("force-noise");
  Rng emg_noise_rng = root.stream("emg-noise");

  TaskGeometry geo = make_geometry(options.scenario, &path_rng, options.jitter);
  const int n_ref = sched.timebase.n;
  const double ref_dt = sched.timebase.dt;
  const double inner_dt = 1e-3;
  const int cycles_per_ref = std::max(1, static_cast<int>(std::lround(ref_dt / inner_dt)));

  // Pre-draw the sensor noise so every method sees identical streams.
  std::vector<Vector3d> force_noise(n_ref, Vector3d::Zero());
  std::vector<Vector3d> force_noise_l(n_ref, Vector3d::Zero());
  std::vector<double> emg_noise(n_ref, 0.0);
  if (options.sensor_noise) {
    for (int i = 0; i < n_ref; ++i) {
      for (int a = 0; a < 3; ++a) force_noise[i](a) = force_noise_rng.normal(0, options.noise_force);
      for (int a = 0; a < 3; ++a)
        force_noise_l[i](a) = force_noise_rng.normal(0, options.noise_force);
      emg_noise[i] = emg_noise_rng.normal(0, options.noise_emg);
    }
  }

  Plant plant(options.plant, bimanual);
  const int arm_dof = plant.arm_dof();

  // Left chain tracks the learned schedule; in the bimanual task the right
  // chain tracks the y-mirrored reference and carries the reported metrics.
  const bool primary_left = !bimanual;
  {
    Vector3d x0_left = sched.x_d[0].head<3>();
    VectorXd q_l =
        ik_arm(plant.left_chain(), plant.chain_state(true).q, x0_left, arm_dof);
    plant.set_arm_configuration(true, q_l.tail(arm_dof));
    if (bimanual) {
      Vector3d x0_right = mirror_y(sched.x_d[0]).head<3>();
      VectorXd q_r =
          ik_arm(plant.right_chain(), plant.chain_state(false).q, x0_right, arm_dof);
      plant.set_arm_configuration(false, q_r.tail(arm_dof));
    }
  }

  // Mirrored partner for the right hand in the bimanual task.
  PartnerAgent partner_mirror = geo.partner;
  partner_mirror.circle_center(1) = -partner_mirror.circle_center(1);
  for (auto& seg : partner_mirror.segments) {
    seg.p0(1) = -seg.p0(1);
    seg.p1(1) = -seg.p1(1);
  }

  ForceField field;
  field.scenario = options.scenario;
  field.partner_left = &geo.partner;
  field.partner_right = &partner_mirror;
  field.partner_grip_offset = geo.partner_grip_offset;
  field.wood_level = geo.wood_level;

  wbc::ControllerConfig cfg;
  cfg.gamma = 0.5;
  cfg.mass_scale = 1.0;
  wbc::TorsoAdmittance adm;
  wbc::WholeBodyController controller(cfg, adm);
  if (hybrid) controller.enable_hybrid_z(wbc::HybridForceOverlay{}, options.sawing_force_target);

  MethodState ms;
  ms.ekf.k_hat = Vector3d::Constant(300.0);
  ms.ekf.d_hat = Vector3d::Constant(30.0);
  ms.ekf.P = 1e3 * Eigen::Matrix<double, 6, 6>::Identity();
  ms.ekf_noise.q_k = 2e4;
  ms.ekf_noise.q_d = 2e2;
  ms.ekf_noise.r_force = 0.5;
  if (options.method == Method::HiImprsl && artifacts.regulation.has_value()) {
    ms.predictor.emplace(*artifacts.regulation);
    ms.baseline_alpha = artifacts.regulation->baseline_alpha;
  }

  emg::OnlineEnvelope live_alpha(kCanonicalRateHz, 4.0);
  double alpha0 = geo.partner.alpha(0.0);
  double alpha_live = alpha0;
  for (int i = 0; i < 200; ++i) alpha_live = live_alpha.step(alpha0);

  ScenarioResult result;
  result.timebase = sched.timebase;

  if (options.scenario == Scenario::Transport) {
    Vector3d tcp0 = plant.chain_state(true).tcp;
    const double m_obj = 1.2;
    plant.add_object(m_obj, tcp0 - Vector3d(0, 0, m_obj * 9.81 / (2.0 * field.k_grip)));
  }

  // Methods without the force overlay press by referencing below the surface.
  const double saw_press_depth = (options.scenario == Scenario::Sawing && !hybrid) ? 0.025 : 0.0;

  std::ofstream cycle_log;
  if (!options.cycle_log_path.empty()) {
    cycle_log.open(options.cycle_log_path, std::ios::trunc);
    if (!cycle_log) throw ValidationError("run_scenario: cannot write " + options.cycle_log_path);
    cycle_log << "t";
    for (int i = 0; i < 3 + arm_dof; ++i) cycle_log << ",tau_task_" << i;
    for (int i = 0; i < 3 + arm_dof; ++i) cycle_log << ",tau_null_" << i;
    cycle_log << ",err_x,err_y,err_z,k_eig1,k_eig2,k_eig3,rho,passivity_margin\n";
  }

  Matrix3d K_cmd = Matrix3d::Identity() * options.fic_k;
  Matrix3d D_cmd = Matrix3d::Identity() * 2.0 * std::sqrt(options.fic_k);
  double rho = 1.0;

  auto field_now = [&](double t) {
    Vector3d tcp_l = plant.chain_state(true).tcp;
    Vector3d vel_l = plant.chain_state(true).tcp_vel;
    Vector3d tcp_r = Vector3d::Zero(), vel_r = Vector3d::Zero();
    if (bimanual) {
      tcp_r = plant.chain_state(false).tcp;
      vel_r = plant.chain_state(false).tcp_vel;
    }
    return field.eval(t, tcp_l, vel_l, tcp_r, vel_r, plant.object_position(),
                      plant.object_velocity(), nullptr);
  };

  try {
    for (int ref_i = 0; ref_i < n_ref; ++ref_i) {
      const double t_ref = ref_i * ref_dt;

      // --- 100 Hz layer: sensors, method gains, reference update. ---
      wbc::ChainState primary = plant.chain_state(primary_left);
      Plant::ExternalForces sensed = field_now(t_ref);
      Vector3d f_meas = (primary_left ? sensed.f_left : sensed.f_right) + force_noise[ref_i];
      Vector3d f_meas_left = sensed.f_left + force_noise_l[ref_i];

      double alpha_raw = std::clamp(geo.partner.alpha(t_ref) + emg_noise[ref_i], 0.0, 1.0);
      alpha_live = live_alpha.step(alpha_raw);

      const Pose7& ref_pose = sched.x_d[ref_i];
      double phase = n_ref > 1 ? static_cast<double>(ref_i) / (n_ref - 1) : 0.0;

      switch (options.method) {
        case Method::Fic: {
          K_cmd = options.fic_k * Matrix3d::Identity();
          D_cmd = 2.0 * std::sqrt(options.fic_k) * Matrix3d::Identity();
          rho = 1.0;
          break;
        }
        case Method::EmgVic: {
          double s = std::clamp(alpha_live, 0.0, 1.0);
          double k = options.emg_k_lo + (options.emg_k_hi - options.emg_k_lo) * s;
          K_cmd = k * Matrix3d::Identity();
          D_cmd = 2.0 * std::sqrt(k) * Matrix3d::Identity();
          rho = 1.0;
          break;
        }
        case Method::EkfVic: {
          stiffness::EkfObservation obs;
          obs.position_error = ref_pose.head<3>() - primary.tcp;
          obs.velocity = primary.tcp_vel;
          obs.force = f_meas;
          ms.ekf = stiffness::ekf_step(ms.ekf, obs, ref_dt, ms.ekf_noise);
          Vector3d k = ms.ekf.k_hat.cwiseMax(options.ekf_k_lo).cwiseMin(options.ekf_k_hi);
          K_cmd = k.asDiagonal();
          D_cmd = 2.0 * K_cmd.diagonal().cwiseSqrt().asDiagonal();
          rho = 1.0;
          break;
        }
        case Method::Ablation: {
          K_cmd = sched.K[ref_i];
          D_cmd = sched.D[ref_i];
          rho = 1.0;
          break;
        }
        case Method::HiImprsl: {
          K_cmd = sched.K[ref_i];
          D_cmd = sched.D[ref_i];
          if (options.force_rho_one) {
            rho = 1.0;
          } else {
            VectorXd in(5);
            in << alpha_live, ref_pose(0), ref_pose(1), ref_pose(2), phase;
            double pred = ms.predictor->step(in);
            double base = ms.baseline_alpha > 0.0 ? ms.baseline_alpha : 1.0;
            rho = std::clamp(pred / base, options.rho_min, options.rho_max);
          }
          break;
        }
      }

      wbc::TaskReference ref;  // reference of the left chain
      ref.x_d = ref_pose.head<3>();
      ref.quat_d = ref_pose.tail<4>();
      ref.K = K_cmd;
      ref.D = D_cmd;
      ref.x_d(2) -= saw_press_depth;

      std::optional<wbc::TaskReference> ref_right;
      if (bimanual) {
        wbc::TaskReference rr = ref;
        Pose7 m = mirror_y(ref_pose);
        rr.x_d = m.head<3>();
        rr.quat_d = m.tail<4>();
        ref_right = rr;
      }

      Vector3d disp = ref_pose.head<3>() - sched.x_d[0].head<3>();
      Vector3d torso_ref(0.5 * disp(0), 0.2 * disp(1), 0.0);

      result.force.push_back(f_meas);
      if (bimanual) result.force_left.push_back(f_meas_left);
      result.rho.push_back(rho);
      if (ref_i == n_ref - 1) break;  // trace closed; nothing left to integrate

      // --- 1 kHz inner loop. ---
      for (int c = 0; c < cycles_per_ref; ++c) {
        double t = t_ref + c * inner_dt;

        wbc::ChainState left_state = plant.chain_state(true);
        std::optional<wbc::ChainState> right_state;
        if (bimanual) right_state = plant.chain_state(false);

        Plant::ExternalForces f_now = field_now(t);
        Vector3d torso_ext = plant.torso_external_torque(f_now);
        double measured_fz = (primary_left ? f_now.f_left : f_now.f_right)(2);

        wbc::ControlOutput out = controller.step(left_state, ref, right_state, ref_right, rho,
                                                 torso_ref, torso_ext, measured_fz, inner_dt);
        if (out.aborted) {
          result.failed = true;
          result.note = "controller aborted; zero-torque fallback";
        }

        plant.set_torso_command(out.torso_velocity_cmd);
        VectorXd tau_l = out.left.tau_total.tail(arm_dof);
        VectorXd tau_r = bimanual && out.right.has_value()
                             ? VectorXd(out.right->tau_total.tail(arm_dof))
                             : VectorXd::Zero(arm_dof);

        plant.step(t, inner_dt, tau_l, tau_r,
                   [&](double tt, const Vector3d& tcp_l, const Vector3d& vel_l,
                       const Vector3d& tcp_r, const Vector3d& vel_r, const Vector3d& x_obj,
                       const Vector3d& v_obj, Vector3d* f_obj) {
                     return field.eval(tt, tcp_l, vel_l, tcp_r, vel_r, x_obj, v_obj, f_obj);
                   });

        if (cycle_log.is_open()) {
          Eigen::SelfAdjointEigenSolver<Matrix3d> es(out.K_commanded_left);
          cycle_log << format_double(t);
          for (int i = 0; i < 3 + arm_dof; ++i)
            cycle_log << ',' << format_double(out.left.tau_task(i));
          for (int i = 0; i < 3 + arm_dof; ++i)
            cycle_log << ',' << format_double(out.left.tau_null(i));
          Vector3d err = left_state.tcp - ref.x_d;
          for (int i = 0; i < 3; ++i) cycle_log << ',' << format_double(err(i));
          for (int i = 0; i < 3; ++i) cycle_log << ',' << format_double(es.eigenvalues()(i));
          cycle_log << ',' << format_double(out.rho) << ','
                    << format_double(out.passivity_margin) << "\n";
        }
      }
    }
  } catch (const std::exception& e) {
    result.failed = true;
    result.note = e.what();
  }

  while (result.force.size() < static_cast<std::size_t>(n_ref)) {
    result.force.push_back(Vector3d::Zero());
    if (bimanual) result.force_left.push_back(Vector3d::Zero());
    result.rho.push_back(1.0);
  }
  result.force_mean = metric_force_mean(result.force);
  result.smoothness = metric_smoothness(result.force, ref_dt);
  result.torso_coupling = plant.max_torso_coupling();
  return result;
}

}  // namespace vicl::sim
