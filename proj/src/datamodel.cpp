#include "vicl/datamodel.hpp"

#include <cmath>
#include <sstream>

namespace vicl {

void Timebase::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError("timebase: dt must be > 0");
  if (n < 2) throw ValidationError("timebase: need >= 2 samples");
}

void ArmPose::validate() const {
  if (!shoulder.allFinite() || !elbow.allFinite() || !wrist.allFinite()) {
    throw ValidationError("arm_pose: non-finite joint position");
  }
  Vector3d l1 = elbow - shoulder;
  Vector3d l2 = wrist - shoulder;
  if (l1.norm() < 1e-12) throw ValidationError("arm_pose: elbow coincides with shoulder");
  if (l2.norm() < 1e-12) throw ValidationError("arm_pose: wrist coincides with shoulder");
  if (l2.cross(l1).norm() <= 1e-9) {
    throw ValidationError("arm_pose: shoulder/elbow/wrist are collinear");
  }
}

void SubjectParams::validate() const {
  if (!(a1 > 0.0 && a2 > 0.0 && b1 > 0.0 && b2 > 0.0)) {
    throw ValidationError("subject_params: a1, a2, b1, b2 must be positive");
  }
  if (!(delta > 0.0)) throw ValidationError("subject_params: delta must be positive");
}

SubjectParams subject_table(const std::string& name) {
  SubjectParams p;
  p.delta = 2.0;
  if (name == "S1") {
    p.a1 = 0.272; p.a2 = 1.314; p.b1 = 3847.141; p.b2 = 151.684;
  } else if (name == "S2") {
    p.a1 = 0.107; p.a2 = 2.200; p.b1 = 2678.765; p.b2 = 149.597;
  } else if (name == "S3") {
    p.a1 = 0.399; p.a2 = 2.926; p.b1 = 1819.695; p.b2 = 128.581;
  } else if (name == "S4") {
    p.a1 = 0.341; p.a2 = 4.073; p.b1 = 2699.123; p.b2 = 112.562;
  } else if (name == "S5") {
    p.a1 = 0.167; p.a2 = 4.528; p.b1 = 1260.290; p.b2 = 94.951;
  } else {
    throw ValidationError("unknown subject name: " + name + " (expected S1..S5)");
  }
  return p;
}

void TaskFrame::validate() const {
  if (A.rows() != A.cols() || A.rows() == 0) throw ValidationError("task_frame: A must be square");
  if (b.size() != A.rows()) throw ValidationError("task_frame: b size must match A");
  if (std::abs(A.determinant()) <= 1e-12) {
    throw ValidationError("task_frame: A is singular (|det| <= 1e-12)");
  }
}

VectorXd TaskFrame::to_frame(const VectorXd& world) const {
  return A.partialPivLu().solve(world - b);
}

VectorXd TaskFrame::from_frame(const VectorXd& local) const { return A * local + b; }

Pose7 make_pose(const Vector3d& position, const Eigen::Vector4d& quat_wxyz) {
  Pose7 p;
  p.head<3>() = position;
  p.tail<4>() = canonical_quat(quat_wxyz);
  return p;
}

Eigen::Vector4d canonical_quat(const Eigen::Vector4d& q) {
  double n = q.norm();
  if (n < 1e-12) throw ValidationError("quaternion: zero norm");
  Eigen::Vector4d out = q / n;
  if (out(0) < 0.0) out = -out;
  return out;
}

void validate_pose(const Pose7& pose, const std::string& field, double norm_tol) {
  if (!pose.allFinite()) throw ValidationError(field + ": non-finite pose");
  double qn = pose.tail<4>().norm();
  if (std::abs(qn - 1.0) > norm_tol) {
    throw ValidationError(field + ": quaternion norm " + format_double(qn) +
                          " outside unit tolerance");
  }
}

namespace {

void check_activation(const std::vector<double>& a, const std::string& field, int n) {
  if (static_cast<int>(a.size()) != n) throw ValidationError(field + ": length mismatch");
  for (double v : a) {
    if (!std::isfinite(v)) throw ValidationError(field + ": non-finite activation");
    if (v < 0.0 || v > 1.0) {
      throw ValidationError(field + ": activation out of [0,1]: " + format_double(v));
    }
  }
}

}  // namespace

void DemonstrationRecord::validate() const {
  timebase.validate();
  const int n = timebase.n;
  auto check_len = [n](std::size_t got, const std::string& field) {
    if (static_cast<int>(got) != n) throw ValidationError(field + ": length mismatch");
  };
  check_len(tcp_pose.size(), "tcp_pose");
  check_len(partner_tcp_pose.size(), "partner_tcp_pose");
  check_len(arm_c.size(), "arm_c");
  check_len(arm_p.size(), "arm_p");
  check_len(f_ext.size(), "f_ext");
  for (int i = 0; i < n; ++i) {
    validate_pose(tcp_pose[i], "tcp_pose");
    validate_pose(partner_tcp_pose[i], "partner_tcp_pose");
    arm_c[i].validate();
    arm_p[i].validate();
    if (!f_ext[i].allFinite()) throw ValidationError("f_ext: non-finite force");
  }
  check_activation(activation_bb_c, "activation_bb_c", n);
  check_activation(activation_tb_c, "activation_tb_c", n);
  check_activation(activation_bb_p, "activation_bb_p", n);
  check_activation(activation_tb_p, "activation_tb_p", n);
  if (task.empty()) throw ValidationError("task: label must be non-empty");
}

std::vector<double> resample(const std::vector<double>& channel, double from_rate_hz,
                             const Timebase& to) {
  if (channel.empty()) throw ValidationError("resample: empty channel");
  if (!(from_rate_hz > 0.0)) throw ValidationError("resample: from_rate must be > 0");
  to.validate();
  const double src_span = (channel.size() - 1) / from_rate_hz;
  const double dst_span = to.duration();
  if (dst_span > src_span * (1.0 + 1e-12) + 1e-12) {
    throw ValidationError("resample: target window " + format_double(dst_span) +
                          " s exceeds source span " + format_double(src_span) + " s");
  }
  std::vector<double> out(to.n);
  for (int i = 0; i < to.n; ++i) {
    double t = to.time(i);
    double pos = t * from_rate_hz;
    auto k = static_cast<std::ptrdiff_t>(std::floor(pos));
    if (k >= static_cast<std::ptrdiff_t>(channel.size()) - 1) {
      out[i] = channel.back();
      continue;
    }
    if (k < 0) k = 0;
    double frac = pos - static_cast<double>(k);
    out[i] = channel[k] + frac * (channel[k + 1] - channel[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Record file format: "vicl-demo" header with explicit units, then one
// whitespace-separated row per sample. Doubles use 17 significant digits so
// the decimal round-trip is bit-exact.

namespace {

constexpr int kFormatVersion = 1;

const char* kChannelList =
    "t[s]"
    " tcp_px[m] tcp_py[m] tcp_pz[m] tcp_qw tcp_qx tcp_qy tcp_qz"
    " ptcp_px[m] ptcp_py[m] ptcp_pz[m] ptcp_qw ptcp_qx ptcp_qy ptcp_qz"
    " armC_sx[m] armC_sy[m] armC_sz[m] armC_ex[m] armC_ey[m] armC_ez[m]"
    " armC_wx[m] armC_wy[m] armC_wz[m]"
    " armP_sx[m] armP_sy[m] armP_sz[m] armP_ex[m] armP_ey[m] armP_ez[m]"
    " armP_wx[m] armP_wy[m] armP_wz[m]"
    " aBB_c aTB_c aBB_p aTB_p"
    " fx[N] fy[N] fz[N]";

constexpr int kColumns = 40;

void put(std::ostringstream& os, double v) { os << ' ' << format_double(v); }

double take(std::istringstream& is, const std::string& field, int row) {
  double v;
  if (!(is >> v)) {
    throw ValidationError("record parse: row " + std::to_string(row) + ": missing or malformed '" +
                          field + "'");
  }
  return v;
}

}  // namespace

std::string record_to_string(const DemonstrationRecord& record) {
  record.validate();
  std::ostringstream os;
  os << "vicl-demo\n";
  os << "format_version " << kFormatVersion << "\n";
  os << "task " << record.task << "\n";
  os << "dt " << format_double(record.timebase.dt) << "\n";
  os << "n " << record.timebase.n << "\n";
  os << "channels " << kChannelList << "\n";
  for (int i = 0; i < record.timebase.n; ++i) {
    os << format_double(record.timebase.time(i));
    for (int k = 0; k < 7; ++k) put(os, record.tcp_pose[i](k));
    for (int k = 0; k < 7; ++k) put(os, record.partner_tcp_pose[i](k));
    for (const ArmPose* arm : {&record.arm_c[i], &record.arm_p[i]}) {
      for (int k = 0; k < 3; ++k) put(os, arm->shoulder(k));
      for (int k = 0; k < 3; ++k) put(os, arm->elbow(k));
      for (int k = 0; k < 3; ++k) put(os, arm->wrist(k));
    }
    put(os, record.activation_bb_c[i]);
    put(os, record.activation_tb_c[i]);
    put(os, record.activation_bb_p[i]);
    put(os, record.activation_tb_p[i]);
    for (int k = 0; k < 3; ++k) put(os, record.f_ext[i](k));
    os << "\n";
  }
  return os.str();
}

DemonstrationRecord record_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;

  auto next_line = [&](const std::string& what) {
    if (!std::getline(in, line)) throw ValidationError("record parse: truncated before " + what);
    return line;
  };

  if (next_line("magic") != "vicl-demo") {
    throw ValidationError("record parse: bad magic line (expected 'vicl-demo')");
  }

  DemonstrationRecord rec;
  int version = -1;
  {
    std::istringstream hs(next_line("format_version"));
    std::string key;
    if (!(hs >> key >> version) || key != "format_version") {
      throw ValidationError("record parse: malformed 'format_version' header");
    }
    if (version != kFormatVersion) {
      throw ValidationError("record parse: unsupported format_version " + std::to_string(version));
    }
  }
  {
    std::istringstream hs(next_line("task"));
    std::string key;
    if (!(hs >> key >> rec.task) || key != "task") {
      throw ValidationError("record parse: malformed 'task' header");
    }
  }
  {
    std::istringstream hs(next_line("dt"));
    std::string key;
    if (!(hs >> key >> rec.timebase.dt) || key != "dt") {
      throw ValidationError("record parse: malformed 'dt' header");
    }
  }
  {
    std::istringstream hs(next_line("n"));
    std::string key;
    if (!(hs >> key >> rec.timebase.n) || key != "n") {
      throw ValidationError("record parse: malformed 'n' header");
    }
  }
  if (rec.timebase.n < 2) throw ValidationError("record parse: need >= 2 samples");
  if (!(rec.timebase.dt > 0.0)) throw ValidationError("record parse: dt must be > 0");
  {
    std::istringstream hs(next_line("channels"));
    std::string key;
    hs >> key;
    if (key != "channels") throw ValidationError("record parse: malformed 'channels' header");
    std::string rest;
    std::getline(hs, rest);
    if (rest != std::string(" ") + kChannelList) {
      throw ValidationError("record parse: channel list does not match format v" +
                            std::to_string(kFormatVersion));
    }
  }

  const int n = rec.timebase.n;
  rec.tcp_pose.resize(n);
  rec.partner_tcp_pose.resize(n);
  rec.arm_c.resize(n);
  rec.arm_p.resize(n);
  rec.activation_bb_c.resize(n);
  rec.activation_tb_c.resize(n);
  rec.activation_bb_p.resize(n);
  rec.activation_tb_p.resize(n);
  rec.f_ext.resize(n);

  for (int i = 0; i < n; ++i) {
    next_line("data row " + std::to_string(i));
    std::istringstream rs(line);
    take(rs, "t", i);
    for (int k = 0; k < 7; ++k) rec.tcp_pose[i](k) = take(rs, "tcp_pose", i);
    for (int k = 0; k < 7; ++k) rec.partner_tcp_pose[i](k) = take(rs, "partner_tcp_pose", i);
    for (ArmPose* arm : {&rec.arm_c[i], &rec.arm_p[i]}) {
      for (int k = 0; k < 3; ++k) arm->shoulder(k) = take(rs, "arm shoulder", i);
      for (int k = 0; k < 3; ++k) arm->elbow(k) = take(rs, "arm elbow", i);
      for (int k = 0; k < 3; ++k) arm->wrist(k) = take(rs, "arm wrist", i);
    }
    rec.activation_bb_c[i] = take(rs, "activation_bb_c", i);
    rec.activation_tb_c[i] = take(rs, "activation_tb_c", i);
    rec.activation_bb_p[i] = take(rs, "activation_bb_p", i);
    rec.activation_tb_p[i] = take(rs, "activation_tb_p", i);
    for (int k = 0; k < 3; ++k) rec.f_ext[i](k) = take(rs, "f_ext", i);
    double extra;
    if (rs >> extra) {
      throw ValidationError("record parse: row " + std::to_string(i) + ": more than " +
                            std::to_string(kColumns) + " columns");
    }
  }
  rec.validate();
  return rec;
}

void save_record(const DemonstrationRecord& record, const std::string& path) {
  write_text_file(path, record_to_string(record));
}

DemonstrationRecord load_record(const std::string& path) {
  return record_from_string(read_text_file(path));
}

}  // namespace vicl
