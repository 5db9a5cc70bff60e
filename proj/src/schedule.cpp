#include "vicl/schedule.hpp"

#include <nlohmann/json.hpp>

namespace vicl {

using nlohmann::json;

void ImpedanceSchedule::validate() const {
  timebase.validate();
  const auto n = static_cast<std::size_t>(timebase.n);
  if (x_d.size() != n || K.size() != n || D.size() != n) {
    throw ValidationError("schedule: channel lengths must equal timebase n");
  }
  for (std::size_t t = 0; t < n; ++t) {
    validate_pose(x_d[t], "schedule x_d");
    double scale_k = std::max(1.0, K[t].cwiseAbs().maxCoeff());
    double scale_d = std::max(1.0, D[t].cwiseAbs().maxCoeff());
    if (!is_spd(K[t], 0.0, 1e-8 * scale_k)) {
      throw ValidationError("schedule: K not SPD at step " + std::to_string(t));
    }
    if (!is_spd(D[t], 0.0, 1e-8 * scale_d)) {
      throw ValidationError("schedule: D not SPD at step " + std::to_string(t));
    }
  }
}

namespace {

json mat3_to_json(const Matrix3d& m) {
  std::vector<double> v(9);
  Eigen::Map<Matrix3d>(v.data()) = m;
  return json(v);
}

Matrix3d mat3_from_json(const json& j) {
  auto v = j.get<std::vector<double>>();
  if (v.size() != 9) throw ValidationError("schedule parse: matrix block must have 9 entries");
  return Eigen::Map<Matrix3d>(v.data());
}

}  // namespace

std::string schedule_to_json(const ImpedanceSchedule& schedule) {
  schedule.validate();
  json out;
  out["format"] = "vicl-schedule";
  out["version"] = 1;
  out["dt"] = schedule.timebase.dt;
  out["n"] = schedule.timebase.n;
  json steps = json::array();
  for (int t = 0; t < schedule.timebase.n; ++t) {
    json s;
    s["x_d"] = std::vector<double>(schedule.x_d[t].data(), schedule.x_d[t].data() + 7);
    s["K"] = mat3_to_json(schedule.K[t]);
    s["D"] = mat3_to_json(schedule.D[t]);
    steps.push_back(s);
  }
  out["steps"] = steps;
  return out.dump(1);
}

ImpedanceSchedule schedule_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("schedule parse: ") + e.what());
  }
  try {
    if (j.at("format") != "vicl-schedule") throw ValidationError("schedule parse: wrong format tag");
    if (j.at("version") != 1) throw ValidationError("schedule parse: unsupported version");
    ImpedanceSchedule s;
    s.timebase.dt = j.at("dt").get<double>();
    s.timebase.n = j.at("n").get<int>();
    for (const auto& step : j.at("steps")) {
      auto xd = step.at("x_d").get<std::vector<double>>();
      if (xd.size() != 7) throw ValidationError("schedule parse: x_d must have 7 entries");
      Pose7 pose;
      for (int k = 0; k < 7; ++k) pose(k) = xd[k];
      s.x_d.push_back(pose);
      s.K.push_back(mat3_from_json(step.at("K")));
      s.D.push_back(mat3_from_json(step.at("D")));
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("schedule parse: missing field: ") + e.what());
  }
}

void save_schedule(const ImpedanceSchedule& schedule, const std::string& path) {
  write_text_file(path, schedule_to_json(schedule));
}

ImpedanceSchedule load_schedule(const std::string& path) {
  return schedule_from_json(read_text_file(path));
}

}  // namespace vicl
