#pragma once

#include <string>
#include <vector>

#include "vicl/common.hpp"
#include "vicl/datamodel.hpp"

namespace vicl {

/// Time-indexed reference pose plus stiffness/damping commanded to the
/// controller. SPD per step; continuity is enforced by the passivity check.
struct ImpedanceSchedule {
  Timebase timebase;
  std::vector<Pose7> x_d;
  std::vector<Matrix3d> K;
  std::vector<Matrix3d> D;

  void validate() const;
};

std::string schedule_to_json(const ImpedanceSchedule& schedule);
ImpedanceSchedule schedule_from_json(const std::string& text);
void save_schedule(const ImpedanceSchedule& schedule, const std::string& path);
ImpedanceSchedule load_schedule(const std::string& path);

}  // namespace vicl
