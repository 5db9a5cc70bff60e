#pragma once

#include <vector>

#include "vicl/common.hpp"
#include "vicl/datamodel.hpp"

namespace vicl::interaction {

/// Desired inertia, damping, and stiffness of the Cartesian impedance model.
struct ImpedanceParams {
  Matrix3d Lambda = Matrix3d::Identity();
  Matrix3d D = Matrix3d::Zero();
  Matrix3d K = Matrix3d::Zero();

  void validate() const;
};

struct CartesianState {
  Vector3d x = Vector3d::Zero();
  Vector3d v = Vector3d::Zero();
};

/// Result of a forward impedance simulation on the reference timebase, with
/// per-step energy bookkeeping (storage and accumulated damping dissipation).
struct SimResult {
  std::vector<Vector3d> x;
  std::vector<Vector3d> v;
  std::vector<double> storage;      // 0.5 v'Mv + 0.5 (x_d-x)'K(x_d-x)
  std::vector<double> dissipated;   // integral of (v - v_d)'D(v - v_d)
};

/// Time-varying gains; any empty series falls back to the constant params.
struct GainSchedule {
  std::vector<Matrix3d> K;
  std::vector<Matrix3d> D;
};

/// Integrates Lambda*xddot = Lambda*xddot_d + D*(xdot_d - xdot) + K*(x_d - x) + F_ext,
/// with F_ext the external force applied to the TCP (so a constant force
/// settles at x = x_d + K^-1 F_ext). Reference velocity/acceleration
/// feedforward defaults to zero. Fixed-step RK4 at `inner_dt`, decimated to
/// the reference timebase.
SimResult simulate_impedance(const std::vector<Vector3d>& x_d, const ImpedanceParams& params,
                             const std::vector<Vector3d>& f_ext, double dt,
                             const CartesianState& x0, double inner_dt = 1e-3,
                             const GainSchedule* schedule = nullptr,
                             const std::vector<Vector3d>* xdot_d = nullptr,
                             const std::vector<Vector3d>* xddot_d = nullptr);

/// Inverts the unit-inertia quasi-static model: x_d = x + K^-1 (xddot + D xdot - F_ext).
/// Throws when cond(K) exceeds 1e8 at some timestep.
std::vector<Vector3d> recover_reference(const std::vector<Vector3d>& x,
                                        const std::vector<Vector3d>& xdot,
                                        const std::vector<Vector3d>& xddot,
                                        const std::vector<Matrix3d>& K,
                                        const std::vector<Matrix3d>& D,
                                        const std::vector<Vector3d>& f_ext);

/// Convenience overload: derivatives from sampled x (central differences, the
/// acceleration smoothed by a 7-sample quadratic Savitzky-Golay window).
std::vector<Vector3d> recover_reference(const std::vector<Vector3d>& x, double dt,
                                        const std::vector<Matrix3d>& K,
                                        const std::vector<Matrix3d>& D,
                                        const std::vector<Vector3d>& f_ext,
                                        bool smooth_accel = true);

/// Finite differences, second-order accurate in the interior, one-sided
/// second-order at the boundaries. order 1 = first derivative, 2 = second.
std::vector<double> differentiate(const std::vector<double>& series, double dt, int order);
std::vector<Vector3d> differentiate(const std::vector<Vector3d>& series, double dt, int order);

/// 7-sample quadratic Savitzky-Golay smoothing with mirror padding.
std::vector<double> savgol7(const std::vector<double>& series);
std::vector<Vector3d> savgol7(const std::vector<Vector3d>& series);

}  // namespace vicl::interaction
