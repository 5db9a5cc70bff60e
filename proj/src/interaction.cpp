#include "vicl/interaction.hpp"

#include <cmath>

namespace vicl::interaction {

void ImpedanceParams::validate() const {
  auto check = [](const Matrix3d& m, const char* name) {
    if (!is_spd(m, 0.0, 1e-10 * std::max(1.0, m.cwiseAbs().maxCoeff()))) {
      throw ValidationError(std::string("impedance params: ") + name + " must be SPD");
    }
  };
  check(Lambda, "Lambda");
  check(D, "D");
  check(K, "K");
}

namespace {

// Linear interpolation over a uniformly sampled vector series.
Vector3d interp(const std::vector<Vector3d>& series, double t, double dt) {
  double pos = t / dt;
  auto k = static_cast<std::ptrdiff_t>(std::floor(pos));
  auto last = static_cast<std::ptrdiff_t>(series.size()) - 1;
  if (k >= last) return series.back();
  if (k < 0) return series.front();
  double frac = pos - static_cast<double>(k);
  return series[k] + frac * (series[k + 1] - series[k]);
}

Matrix3d interp_gain(const std::vector<Matrix3d>& series, double t, double dt,
                     const Matrix3d& fallback) {
  if (series.empty()) return fallback;
  double pos = t / dt;
  auto k = static_cast<std::ptrdiff_t>(std::floor(pos));
  auto last = static_cast<std::ptrdiff_t>(series.size()) - 1;
  if (k >= last) return series.back();
  if (k < 0) return series.front();
  double frac = pos - static_cast<double>(k);
  return series[k] + frac * (series[k + 1] - series[k]);
}

}  // namespace

SimResult simulate_impedance(const std::vector<Vector3d>& x_d, const ImpedanceParams& params,
                             const std::vector<Vector3d>& f_ext, double dt,
                             const CartesianState& x0, double inner_dt,
                             const GainSchedule* schedule,
                             const std::vector<Vector3d>* xdot_d,
                             const std::vector<Vector3d>* xddot_d) {
  params.validate();
  if (!(dt > 0.0) || !(inner_dt > 0.0)) throw ValidationError("simulate_impedance: dt must be > 0");
  if (x_d.size() < 2) throw ValidationError("simulate_impedance: need >= 2 reference samples");
  if (f_ext.size() != x_d.size()) throw ValidationError("simulate_impedance: f_ext length mismatch");
  if (schedule) {
    if (!schedule->K.empty() && schedule->K.size() != x_d.size()) {
      throw ValidationError("simulate_impedance: schedule K length mismatch");
    }
    if (!schedule->D.empty() && schedule->D.size() != x_d.size()) {
      throw ValidationError("simulate_impedance: schedule D length mismatch");
    }
  }

  const Matrix3d lambda_inv = params.Lambda.inverse();
  const auto n = static_cast<int>(x_d.size());
  const int sub = std::max(1, static_cast<int>(std::llround(dt / inner_dt)));
  const double h = dt / sub;

  SimResult out;
  out.x.reserve(n);
  out.v.reserve(n);
  out.storage.reserve(n);
  out.dissipated.reserve(n);

  Vector3d x = x0.x;
  Vector3d v = x0.v;
  double dissipated = 0.0;

  auto accel = [&](double t, const Vector3d& xi, const Vector3d& vi) -> Vector3d {
    Vector3d xd = interp(x_d, t, dt);
    Vector3d vd = xdot_d ? interp(*xdot_d, t, dt) : Vector3d::Zero();
    Vector3d ad = xddot_d ? interp(*xddot_d, t, dt) : Vector3d::Zero();
    Matrix3d k = schedule ? interp_gain(schedule->K, t, dt, params.K) : params.K;
    Matrix3d d = schedule ? interp_gain(schedule->D, t, dt, params.D) : params.D;
    Vector3d f = interp(f_ext, t, dt);
    return lambda_inv * (params.Lambda * ad + d * (vd - vi) + k * (xd - xi) + f);
  };

  auto record = [&](int i) {
    Matrix3d k = schedule ? interp_gain(schedule->K, i * dt, dt, params.K) : params.K;
    Vector3d err = x_d[i] - x;
    out.x.push_back(x);
    out.v.push_back(v);
    out.storage.push_back(0.5 * v.dot(params.Lambda * v) + 0.5 * err.dot(k * err));
    out.dissipated.push_back(dissipated);
  };

  record(0);
  for (int i = 0; i < n - 1; ++i) {
    for (int s = 0; s < sub; ++s) {
      double t = i * dt + s * h;
      Vector3d k1x = v;
      Vector3d k1v = accel(t, x, v);
      Vector3d k2x = v + 0.5 * h * k1v;
      Vector3d k2v = accel(t + 0.5 * h, x + 0.5 * h * k1x, v + 0.5 * h * k1v);
      Vector3d k3x = v + 0.5 * h * k2v;
      Vector3d k3v = accel(t + 0.5 * h, x + 0.5 * h * k2x, v + 0.5 * h * k2v);
      Vector3d k4x = v + h * k3v;
      Vector3d k4v = accel(t + h, x + h * k3x, v + h * k3v);

      Matrix3d d = schedule ? interp_gain(schedule->D, t, dt, params.D) : params.D;
      Vector3d vd = xdot_d ? interp(*xdot_d, t, dt) : Vector3d::Zero();
      Vector3d vrel = v - vd;
      dissipated += h * vrel.dot(d * vrel);

      x += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
      v += (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
      if (!x.allFinite() || !v.allFinite()) {
        throw NumericError("simulate_impedance: integration blew up at step " +
                           std::to_string(i) + "." + std::to_string(s));
      }
    }
    record(i + 1);
  }
  return out;
}

std::vector<Vector3d> recover_reference(const std::vector<Vector3d>& x,
                                        const std::vector<Vector3d>& xdot,
                                        const std::vector<Vector3d>& xddot,
                                        const std::vector<Matrix3d>& K,
                                        const std::vector<Matrix3d>& D,
                                        const std::vector<Vector3d>& f_ext) {
  const std::size_t n = x.size();
  if (xdot.size() != n || xddot.size() != n || K.size() != n || D.size() != n ||
      f_ext.size() != n) {
    throw ValidationError("recover_reference: series length mismatch");
  }
  std::vector<Vector3d> x_d(n);
  for (std::size_t t = 0; t < n; ++t) {
    Eigen::JacobiSVD<Matrix3d> svd(K[t]);
    double cond = svd.singularValues()(0) / std::max(svd.singularValues()(2), 1e-300);
    if (!(cond < 1e8)) {
      throw NumericError("recover_reference: ill-conditioned K at timestep " + std::to_string(t));
    }
    x_d[t] = x[t] + K[t].ldlt().solve(xddot[t] + D[t] * xdot[t] - f_ext[t]);
  }
  return x_d;
}

std::vector<Vector3d> recover_reference(const std::vector<Vector3d>& x, double dt,
                                        const std::vector<Matrix3d>& K,
                                        const std::vector<Matrix3d>& D,
                                        const std::vector<Vector3d>& f_ext, bool smooth_accel) {
  std::vector<Vector3d> xdot = differentiate(x, dt, 1);
  std::vector<Vector3d> xddot = differentiate(x, dt, 2);
  if (smooth_accel) xddot = savgol7(xddot);
  return recover_reference(x, xdot, xddot, K, D, f_ext);
}

std::vector<double> differentiate(const std::vector<double>& series, double dt, int order) {
  if (order != 1 && order != 2) throw ValidationError("differentiate: order must be 1 or 2");
  if (series.size() < 5) throw ValidationError("differentiate: need >= 5 samples");
  if (!(dt > 0.0)) throw ValidationError("differentiate: dt must be > 0");
  const auto n = series.size();
  std::vector<double> out(n);
  if (order == 1) {
    out[0] = (-3.0 * series[0] + 4.0 * series[1] - series[2]) / (2.0 * dt);
    out[n - 1] = (3.0 * series[n - 1] - 4.0 * series[n - 2] + series[n - 3]) / (2.0 * dt);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      out[i] = (series[i + 1] - series[i - 1]) / (2.0 * dt);
    }
  } else {
    const double h2 = dt * dt;
    out[0] = (2.0 * series[0] - 5.0 * series[1] + 4.0 * series[2] - series[3]) / h2;
    out[n - 1] =
        (2.0 * series[n - 1] - 5.0 * series[n - 2] + 4.0 * series[n - 3] - series[n - 4]) / h2;
    for (std::size_t i = 1; i + 1 < n; ++i) {
      out[i] = (series[i + 1] - 2.0 * series[i] + series[i - 1]) / h2;
    }
  }
  return out;
}

std::vector<Vector3d> differentiate(const std::vector<Vector3d>& series, double dt, int order) {
  std::vector<double> comp(series.size());
  std::vector<Vector3d> out(series.size(), Vector3d::Zero());
  for (int axis = 0; axis < 3; ++axis) {
    for (std::size_t i = 0; i < series.size(); ++i) comp[i] = series[i](axis);
    std::vector<double> d = differentiate(comp, dt, order);
    for (std::size_t i = 0; i < series.size(); ++i) out[i](axis) = d[i];
  }
  return out;
}

std::vector<double> savgol7(const std::vector<double>& series) {
  static const double kWeights[7] = {-2.0 / 21, 3.0 / 21, 6.0 / 21, 7.0 / 21,
                                     6.0 / 21,  3.0 / 21, -2.0 / 21};
  const auto n = static_cast<std::ptrdiff_t>(series.size());
  if (n < 7) return series;
  std::vector<double> out(series.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int k = -3; k <= 3; ++k) {
      std::ptrdiff_t j = i + k;
      if (j < 0) j = -j;              // mirror padding
      if (j >= n) j = 2 * (n - 1) - j;
      acc += kWeights[k + 3] * series[j];
    }
    out[i] = acc;
  }
  return out;
}

std::vector<Vector3d> savgol7(const std::vector<Vector3d>& series) {
  std::vector<double> comp(series.size());
  std::vector<Vector3d> out(series.size(), Vector3d::Zero());
  for (int axis = 0; axis < 3; ++axis) {
    for (std::size_t i = 0; i < series.size(); ++i) comp[i] = series[i](axis);
    std::vector<double> s = savgol7(comp);
    for (std::size_t i = 0; i < series.size(); ++i) out[i](axis) = s[i];
  }
  return out;
}

}  // namespace vicl::interaction
