#pragma once

#include <string>
#include <vector>

#include "vicl/common.hpp"
#include "vicl/datamodel.hpp"

namespace vicl::emg {

/// Direct-form-II-transposed second-order section, normalized (a0 = 1).
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

enum class FilterKind { LowPass, HighPass };

/// Butterworth design as cascaded second-order sections (bilinear transform,
/// cutoff prewarped). Order must be even.
std::vector<Biquad> butterworth_sos(int order, double cutoff_hz, double rate_hz, FilterKind kind);

/// Single-pass causal SOS chain for the online path; owns its delay state.
class CausalFilter {
 public:
  explicit CausalFilter(std::vector<Biquad> sections);
  double step(double x);
  void reset();

 private:
  std::vector<Biquad> sections_;
  std::vector<double> z1_, z2_;
};

std::vector<double> filter_forward(const std::vector<Biquad>& sos, const std::vector<double>& x);

/// Forward-backward filtering with odd-reflection padding: zero phase, squared
/// magnitude response. Offline use only.
std::vector<double> filtfilt(const std::vector<Biquad>& sos, const std::vector<double>& x,
                             int pad_len = -1);

/// Raw EMG channel, millivolts at a fixed rate.
struct RawEmg {
  std::vector<double> samples;
  double rate_hz = 2000.0;
};

/// Zero-phase Butterworth high-pass of the raw signal (offline conditioning).
std::vector<double> highpass(const RawEmg& signal, double cutoff_hz, int order);

/// Full-wave rectification followed by a zero-phase 2nd-order low-pass;
/// clamped at zero. `clamp = false` exposes the pre-clamp value for linearity checks.
std::vector<double> envelope(const std::vector<double>& signal, double rate_hz,
                             double smooth_cutoff_hz, bool clamp = true);

/// Muscle activation series normalized to maximal voluntary contraction and
/// clamped to [0,1].
std::vector<double> normalize_mvc(const std::vector<double>& env, double mvc_level);

/// Co-contraction index: per-sample mean of agonist/antagonist activations.
std::vector<double> cocontraction(const std::vector<double>& a_bb, const std::vector<double>& a_tb);

/// Causal rectify + low-pass envelope for the 100 Hz live loop.
class OnlineEnvelope {
 public:
  OnlineEnvelope(double rate_hz, double smooth_cutoff_hz);
  double step(double raw_sample);

 private:
  CausalFilter lowpass_;
};

}  // namespace vicl::emg
