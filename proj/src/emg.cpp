#include "vicl/emg.hpp"

#include <algorithm>
#include <cmath>

namespace vicl::emg {

std::vector<Biquad> butterworth_sos(int order, double cutoff_hz, double rate_hz, FilterKind kind) {
  if (order < 1) throw ValidationError("butterworth: order must be >= 1");
  if (order % 2 != 0) throw ValidationError("butterworth: only even orders are supported");
  if (!(rate_hz > 0.0)) throw ValidationError("butterworth: rate must be > 0");
  if (!(cutoff_hz > 0.0) || cutoff_hz >= rate_hz / 2.0) {
    throw ValidationError("butterworth: cutoff must lie in (0, rate/2)");
  }

  // Each prototype pole pair k has quality factor 1 / (2 sin(theta_k)); the
  // bilinear transform with prewarped w0 yields the standard biquad forms.
  const double w0 = 2.0 * M_PI * cutoff_hz / rate_hz;
  const double cw = std::cos(w0);
  const double sw = std::sin(w0);
  std::vector<Biquad> sos;
  const int pairs = order / 2;
  for (int k = 1; k <= pairs; ++k) {
    double theta = (2.0 * k - 1.0) * M_PI / (2.0 * order);
    double q = 1.0 / (2.0 * std::sin(theta));
    double alpha = sw / (2.0 * q);
    double a0 = 1.0 + alpha;
    Biquad s;
    if (kind == FilterKind::LowPass) {
      s.b0 = (1.0 - cw) / 2.0 / a0;
      s.b1 = (1.0 - cw) / a0;
      s.b2 = s.b0;
    } else {
      s.b0 = (1.0 + cw) / 2.0 / a0;
      s.b1 = -(1.0 + cw) / a0;
      s.b2 = s.b0;
    }
    s.a1 = (-2.0 * cw) / a0;
    s.a2 = (1.0 - alpha) / a0;
    sos.push_back(s);
  }
  return sos;
}

CausalFilter::CausalFilter(std::vector<Biquad> sections)
    : sections_(std::move(sections)),
      z1_(sections_.size(), 0.0),
      z2_(sections_.size(), 0.0) {
  if (sections_.empty()) throw ValidationError("CausalFilter: no sections");
}

double CausalFilter::step(double x) {
  for (std::size_t i = 0; i < sections_.size(); ++i) {
    const Biquad& s = sections_[i];
    double y = s.b0 * x + z1_[i];
    z1_[i] = s.b1 * x - s.a1 * y + z2_[i];
    z2_[i] = s.b2 * x - s.a2 * y;
    x = y;
  }
  return x;
}

void CausalFilter::reset() {
  std::fill(z1_.begin(), z1_.end(), 0.0);
  std::fill(z2_.begin(), z2_.end(), 0.0);
}

std::vector<double> filter_forward(const std::vector<Biquad>& sos, const std::vector<double>& x) {
  CausalFilter f(sos);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f.step(x[i]);
  return y;
}

std::vector<double> filtfilt(const std::vector<Biquad>& sos, const std::vector<double>& x,
                             int pad_len) {
  if (x.empty()) throw ValidationError("filtfilt: empty signal");
  const int n = static_cast<int>(x.size());
  if (pad_len < 0) pad_len = std::min(n - 1, 250);
  if (pad_len >= n) pad_len = n - 1;

  // Odd reflection about the end samples keeps the padded signal continuous
  // and the two-pass operation symmetric under time reversal.
  std::vector<double> padded;
  padded.reserve(x.size() + 2 * pad_len);
  for (int i = pad_len; i >= 1; --i) padded.push_back(2.0 * x.front() - x[i]);
  padded.insert(padded.end(), x.begin(), x.end());
  for (int i = 1; i <= pad_len; ++i) padded.push_back(2.0 * x.back() - x[n - 1 - i]);

  std::vector<double> fwd = filter_forward(sos, padded);
  std::reverse(fwd.begin(), fwd.end());
  std::vector<double> bwd = filter_forward(sos, fwd);
  std::reverse(bwd.begin(), bwd.end());

  return std::vector<double>(bwd.begin() + pad_len, bwd.begin() + pad_len + n);
}

std::vector<double> highpass(const RawEmg& signal, double cutoff_hz, int order) {
  if (signal.samples.empty()) throw ValidationError("highpass: empty signal");
  if (!(signal.rate_hz >= 2.0 * cutoff_hz)) {
    throw ValidationError("highpass: rate must be >= 2x cutoff (Nyquist)");
  }
  auto sos = butterworth_sos(order, cutoff_hz, signal.rate_hz, FilterKind::HighPass);
  return filtfilt(sos, signal.samples);
}

std::vector<double> envelope(const std::vector<double>& signal, double rate_hz,
                             double smooth_cutoff_hz, bool clamp) {
  if (signal.empty()) throw ValidationError("envelope: empty signal");
  if (!(smooth_cutoff_hz > 0.0) || smooth_cutoff_hz >= rate_hz / 2.0) {
    throw ValidationError("envelope: smooth cutoff must lie in (0, rate/2)");
  }
  std::vector<double> rect(signal.size());
  std::transform(signal.begin(), signal.end(), rect.begin(),
                 [](double v) { return std::abs(v); });
  auto sos = butterworth_sos(2, smooth_cutoff_hz, rate_hz, FilterKind::LowPass);
  std::vector<double> env = filtfilt(sos, rect);
  if (clamp) {
    for (double& v : env) v = std::max(0.0, v);
  }
  return env;
}

std::vector<double> normalize_mvc(const std::vector<double>& env, double mvc_level) {
  if (!(mvc_level > 0.0)) throw ValidationError("normalize_mvc: mvc_level must be > 0");
  std::vector<double> out(env.size());
  for (std::size_t i = 0; i < env.size(); ++i) {
    out[i] = std::clamp(env[i] / mvc_level, 0.0, 1.0);
  }
  return out;
}

std::vector<double> cocontraction(const std::vector<double>& a_bb,
                                  const std::vector<double>& a_tb) {
  if (a_bb.size() != a_tb.size()) throw ValidationError("cocontraction: length mismatch");
  std::vector<double> out(a_bb.size());
  for (std::size_t i = 0; i < a_bb.size(); ++i) out[i] = 0.5 * (a_bb[i] + a_tb[i]);
  return out;
}

OnlineEnvelope::OnlineEnvelope(double rate_hz, double smooth_cutoff_hz)
    : lowpass_(butterworth_sos(2, smooth_cutoff_hz, rate_hz, FilterKind::LowPass)) {}

double OnlineEnvelope::step(double raw_sample) {
  return std::max(0.0, lowpass_.step(std::abs(raw_sample)));
}

}  // namespace vicl::emg
