#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>

#include "vicl/emg.hpp"

using namespace vicl;
using namespace vicl::emg;

namespace {

// Analytic magnitude of the continuous-time Butterworth prototype; the oracle
// for passband/stopband checks (bilinear warping keeps these within the
// asserted slack at the tested frequencies).
double butterworth_hp_mag(double f, double cutoff, int order) {
  double r = std::pow(cutoff / f, 2 * order);
  return 1.0 / std::sqrt(1.0 + r);
}

// Digital magnitude of a biquad cascade at frequency f (exact oracle for the
// implemented filter).
double sos_mag(const std::vector<Biquad>& sos, double f, double rate) {
  std::complex<double> z = std::exp(std::complex<double>(0.0, -2.0 * M_PI * f / rate));
  std::complex<double> h(1.0, 0.0);
  for (const auto& s : sos) {
    h *= (s.b0 + s.b1 * z + s.b2 * z * z) / (1.0 + s.a1 * z + s.a2 * z * z);
  }
  return std::abs(h);
}

double peak_amplitude(const std::vector<double>& y, std::size_t skip) {
  double m = 0.0;
  for (std::size_t i = skip; i + skip < y.size(); ++i) m = std::max(m, std::abs(y[i]));
  return m;
}

std::vector<double> sine(double freq, double rate, double seconds, double amp = 1.0) {
  auto n = static_cast<std::size_t>(seconds * rate);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = amp * std::sin(2.0 * M_PI * freq * i / rate);
  return out;
}

}  // namespace

TEST_CASE("highpass removes DC") {
  RawEmg raw{std::vector<double>(4000, 3.0), 2000.0};
  auto y = highpass(raw, 100.0, 4);
  CHECK(peak_amplitude(y, 400) < 1e-3 * 3.0);
}

TEST_CASE("highpass passband gain matches the analytic response within 1%") {
  // 500 Hz sine at 2000 Hz, cutoff 100 Hz: analytic two-pass gain.
  double expected = std::pow(butterworth_hp_mag(500.0, 100.0, 4), 2);
  RawEmg raw{sine(500.0, 2000.0, 2.0), 2000.0};
  auto y = highpass(raw, 100.0, 4);
  double amp = peak_amplitude(y, 300);
  CHECK(amp == doctest::Approx(expected).epsilon(0.01));
  CHECK(amp == doctest::Approx(1.0).epsilon(0.01));
  // The digital cascade itself matches its own transfer function tightly.
  auto sos = butterworth_sos(4, 100.0, 2000.0, FilterKind::HighPass);
  CHECK(std::pow(sos_mag(sos, 500.0, 2000.0), 2) == doctest::Approx(amp).epsilon(2e-3));
}

TEST_CASE("highpass stopband attenuation at 10 Hz") {
  double bound = std::pow(butterworth_hp_mag(10.0, 100.0, 4), 2);  // ~1e-8
  RawEmg raw{sine(10.0, 2000.0, 4.0), 2000.0};
  auto y = highpass(raw, 100.0, 4);
  CHECK(bound < 1e-6);
  CHECK(peak_amplitude(y, 800) < 1e-3);  // << 0.1% of unit input
}

TEST_CASE("highpass rejects cutoff at or above Nyquist") {
  RawEmg raw{sine(10.0, 100.0, 1.0), 100.0};
  CHECK_THROWS_AS(highpass(raw, 50.0, 4), ValidationError);
  CHECK_THROWS_AS(highpass(raw, 80.0, 4), ValidationError);
}

TEST_CASE("zero-phase property: reversal commutes with filtering") {
  Rng rng(7);
  std::vector<double> x(3000);
  for (auto& v : x) v = rng.normal();
  auto sos = butterworth_sos(4, 100.0, 2000.0, FilterKind::HighPass);
  auto a = filtfilt(sos, x);
  std::vector<double> xr(x.rbegin(), x.rend());
  auto b = filtfilt(sos, xr);
  std::reverse(b.begin(), b.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst < 1e-9);
}

TEST_CASE("envelope of a sine approaches the rectified mean 2a/pi") {
  const double amp = 1.7;
  auto x = sine(100.0, 2000.0, 4.0, amp);
  auto env = envelope(x, 2000.0, 6.0);
  // Interior mean against the analytic rectified-sine mean.
  double mean = 0.0;
  std::size_t lo = env.size() / 4, hi = 3 * env.size() / 4;
  for (std::size_t i = lo; i < hi; ++i) mean += env[i];
  mean /= static_cast<double>(hi - lo);
  CHECK(mean == doctest::Approx(2.0 * amp / M_PI).epsilon(0.05));
}

TEST_CASE("envelope of zero input is zero and never negative") {
  std::vector<double> x(1000, 0.0);
  auto env = envelope(x, 2000.0, 6.0);
  for (double v : env) CHECK(v == 0.0);

  // Impulse train stays nonnegative after clamping.
  std::vector<double> imp(2000, 0.0);
  for (std::size_t i = 0; i < imp.size(); i += 97) imp[i] = (i % 2 == 0) ? 5.0 : -5.0;
  auto env2 = envelope(imp, 2000.0, 6.0);
  for (double v : env2) CHECK(v >= 0.0);
}

TEST_CASE("pre-clamp envelope scales linearly under positive gain") {
  Rng rng(21);
  std::vector<double> x(2500);
  for (auto& v : x) v = rng.normal();
  std::vector<double> x3(x.size());
  const double c = 3.7;
  for (std::size_t i = 0; i < x.size(); ++i) x3[i] = c * x[i];
  auto e1 = envelope(x, 2000.0, 6.0, /*clamp=*/false);
  auto e3 = envelope(x3, 2000.0, 6.0, /*clamp=*/false);
  for (std::size_t i = 0; i < e1.size(); ++i) {
    CHECK(e3[i] == doctest::Approx(c * e1[i]).epsilon(1e-12));
  }
}

TEST_CASE("normalize_mvc clamps into the unit interval") {
  CHECK(normalize_mvc({0.5}, 1.0)[0] == 0.5);
  CHECK(normalize_mvc({1.4}, 1.0)[0] == 1.0);
  CHECK(normalize_mvc({0.0}, 1.0)[0] == 0.0);
  CHECK_THROWS_AS(normalize_mvc({0.5}, 0.0), ValidationError);
  CHECK_THROWS_AS(normalize_mvc({0.5}, -2.0), ValidationError);
}

TEST_CASE("cocontraction is the mean and is symmetric") {
  auto a = cocontraction({0.4, 0.0, 1.0}, {0.2, 0.0, 1.0});
  CHECK(a[0] == doctest::Approx(0.3));
  CHECK(a[1] == 0.0);
  CHECK(a[2] == 1.0);
  Rng rng(3);
  std::vector<double> u(50), v(50);
  for (std::size_t i = 0; i < u.size(); ++i) {
    u[i] = rng.uniform();
    v[i] = rng.uniform();
  }
  auto uv = cocontraction(u, v);
  auto vu = cocontraction(v, u);
  for (std::size_t i = 0; i < u.size(); ++i) CHECK(uv[i] == vu[i]);
  CHECK_THROWS_AS(cocontraction({0.1}, {0.1, 0.2}), ValidationError);
}

TEST_CASE("causal filter matches the offline forward pass") {
  auto sos = butterworth_sos(2, 6.0, 100.0, FilterKind::LowPass);
  Rng rng(11);
  std::vector<double> x(300);
  for (auto& v : x) v = rng.uniform();
  auto offline = filter_forward(sos, x);
  CausalFilter f(sos);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(f.step(x[i]) == doctest::Approx(offline[i]).epsilon(1e-14));
  }
}
