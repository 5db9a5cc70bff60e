#include "vicl/common.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace vicl {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng Rng::stream(const std::string& tag) const {
  std::uint64_t h = fnv1a64(tag);
  std::uint64_t s = state_;
  // Mix the current state with the tag hash so streams are decorrelated.
  std::uint64_t mixed = s ^ (h + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2));
  return Rng(mixed ? mixed : 1);
}

std::uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  // Box-Muller; reject u1 == 0 to avoid log(0).
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: n must be positive");
  // Rejection sampling for an unbiased draw.
  std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return static_cast<std::size_t>(v % n);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write file: " + path);
  out << content;
  if (!out) throw ValidationError("write failed: " + path);
}

bool is_spd(const Eigen::MatrixXd& m, double min_eig, double sym_tol) {
  if (m.rows() != m.cols()) return false;
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > sym_tol) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  return es.eigenvalues().minCoeff() > min_eig;
}

Eigen::MatrixXd spd_sqrt(const Eigen::MatrixXd& k, double eig_floor) {
  if (k.rows() != k.cols()) throw NumericError("spd_sqrt: matrix must be square");
  if ((k - k.transpose()).cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, k.cwiseAbs().maxCoeff())) {
    throw NumericError("spd_sqrt: matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k);
  if (es.eigenvalues().minCoeff() < -1e-8 * std::max(1.0, k.cwiseAbs().maxCoeff())) {
    throw NumericError("spd_sqrt: matrix is not positive semidefinite");
  }
  Eigen::VectorXd roots = es.eigenvalues().cwiseMax(eig_floor).cwiseSqrt();
  return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace vicl
