#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace vicl {

using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

/// Input or file content violates a documented invariant. CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure (divergence, singular system, NaN state). CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Deterministic RNG with a fixed algorithm so byte-identical reruns hold
/// across standard libraries (std::normal_distribution is not portable).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

  /// Derive an independent stream for a named purpose; keeps parallel runs
  /// and method variants on identical noise draws.
  Rng stream(const std::string& tag) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (no cached spare; stateless across calls).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::swap(v[i], v[index(i + 1)]);
    }
  }

 private:
  std::uint64_t state_;
};

/// Shortest decimal form that reparses to the same double (17 significant digits).
std::string format_double(double v);

/// FNV-1a 64-bit over raw bytes; used for config hashes in run manifests.
std::uint64_t fnv1a64(const std::string& bytes);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

inline bool approx_equal(double a, double b, double tol) { return std::abs(a - b) <= tol; }

/// Symmetrize and check positive definiteness within an eigenvalue floor.
bool is_spd(const Eigen::MatrixXd& m, double min_eig = 0.0, double sym_tol = 1e-10);

/// Principal matrix square root of an SPD matrix via symmetric eigendecomposition.
/// Eigenvalues are floored at eig_floor before the root.
Eigen::MatrixXd spd_sqrt(const Eigen::MatrixXd& k, double eig_floor = 1e-9);

}  // namespace vicl
