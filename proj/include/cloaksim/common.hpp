// Shared scalar aliases and small numeric helpers used across the library.

#ifndef CLOAKSIM_COMMON_HPP
#define CLOAKSIM_COMMON_HPP

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace cloaksim {

using complexd = std::complex<double>;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using MatC = Eigen::MatrixXcd;

// r^e computed in log space; r must be > 0 unless e is a small nonnegative integer.
inline double rpow(double r, double e) {
  if (e == 0.0) return 1.0;
  if (r == 0.0) {
    if (e > 0.0) return 0.0;
    throw std::domain_error("rpow error: negative power of zero radius");
  }
  return std::pow(r, e);
}

inline bool close_rel(double a, double b, double tol) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale <= tol;
}

// FNV-1a, used for config provenance hashes.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace cloaksim

#endif
