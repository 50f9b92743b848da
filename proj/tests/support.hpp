#pragma once

// Test-only helpers: random fixtures and independent oracles.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <utility>

#include "tandem/rng.hpp"

namespace tandem::test {

inline Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, CounterRng& rng, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

/// Haar-ish random orthogonal matrix from the QR of a Gaussian matrix.
inline Eigen::MatrixXd random_orthogonal(Eigen::Index d, CounterRng& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(d, d, rng));
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
  return q;
}

inline Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  return c.transpose() * c / static_cast<double>(x.rows() - 1);
}

/// Exact two-sided binomial interval [lo, hi] holding >= `mass` probability,
/// built from the pmf by direct summation.
inline std::pair<int, int> binomial_interval(int n, double p, double mass = 0.99) {
  std::vector<double> pmf(static_cast<std::size_t>(n) + 1);
  for (int k = 0; k <= n; ++k) {
    const double logc = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
    pmf[static_cast<std::size_t>(k)] = std::exp(logc + k * std::log(p) + (n - k) * std::log1p(-p));
  }
  const double tail = (1.0 - mass) / 2.0;
  int lo = 0;
  double acc = 0.0;
  while (lo < n && acc + pmf[static_cast<std::size_t>(lo)] <= tail) acc += pmf[static_cast<std::size_t>(lo++)];
  int hi = n;
  acc = 0.0;
  while (hi > 0 && acc + pmf[static_cast<std::size_t>(hi)] <= tail) acc += pmf[static_cast<std::size_t>(hi--)];
  return {lo, hi};
}

}  // namespace tandem::test
