#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <string>
#include <vector>

#include "tandem/error.hpp"
#include "tandem/features.hpp"

namespace tandem {

/// Linear CKA on column-centered copies of x and y:
/// ||X^T Y||_F^2 / (||X^T X||_F ||Y^T Y||_F).
inline double linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows()) throw Error(ErrorCode::dimension_mismatch, "linear_cka needs equal sample counts");
  if (x.rows() < 2) throw Error(ErrorCode::too_few_samples, "linear_cka needs n >= 2");
  const Eigen::MatrixXd xc = center_columns(x);
  const Eigen::MatrixXd yc = center_columns(y);
  const double cross = (xc.transpose() * yc).squaredNorm();
  const double den = (xc.transpose() * xc).norm() * (yc.transpose() * yc).norm();
  if (!(den > 0.0)) throw Error(ErrorCode::degenerate_input, "zero-variance input to linear_cka");
  return cross / den;
}

inline double linear_cka(const FeatureMatrix& x, const FeatureMatrix& y) { return linear_cka(x.values, y.values); }

struct CcaResult {
  Eigen::VectorXd rho;     // descending, clipped to [0, 1]
  Eigen::MatrixXd a_dirs;  // k_x x k, directions in whitened x-space
  Eigen::MatrixXd b_dirs;  // k_y x k
  PcaBasis basis_x;
  PcaBasis basis_y;

  Eigen::Index k() const { return rho.size(); }
  Eigen::Index count_above(double tau) const { return (rho.array() > tau).count(); }
};

/// PCA-truncated, ridge-whitened CCA. The whitened features satisfy
/// X̂^T X̂ ≈ (n-1) I, so correlations are the singular values of X̂^T Ŷ / (n-1).
inline CcaResult cca(const FeaturePairDataset& data, double eta = 0.99, double ridge = 1e-8) {
  if (data.x.n() != data.y.n()) throw Error(ErrorCode::dimension_mismatch, "cca needs paired rows");
  const FeatureMatrix xc = center(data.x);
  const FeatureMatrix yc = center(data.y);

  auto truncate = [&](const FeatureMatrix& m, const char* side) {
    try {
      return pca_truncate(m, eta, ridge);
    } catch (const Error& e) {
      throw Error(e.code(), std::string("cca branch ") + side + ": " + e.what());
    }
  };
  CcaResult r;
  r.basis_x = truncate(xc, "x");
  r.basis_y = truncate(yc, "y");

  const Eigen::Index n = data.x.n();
  if (n < std::max(r.basis_x.k(), r.basis_y.k()) + 1)
    throw Error(ErrorCode::too_few_samples, "cca needs n > max(k_x, k_y)");

  const Eigen::MatrixXd xw = whiten(xc, r.basis_x).values;
  const Eigen::MatrixXd yw = whiten(yc, r.basis_y).values;
  const Eigen::MatrixXd m = (xw.transpose() * yw) / static_cast<double>(n - 1);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  r.rho = svd.singularValues().cwiseMax(0.0).cwiseMin(1.0);
  r.a_dirs = svd.matrixU();
  r.b_dirs = svd.matrixV();
  return r;
}

inline double cca_mean_at_k(const Eigen::VectorXd& rho, Eigen::Index k) {
  if (k <= 0) throw Error(ErrorCode::invalid_argument, "mean@k needs k >= 1");
  if (k > rho.size()) throw Error(ErrorCode::invalid_argument, "mean@k: k exceeds spectrum length");
  return rho.head(k).mean();
}

inline double cca_mean_at_k(const CcaResult& r, Eigen::Index k) { return cca_mean_at_k(r.rho, k); }

enum class CcaSide { x, y };

/// Orthonormal basis of the column span via column-pivoted QR; columns whose
/// |R_ii| falls below 1e-10 are dropped.
inline Eigen::MatrixXd orthonormal_span(const Eigen::MatrixXd& q) {
  if (q.cols() == 0) return Eigen::MatrixXd(q.rows(), 0);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(q);
  const Eigen::MatrixXd r = qr.matrixR().template triangularView<Eigen::Upper>();
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < std::min(r.rows(), r.cols()); ++i)
    if (std::abs(r(i, i)) >= 1e-10) ++rank;
  const Eigen::MatrixXd full = qr.householderQ() * Eigen::MatrixXd::Identity(q.rows(), q.rows());
  return full.leftCols(rank);
}

/// Fraction of (centered) original-space energy of `m` captured by the span of
/// the canonical directions with rho > tau, mapped back through P (Λ+εI)^{-1/2}.
inline double aligned_energy_fraction(const Eigen::MatrixXd& m, const CcaResult& r, CcaSide side, double tau) {
  const PcaBasis& basis = side == CcaSide::x ? r.basis_x : r.basis_y;
  const Eigen::MatrixXd& dirs = side == CcaSide::x ? r.a_dirs : r.b_dirs;
  if (m.cols() != basis.d()) throw Error(ErrorCode::dimension_mismatch, "aligned_energy: width differs from basis");

  std::vector<Eigen::Index> selected;
  for (Eigen::Index j = 0; j < r.rho.size(); ++j)
    if (r.rho(j) > tau) selected.push_back(j);
  if (selected.empty()) return 0.0;

  Eigen::MatrixXd picked(dirs.rows(), static_cast<Eigen::Index>(selected.size()));
  for (std::size_t c = 0; c < selected.size(); ++c) picked.col(static_cast<Eigen::Index>(c)) = dirs.col(selected[c]);
  const Eigen::MatrixXd qbar = orthonormal_span(basis.whitening_map() * picked);

  const double full = m.squaredNorm();
  if (!(full > 0.0)) throw Error(ErrorCode::degenerate_input, "aligned_energy on zero matrix");
  return (m * qbar).squaredNorm() / full;
}

struct AlignedEnergyReport {
  double tau = 0.8;
  Eigen::Index count_above = 0;
  double frac_x = 0.0;
  double frac_y = 0.0;
};

inline AlignedEnergyReport aligned_energy(const FeaturePairDataset& data, const CcaResult& r, double tau = 0.8) {
  AlignedEnergyReport rep;
  rep.tau = tau;
  rep.count_above = r.count_above(tau);
  rep.frac_x = aligned_energy_fraction(center_columns(data.x.values), r, CcaSide::x, tau);
  rep.frac_y = aligned_energy_fraction(center_columns(data.y.values), r, CcaSide::y, tau);
  return rep;
}

}  // namespace tandem
