#pragma once

// Paired feature generator with a planted shared/unique factor structure:
//   x = sqrt(f_s d/k_s) S Q_s^x + sqrt(f_u d/k_u) U_x Q_u^x + σ E_x
// with Q rows orthonormal, so each branch's expected energy splits exactly
// into f_s + f_u + σ² = 1.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>

#include "tandem/error.hpp"
#include "tandem/features.hpp"
#include "tandem/rng.hpp"

namespace tandem {

struct PlantedSpec {
  Eigen::Index n = 2000;
  Eigen::Index d_x = 32;
  Eigen::Index d_y = 32;
  Eigen::Index shared_dim = 4;
  Eigen::Index unique_dim_x = 4;
  Eigen::Index unique_dim_y = 4;
  double shared_fraction = 0.7;
  double noise_std = 0.1;
  std::uint64_t seed = 0;

  double noise_fraction() const { return noise_std * noise_std; }
  double unique_fraction() const { return 1.0 - shared_fraction - noise_fraction(); }

  void validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::config, "planted spec: " + what); };
    if (n < 2) fail("n >= 2 required");
    if (d_x < 1 || d_y < 1) fail("feature widths must be >= 1");
    if (shared_dim < 0 || unique_dim_x < 0 || unique_dim_y < 0) fail("factor dims must be >= 0");
    if (shared_dim + unique_dim_x > d_x || shared_dim + unique_dim_y > d_y)
      fail("shared_dim + unique dims must not exceed the feature width");
    if (!(shared_fraction >= 0.0 && shared_fraction <= 1.0)) fail("shared_fraction must lie in [0, 1]");
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) fail("noise_std must be finite and >= 0");
    if (unique_fraction() < -1e-12) fail("shared_fraction + noise_std^2 exceeds 1");
    if (shared_fraction > 0.0 && shared_dim == 0) fail("shared_fraction > 0 needs shared_dim >= 1");
    if (unique_fraction() > 1e-12 && (unique_dim_x == 0 || unique_dim_y == 0))
      fail("a positive unique fraction needs unique dims >= 1");
  }
};

struct PlantedTruth {
  Eigen::MatrixXd loadings_shared_x;  // shared_dim x d_x, scaled
  Eigen::MatrixXd loadings_unique_x;  // unique_dim_x x d_x, scaled
  Eigen::MatrixXd loadings_shared_y;
  Eigen::MatrixXd loadings_unique_y;
  Eigen::MatrixXd shared;  // n x shared_dim factors S
  Eigen::MatrixXd shared_part_x;  // S · loadings_shared_x
  Eigen::MatrixXd shared_part_y;
  double shared_fraction = 0;
  double unique_fraction = 0;
  double noise_fraction = 0;
};

struct PlantedPair {
  FeaturePairDataset data;
  PlantedTruth truth;
};

namespace synth_detail {

inline Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, CounterRng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

/// d x d orthogonal matrix from the QR of a Gaussian matrix, with signs fixed
/// so R has a positive diagonal.
inline Eigen::MatrixXd orthogonal(Eigen::Index d, CounterRng& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(d, d, rng));
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd r = qr.matrixQR();
  for (Eigen::Index j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

inline double block_scale(double fraction, Eigen::Index d, Eigen::Index k) {
  return k > 0 ? std::sqrt(std::max(fraction, 0.0) * static_cast<double>(d) / static_cast<double>(k)) : 0.0;
}

}  // namespace synth_detail

/// `shared_override` (n x shared_dim) replaces the drawn shared factors, which
/// lets scene generators tie features to scene attributes.
inline PlantedPair gen_paired_features(const PlantedSpec& spec,
                                       const std::optional<Eigen::MatrixXd>& shared_override = std::nullopt) {
  using namespace synth_detail;
  spec.validate();
  const CounterRng root(spec.seed, Stream::features);
  auto rot_x = root.substream(1), rot_y = root.substream(2);
  auto fac = root.substream(3), ux = root.substream(4), uy = root.substream(5);
  auto nx = root.substream(6), ny = root.substream(7);

  PlantedPair out;
  PlantedTruth& t = out.truth;
  t.shared_fraction = spec.shared_fraction;
  t.noise_fraction = spec.noise_fraction();
  t.unique_fraction = std::max(0.0, spec.unique_fraction());

  const Eigen::MatrixXd qx = orthogonal(spec.d_x, rot_x).transpose();
  const Eigen::MatrixXd qy = orthogonal(spec.d_y, rot_y).transpose();
  t.loadings_shared_x = block_scale(t.shared_fraction, spec.d_x, spec.shared_dim) * qx.topRows(spec.shared_dim);
  t.loadings_unique_x =
      block_scale(t.unique_fraction, spec.d_x, spec.unique_dim_x) * qx.middleRows(spec.shared_dim, spec.unique_dim_x);
  t.loadings_shared_y = block_scale(t.shared_fraction, spec.d_y, spec.shared_dim) * qy.topRows(spec.shared_dim);
  t.loadings_unique_y =
      block_scale(t.unique_fraction, spec.d_y, spec.unique_dim_y) * qy.middleRows(spec.shared_dim, spec.unique_dim_y);

  if (shared_override) {
    if (shared_override->rows() != spec.n || shared_override->cols() != spec.shared_dim)
      throw Error(ErrorCode::dimension_mismatch, "shared factor override must be n x shared_dim");
    t.shared = *shared_override;
  } else {
    t.shared = gaussian(spec.n, spec.shared_dim, fac);
  }
  t.shared_part_x = t.shared * t.loadings_shared_x;
  t.shared_part_y = t.shared * t.loadings_shared_y;

  Eigen::MatrixXd x = t.shared_part_x + gaussian(spec.n, spec.unique_dim_x, ux) * t.loadings_unique_x +
                      spec.noise_std * gaussian(spec.n, spec.d_x, nx);
  Eigen::MatrixXd y = t.shared_part_y + gaussian(spec.n, spec.unique_dim_y, uy) * t.loadings_unique_y +
                      spec.noise_std * gaussian(spec.n, spec.d_y, ny);

  auto ids = sequential_ids(spec.n);
  out.data.x = make_features(ids, std::move(x), Level::backbone, Branch::vlm);
  out.data.y = make_features(std::move(ids), std::move(y), Level::backbone, Branch::vision);
  out.data.split = Split::train;
  return out;
}

/// Row split into a train prefix and a held-out suffix.
inline std::pair<FeaturePairDataset, FeaturePairDataset> split_rows(const FeaturePairDataset& d, Eigen::Index n_train,
                                                                    Split held_out = Split::test) {
  if (n_train < 2 || d.n() - n_train < 2) throw Error(ErrorCode::too_few_samples, "split_rows: each side needs >= 2 rows");
  auto take = [&](const FeatureMatrix& m, Eigen::Index start, Eigen::Index count) {
    FeatureMatrix out;
    out.level = m.level;
    out.branch = m.branch;
    out.values = m.values.middleRows(start, count);
    out.sample_ids.assign(m.sample_ids.begin() + start, m.sample_ids.begin() + start + count);
    return out;
  };
  FeaturePairDataset train{take(d.x, 0, n_train), take(d.y, 0, n_train), Split::train};
  FeaturePairDataset rest{take(d.x, n_train, d.n() - n_train), take(d.y, n_train, d.n() - n_train), held_out};
  return {std::move(train), std::move(rest)};
}

}  // namespace tandem
