#pragma once

// Feature ingestion and the linear preprocessing shared by every similarity
// measure: pairing, centering, z-scoring, PCA truncation, ridge whitening,
// orthogonal Procrustes and the 2D projection table.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "tandem/csv.hpp"
#include "tandem/error.hpp"

namespace tandem {

enum class Level { backbone, decision };
enum class Branch { vlm, vision };
enum class Split { train, val, test };

inline const char* to_string(Level l) { return l == Level::backbone ? "backbone" : "decision"; }
inline const char* to_string(Branch b) { return b == Branch::vlm ? "vlm" : "vision"; }
inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

struct FeatureMatrix {
  std::vector<std::string> sample_ids;
  Eigen::MatrixXd values;  // n x d
  Level level = Level::backbone;
  Branch branch = Branch::vlm;

  Eigen::Index n() const { return values.rows(); }
  Eigen::Index d() const { return values.cols(); }

  void validate() const {
    if (values.rows() < 2) throw Error(ErrorCode::too_few_samples, "need at least 2 samples");
    if (values.cols() < 1) throw Error(ErrorCode::dimension_mismatch, "need at least 1 feature column");
    if (static_cast<Eigen::Index>(sample_ids.size()) != values.rows())
      throw Error(ErrorCode::dimension_mismatch, "sample_ids/rows length mismatch");
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < sample_ids.size(); ++i) {
      if (!seen.insert(sample_ids[i]).second)
        throw Error(ErrorCode::duplicate_id, sample_ids[i], i);
      if (!values.row(static_cast<Eigen::Index>(i)).allFinite())
        throw Error(ErrorCode::non_finite_value, "row " + std::to_string(i), i);
    }
  }
};

inline FeatureMatrix make_features(std::vector<std::string> ids, Eigen::MatrixXd values,
                                   Level level = Level::backbone, Branch branch = Branch::vlm) {
  FeatureMatrix m{std::move(ids), std::move(values), level, branch};
  m.validate();
  return m;
}

/// Ids "s0".."s{n-1}" for generated or test data.
inline std::vector<std::string> sequential_ids(Eigen::Index n, const std::string& prefix = "s") {
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(i));
  return ids;
}

struct FeaturePairDataset {
  FeatureMatrix x;
  FeatureMatrix y;
  Split split = Split::train;

  Eigen::Index n() const { return x.n(); }

  void validate() const {
    x.validate();
    y.validate();
    if (x.sample_ids != y.sample_ids) throw Error(ErrorCode::dimension_mismatch, "pair sample_ids differ");
  }
};

// ---------------------------------------------------------------------------
// CSV ingestion: header `sample_id,f0,...,f{d-1}`.

inline FeatureMatrix parse_features(const std::vector<std::string>& lines, Level level, Branch branch) {
  if (lines.empty()) throw Error(ErrorCode::malformed_row, "missing header", 0);
  const auto header = csv::split(lines[0]);
  if (header.size() < 2 || header[0] != "sample_id")
    throw Error(ErrorCode::malformed_row, "header must start with sample_id and have >= 1 feature", 0);
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j + 1] != "f" + std::to_string(j))
      throw Error(ErrorCode::malformed_row, "header column " + std::to_string(j + 1) + " must be f" + std::to_string(j), 0);
  }

  std::vector<std::string> ids;
  std::vector<double> flat;
  std::unordered_set<std::string> seen;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t row = li - 1;
    const auto fields = csv::split(lines[li]);
    if (fields.size() != d + 1)
      throw Error(ErrorCode::malformed_row, "row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                                                " fields, expected " + std::to_string(d + 1), row);
    if (fields[0].empty()) throw Error(ErrorCode::malformed_row, "empty sample_id at row " + std::to_string(row), row);
    if (!seen.insert(fields[0]).second) throw Error(ErrorCode::duplicate_id, fields[0], row);
    for (std::size_t j = 0; j < d; ++j) {
      const auto v = csv::parse_double(fields[j + 1]);
      if (!v) throw Error(ErrorCode::malformed_row, "unparsable value at row " + std::to_string(row), row);
      if (!std::isfinite(*v)) throw Error(ErrorCode::non_finite_value, "row " + std::to_string(row), row);
      flat.push_back(*v);
    }
    ids.push_back(fields[0]);
  }
  if (ids.size() < 2) throw Error(ErrorCode::too_few_samples, "feature file has " + std::to_string(ids.size()) + " rows");

  Eigen::MatrixXd values(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < values.rows(); ++i)
    for (Eigen::Index j = 0; j < values.cols(); ++j) values(i, j) = flat[static_cast<std::size_t>(i) * d + j];
  return FeatureMatrix{std::move(ids), std::move(values), level, branch};
}

inline FeatureMatrix load_features(const std::filesystem::path& path, Level level, Branch branch) {
  return parse_features(csv::read_lines(path), level, branch);
}

inline std::string features_csv(const FeatureMatrix& m) {
  std::string out = "sample_id";
  for (Eigen::Index j = 0; j < m.d(); ++j) out += ",f" + std::to_string(j);
  out += '\n';
  for (Eigen::Index i = 0; i < m.n(); ++i) {
    out += m.sample_ids[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m.d(); ++j) {
      out += ',';
      out += csv::format_double(m.values(i, j));
    }
    out += '\n';
  }
  return out;
}

inline void save_features(const std::filesystem::path& path, const FeatureMatrix& m) {
  csv::write_atomic(path, features_csv(m));
}

// ---------------------------------------------------------------------------
// Pairing

struct PairResult {
  FeaturePairDataset dataset;
  std::vector<std::string> dropped_x;  // ids only in x
  std::vector<std::string> dropped_y;  // ids only in y
};

inline FeatureMatrix select_rows(const FeatureMatrix& m, const std::vector<Eigen::Index>& rows) {
  FeatureMatrix out;
  out.level = m.level;
  out.branch = m.branch;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), m.d());
  out.sample_ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.values.row(static_cast<Eigen::Index>(i)) = m.values.row(rows[i]);
    out.sample_ids.push_back(m.sample_ids[static_cast<std::size_t>(rows[i])]);
  }
  return out;
}

/// Rows reordered to the byte-wise sorted intersection of sample ids.
inline PairResult pair(const FeatureMatrix& x, const FeatureMatrix& y, Split split = Split::train) {
  auto index_of = [](const FeatureMatrix& m) {
    std::vector<std::pair<std::string, Eigen::Index>> idx;
    for (std::size_t i = 0; i < m.sample_ids.size(); ++i) idx.emplace_back(m.sample_ids[i], static_cast<Eigen::Index>(i));
    std::sort(idx.begin(), idx.end());
    return idx;
  };
  const auto ix = index_of(x);
  const auto iy = index_of(y);

  PairResult r;
  std::vector<Eigen::Index> rx, ry;
  std::size_t a = 0, b = 0;
  while (a < ix.size() || b < iy.size()) {
    if (b == iy.size() || (a < ix.size() && ix[a].first < iy[b].first)) {
      r.dropped_x.push_back(ix[a++].first);
    } else if (a == ix.size() || iy[b].first < ix[a].first) {
      r.dropped_y.push_back(iy[b++].first);
    } else {
      rx.push_back(ix[a++].second);
      ry.push_back(iy[b++].second);
    }
  }
  if (rx.size() < 2)
    throw Error(ErrorCode::empty_intersection, "shared sample ids: " + std::to_string(rx.size()) + " (< 2)");
  r.dataset = FeaturePairDataset{select_rows(x, rx), select_rows(y, ry), split};
  return r;
}

// ---------------------------------------------------------------------------
// Centering and standardization

inline Eigen::MatrixXd center_columns(const Eigen::MatrixXd& x) {
  return x.rowwise() - x.colwise().mean();
}

inline FeatureMatrix center(const FeatureMatrix& m) {
  if (m.n() < 2) throw Error(ErrorCode::too_few_samples, "center needs n >= 2");
  FeatureMatrix out = m;
  out.values = center_columns(m.values);
  return out;
}

struct Standardizer {
  static constexpr double kStdFloor = 1e-8;

  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;  // population convention, floored
  Split fitted_on = Split::train;
  std::vector<Eigen::Index> floored_columns;  // zero-variance warnings
};

inline Standardizer fit_standardizer(const Eigen::MatrixXd& values, Split split = Split::train) {
  if (split != Split::train)
    throw Error(ErrorCode::invalid_argument, std::string("standardizer must be fit on train, got ") + to_string(split));
  if (values.rows() < 2) throw Error(ErrorCode::too_few_samples, "standardizer needs n >= 2");
  Standardizer s;
  s.fitted_on = split;
  s.mean = values.colwise().mean().transpose();
  const Eigen::MatrixXd c = values.rowwise() - s.mean.transpose();
  s.stddev = (c.array().square().colwise().sum() / static_cast<double>(values.rows())).sqrt().transpose();
  for (Eigen::Index j = 0; j < s.stddev.size(); ++j) {
    if (!(s.stddev(j) > Standardizer::kStdFloor)) {
      s.stddev(j) = Standardizer::kStdFloor;
      s.floored_columns.push_back(j);
    }
  }
  return s;
}

inline Standardizer fit_standardizer(const FeatureMatrix& m, Split split = Split::train) {
  return fit_standardizer(m.values, split);
}

inline Eigen::MatrixXd standardize(const Eigen::MatrixXd& x, const Standardizer& s) {
  if (x.cols() != s.mean.size()) throw Error(ErrorCode::dimension_mismatch, "standardizer width mismatch");
  return (x.rowwise() - s.mean.transpose()).array().rowwise() / s.stddev.transpose().array();
}

inline FeatureMatrix apply_standardizer(const FeatureMatrix& m, const Standardizer& s) {
  FeatureMatrix out = m;
  out.values = standardize(m.values, s);
  return out;
}

inline Eigen::MatrixXd unstandardize(const Eigen::MatrixXd& z, const Standardizer& s) {
  return (z.array().rowwise() * s.stddev.transpose().array()).matrix().rowwise() + s.mean.transpose();
}

// ---------------------------------------------------------------------------
// PCA truncation and ridge whitening

struct PcaBasis {
  Eigen::MatrixXd components;   // d x k, orthonormal columns
  Eigen::VectorXd eigenvalues;  // k, descending
  double explained_fraction = 0.0;
  double ridge = 1e-8;

  Eigen::Index k() const { return components.cols(); }
  Eigen::Index d() const { return components.rows(); }

  /// P (Λ + εI)^{-1/2}
  Eigen::MatrixXd whitening_map() const {
    const Eigen::VectorXd scale = (eigenvalues.array() + ridge).rsqrt();
    return components * scale.asDiagonal();
  }
};

/// Eigenvectors with a deterministic sign: the largest-magnitude entry is positive.
inline void canonicalize_signs(Eigen::MatrixXd& vectors) {
  for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
    Eigen::Index arg = 0;
    vectors.col(c).cwiseAbs().maxCoeff(&arg);
    if (vectors(arg, c) < 0) vectors.col(c) *= -1.0;
  }
}

/// Descending eigenpairs of the (n-1)-normalized sample covariance of `x`
/// (rows are samples; the caller centers).
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> covariance_spectrum(const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::Index d = cov.rows();
  Eigen::VectorXd vals(d);
  Eigen::MatrixXd vecs(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    vals(i) = std::max(0.0, es.eigenvalues()(d - 1 - i));
    vecs.col(i) = es.eigenvectors().col(d - 1 - i);
  }
  canonicalize_signs(vecs);
  return {vals, vecs};
}

/// Smallest k whose cumulative eigenvalue fraction reaches eta.
inline Eigen::Index truncation_rank(const Eigen::VectorXd& descending, double eta) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < descending.size(); ++i) total += descending(i);
  if (!(total > 0.0)) throw Error(ErrorCode::degenerate_input, "rank-0 covariance");
  double cum = 0.0;
  for (Eigen::Index i = 0; i < descending.size(); ++i) {
    cum += descending(i);
    if (cum >= eta * total) return i + 1;
  }
  return descending.size();
}

inline PcaBasis pca_truncate(const FeatureMatrix& m, double eta, double ridge = 1e-8) {
  if (!(eta > 0.0 && eta <= 1.0)) throw Error(ErrorCode::invalid_argument, "eta must lie in (0, 1]");
  if (m.n() < 2) throw Error(ErrorCode::too_few_samples, "pca needs n >= 2");
  auto [vals, vecs] = covariance_spectrum(m.values);
  const Eigen::Index k = truncation_rank(vals, eta);
  PcaBasis b;
  b.components = vecs.leftCols(k);
  b.eigenvalues = vals.head(k);
  b.explained_fraction = vals.head(k).sum() / vals.sum();
  b.ridge = ridge;
  return b;
}

inline FeatureMatrix whiten(const FeatureMatrix& m, const PcaBasis& basis) {
  if (m.d() != basis.d()) throw Error(ErrorCode::dimension_mismatch, "whiten: basis width differs from data width");
  FeatureMatrix out = m;
  out.values = m.values * basis.whitening_map();
  return out;
}

// ---------------------------------------------------------------------------
// Orthogonal Procrustes

struct OrthogonalMap {
  Eigen::MatrixXd q;  // d x d, q^T q = I
  double residual = 0.0;
};

/// argmin over orthogonal q of ||source q - reference||_F via the SVD of source^T reference.
inline OrthogonalMap procrustes(const Eigen::MatrixXd& source, const Eigen::MatrixXd& reference) {
  if (source.rows() != reference.rows() || source.cols() != reference.cols())
    throw Error(ErrorCode::dimension_mismatch, "procrustes needs equal shapes");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(source.transpose() * reference, Eigen::ComputeFullU | Eigen::ComputeFullV);
  OrthogonalMap map;
  map.q = svd.matrixU() * svd.matrixV().transpose();
  map.residual = (source * map.q - reference).norm();
  return map;
}

inline OrthogonalMap procrustes(const FeatureMatrix& source, const FeatureMatrix& reference) {
  return procrustes(source.values, reference.values);
}

// ---------------------------------------------------------------------------
// 2D projection of several aligned clouds

struct LabeledFeatures {
  std::string model;
  FeatureMatrix features;
};

struct ProjectionRow {
  std::string model;
  std::string sample_id;
  double pc1 = 0.0;
  double pc2 = 0.0;
};

struct ProjectionSummary {
  std::string model;
  double median_pc1 = 0.0;
  double median_pc2 = 0.0;
};

struct ProjectionTable {
  std::vector<ProjectionRow> rows;
  std::vector<ProjectionSummary> robust_means;  // coordinate-wise median per model
  Eigen::MatrixXd components;                    // d x 2
  Eigen::VectorXd mean;                          // d

  std::string csv() const {
    csv::Table t{"model", "sample_id", "pc1", "pc2"};
    for (const auto& r : rows) t.cell(r.model).cell(r.sample_id).cell(r.pc1).cell(r.pc2).end_row();
    return t.str();
  }
  std::string summary_csv() const {
    csv::Table t{"model", "median_pc1", "median_pc2"};
    for (const auto& r : robust_means) t.cell(r.model).cell(r.median_pc1).cell(r.median_pc2).end_row();
    return t.str();
  }
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// One PCA basis fitted on the row-concatenation of every cloud.
inline ProjectionTable project_2d(std::span<const LabeledFeatures> clouds) {
  if (clouds.empty()) throw Error(ErrorCode::too_few_samples, "project_2d needs at least one matrix");
  const Eigen::Index d = clouds.front().features.d();
  Eigen::Index total = 0;
  for (const auto& c : clouds) {
    if (c.features.d() != d) throw Error(ErrorCode::dimension_mismatch, "project_2d inputs must share d");
    total += c.features.n();
  }
  if (total < 3) throw Error(ErrorCode::too_few_samples, "project_2d needs >= 3 rows in total");

  Eigen::MatrixXd all(total, d);
  Eigen::Index r = 0;
  for (const auto& c : clouds) {
    all.middleRows(r, c.features.n()) = c.features.values;
    r += c.features.n();
  }
  ProjectionTable table;
  table.mean = all.colwise().mean().transpose();
  const Eigen::MatrixXd centered = all.rowwise() - table.mean.transpose();
  auto [vals, vecs] = covariance_spectrum(centered);
  table.components = Eigen::MatrixXd::Zero(d, 2);
  table.components.leftCols(std::min<Eigen::Index>(2, d)) = vecs.leftCols(std::min<Eigen::Index>(2, d));
  const Eigen::MatrixXd coords = centered * table.components;

  r = 0;
  for (const auto& c : clouds) {
    std::vector<double> p1, p2;
    for (Eigen::Index i = 0; i < c.features.n(); ++i, ++r) {
      table.rows.push_back({c.model, c.features.sample_ids[static_cast<std::size_t>(i)], coords(r, 0), coords(r, 1)});
      p1.push_back(coords(r, 0));
      p2.push_back(coords(r, 1));
    }
    table.robust_means.push_back({c.model, median(std::move(p1)), median(std::move(p2))});
  }
  return table;
}

}  // namespace tandem
