#pragma once

// Shared–Unique sparse autoencoder over paired features. Each branch has a
// shared and a unique encoder; decoders are additive and linear:
//   x̂ = z_s W_sᵀ + z_u W_uᵀ + b.
// Training happens in z-scored space using train-split statistics, which the
// model carries so that evaluation and checkpoints are self-contained.

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tandem/csv.hpp"
#include "tandem/error.hpp"
#include "tandem/features.hpp"
#include "tandem/nn.hpp"
#include "tandem/rng.hpp"
#include "tandem/similarity.hpp"

namespace tandem {

using Eigen::MatrixXd;

struct SaeDims {
  Eigen::Index d_x = 0;
  Eigen::Index d_y = 0;
  Eigen::Index hidden = 256;
  Eigen::Index d_s = 64;
  Eigen::Index d_u = 16;
};

inline Standardizer identity_standardizer(Eigen::Index d) {
  Standardizer s;
  s.mean = Eigen::VectorXd::Zero(d);
  s.stddev = Eigen::VectorXd::Ones(d);
  return s;
}

struct SaeModel {
  SaeDims dims;
  nn::Mlp enc_shared_x, enc_unique_x, enc_shared_y, enc_unique_y;
  MatrixXd dec_shared_x;  // d_x x d_s
  MatrixXd dec_unique_x;  // d_x x d_u
  MatrixXd dec_shared_y;  // d_y x d_s
  MatrixXd dec_unique_y;  // d_y x d_u
  MatrixXd bias_x;        // 1 x d_x
  MatrixXd bias_y;        // 1 x d_y
  Standardizer standardizer_x;
  Standardizer standardizer_y;

  static SaeModel init(const SaeDims& dims, std::uint64_t seed) {
    CounterRng rng(seed, Stream::sae_init);
    SaeModel m;
    m.dims = dims;
    m.enc_shared_x = nn::Mlp::init(dims.d_x, dims.hidden, dims.d_s, rng);
    m.enc_unique_x = nn::Mlp::init(dims.d_x, dims.hidden, dims.d_u, rng);
    m.enc_shared_y = nn::Mlp::init(dims.d_y, dims.hidden, dims.d_s, rng);
    m.enc_unique_y = nn::Mlp::init(dims.d_y, dims.hidden, dims.d_u, rng);
    m.dec_shared_x = nn::glorot(dims.d_x, dims.d_s, rng);
    m.dec_unique_x = nn::glorot(dims.d_x, dims.d_u, rng);
    m.dec_shared_y = nn::glorot(dims.d_y, dims.d_s, rng);
    m.dec_unique_y = nn::glorot(dims.d_y, dims.d_u, rng);
    m.bias_x = MatrixXd::Zero(1, dims.d_x);
    m.bias_y = MatrixXd::Zero(1, dims.d_y);
    m.standardizer_x = identity_standardizer(dims.d_x);
    m.standardizer_y = identity_standardizer(dims.d_y);
    return m;
  }

  /// Same shapes, every parameter zero (used as a gradient accumulator).
  SaeModel zeros_like() const {
    SaeModel g = *this;
    nn::zero(g.parameters());
    return g;
  }

  std::vector<MatrixXd*> parameters() {
    std::vector<MatrixXd*> p;
    enc_shared_x.collect(p);
    enc_unique_x.collect(p);
    enc_shared_y.collect(p);
    enc_unique_y.collect(p);
    for (MatrixXd* d : {&dec_shared_x, &dec_unique_x, &dec_shared_y, &dec_unique_y, &bias_x, &bias_y}) p.push_back(d);
    return p;
  }

  static std::vector<std::string> parameter_names() {
    std::vector<std::string> names;
    for (const char* enc : {"enc_shared_x", "enc_unique_x", "enc_shared_y", "enc_unique_y"})
      for (const char* part : {".l1.w", ".l1.b", ".l2.w", ".l2.b"}) names.push_back(std::string(enc) + part);
    for (const char* n : {"dec_shared_x", "dec_unique_x", "dec_shared_y", "dec_unique_y", "bias_x", "bias_y"})
      names.emplace_back(n);
    return names;
  }
};

/// Paired rows already in standardized space.
struct SaeBatch {
  MatrixXd x;
  MatrixXd y;
};

struct SaeActivations {
  nn::Mlp::Cache cache_sx, cache_ux, cache_sy, cache_uy;
  MatrixXd zs_x, zu_x, zs_y, zu_y;
  MatrixXd shared_x, unique_x, shared_y, unique_y;  // decoder contributions z W^T
  MatrixXd x_full, x_shared, x_cross, x_mix;        // x_cross = x̂_{s<-y}
  MatrixXd y_full, y_shared, y_cross, y_mix;        // y_cross = ŷ_{s<-x}
};

inline SaeActivations sae_forward(const SaeModel& m, const SaeBatch& batch) {
  if (batch.x.rows() != batch.y.rows()) throw Error(ErrorCode::dimension_mismatch, "sae batch: x/y row count");
  if (batch.x.cols() != m.dims.d_x || batch.y.cols() != m.dims.d_y)
    throw Error(ErrorCode::dimension_mismatch, "sae batch width differs from model");
  SaeActivations a;
  a.zs_x = m.enc_shared_x.forward(batch.x, &a.cache_sx);
  a.zu_x = m.enc_unique_x.forward(batch.x, &a.cache_ux);
  a.zs_y = m.enc_shared_y.forward(batch.y, &a.cache_sy);
  a.zu_y = m.enc_unique_y.forward(batch.y, &a.cache_uy);

  a.shared_x = a.zs_x * m.dec_shared_x.transpose();
  a.unique_x = a.zu_x * m.dec_unique_x.transpose();
  a.shared_y = a.zs_y * m.dec_shared_y.transpose();
  a.unique_y = a.zu_y * m.dec_unique_y.transpose();

  a.x_shared = nn::add_row(a.shared_x, m.bias_x);
  a.x_full = a.x_shared + a.unique_x;
  a.x_cross = nn::add_row(a.zs_y * m.dec_shared_x.transpose(), m.bias_x);
  a.x_mix = a.x_cross + a.unique_x;

  a.y_shared = nn::add_row(a.shared_y, m.bias_y);
  a.y_full = a.y_shared + a.unique_y;
  a.y_cross = nn::add_row(a.zs_x * m.dec_shared_y.transpose(), m.bias_y);
  a.y_mix = a.y_cross + a.unique_y;
  return a;
}

// ---------------------------------------------------------------------------
// Objective

struct SaeLossWeights {
  double rec = 1.0;
  double sh = 1.0;
  double cross = 1.0;
  double vic = 1.0;
  double ort = 0.1;
  double sp = 1e-3;
  double vic_alpha = 25.0;
  double vic_beta = 25.0;
  double vic_gamma = 1.0;
  double vic_margin = 1.0;
  bool use_raw_mse = false;

  void validate() const {
    for (double v : {rec, sh, cross, vic, ort, sp, vic_alpha, vic_beta, vic_gamma, vic_margin})
      if (!std::isfinite(v) || v < 0.0) throw Error(ErrorCode::config, "sae loss weights must be finite and >= 0");
  }
};

struct LossBreakdown {
  double rec = 0, sh = 0, cross = 0;
  double inv = 0, var = 0, cov = 0;  // unweighted VICReg parts
  double vic = 0;                    // alpha inv + beta var + gamma cov
  double ort = 0, sp = 0;
  double total = 0;
};

namespace sae_detail {

/// Batch-std floor shared by the invariance standardization and the variance hinge.
inline constexpr double kBatchVarEps = 1e-4;

struct BatchNorm {
  MatrixXd centered;
  Eigen::RowVectorXd std;
  MatrixXd normed;
};

inline BatchNorm batch_norm(const MatrixXd& z) {
  BatchNorm bn;
  const double b = static_cast<double>(z.rows());
  bn.centered = z.rowwise() - z.colwise().mean();
  bn.std = (bn.centered.colwise().squaredNorm().array() / (b - 1.0) + kBatchVarEps).sqrt();
  bn.normed = bn.centered.array().rowwise() / bn.std.array();
  return bn;
}

/// dL/dz given dL/d(normed).
inline MatrixXd batch_norm_backward(const BatchNorm& bn, const MatrixXd& g) {
  const double b = static_cast<double>(g.rows());
  const Eigen::RowVectorXd gmean = g.colwise().mean();
  const Eigen::RowVectorXd gn = (g.array() * bn.normed.array()).colwise().sum() / (b - 1.0);
  MatrixXd dz = g.rowwise() - gmean;
  dz -= (bn.normed.array().rowwise() * gn.array()).matrix();
  return dz.array().rowwise() / bn.std.array();
}

/// Mean squared error with per-dimension weights; gradient written to `dr`.
inline double weighted_mse(const MatrixXd& r, const MatrixXd& target, const Eigen::RowVectorXd& w, double scale,
                           MatrixXd* dr) {
  const double norm = static_cast<double>(r.rows() * r.cols());
  const MatrixXd e = r - target;
  const double val = (e.array().square().rowwise() * w.array()).sum() / norm;
  if (dr) *dr = (2.0 * scale / norm) * (e.array().rowwise() * w.array()).matrix();
  return val;
}

}  // namespace sae_detail

/// Evaluates every term on one batch. When `grad` is non-null it must have the
/// model's shapes; parameter gradients of the weighted total are added to it.
inline LossBreakdown sae_loss(const SaeModel& m, const SaeActivations& a, const SaeBatch& batch,
                              const SaeLossWeights& w, SaeModel* grad = nullptr) {
  using namespace sae_detail;
  const Eigen::Index bsz = batch.x.rows();
  if (bsz < 2) throw Error(ErrorCode::batch_too_small, "sae loss needs batch size >= 2");
  const double b = static_cast<double>(bsz);

  const Eigen::RowVectorXd wx = w.use_raw_mse ? Eigen::RowVectorXd(m.standardizer_x.stddev.array().square().transpose())
                                              : Eigen::RowVectorXd::Ones(m.dims.d_x);
  const Eigen::RowVectorXd wy = w.use_raw_mse ? Eigen::RowVectorXd(m.standardizer_y.stddev.array().square().transpose())
                                              : Eigen::RowVectorXd::Ones(m.dims.d_y);

  LossBreakdown out;
  MatrixXd dzs_x = MatrixXd::Zero(bsz, m.dims.d_s), dzs_y = MatrixXd::Zero(bsz, m.dims.d_s);
  MatrixXd dzu_x = MatrixXd::Zero(bsz, m.dims.d_u), dzu_y = MatrixXd::Zero(bsz, m.dims.d_u);
  const bool g = grad != nullptr;
  MatrixXd dr;

  // Reconstruction terms. Each residual feeds the decoder weights, the bias and
  // whichever latent produced it.
  out.rec = weighted_mse(a.x_full, batch.x, wx, w.rec, g ? &dr : nullptr);
  if (g) {
    grad->dec_shared_x.noalias() += dr.transpose() * a.zs_x;
    grad->dec_unique_x.noalias() += dr.transpose() * a.zu_x;
    grad->bias_x += nn::column_sums(dr);
    dzs_x.noalias() += dr * m.dec_shared_x;
    dzu_x.noalias() += dr * m.dec_unique_x;
  }
  out.rec += weighted_mse(a.y_full, batch.y, wy, w.rec, g ? &dr : nullptr);
  if (g) {
    grad->dec_shared_y.noalias() += dr.transpose() * a.zs_y;
    grad->dec_unique_y.noalias() += dr.transpose() * a.zu_y;
    grad->bias_y += nn::column_sums(dr);
    dzs_y.noalias() += dr * m.dec_shared_y;
    dzu_y.noalias() += dr * m.dec_unique_y;
  }

  out.sh = weighted_mse(a.x_shared, batch.x, wx, w.sh, g ? &dr : nullptr);
  if (g) {
    grad->dec_shared_x.noalias() += dr.transpose() * a.zs_x;
    grad->bias_x += nn::column_sums(dr);
    dzs_x.noalias() += dr * m.dec_shared_x;
  }
  out.sh += weighted_mse(a.y_shared, batch.y, wy, w.sh, g ? &dr : nullptr);
  if (g) {
    grad->dec_shared_y.noalias() += dr.transpose() * a.zs_y;
    grad->bias_y += nn::column_sums(dr);
    dzs_y.noalias() += dr * m.dec_shared_y;
  }

  out.cross = weighted_mse(a.x_cross, batch.x, wx, w.cross, g ? &dr : nullptr);
  if (g) {
    grad->dec_shared_x.noalias() += dr.transpose() * a.zs_y;
    grad->bias_x += nn::column_sums(dr);
    dzs_y.noalias() += dr * m.dec_shared_x;
  }
  out.cross += weighted_mse(a.y_cross, batch.y, wy, w.cross, g ? &dr : nullptr);
  if (g) {
    grad->dec_shared_y.noalias() += dr.transpose() * a.zs_x;
    grad->bias_y += nn::column_sums(dr);
    dzs_x.noalias() += dr * m.dec_shared_y;
  }

  // VICReg on the shared latents.
  const double ds = static_cast<double>(m.dims.d_s);
  const BatchNorm bx = batch_norm(a.zs_x), by = batch_norm(a.zs_y);
  const MatrixXd diff = bx.normed - by.normed;
  out.inv = diff.squaredNorm() / b;
  if (g) {
    const MatrixXd gn = (w.vic * w.vic_alpha * 2.0 / b) * diff;
    dzs_x += batch_norm_backward(bx, gn);
    dzs_y -= batch_norm_backward(by, gn);
  }

  auto hinge = [&](const BatchNorm& bn, MatrixXd& dz) {
    const Eigen::RowVectorXd slack = (w.vic_margin - bn.std.array()).cwiseMax(0.0);
    if (g) {
      const double scale = w.vic * w.vic_beta;
      const Eigen::RowVectorXd ds_j = (-2.0 * scale / ds) * slack.array() / ((b - 1.0) * bn.std.array());
      dz += (bn.centered.array().rowwise() * ds_j.array()).matrix();
    }
    return slack.squaredNorm() / ds;
  };
  out.var = hinge(bx, dzs_x) + hinge(by, dzs_y);

  auto decorrelate = [&](const BatchNorm& bn, MatrixXd& dz) {
    MatrixXd c = bn.centered.transpose() * bn.centered / (b - 1.0);
    c.diagonal().setZero();
    if (g) dz += (w.vic * w.vic_gamma * 4.0 / (ds * (b - 1.0))) * (bn.centered * c);
    return c.squaredNorm() / ds;
  };
  out.cov = decorrelate(bx, dzs_x) + decorrelate(by, dzs_y);
  out.vic = w.vic_alpha * out.inv + w.vic_beta * out.var + w.vic_gamma * out.cov;

  // Shared/unique cross-covariance within each branch.
  auto separate = [&](const MatrixXd& zs, const MatrixXd& zu, MatrixXd& dzs, MatrixXd& dzu) {
    const MatrixXd sc = zs.rowwise() - zs.colwise().mean();
    const MatrixXd uc = zu.rowwise() - zu.colwise().mean();
    const MatrixXd c = sc.transpose() * uc / (b - 1.0);
    if (g) {
      const double k = w.ort * 2.0 / (b - 1.0);
      dzs.noalias() += k * uc * c.transpose();
      dzu.noalias() += k * sc * c;
    }
    return c.squaredNorm();
  };
  out.ort = separate(a.zs_x, a.zu_x, dzs_x, dzu_x) + separate(a.zs_y, a.zu_y, dzs_y, dzu_y);

  out.sp = (a.zu_x.cwiseAbs().sum() + a.zu_y.cwiseAbs().sum()) / b;
  if (g) {
    dzu_x += (w.sp / b) * a.zu_x.array().sign().matrix();
    dzu_y += (w.sp / b) * a.zu_y.array().sign().matrix();
  }

  out.total = w.rec * out.rec + w.sh * out.sh + w.cross * out.cross + w.vic * out.vic + w.ort * out.ort + w.sp * out.sp;

  if (g) {
    m.enc_shared_x.backward(batch.x, a.cache_sx, dzs_x, grad->enc_shared_x);
    m.enc_unique_x.backward(batch.x, a.cache_ux, dzu_x, grad->enc_unique_x);
    m.enc_shared_y.backward(batch.y, a.cache_sy, dzs_y, grad->enc_shared_y);
    m.enc_unique_y.backward(batch.y, a.cache_uy, dzu_y, grad->enc_unique_y);
  }
  return out;
}

/// Forward plus loss; convenience for training and gradient checks.
inline LossBreakdown sae_objective(const SaeModel& m, const SaeBatch& batch, const SaeLossWeights& w,
                                   SaeModel* grad = nullptr) {
  return sae_loss(m, sae_forward(m, batch), batch, w, grad);
}

// ---------------------------------------------------------------------------
// Training

struct SaeTrainConfig {
  std::uint64_t seed = 0;
  int epochs = 200;
  int batch_size = 256;
  double lr = 1e-3;
  Eigen::Index hidden = 256;
  Eigen::Index d_s = 64;
  Eigen::Index d_u = 16;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  LossBreakdown loss;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;

  std::string csv() const {
    csv::Table t({"epoch", "rec", "sh", "cross", "inv", "var", "cov", "vic", "ort", "sp", "total"});
    for (const auto& e : epochs) {
      const auto& l = e.loss;
      t.cell(e.epoch).cell(l.rec).cell(l.sh).cell(l.cross).cell(l.inv).cell(l.var).cell(l.cov).cell(l.vic);
      t.cell(l.ort).cell(l.sp).cell(l.total).end_row();
    }
    return t.str();
  }
};

struct SaeFit {
  SaeModel model;
  TrainingHistory history;
};

inline SaeBatch standardized_batch(const SaeModel& m, const FeaturePairDataset& data) {
  return SaeBatch{standardize(data.x.values, m.standardizer_x), standardize(data.y.values, m.standardizer_y)};
}

/// Mini-batch boundaries for one epoch; a trailing batch of one row is folded
/// into its predecessor so batch statistics stay defined.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_bounds(std::size_t n, std::size_t batch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch) out.emplace_back(s, std::min(n, s + batch));
  if (out.size() > 1 && out.back().second - out.back().first < 2) {
    const auto last = out.back();
    out.pop_back();
    out.back().second = last.second;
  }
  return out;
}

inline SaeFit sae_train(const FeaturePairDataset& train, const SaeLossWeights& weights, const SaeTrainConfig& cfg) {
  weights.validate();
  if (train.split != Split::train) throw Error(ErrorCode::invalid_argument, "sae_train expects the train split");
  if (train.x.n() != train.y.n()) throw Error(ErrorCode::dimension_mismatch, "sae_train: unpaired rows");
  if (train.x.n() < 2) throw Error(ErrorCode::too_few_samples, "sae_train needs n >= 2");
  if (cfg.epochs < 1 || cfg.batch_size < 2 || !(cfg.lr > 0.0))
    throw Error(ErrorCode::config, "sae_train: epochs >= 1, batch_size >= 2, lr > 0 required");

  SaeFit fit;
  SaeModel& m = fit.model;
  m = SaeModel::init(SaeDims{train.x.d(), train.y.d(), cfg.hidden, cfg.d_s, cfg.d_u}, cfg.seed);
  m.standardizer_x = fit_standardizer(train.x, train.split);
  m.standardizer_y = fit_standardizer(train.y, train.split);
  const SaeBatch all = standardized_batch(m, train);

  nn::Adam adam({cfg.lr});
  SaeModel grad = m.zeros_like();
  const auto params = m.parameters();
  const auto grads = grad.parameters();
  const auto n = static_cast<std::size_t>(train.x.n());
  const CounterRng batches(cfg.seed, Stream::sae_batches);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto rng = batches.substream(static_cast<std::uint64_t>(epoch));
    const auto order = rng.permutation(n);
    LossBreakdown sum;
    double rows = 0.0;
    for (auto [lo, hi] : batch_bounds(n, static_cast<std::size_t>(cfg.batch_size))) {
      SaeBatch b{MatrixXd(hi - lo, all.x.cols()), MatrixXd(hi - lo, all.y.cols())};
      for (std::size_t i = lo; i < hi; ++i) {
        b.x.row(static_cast<Eigen::Index>(i - lo)) = all.x.row(static_cast<Eigen::Index>(order[i]));
        b.y.row(static_cast<Eigen::Index>(i - lo)) = all.y.row(static_cast<Eigen::Index>(order[i]));
      }
      nn::zero(grads);
      const LossBreakdown l = sae_objective(m, b, weights, &grad);
      if (!std::isfinite(l.total) || !nn::all_finite(grads))
        throw Error(ErrorCode::divergence, "sae training diverged at epoch " + std::to_string(epoch));
      adam.step(params, grads);
      if (!nn::all_finite(params))
        throw Error(ErrorCode::divergence, "non-finite parameters at epoch " + std::to_string(epoch));
      const double wgt = static_cast<double>(hi - lo);
      rows += wgt;
      sum.rec += wgt * l.rec;
      sum.sh += wgt * l.sh;
      sum.cross += wgt * l.cross;
      sum.inv += wgt * l.inv;
      sum.var += wgt * l.var;
      sum.cov += wgt * l.cov;
      sum.vic += wgt * l.vic;
      sum.ort += wgt * l.ort;
      sum.sp += wgt * l.sp;
      sum.total += wgt * l.total;
    }
    for (double* f : {&sum.rec, &sum.sh, &sum.cross, &sum.inv, &sum.var, &sum.cov, &sum.vic, &sum.ort, &sum.sp, &sum.total})
      *f /= rows;
    fit.history.epochs.push_back({epoch, sum});
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Evaluation

struct SaeMetrics {
  double r2_full_x = 0, r2_full_y = 0;
  double r2_shared_x = 0, r2_shared_y = 0;
  double r2_cross_x = 0, r2_cross_y = 0;
  double gap_x = 0, gap_y = 0;
  double cka_shared = 0, cka_orig = 0;
};

/// 1 - MSE/Var in standardized space; Var is taken about the train mean, which
/// is the origin after standardization.
inline double r2_score(const MatrixXd& pred, const MatrixXd& target) {
  const double var = target.squaredNorm();
  if (!(var > 0.0)) throw Error(ErrorCode::degenerate_input, "r2 on zero-variance target");
  return 1.0 - (pred - target).squaredNorm() / var;
}

inline SaeMetrics sae_metrics(const SaeModel& m, const FeaturePairDataset& data) {
  const SaeBatch b = standardized_batch(m, data);
  const SaeActivations a = sae_forward(m, b);
  SaeMetrics r;
  r.r2_full_x = r2_score(a.x_full, b.x);
  r.r2_full_y = r2_score(a.y_full, b.y);
  r.r2_shared_x = r2_score(a.x_shared, b.x);
  r.r2_shared_y = r2_score(a.y_shared, b.y);
  r.r2_cross_x = r2_score(a.x_cross, b.x);
  r.r2_cross_y = r2_score(a.y_cross, b.y);
  r.gap_x = r.r2_shared_x - r.r2_cross_x;
  r.gap_y = r.r2_shared_y - r.r2_cross_y;
  // A collapsed (constant) shared space carries no alignment.
  const bool collapsed = center_columns(a.zs_x).squaredNorm() == 0.0 || center_columns(a.zs_y).squaredNorm() == 0.0;
  r.cka_shared = collapsed ? 0.0 : linear_cka(a.zs_x, a.zs_y);
  r.cka_orig = linear_cka(b.x, b.y);
  return r;
}

/// One branch of the output-space variance split. With ε = x - (x_s + x_u + b),
///   Var(x) = Var(x_s) + Var(x_u) + 2 Cov(x_s, x_u) + var_residual,
/// where var_residual = Var(ε) + 2 Cov(x_s + x_u, ε). The two residual parts
/// are reported separately; the second vanishes only for a least-squares fit.
struct BranchVariance {
  double var_shared = 0;
  double var_unique = 0;
  double covariance_term = 0;
  double var_residual = 0;
  double var_total = 0;
  double var_epsilon = 0;
  double residual_covariance = 0;

  double identity_error() const {
    return std::abs(var_shared + var_unique + 2.0 * covariance_term + var_residual - var_total) /
           std::max(std::abs(var_total), 1e-300);
  }
};

struct VarianceReport {
  BranchVariance x;
  BranchVariance y;
};

namespace sae_detail {

/// Per-element covariance 1/(n d) <A_c, B_c>, centering each column at its sample mean.
inline double pooled_cov(const MatrixXd& a, const MatrixXd& b) {
  const MatrixXd ac = a.rowwise() - a.colwise().mean();
  const MatrixXd bc = b.rowwise() - b.colwise().mean();
  return (ac.array() * bc.array()).sum() / static_cast<double>(a.rows() * a.cols());
}

inline BranchVariance branch_variance(const MatrixXd& x, const MatrixXd& xs, const MatrixXd& xu, const MatrixXd& bias) {
  const MatrixXd eps = x - nn::add_row(xs + xu, bias);
  BranchVariance v;
  v.var_total = pooled_cov(x, x);
  v.var_shared = pooled_cov(xs, xs);
  v.var_unique = pooled_cov(xu, xu);
  v.covariance_term = pooled_cov(xs, xu);
  v.var_epsilon = pooled_cov(eps, eps);
  v.residual_covariance = pooled_cov(xs + xu, eps);
  v.var_residual = v.var_epsilon + 2.0 * v.residual_covariance;
  return v;
}

}  // namespace sae_detail

inline VarianceReport variance_attribution(const SaeModel& m, const FeaturePairDataset& data) {
  const SaeBatch b = standardized_batch(m, data);
  const SaeActivations a = sae_forward(m, b);
  return {sae_detail::branch_variance(b.x, a.shared_x, a.unique_x, m.bias_x),
          sae_detail::branch_variance(b.y, a.shared_y, a.unique_y, m.bias_y)};
}

// ---------------------------------------------------------------------------
// Shuffled-pair control

struct PairingSimilarity {
  double cka_shared = 0;
  double cka_orig = 0;
  SaeMetrics metrics;
};

struct ControlReport {
  std::uint64_t permutation_seed = 0;
  std::vector<std::size_t> permutation;  // shuffled y row i = original y row permutation[i]
  PairingSimilarity true_pairing;
  PairingSimilarity shuffled;
};

/// Re-pairs y rows; y ids are replaced by x ids so the result is a valid pairing.
inline FeaturePairDataset repair_rows(const FeaturePairDataset& d, const std::vector<std::size_t>& perm) {
  if (perm.size() != static_cast<std::size_t>(d.y.n())) throw Error(ErrorCode::dimension_mismatch, "permutation length");
  FeaturePairDataset out = d;
  for (std::size_t i = 0; i < perm.size(); ++i)
    out.y.values.row(static_cast<Eigen::Index>(i)) = d.y.values.row(static_cast<Eigen::Index>(perm[i]));
  out.y.sample_ids = d.x.sample_ids;
  return out;
}

inline PairingSimilarity pairing_similarity(const FeaturePairDataset& train, const SaeLossWeights& w,
                                            const SaeTrainConfig& cfg) {
  const SaeFit fit = sae_train(train, w, cfg);
  PairingSimilarity s;
  s.metrics = sae_metrics(fit.model, train);
  s.cka_shared = s.metrics.cka_shared;
  s.cka_orig = s.metrics.cka_orig;
  return s;
}

inline ControlReport shuffled_pair_control(const FeaturePairDataset& train, const SaeLossWeights& w,
                                           const SaeTrainConfig& cfg, std::uint64_t permutation_seed,
                                           std::optional<std::vector<std::size_t>> permutation = std::nullopt) {
  ControlReport r;
  r.permutation_seed = permutation_seed;
  r.permutation = permutation ? *permutation
                              : CounterRng(permutation_seed, Stream::permutation)
                                    .permutation(static_cast<std::size_t>(train.y.n()));
  r.true_pairing = pairing_similarity(train, w, cfg);
  r.shuffled = pairing_similarity(repair_rows(train, r.permutation), w, cfg);
  return r;
}

// ---------------------------------------------------------------------------
// Sweep over (use_raw_mse, cross_weight)

struct SweepCell {
  bool use_raw_mse = false;
  double cross_weight = 0.0;
};

struct SweepRow {
  SweepCell cell;
  SaeLossWeights weights;
  SaeMetrics metrics;
};

struct SweepTable {
  std::string feature;
  std::vector<SweepRow> rows;

  std::string csv() const {
    csv::Table t({"feature", "use_raw_mse", "cross_weight", "r2_full_x", "r2_full_y", "r2_shared_x", "r2_shared_y",
                  "cka_shared", "r2_cross_x", "r2_cross_y", "gap_x", "gap_y", "cka_orig"});
    for (const auto& r : rows) {
      const auto& m = r.metrics;
      t.cell(feature).cell(r.cell.use_raw_mse ? "True" : "False").cell(r.cell.cross_weight);
      t.cell(m.r2_full_x).cell(m.r2_full_y).cell(m.r2_shared_x).cell(m.r2_shared_y).cell(m.cka_shared);
      t.cell(m.r2_cross_x).cell(m.r2_cross_y).cell(m.gap_x).cell(m.gap_y).cell(m.cka_orig).end_row();
    }
    return t.str();
  }
};

inline std::vector<SweepCell> default_sweep_grid() {
  std::vector<SweepCell> g;
  for (bool raw : {false, true})
    for (double c : {0.0, 0.1, 0.2, 0.5, 1.0}) g.push_back({raw, c});
  return g;
}

/// Trains one model per cell (same seed everywhere) and evaluates on `eval`.
inline SweepTable sae_sweep(const FeaturePairDataset& train, const FeaturePairDataset& eval,
                            const std::vector<SweepCell>& grid, const SaeLossWeights& base, const SaeTrainConfig& cfg,
                            std::string feature = "synthetic") {
  if (grid.empty()) throw Error(ErrorCode::config, "sae sweep grid is empty");
  SweepTable table;
  table.feature = std::move(feature);
  for (const auto& cell : grid) {
    SaeLossWeights w = base;
    w.use_raw_mse = cell.use_raw_mse;
    w.cross = cell.cross_weight;
    const SaeFit fit = sae_train(train, w, cfg);
    table.rows.push_back({cell, w, sae_metrics(fit.model, eval)});
  }
  return table;
}

// ---------------------------------------------------------------------------
// Checkpoint: "SAE1" text format

inline void write_standardizer(std::ostream& out, const std::string& name, const Standardizer& s) {
  nn::write_matrix(out, name + ".mean", s.mean.transpose());
  nn::write_matrix(out, name + ".std", s.stddev.transpose());
}

inline Standardizer read_standardizer(std::istream& in, const std::string& name) {
  Standardizer s;
  s.mean = nn::read_matrix(in, name + ".mean").row(0).transpose();
  s.stddev = nn::read_matrix(in, name + ".std").row(0).transpose();
  if (s.mean.size() != s.stddev.size() || (s.stddev.array() <= 0.0).any())
    throw Error(ErrorCode::malformed_row, "checkpoint: bad standardizer " + name);
  return s;
}

inline std::string sae_checkpoint(const SaeModel& model) {
  std::ostringstream out;
  SaeModel m = model;
  out << "SAE1\n";
  out << "dims " << m.dims.d_x << ' ' << m.dims.d_y << ' ' << m.dims.hidden << ' ' << m.dims.d_s << ' ' << m.dims.d_u
      << '\n';
  const auto names = SaeModel::parameter_names();
  const auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) nn::write_matrix(out, names[i], *params[i]);
  write_standardizer(out, "standardizer_x", m.standardizer_x);
  write_standardizer(out, "standardizer_y", m.standardizer_y);
  return out.str();
}

inline SaeModel parse_sae_checkpoint(const std::string& text) {
  std::istringstream in(text);
  nn::expect_token(in, "SAE1");
  nn::expect_token(in, "dims");
  SaeDims dims;
  if (!(in >> dims.d_x >> dims.d_y >> dims.hidden >> dims.d_s >> dims.d_u) || dims.d_x < 1 || dims.d_y < 1 ||
      dims.hidden < 1 || dims.d_s < 1 || dims.d_u < 1)
    throw Error(ErrorCode::malformed_row, "checkpoint: bad dims line");
  SaeModel m = SaeModel::init(dims, 0);
  const auto names = SaeModel::parameter_names();
  auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    MatrixXd v = nn::read_matrix(in, names[i]);
    if (v.rows() != params[i]->rows() || v.cols() != params[i]->cols())
      throw Error(ErrorCode::dimension_mismatch, "checkpoint: shape of " + names[i]);
    *params[i] = std::move(v);
  }
  m.standardizer_x = read_standardizer(in, "standardizer_x");
  m.standardizer_y = read_standardizer(in, "standardizer_y");
  if (m.standardizer_x.mean.size() != dims.d_x || m.standardizer_y.mean.size() != dims.d_y)
    throw Error(ErrorCode::dimension_mismatch, "checkpoint: standardizer width");
  return m;
}

inline void save_sae(const std::filesystem::path& path, const SaeModel& m) { csv::write_atomic(path, sae_checkpoint(m)); }
inline SaeModel load_sae(const std::filesystem::path& path) { return parse_sae_checkpoint(csv::read_file(path)); }

}  // namespace tandem
