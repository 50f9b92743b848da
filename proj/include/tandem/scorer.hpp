#pragma once

// Learned trajectory scorer: decoded waypoints become a query vector that
// attends over scene tokens (agents, centerline samples, clearance), and one
// small head per sub-score predicts that component. Trained on sub-scores
// from the exact evaluator.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "tandem/csv.hpp"
#include "tandem/error.hpp"
#include "tandem/geometry.hpp"
#include "tandem/nn.hpp"
#include "tandem/rng.hpp"
#include "tandem/scene.hpp"
#include "tandem/scoring.hpp"

namespace tandem {

inline constexpr int kScoreComponents = 10;
inline constexpr int kTokenDim = 9;
inline constexpr int kLaneSamples = 8;

/// Component order used by every scorer tensor.
inline const std::array<const char*, kScoreComponents>& score_component_names() {
  static const std::array<const char*, kScoreComponents> names = {"nc", "dac", "ddc", "tlc", "ep",
                                                                  "ttc", "c", "hc", "lk", "ec"};
  return names;
}

inline constexpr int kEpComponent = 4;

inline Eigen::RowVectorXd subscores_row(const SubScores& s) {
  Eigen::RowVectorXd r(kScoreComponents);
  r << s.nc, s.dac, s.ddc, s.tlc, s.ep, s.ttc, s.comfort, s.hc, s.lk, s.ec;
  return r;
}

inline SubScores subscores_from_row(const Eigen::RowVectorXd& r) {
  return {r(0), r(1), r(2), r(3), r(4), r(5), r(6), r(7), r(8), r(9)};
}

/// v1 composition over predicted components.
inline double meta_score(const SubScores& predicted) { return pdms(predicted); }

// ---------------------------------------------------------------------------
// Encoding

namespace scorer_detail {

inline Vec2 to_ego(const Vec2& p, const EgoState& e) {
  const Vec2 d = p - e.position();
  const double c = std::cos(e.theta), s = std::sin(e.theta);
  return {c * d.x() + s * d.y(), -s * d.x() + c * d.y()};
}

inline double distance_to_boundary(const Vec2& p, const geom::Polygon& poly) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Vec2 seg = poly[i] - poly[j];
    const double len2 = seg.squaredNorm();
    const double t = len2 > 0.0 ? std::clamp((p - poly[j]).dot(seg) / len2, 0.0, 1.0) : 0.0;
    best = std::min(best, (p - (poly[j] + t * seg)).norm());
  }
  return best;
}

/// Point and segment heading at arc length `s` along a polyline (clamped to its ends).
inline std::pair<Vec2, double> polyline_at(const std::vector<Vec2>& line, double s) {
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const Vec2 seg = line[i + 1] - line[i];
    const double len = seg.norm();
    if (acc + len >= s || i + 2 == line.size()) {
      const double t = len > 0.0 ? std::clamp((s - acc) / len, 0.0, 1.0) : 0.0;
      return {line[i] + t * seg, std::atan2(seg.y(), seg.x())};
    }
    acc += len;
  }
  return {line.front(), 0.0};
}

}  // namespace scorer_detail

/// One token per agent, kLaneSamples centerline samples ahead of the ego,
/// and one clearance token. Layout: 3-way type one-hot then 6 features.
inline Eigen::MatrixXd scene_tokens(const Scene& s) {
  using namespace scorer_detail;
  const EgoState& e = s.ego_start;
  const auto n = static_cast<Eigen::Index>(s.agents.size()) + kLaneSamples + 1;
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(n, kTokenDim);
  Eigen::Index r = 0;
  for (const auto& a : s.agents) {
    const Vec2 p = to_ego(a.positions[0], e);
    const Vec2 v = to_ego(e.position() + (a.positions[1] - a.positions[0]) / s.dt, e);
    t.row(r++) << 1, 0, 0, p.x() / 20.0, p.y() / 20.0, v.x() / 10.0, v.y() / 10.0, a.length / 5.0, a.width / 5.0;
  }
  const double s0 = geom::project_onto_polyline(e.position(), s.centerline).arc_length;
  for (int k = 0; k < kLaneSamples; ++k) {
    const auto [pt, heading] = polyline_at(s.centerline, s0 + 8.0 * k);
    const Vec2 p = to_ego(pt, e);
    const double rel = geom::wrap_angle(heading - e.theta);
    t.row(r++) << 0, 1, 0, p.x() / 20.0, p.y() / 20.0, std::cos(rel), std::sin(rel), distance_to_boundary(pt, s.drivable) / 5.0, 0;
  }
  t.row(r++) << 0, 0, 1, distance_to_boundary(e.position(), s.drivable) / 5.0, e.v / 10.0, 0, 0, 0, 0;
  return t;
}

/// Waypoints in the ego start frame, flattened (x/20, y/2, theta) per step.
inline Eigen::RowVectorXd trajectory_features(const Trajectory& traj, const EgoState& e) {
  Eigen::RowVectorXd f(3 * traj.steps());
  for (Eigen::Index k = 0; k < traj.steps(); ++k) {
    const Vec2 p = scorer_detail::to_ego(traj.position(k), e);
    f(3 * k) = p.x() / 20.0;
    f(3 * k + 1) = p.y() / 2.0;
    f(3 * k + 2) = geom::wrap_angle(traj.heading(k) - e.theta);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Model

struct ScorerModel {
  int horizon = 8;
  nn::Mlp embed;            // 3T -> hidden -> D
  Eigen::MatrixXd wq, wk, wv, wo;
  std::vector<nn::Mlp> heads;  // D -> head_hidden -> 1, one per component

  Eigen::Index d_model() const { return wq.rows(); }

  static ScorerModel init(int horizon, Eigen::Index d_model, Eigen::Index embed_hidden, Eigen::Index head_hidden,
                          std::uint64_t seed) {
    CounterRng rng(seed, Stream::scorer);
    ScorerModel m;
    m.horizon = horizon;
    m.embed = nn::Mlp::init(3 * horizon, embed_hidden, d_model, rng);
    m.wq = nn::glorot(d_model, d_model, rng);
    m.wk = nn::glorot(kTokenDim, d_model, rng);
    m.wv = nn::glorot(kTokenDim, d_model, rng);
    m.wo = nn::glorot(d_model, d_model, rng);
    for (int c = 0; c < kScoreComponents; ++c) m.heads.push_back(nn::Mlp::init(d_model, head_hidden, 1, rng));
    return m;
  }

  ScorerModel zeros_like() const {
    ScorerModel g;
    g.horizon = horizon;
    g.embed = nn::Mlp::zeros_like(embed);
    g.wq = Eigen::MatrixXd::Zero(wq.rows(), wq.cols());
    g.wk = Eigen::MatrixXd::Zero(wk.rows(), wk.cols());
    g.wv = Eigen::MatrixXd::Zero(wv.rows(), wv.cols());
    g.wo = Eigen::MatrixXd::Zero(wo.rows(), wo.cols());
    for (const auto& h : heads) g.heads.push_back(nn::Mlp::zeros_like(h));
    return g;
  }

  std::vector<Eigen::MatrixXd*> parameters() {
    std::vector<Eigen::MatrixXd*> p;
    embed.collect(p);
    for (Eigen::MatrixXd* w : {&wq, &wk, &wv, &wo}) p.push_back(w);
    for (auto& h : heads) h.collect(p);
    return p;
  }

  static std::vector<std::string> parameter_names() {
    std::vector<std::string> n{"embed.l1.w", "embed.l1.b", "embed.l2.w", "embed.l2.b", "wq", "wk", "wv", "wo"};
    for (const char* c : score_component_names())
      for (const char* part : {".l1.w", ".l1.b", ".l2.w", ".l2.b"}) n.push_back(std::string("head.") + c + part);
    return n;
  }
};

struct ScorerCache {
  nn::Mlp::Cache embed;
  Eigen::MatrixXd q0, qp, k, v, attn, context, h;
  std::vector<nn::Mlp::Cache> heads;
  Eigen::MatrixXd logits;  // m x components
};

/// Logits for m candidate feature rows against one scene's tokens.
inline Eigen::MatrixXd scorer_logits(const ScorerModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& tokens,
                                     ScorerCache* cache = nullptr) {
  ScorerCache local;
  ScorerCache& c = cache ? *cache : local;
  c.q0 = m.embed.forward(x, &c.embed);
  c.qp = c.q0 * m.wq;
  c.k = tokens * m.wk;
  c.v = tokens * m.wv;
  Eigen::MatrixXd s = c.qp * c.k.transpose() / std::sqrt(static_cast<double>(m.d_model()));
  s.colwise() -= s.rowwise().maxCoeff();
  c.attn = s.array().exp();
  c.attn.array().colwise() /= c.attn.rowwise().sum().array();
  c.context = c.attn * c.v;
  c.h = c.q0 + c.context * m.wo;
  c.heads.assign(m.heads.size(), {});
  c.logits.resize(x.rows(), kScoreComponents);
  for (int j = 0; j < kScoreComponents; ++j) c.logits.col(j) = m.heads[static_cast<std::size_t>(j)].forward(c.h, &c.heads[static_cast<std::size_t>(j)]).col(0);
  return c.logits;
}

inline Eigen::MatrixXd scorer_probabilities(const Eigen::MatrixXd& logits) {
  return logits.unaryExpr([](double t) { return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); });
}

/// Accumulates parameter gradients for dL/dlogits into `grad`.
inline void scorer_backward(const ScorerModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& tokens,
                            const ScorerCache& c, const Eigen::MatrixXd& dlogits, ScorerModel& grad) {
  Eigen::MatrixXd dh = Eigen::MatrixXd::Zero(c.h.rows(), c.h.cols());
  for (int j = 0; j < kScoreComponents; ++j) {
    const auto sj = static_cast<std::size_t>(j);
    dh += m.heads[sj].backward(c.h, c.heads[sj], dlogits.col(j), grad.heads[sj]);
  }
  Eigen::MatrixXd dq0 = dh;
  const Eigen::MatrixXd dcontext = dh * m.wo.transpose();
  grad.wo.noalias() += c.context.transpose() * dh;
  const Eigen::MatrixXd dattn = dcontext * c.v.transpose();
  const Eigen::MatrixXd dv = c.attn.transpose() * dcontext;
  const Eigen::VectorXd inner = (dattn.array() * c.attn.array()).rowwise().sum();
  const Eigen::MatrixXd ds = (c.attn.array() * (dattn.colwise() - inner).array()).matrix();
  const double scale = 1.0 / std::sqrt(static_cast<double>(m.d_model()));
  const Eigen::MatrixXd dqp = ds * c.k * scale;
  const Eigen::MatrixXd dk = ds.transpose() * c.qp * scale;
  grad.wq.noalias() += c.q0.transpose() * dqp;
  dq0.noalias() += dqp * m.wq.transpose();
  grad.wk.noalias() += tokens.transpose() * dk;
  grad.wv.noalias() += tokens.transpose() * dv;
  m.embed.backward(x, c.embed, dq0, grad.embed);
}

struct ScorerLossWeights {
  std::array<double, kScoreComponents> lambda{1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
};

/// Summed per-component losses (cross-entropy, squared error for ep), each a
/// mean over candidates; fills dL/dlogits when requested.
inline double scorer_loss(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& targets, const ScorerLossWeights& w,
                          Eigen::MatrixXd* dlogits = nullptr, double count = 0.0) {
  const double n = count > 0.0 ? count : static_cast<double>(logits.rows());
  const Eigen::MatrixXd p = scorer_probabilities(logits);
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  double loss = 0.0;
  for (int j = 0; j < kScoreComponents; ++j) {
    const double lam = w.lambda[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double z = logits(i, j), y = targets(i, j), pi = p(i, j);
      if (j == kEpComponent) {
        loss += lam * (pi - y) * (pi - y) / n;
        if (dlogits) (*dlogits)(i, j) = lam * 2.0 * (pi - y) * pi * (1.0 - pi) / n;
      } else {
        // log(1 + e^z) - y z, stable for large |z|
        loss += lam * (std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - y * z) / n;
        if (dlogits) (*dlogits)(i, j) = lam * (pi - y) / n;
      }
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Training

/// All candidate trajectories of one scene with their exact sub-scores.
struct ScorerGroup {
  Scene scene;
  std::vector<Trajectory> trajectories;
  std::vector<SubScores> targets;
};

struct EncodedGroup {
  Eigen::MatrixXd tokens;
  Eigen::MatrixXd x;
  Eigen::MatrixXd y;
};

inline EncodedGroup encode_group(const ScorerGroup& g) {
  if (g.trajectories.size() != g.targets.size() || g.trajectories.empty())
    throw Error(ErrorCode::dimension_mismatch, "scorer group needs one target per trajectory");
  EncodedGroup e;
  e.tokens = scene_tokens(g.scene);
  const auto m = static_cast<Eigen::Index>(g.trajectories.size());
  e.x.resize(m, 3 * g.trajectories[0].steps());
  e.y.resize(m, kScoreComponents);
  for (Eigen::Index i = 0; i < m; ++i) {
    e.x.row(i) = trajectory_features(g.trajectories[static_cast<std::size_t>(i)], g.scene.ego_start);
    e.y.row(i) = subscores_row(g.targets[static_cast<std::size_t>(i)]);
  }
  return e;
}

/// Ground-truth sub-scores (v2) for each trajectory of a scene.
inline ScorerGroup label_group(const Scene& s, std::vector<Trajectory> trajectories, const ScoringConfig& cfg = {}) {
  ScorerGroup g{s, std::move(trajectories), {}};
  for (const auto& t : g.trajectories) g.targets.push_back(compute_subscores(t, s, MetricVersion::v2, cfg));
  return g;
}

struct ScorerTrainConfig {
  std::uint64_t seed = 0;
  int epochs = 40;
  int groups_per_batch = 8;
  double lr = 1e-3;
  Eigen::Index d_model = 64;
  Eigen::Index embed_hidden = 64;
  Eigen::Index head_hidden = 32;
  ScorerLossWeights weights;

  void validate() const {
    if (epochs < 1 || groups_per_batch < 1 || !(lr > 0.0) || d_model < 1 || embed_hidden < 1 || head_hidden < 1)
      throw Error(ErrorCode::config, "scorer config: epochs, batch, widths >= 1 and lr > 0 required");
  }
};

struct ScorerEpoch {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
};

struct ScorerFit {
  ScorerModel model;
  std::vector<ScorerEpoch> history;
};

inline double scorer_dataset_loss(const ScorerModel& m, const std::vector<EncodedGroup>& data, const ScorerLossWeights& w) {
  double total = 0.0, count = 0.0;
  for (const auto& g : data) {
    total += scorer_loss(scorer_logits(m, g.x, g.tokens), g.y, w) * static_cast<double>(g.x.rows());
    count += static_cast<double>(g.x.rows());
  }
  return count > 0.0 ? total / count : 0.0;
}

inline ScorerFit scorer_train(const std::vector<ScorerGroup>& train, const ScorerTrainConfig& cfg,
                              const std::vector<ScorerGroup>& validation = {}) {
  cfg.validate();
  if (train.empty()) throw Error(ErrorCode::empty_dataset, "scorer training set is empty");
  std::vector<EncodedGroup> enc, val;
  for (const auto& g : train) enc.push_back(encode_group(g));
  for (const auto& g : validation) val.push_back(encode_group(g));
  const int horizon = static_cast<int>(train[0].trajectories[0].steps());
  for (const auto& e : enc)
    if (e.x.cols() != 3 * horizon) throw Error(ErrorCode::dimension_mismatch, "scorer: mixed trajectory horizons");

  ScorerFit fit;
  fit.model = ScorerModel::init(horizon, cfg.d_model, cfg.embed_hidden, cfg.head_hidden, cfg.seed);
  ScorerModel grad = fit.model.zeros_like();
  auto params = fit.model.parameters();
  auto grads = grad.parameters();
  nn::Adam adam({cfg.lr});
  const CounterRng order_root = CounterRng(cfg.seed, Stream::scorer).substream(1);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto rng = order_root.substream(static_cast<std::uint64_t>(epoch));
    const auto order = rng.permutation(enc.size());
    double epoch_loss = 0.0, epoch_count = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.groups_per_batch)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.groups_per_batch));
      double rows = 0.0;
      for (std::size_t i = lo; i < hi; ++i) rows += static_cast<double>(enc[order[i]].x.rows());
      nn::zero(grads);
      for (std::size_t i = lo; i < hi; ++i) {
        const EncodedGroup& g = enc[order[i]];
        ScorerCache cache;
        const Eigen::MatrixXd logits = scorer_logits(fit.model, g.x, g.tokens, &cache);
        Eigen::MatrixXd dlogits;
        epoch_loss += scorer_loss(logits, g.y, cfg.weights, &dlogits, rows) * rows;
        scorer_backward(fit.model, g.x, g.tokens, cache, dlogits, grad);
      }
      epoch_count += rows;
      adam.step(params, grads);
    }
    if (!nn::all_finite(params)) throw Error(ErrorCode::divergence, "scorer training diverged at epoch " + std::to_string(epoch));
    fit.history.push_back({epoch, epoch_loss / epoch_count, scorer_dataset_loss(fit.model, val, cfg.weights)});
  }
  return fit;
}

inline std::string scorer_history_csv(const std::vector<ScorerEpoch>& h) {
  csv::Table t({"epoch", "train_loss", "val_loss"});
  for (const auto& e : h) t.cell(e.epoch).cell(e.train_loss).cell(e.val_loss).end_row();
  return t.str();
}

// ---------------------------------------------------------------------------
// Scorer interface used by selection and routing

class TrajectoryScorer {
 public:
  virtual ~TrajectoryScorer() = default;
  virtual std::vector<SubScores> predict(const std::vector<Trajectory>& candidates, const Scene& scene) const = 0;
};

/// Predicts the exact evaluator's sub-scores.
class OracleScorer : public TrajectoryScorer {
 public:
  explicit OracleScorer(ScoringConfig cfg = {}, MetricVersion version = MetricVersion::v1) : cfg_(cfg), version_(version) {}
  std::vector<SubScores> predict(const std::vector<Trajectory>& candidates, const Scene& scene) const override {
    std::vector<SubScores> out;
    for (const auto& t : candidates) out.push_back(compute_subscores(t, scene, version_, cfg_));
    return out;
  }

 private:
  ScoringConfig cfg_;
  MetricVersion version_;
};

class LearnedScorer : public TrajectoryScorer {
 public:
  explicit LearnedScorer(ScorerModel m) : model_(std::move(m)) {}
  std::vector<SubScores> predict(const std::vector<Trajectory>& candidates, const Scene& scene) const override {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(candidates.size()), 3 * model_.horizon);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (candidates[i].steps() != model_.horizon) throw Error(ErrorCode::dimension_mismatch, "scorer horizon mismatch");
      x.row(static_cast<Eigen::Index>(i)) = trajectory_features(candidates[i], scene.ego_start);
    }
    const Eigen::MatrixXd p = scorer_probabilities(scorer_logits(model_, x, scene_tokens(scene)));
    std::vector<SubScores> out;
    for (Eigen::Index i = 0; i < p.rows(); ++i) out.push_back(subscores_from_row(p.row(i)));
    return out;
  }
  const ScorerModel& model() const { return model_; }

 private:
  ScorerModel model_;
};

// ---------------------------------------------------------------------------
// Checkpoint

inline std::string scorer_checkpoint(const ScorerModel& model) {
  ScorerModel m = model;
  std::ostringstream out;
  out << "SCORER1\nhorizon " << m.horizon << '\n';
  const auto names = ScorerModel::parameter_names();
  const auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) nn::write_matrix(out, names[i], *params[i]);
  return out.str();
}

inline ScorerModel parse_scorer_checkpoint(const std::string& text) {
  std::istringstream in(text);
  nn::expect_token(in, "SCORER1");
  nn::expect_token(in, "horizon");
  int horizon = 0;
  if (!(in >> horizon) || horizon < 2) throw Error(ErrorCode::malformed_row, "scorer checkpoint: bad horizon");
  ScorerModel m;
  m.horizon = horizon;
  m.heads.resize(kScoreComponents);
  const auto names = ScorerModel::parameter_names();
  const auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) *params[i] = nn::read_matrix(in, names[i]);
  const Eigen::Index d = m.wq.rows();
  bool ok = m.embed.l1.w.rows() == 3 * horizon && m.embed.l2.w.cols() == d && m.wq.cols() == d && m.wo.rows() == d &&
            m.wo.cols() == d && m.wk.rows() == kTokenDim && m.wk.cols() == d && m.wv.rows() == kTokenDim && m.wv.cols() == d;
  for (const auto& h : m.heads) ok = ok && h.l1.w.rows() == d && h.l2.w.cols() == 1;
  if (!ok) throw Error(ErrorCode::dimension_mismatch, "scorer checkpoint: inconsistent shapes");
  return m;
}

}  // namespace tandem
