#pragma once

// Representation-only gates choosing between the vlm and vit branch per
// scenario: energy indicators from the SAE decoders, four hand rules, a
// learned feedforward gate, and realized-score evaluation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tandem/csv.hpp"
#include "tandem/error.hpp"
#include "tandem/features.hpp"
#include "tandem/nn.hpp"
#include "tandem/rng.hpp"
#include "tandem/sae.hpp"

namespace tandem {

struct GateFeatures {
  double e_shared_vlm = 0;
  double e_unique_vlm = 0;
  double e_shared_vit = 0;
  double e_unique_vit = 0;
};

/// Energies of the additive decoder contributions for one standardized row pair.
inline GateFeatures energy_decomposition(const SaeModel& m, const Eigen::RowVectorXd& x, const Eigen::RowVectorXd& y) {
  const SaeActivations a = sae_forward(m, SaeBatch{x, y});
  return {a.shared_x.squaredNorm(), a.unique_x.squaredNorm(), a.shared_y.squaredNorm(), a.unique_y.squaredNorm()};
}

/// One GateFeatures per row of a raw dataset (standardized with the model's statistics).
inline std::vector<GateFeatures> energy_decomposition(const SaeModel& m, const FeaturePairDataset& data) {
  const SaeBatch b = standardized_batch(m, data);
  const SaeActivations a = sae_forward(m, b);
  std::vector<GateFeatures> out(static_cast<std::size_t>(data.n()));
  for (Eigen::Index i = 0; i < data.n(); ++i)
    out[static_cast<std::size_t>(i)] = {a.shared_x.row(i).squaredNorm(), a.unique_x.row(i).squaredNorm(),
                                        a.shared_y.row(i).squaredNorm(), a.unique_y.row(i).squaredNorm()};
  return out;
}

struct BranchIndicators {
  double r_u = 0;
  double r_s = 0;
  double u = 0;
  double d = 0;
};

struct GateIndicators {
  BranchIndicators vlm;
  BranchIndicators vit;
  double d_bar = 0;
};

inline BranchIndicators branch_indicators(double e_s, double e_u, double eps) {
  const double total = e_s + e_u;
  return {e_u / (total + eps), e_s / (total + eps), e_u / (e_s + eps), e_s / (e_s + e_u + eps)};
}

inline GateIndicators gate_indicators(const GateFeatures& f, double eps = 1e-8) {
  for (double e : {f.e_shared_vlm, f.e_unique_vlm, f.e_shared_vit, f.e_unique_vit})
    if (!std::isfinite(e) || e < 0.0) throw Error(ErrorCode::invalid_argument, "gate energies must be finite and >= 0");
  GateIndicators g;
  g.vlm = branch_indicators(f.e_shared_vlm, f.e_unique_vlm, eps);
  g.vit = branch_indicators(f.e_shared_vit, f.e_unique_vit, eps);
  g.d_bar = 0.5 * (g.vlm.d + g.vit.d);
  return g;
}

enum class GateStrategy { more_unique, shared_conditional, smoothed, vit_fallback };
enum class GateChoice { vlm, vit };

inline const char* to_string(GateStrategy s) {
  switch (s) {
    case GateStrategy::more_unique: return "more_unique";
    case GateStrategy::shared_conditional: return "shared_conditional";
    case GateStrategy::smoothed: return "smoothed";
    case GateStrategy::vit_fallback: return "vit_fallback";
  }
  return "?";
}

inline GateStrategy parse_gate_strategy(const std::string& s) {
  for (auto g : {GateStrategy::more_unique, GateStrategy::shared_conditional, GateStrategy::smoothed,
                 GateStrategy::vit_fallback})
    if (s == to_string(g)) return g;
  throw Error(ErrorCode::config, "unknown gate strategy '" + s + "'");
}

inline const char* to_string(GateChoice c) { return c == GateChoice::vlm ? "vlm" : "vit"; }

inline std::vector<GateStrategy> all_gate_strategies() {
  return {GateStrategy::more_unique, GateStrategy::shared_conditional, GateStrategy::smoothed, GateStrategy::vit_fallback};
}

struct GateConfig {
  double tau = 0.7;
  double kappa = 5.0;
  double tau_strong = 0.8;
  double epsilon = 1e-8;

  void validate() const {
    if (!(kappa > 0.0)) throw Error(ErrorCode::config, "gate kappa must be > 0");
    if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorCode::config, "gate tau must lie in [0, 1]");
    if (!(epsilon >= 0.0)) throw Error(ErrorCode::config, "gate epsilon must be >= 0");
  }
};

struct GateDecision {
  std::string scenario_id;
  double score = 0;
  GateChoice choice = GateChoice::vit;
};

inline double sigmoid(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

/// Signed score (positive favors vlm) and choice. The fallback rule reports
/// the smoothed score but only picks vlm above tau_strong.
inline GateDecision rule_score(const GateIndicators& ind, GateStrategy strategy, const GateConfig& cfg,
                               std::string scenario_id = {}) {
  const double unique_gap = ind.vlm.u - ind.vit.u;
  const double shared_gap = ind.vlm.r_s - ind.vit.r_s;
  auto smoothed = [&] {
    const double w = sigmoid(cfg.kappa * (ind.d_bar - cfg.tau));
    return w * shared_gap + (1.0 - w) * unique_gap;
  };
  GateDecision d;
  d.scenario_id = std::move(scenario_id);
  switch (strategy) {
    case GateStrategy::more_unique: d.score = unique_gap; break;
    case GateStrategy::shared_conditional: d.score = ind.d_bar > cfg.tau ? shared_gap : unique_gap; break;
    case GateStrategy::smoothed: d.score = smoothed(); break;
    case GateStrategy::vit_fallback:
      d.score = smoothed();
      d.choice = ind.d_bar > cfg.tau_strong && d.score > 0.0 ? GateChoice::vlm : GateChoice::vit;
      return d;
  }
  d.choice = d.score > 0.0 ? GateChoice::vlm : GateChoice::vit;
  return d;
}

// ---------------------------------------------------------------------------
// Realized-score evaluation

struct ScenarioScores {
  std::string scenario_id;
  double vlm = 0;
  double vit = 0;
};

struct GateEvaluation {
  double realized_mean = 0;
  double vlm_mean = 0;
  double vit_mean = 0;
  double oracle_mean = 0;  // per-scenario max
  double min_mean = 0;     // per-scenario min
  std::size_t vlm_choices = 0;
  std::size_t n = 0;
};

/// Plain mean over scenarios of the chosen branch's score.
inline GateEvaluation gate_evaluate(const std::vector<GateDecision>& decisions, const std::vector<ScenarioScores>& scores) {
  std::unordered_map<std::string, const ScenarioScores*> by_id;
  for (const auto& s : scores) by_id[s.scenario_id] = &s;
  GateEvaluation e;
  for (const auto& d : decisions) {
    auto it = by_id.find(d.scenario_id);
    if (it == by_id.end()) throw Error(ErrorCode::missing_score, "no branch scores for scenario " + d.scenario_id);
    const ScenarioScores& s = *it->second;
    e.realized_mean += d.choice == GateChoice::vlm ? s.vlm : s.vit;
    e.vlm_mean += s.vlm;
    e.vit_mean += s.vit;
    e.oracle_mean += std::max(s.vlm, s.vit);
    e.min_mean += std::min(s.vlm, s.vit);
    e.vlm_choices += d.choice == GateChoice::vlm;
  }
  e.n = decisions.size();
  if (e.n == 0) throw Error(ErrorCode::empty_dataset, "gate_evaluate needs at least one decision");
  const double n = static_cast<double>(e.n);
  for (double* v : {&e.realized_mean, &e.vlm_mean, &e.vit_mean, &e.oracle_mean, &e.min_mean}) *v /= n;
  return e;
}

inline std::vector<GateDecision> rule_decisions(const std::vector<std::string>& ids,
                                                const std::vector<GateIndicators>& indicators, GateStrategy strategy,
                                                const GateConfig& cfg) {
  if (ids.size() != indicators.size()) throw Error(ErrorCode::dimension_mismatch, "ids/indicators length");
  std::vector<GateDecision> out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) out.push_back(rule_score(indicators[i], strategy, cfg, ids[i]));
  return out;
}

inline std::string decisions_csv(const std::vector<GateDecision>& decisions) {
  csv::Table t({"scenario_id", "score", "choice"});
  for (const auto& d : decisions) t.cell(d.scenario_id).cell(d.score).cell(to_string(d.choice)).end_row();
  return t.str();
}

struct SweepCellResult {
  GateStrategy strategy = GateStrategy::more_unique;
  double tau = 0;
  double realized_mean = 0;
};

struct GateSweepReport {
  std::vector<SweepCellResult> rows;

  std::string csv() const {
    csv::Table t({"strategy", "tau", "realized_mean"});
    for (const auto& r : rows) t.cell(to_string(r.strategy)).cell(r.tau).cell(r.realized_mean).end_row();
    return t.str();
  }
};

inline std::vector<double> default_gate_taus() { return {0.5, 0.6, 0.7, 0.8, 0.9}; }

inline GateSweepReport threshold_sweep(const std::vector<std::string>& ids, const std::vector<GateIndicators>& indicators,
                                       const std::vector<ScenarioScores>& scores,
                                       const std::vector<GateStrategy>& strategies, const std::vector<double>& taus,
                                       GateConfig cfg = {}) {
  GateSweepReport rep;
  for (auto s : strategies)
    for (double tau : taus) {
      cfg.tau = tau;
      cfg.validate();
      rep.rows.push_back({s, tau, gate_evaluate(rule_decisions(ids, indicators, s, cfg), scores).realized_mean});
    }
  return rep;
}

// ---------------------------------------------------------------------------
// Learned gate

enum class GateInput { concat, difference, combined };

inline const char* to_string(GateInput g) {
  switch (g) {
    case GateInput::concat: return "concat";
    case GateInput::difference: return "difference";
    case GateInput::combined: return "combined";
  }
  return "?";
}

inline GateInput parse_gate_input(const std::string& s) {
  for (auto g : {GateInput::concat, GateInput::difference, GateInput::combined})
    if (s == to_string(g)) return g;
  throw Error(ErrorCode::config, "unknown gate input '" + s + "'");
}

/// [x; y], x - y, or [x; y; x - y].
inline Eigen::MatrixXd gate_inputs(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, GateInput mode) {
  if (x.rows() != y.rows()) throw Error(ErrorCode::dimension_mismatch, "gate inputs: row counts differ");
  if (mode != GateInput::concat && x.cols() != y.cols())
    throw Error(ErrorCode::dimension_mismatch, "difference gate inputs need equal widths");
  Eigen::MatrixXd out;
  switch (mode) {
    case GateInput::concat:
      out.resize(x.rows(), x.cols() + y.cols());
      out << x, y;
      break;
    case GateInput::difference: out = x - y; break;
    case GateInput::combined:
      out.resize(x.rows(), 3 * x.cols());
      out << x, y, x - y;
      break;
  }
  return out;
}

struct GateTrainConfig {
  std::uint64_t seed = 0;
  int epochs = 200;
  int batch_size = 64;
  double lr = 1e-3;
  Eigen::Index hidden = 64;
  GateInput input = GateInput::combined;
};

struct GateModel {
  GateInput input = GateInput::combined;
  Standardizer input_standardizer;
  nn::Mlp net;  // inputs -> hidden -> 1 logit
};

struct GateTrainingSet {
  Eigen::MatrixXd x;
  Eigen::MatrixXd y;
  Eigen::VectorXd labels;  // 1 = vlm better, 0 = vit better
  std::vector<std::string> ids;
  std::size_t dropped_ties = 0;
};

/// Labels from realized scores; ties are dropped.
inline GateTrainingSet make_gate_training_set(const FeaturePairDataset& data, const std::vector<ScenarioScores>& scores) {
  std::unordered_map<std::string, const ScenarioScores*> by_id;
  for (const auto& s : scores) by_id[s.scenario_id] = &s;
  std::vector<Eigen::Index> rows;
  std::vector<double> labels;
  GateTrainingSet set;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const auto& id = data.x.sample_ids[static_cast<std::size_t>(i)];
    auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(ErrorCode::missing_score, "no branch scores for scenario " + id);
    if (it->second->vlm == it->second->vit) {
      ++set.dropped_ties;
      continue;
    }
    rows.push_back(i);
    labels.push_back(it->second->vlm > it->second->vit ? 1.0 : 0.0);
    set.ids.push_back(id);
  }
  set.x.resize(static_cast<Eigen::Index>(rows.size()), data.x.d());
  set.y.resize(static_cast<Eigen::Index>(rows.size()), data.y.d());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    set.x.row(static_cast<Eigen::Index>(r)) = data.x.values.row(rows[r]);
    set.y.row(static_cast<Eigen::Index>(r)) = data.y.values.row(rows[r]);
  }
  set.labels = Eigen::Map<Eigen::VectorXd>(labels.data(), static_cast<Eigen::Index>(labels.size()));
  return set;
}

inline Eigen::VectorXd gate_logits(const GateModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  return m.net.forward(standardize(gate_inputs(x, y, m.input), m.input_standardizer)).col(0);
}

inline Eigen::VectorXd learned_gate_predict(const GateModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  return gate_logits(m, x, y).unaryExpr([](double t) { return sigmoid(t); });
}

/// Feedforward classifier trained with binary cross-entropy and Adam.
inline GateModel learned_gate_train(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const Eigen::VectorXd& labels,
                                    const GateTrainConfig& cfg) {
  const Eigen::Index n = labels.size();
  if (n < 2 || x.rows() != n || y.rows() != n) throw Error(ErrorCode::too_few_samples, "gate training needs >= 2 labeled rows");
  const double positives = labels.sum();
  if (positives == 0.0 || positives == static_cast<double>(n))
    throw Error(ErrorCode::single_class, "gate training set has a single class");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.lr > 0.0) || cfg.hidden < 1)
    throw Error(ErrorCode::config, "gate training: epochs, batch_size, hidden >= 1 and lr > 0 required");

  GateModel m;
  m.input = cfg.input;
  const Eigen::MatrixXd raw = gate_inputs(x, y, cfg.input);
  m.input_standardizer = fit_standardizer(raw);
  const Eigen::MatrixXd inputs = standardize(raw, m.input_standardizer);

  CounterRng init(cfg.seed, Stream::gate);
  m.net = nn::Mlp::init(inputs.cols(), cfg.hidden, 1, init);
  nn::Mlp grad = nn::Mlp::zeros_like(m.net);
  std::vector<Eigen::MatrixXd*> params, grads;
  m.net.collect(params);
  grad.collect(grads);
  nn::Adam adam({cfg.lr});
  const CounterRng order_rng = CounterRng(cfg.seed, Stream::gate).substream(1);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto rng = order_rng.substream(static_cast<std::uint64_t>(epoch));
    const auto order = rng.permutation(static_cast<std::size_t>(n));
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      Eigen::MatrixXd xb(static_cast<Eigen::Index>(hi - lo), inputs.cols());
      Eigen::VectorXd yb(static_cast<Eigen::Index>(hi - lo));
      for (std::size_t i = lo; i < hi; ++i) {
        xb.row(static_cast<Eigen::Index>(i - lo)) = inputs.row(static_cast<Eigen::Index>(order[i]));
        yb(static_cast<Eigen::Index>(i - lo)) = labels(static_cast<Eigen::Index>(order[i]));
      }
      nn::Mlp::Cache cache;
      const Eigen::VectorXd logits = m.net.forward(xb, &cache).col(0);
      const Eigen::VectorXd p = logits.unaryExpr([](double t) { return sigmoid(t); });
      const Eigen::MatrixXd dlogit = (p - yb) / static_cast<double>(hi - lo);
      nn::zero(grads);
      m.net.backward(xb, cache, dlogit, grad);
      adam.step(params, grads);
    }
    if (!nn::all_finite(params)) throw Error(ErrorCode::divergence, "gate training diverged at epoch " + std::to_string(epoch));
  }
  return m;
}

inline std::vector<GateDecision> learned_gate_decisions(const GateModel& m, const FeaturePairDataset& data) {
  const Eigen::VectorXd p = learned_gate_predict(m, data.x.values, data.y.values);
  std::vector<GateDecision> out;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double score = p(i) - 0.5;
    out.push_back({data.x.sample_ids[static_cast<std::size_t>(i)], score, score > 0.0 ? GateChoice::vlm : GateChoice::vit});
  }
  return out;
}

inline std::string gate_checkpoint(const GateModel& model) {
  std::ostringstream out;
  GateModel m = model;
  out << "GATE1\ninput " << to_string(m.input) << '\n';
  write_standardizer(out, "input", m.input_standardizer);
  std::vector<Eigen::MatrixXd*> params;
  m.net.collect(params);
  const char* names[] = {"l1.w", "l1.b", "l2.w", "l2.b"};
  for (std::size_t i = 0; i < params.size(); ++i) nn::write_matrix(out, names[i], *params[i]);
  return out.str();
}

inline GateModel parse_gate_checkpoint(const std::string& text) {
  std::istringstream in(text);
  nn::expect_token(in, "GATE1");
  nn::expect_token(in, "input");
  std::string mode;
  in >> mode;
  GateModel m;
  m.input = parse_gate_input(mode);
  m.input_standardizer = read_standardizer(in, "input");
  m.net.l1.w = nn::read_matrix(in, "l1.w");
  m.net.l1.b = nn::read_matrix(in, "l1.b");
  m.net.l2.w = nn::read_matrix(in, "l2.w");
  m.net.l2.b = nn::read_matrix(in, "l2.b");
  if (m.net.l1.w.rows() != m.input_standardizer.mean.size() || m.net.l1.w.cols() != m.net.l1.b.cols() ||
      m.net.l2.w.rows() != m.net.l1.w.cols() || m.net.l2.w.cols() != 1 || m.net.l2.b.cols() != 1)
    throw Error(ErrorCode::dimension_mismatch, "gate checkpoint: inconsistent shapes");
  return m;
}

}  // namespace tandem
