#pragma once

// Choosing between the fast vision policy and the slow language-model policy:
// per-scene advantage and win counts, interpolated candidate sets, oracle and
// scorer-based selection, and confidence-gated dual-path routing.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tandem/csv.hpp"
#include "tandem/error.hpp"
#include "tandem/geometry.hpp"
#include "tandem/scene.hpp"
#include "tandem/scorer.hpp"
#include "tandem/scoring.hpp"

namespace tandem {

// ---------------------------------------------------------------------------
// Advantage and wins

inline double advantage(double s_vlm, double s_vit) { return s_vlm - s_vit; }

enum class Winner { none, vlm, vit };

inline Winner significant_win(double delta, double tau) {
  if (delta > tau) return Winner::vlm;
  if (delta < -tau) return Winner::vit;
  return Winner::none;
}

struct AdvantageRecord {
  std::string scenario_id;
  int seed = 0;
  double s_vlm = 0;
  double s_vit = 0;
  double delta = 0;
};

inline AdvantageRecord make_advantage(std::string id, int seed, double s_vlm, double s_vit) {
  return {std::move(id), seed, s_vlm, s_vit, advantage(s_vlm, s_vit)};
}

struct SeedWins {
  int seed = 0;
  int vlm = 0;
  int vit = 0;
  int scenes = 0;
};

struct WinReport {
  double tau = 0;
  std::vector<SeedWins> per_seed;  // ascending seed
  int stable_vlm = 0;              // scenes won by vlm under every seed
  int stable_vit = 0;
  int scenes = 0;
};

inline WinReport win_count(const std::vector<AdvantageRecord>& records, double tau) {
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw Error(ErrorCode::invalid_argument, "win threshold must be finite and >= 0");
  WinReport r;
  r.tau = tau;
  std::map<int, SeedWins> seeds;
  std::map<std::string, std::pair<int, int>> per_scene;  // (vlm wins, vit wins)
  std::map<std::string, int> seen;
  for (const auto& a : records) {
    if (!std::isfinite(a.delta)) throw Error(ErrorCode::non_finite_value, "non-finite advantage for " + a.scenario_id);
    SeedWins& s = seeds[a.seed];
    s.seed = a.seed;
    ++s.scenes;
    ++seen[a.scenario_id];
    const Winner w = significant_win(a.delta, tau);
    s.vlm += w == Winner::vlm;
    s.vit += w == Winner::vit;
    auto& ps = per_scene[a.scenario_id];
    ps.first += w == Winner::vlm;
    ps.second += w == Winner::vit;
  }
  const int n_seeds = static_cast<int>(seeds.size());
  for (const auto& [id, c] : per_scene) {
    r.stable_vlm += c.first == n_seeds && seen[id] == n_seeds;
    r.stable_vit += c.second == n_seeds && seen[id] == n_seeds;
  }
  for (const auto& [seed, s] : seeds) r.per_seed.push_back(s);
  r.scenes = static_cast<int>(per_scene.size());
  return r;
}

inline std::string win_report_csv(const WinReport& r) {
  csv::Table t({"seed", "tau", "vlm_wins", "vit_wins", "scenes"});
  for (const auto& s : r.per_seed) t.cell(s.seed).cell(r.tau).cell(s.vlm).cell(s.vit).cell(s.scenes).end_row();
  t.cell("stable").cell(r.tau).cell(r.stable_vlm).cell(r.stable_vit).cell(r.scenes).end_row();
  return t.str();
}

// ---------------------------------------------------------------------------
// Candidates

struct Candidate {
  double alpha = 0;  // 0 = slow policy, 1 = fast policy
  Trajectory trajectory;
};

inline std::vector<double> default_alphas() { return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}; }

/// Blends positions linearly and headings along the shorter arc.
inline Trajectory blend(const Trajectory& vit, const Trajectory& vlm, double alpha) {
  Trajectory t;
  t.dt = vlm.dt;
  t.waypoints.resize(vlm.steps(), 3);
  for (Eigen::Index k = 0; k < vlm.steps(); ++k) {
    t.waypoints(k, 0) = alpha * vit.waypoints(k, 0) + (1.0 - alpha) * vlm.waypoints(k, 0);
    t.waypoints(k, 1) = alpha * vit.waypoints(k, 1) + (1.0 - alpha) * vlm.waypoints(k, 1);
    const double a = vlm.waypoints(k, 2);
    t.waypoints(k, 2) = geom::wrap_angle(a + alpha * geom::wrap_angle(vit.waypoints(k, 2) - a));
  }
  return t;
}

/// Both endpoints (exact copies) plus one blend per alpha, ordered by alpha.
inline std::vector<Candidate> interpolate_candidates(const Trajectory& vit, const Trajectory& vlm,
                                                     const std::vector<double>& alphas = default_alphas()) {
  if (vit.steps() != vlm.steps()) throw Error(ErrorCode::dimension_mismatch, "candidate endpoints differ in horizon");
  if (vit.dt != vlm.dt) throw Error(ErrorCode::dimension_mismatch, "candidate endpoints differ in time step");
  std::vector<double> as = alphas;
  for (double a : as)
    if (!(a > 0.0 && a < 1.0)) throw Error(ErrorCode::invalid_argument, "interpolation weights must lie in (0, 1)");
  std::sort(as.begin(), as.end());
  as.erase(std::unique(as.begin(), as.end()), as.end());
  std::vector<Candidate> out{{0.0, vlm}};
  for (double a : as) out.push_back({a, blend(vit, vlm, a)});
  out.push_back({1.0, vit});
  return out;
}

inline std::vector<Trajectory> candidate_trajectories(const std::vector<Candidate>& c) {
  std::vector<Trajectory> t;
  for (const auto& x : c) t.push_back(x.trajectory);
  return t;
}

inline std::string candidates_csv(const std::string& scenario_id, const std::vector<Candidate>& cands) {
  csv::Table t({"scenario_id", "alpha", "waypoint_index", "x", "y", "theta"});
  for (const auto& c : cands)
    for (Eigen::Index k = 0; k < c.trajectory.steps(); ++k)
      t.cell(scenario_id).cell(c.alpha).cell(k).cell(c.trajectory.waypoints(k, 0)).cell(c.trajectory.waypoints(k, 1))
          .cell(c.trajectory.waypoints(k, 2)).end_row();
  return t.str();
}

// ---------------------------------------------------------------------------
// Selection

/// First index of the maximum; throws on an empty or non-finite list.
inline std::size_t first_argmax(const std::vector<double>& v) {
  if (v.empty()) throw Error(ErrorCode::empty_dataset, "no candidates to select from");
  std::size_t best = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw Error(ErrorCode::non_finite_value, "non-finite candidate score");
    if (v[i] > v[best]) best = i;
  }
  return best;
}

struct Selection {
  std::size_t index = 0;
  double alpha = 0;
  double score = 0;               // score used to pick
  std::vector<double> scores;     // per candidate
};

/// Highest exact v1 score.
inline Selection oracle_best_of_n(const std::vector<Candidate>& cands, const Scene& s, const ScoringConfig& cfg = {}) {
  Selection sel;
  for (const auto& c : cands) sel.scores.push_back(pdms(compute_subscores(c.trajectory, s, MetricVersion::v1, cfg)));
  sel.index = first_argmax(sel.scores);
  sel.alpha = cands[sel.index].alpha;
  sel.score = sel.scores[sel.index];
  return sel;
}

/// Highest meta-score under `scorer`.
inline Selection select_candidate(const std::vector<Candidate>& cands, const Scene& s, const TrajectoryScorer& scorer) {
  if (cands.empty()) throw Error(ErrorCode::empty_dataset, "no candidates to select from");
  const auto preds = scorer.predict(candidate_trajectories(cands), s);
  Selection sel;
  for (const auto& p : preds) sel.scores.push_back(meta_score(p));
  sel.index = first_argmax(sel.scores);
  sel.alpha = cands[sel.index].alpha;
  sel.score = sel.scores[sel.index];
  return sel;
}

// ---------------------------------------------------------------------------
// Dual-path routing

struct DualConfig {
  double gamma = 0.8;
  double cost_fast = 1.0;
  double cost_slow = 6.0;
  double cost_score = 0.1;
  double cost_select = 0.1;

  void validate() const {
    for (double c : {cost_fast, cost_slow, cost_score, cost_select})
      if (!(c > 0.0) || !std::isfinite(c)) throw Error(ErrorCode::config, "routing costs must be finite and > 0");
    if (!(gamma >= 0.0) || std::isnan(gamma)) throw Error(ErrorCode::config, "routing threshold must be >= 0");
  }
  /// Thresholds above 1 can never be met by a meta-score in [0, 1].
  double effective_gamma() const { return std::min(gamma, std::nextafter(1.0, 2.0)); }
};

enum class RoutePath { fast, slow };

inline const char* to_string(RoutePath p) { return p == RoutePath::fast ? "fast" : "slow"; }

struct RouteOutcome {
  RoutePath path = RoutePath::fast;
  Trajectory trajectory;
  double fast_meta = 0;
  double alpha = 1.0;  // selected blend weight; 1 when the fast output is kept
  double cost = 0;
};

/// Scores the fast trajectory; keeps it when confident, otherwise queries the
/// slow policy and picks the best interpolated candidate.
inline RouteOutcome dual_route(const Scene& s, const Trajectory& fast, const std::function<Trajectory()>& slow,
                               const TrajectoryScorer& scorer, const DualConfig& cfg,
                               const std::vector<double>& alphas = default_alphas()) {
  cfg.validate();
  RouteOutcome out;
  out.fast_meta = meta_score(scorer.predict({fast}, s).at(0));
  out.cost = cfg.cost_fast + cfg.cost_score;
  if (out.fast_meta >= cfg.effective_gamma()) {
    out.trajectory = fast;
    return out;
  }
  const auto cands = interpolate_candidates(fast, slow(), alphas);
  const Selection sel = select_candidate(cands, s, scorer);
  out.path = RoutePath::slow;
  out.trajectory = cands[sel.index].trajectory;
  out.alpha = sel.alpha;
  out.cost += cfg.cost_slow + cfg.cost_select;
  return out;
}

struct RoutingCase {
  const Scene* scene = nullptr;
  Trajectory fast;
  Trajectory slow;
};

struct TradeoffRow {
  double gamma = 0;
  double fast_fraction = 0;
  double mean_score = 0;  // exact v1 score of the routed output
  double total_cost = 0;
  double throughput = 0;  // scenes per unit cost
  double speedup = 0;     // against always running the slow policy
};

inline std::vector<TradeoffRow> dual_sweep(const std::vector<RoutingCase>& cases, std::vector<double> gammas,
                                           const TrajectoryScorer& scorer, DualConfig cfg,
                                           const ScoringConfig& scoring = {}) {
  if (cases.empty()) throw Error(ErrorCode::empty_dataset, "routing sweep needs at least one scene");
  std::sort(gammas.begin(), gammas.end());
  gammas.erase(std::unique(gammas.begin(), gammas.end()), gammas.end());
  std::vector<TradeoffRow> rows;
  for (double g : gammas) {
    cfg.gamma = g;
    TradeoffRow row;
    row.gamma = g;
    int fast = 0;
    double score = 0.0;
    for (const auto& c : cases) {
      const auto r = dual_route(*c.scene, c.fast, [&] { return c.slow; }, scorer, cfg);
      fast += r.path == RoutePath::fast;
      row.total_cost += r.cost;
      score += pdms(compute_subscores(r.trajectory, *c.scene, MetricVersion::v1, scoring));
    }
    const double n = static_cast<double>(cases.size());
    row.fast_fraction = fast / n;
    row.mean_score = score / n;
    row.throughput = row.total_cost > 0.0 ? n / row.total_cost : 0.0;
    row.speedup = row.total_cost > 0.0 ? n * cfg.cost_slow / row.total_cost : 0.0;
    rows.push_back(row);
  }
  return rows;
}

inline std::string tradeoff_csv(const std::vector<TradeoffRow>& rows) {
  csv::Table t({"gamma", "fast_fraction", "mean_score", "total_cost", "throughput", "speedup"});
  for (const auto& r : rows)
    t.cell(r.gamma).cell(r.fast_fraction).cell(r.mean_score).cell(r.total_cost).cell(r.throughput).cell(r.speedup).end_row();
  return t.str();
}

inline std::vector<double> default_gammas() { return {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.01}; }

/// Slow-path cost making the speedup equal `target` when a fraction `f` of
/// scenes takes the fast path.
inline double slow_cost_for_speedup(double target, double f, const DualConfig& c) {
  const double denom = 1.0 - target * (1.0 - f);
  if (!(denom > 0.0)) throw Error(ErrorCode::invalid_argument, "speedup target unreachable at this fast fraction");
  return target * (c.cost_fast + c.cost_score + (1.0 - f) * c.cost_select) / denom;
}

}  // namespace tandem
