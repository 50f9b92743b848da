#pragma once

// Trajectory quality scores: sub-score kernels on a Scene, the v1
// multiplicative/weighted composition, the v2 human-filtered composition,
// two-stage kernel aggregation, and mean speed.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "tandem/csv.hpp"
#include "tandem/error.hpp"
#include "tandem/geometry.hpp"
#include "tandem/scene.hpp"

namespace tandem {

enum class MetricVersion { v1, v2 };

struct ScoringConfig {
  double ego_length = 4.5;
  double ego_width = 2.0;
  double t_ttc = 2.0;
  double ttc_step = 0.1;
  double a_max = 3.0;
  double j_max = 5.0;
  double w_lk = 1.0;
  double ec_factor = 0.8;
  int collision_substeps = 4;
  double ddc_partial_deg = 45.0;
  double ddc_fail_deg = 90.0;
  double min_expert_progress = 0.1;
};

struct SubScores {
  double nc = 1;
  double dac = 1;
  double ddc = 1;
  double tlc = 1;
  double ep = 1;
  double ttc = 1;
  double comfort = 1;
  double hc = 1;
  double lk = 1;
  double ec = 1;

  static SubScores ones() { return {}; }
  bool operator==(const SubScores&) const = default;
};

namespace scoring_detail {

struct Pose {
  Vec2 p;
  double theta;
};

/// Ego poses for steps 0..T (index 0 is the start state).
inline std::vector<Pose> ego_poses(const Trajectory& t, const EgoState& start) {
  std::vector<Pose> out{{start.position(), start.theta}};
  for (Eigen::Index k = 0; k < t.steps(); ++k) out.push_back({t.position(k), t.heading(k)});
  return out;
}

inline Pose lerp(const Pose& a, const Pose& b, double f) {
  return {a.p + f * (b.p - a.p), a.theta + f * geom::wrap_angle(b.theta - a.theta)};
}

inline std::vector<double> step_speeds(const std::vector<Vec2>& pts, double dt) {
  std::vector<double> v;
  for (std::size_t k = 1; k < pts.size(); ++k) v.push_back((pts[k] - pts[k - 1]).norm() / dt);
  return v;
}

/// |accel| <= a_max and |jerk| <= j_max over a speed series.
inline bool comfortable(const std::vector<double>& speeds, double dt, double a_max, double j_max) {
  std::vector<double> a;
  for (std::size_t k = 1; k < speeds.size(); ++k) a.push_back((speeds[k] - speeds[k - 1]) / dt);
  for (double v : a)
    if (std::abs(v) > a_max) return false;
  for (std::size_t k = 1; k < a.size(); ++k)
    if (std::abs((a[k] - a[k - 1]) / dt) > j_max) return false;
  return true;
}

inline double progress(const Trajectory& t, const EgoState& start, const std::vector<Vec2>& centerline) {
  const double s0 = geom::project_onto_polyline(start.position(), centerline).arc_length;
  return geom::project_onto_polyline(t.position(t.steps() - 1), centerline).arc_length - s0;
}

}  // namespace scoring_detail

/// 1 without collision, 0.5 when every collision is a rear impact on a
/// decelerating ego, 0 otherwise. Each agent is judged at its first contact.
inline double no_collision_score(const Trajectory& t, const Scene& s, const ScoringConfig& cfg = {}) {
  using namespace scoring_detail;
  const auto poses = ego_poses(t, s.ego_start);
  std::vector<Vec2> pts;
  for (const auto& p : poses) pts.push_back(p.p);
  std::vector<double> speeds{s.ego_start.v};
  for (double v : step_speeds(pts, t.dt)) speeds.push_back(v);
  bool rear_only_hit = false;
  std::vector<bool> contacted(s.agents.size(), false);
  for (std::size_t k = 1; k < poses.size(); ++k) {
    for (int sub = 1; sub <= cfg.collision_substeps; ++sub) {
      const double f = static_cast<double>(sub) / cfg.collision_substeps;
      const Pose e = lerp(poses[k - 1], poses[k], f);
      const geom::OrientedBox ego{e.p, e.theta, cfg.ego_length, cfg.ego_width};
      for (std::size_t i = 0; i < s.agents.size(); ++i) {
        if (contacted[i]) continue;
        const Agent& a = s.agents[i];
        const Pose ap = lerp({a.positions[k - 1], a.headings[k - 1]}, {a.positions[k], a.headings[k]}, f);
        const geom::OrientedBox other{ap.p, ap.theta, a.length, a.width};
        if (!geom::boxes_overlap(ego, other)) continue;
        contacted[i] = true;  // classified by first contact only
        const geom::OrientedBox other_front = other.half(+1);
        const bool rear = geom::boxes_overlap(ego.half(-1), other_front) && !geom::boxes_overlap(ego.half(+1), other_front) &&
                          speeds[k] < speeds[k - 1];
        if (!rear) return 0.0;
        rear_only_hit = true;
      }
    }
  }
  return rear_only_hit ? 0.5 : 1.0;
}

inline double drivable_compliance(const Trajectory& t, const Scene& s, const ScoringConfig& cfg = {}) {
  for (Eigen::Index k = 0; k < t.steps(); ++k) {
    const geom::OrientedBox ego{t.position(k), t.heading(k), cfg.ego_length, cfg.ego_width};
    for (const auto& c : ego.corners())
      if (!geom::point_in_polygon(c, s.drivable)) return 0.0;
  }
  return 1.0;
}

/// Ratio of centerline progress to the expert's, clipped to [0, 1]; 1 when
/// the expert itself makes no meaningful progress.
inline double ego_progress(const Trajectory& t, const Scene& s, const ScoringConfig& cfg = {}) {
  const double expert = scoring_detail::progress(s.expert, s.ego_start, s.centerline);
  if (expert < cfg.min_expert_progress) return 1.0;
  return std::clamp(scoring_detail::progress(t, s.ego_start, s.centerline) / expert, 0.0, 1.0);
}

/// 0 if a constant-velocity projection from any waypoint overlaps an agent
/// ahead of the ego within t_ttc seconds.
inline double time_to_collision(const Trajectory& t, const Scene& s, const ScoringConfig& cfg = {}) {
  using namespace scoring_detail;
  const auto poses = ego_poses(t, s.ego_start);
  const int probes = static_cast<int>(std::ceil(cfg.t_ttc / cfg.ttc_step - 1e-9));
  for (std::size_t k = 1; k < poses.size(); ++k) {
    const Vec2 ev = (poses[k].p - poses[k - 1].p) / t.dt;
    const Vec2 forward = geom::heading_vector(poses[k].theta);
    for (const auto& a : s.agents) {
      if ((a.positions[k] - poses[k].p).dot(forward) < 0.0) continue;
      const Vec2 av = (a.positions[k] - a.positions[k - 1]) / t.dt;
      for (int i = 0; i < probes; ++i) {
        const double tau = i * cfg.ttc_step;
        const geom::OrientedBox ego{poses[k].p + tau * ev, poses[k].theta, cfg.ego_length, cfg.ego_width};
        const geom::OrientedBox other{a.positions[k] + tau * av, a.headings[k], a.length, a.width};
        if (geom::boxes_overlap(ego, other)) return 0.0;
      }
    }
  }
  return 1.0;
}

inline double comfort_score(const Trajectory& t, const Scene& s, double bound_scale, const ScoringConfig& cfg = {}) {
  std::vector<Vec2> pts;
  for (const auto& p : scoring_detail::ego_poses(t, s.ego_start)) pts.push_back(p.p);
  std::vector<double> speeds{s.ego_start.v};
  for (double v : scoring_detail::step_speeds(pts, t.dt)) speeds.push_back(v);
  return scoring_detail::comfortable(speeds, t.dt, bound_scale * cfg.a_max, bound_scale * cfg.j_max) ? 1.0 : 0.0;
}

/// Comfort over a series that starts one constant-velocity step before the ego start.
inline double history_comfort(const Trajectory& t, const Scene& s, const ScoringConfig& cfg = {}) {
  std::vector<Vec2> pts{s.ego_start.position() - geom::heading_vector(s.ego_start.theta) * (s.ego_start.v * t.dt)};
  for (const auto& p : scoring_detail::ego_poses(t, s.ego_start)) pts.push_back(p.p);
  return scoring_detail::comfortable(scoring_detail::step_speeds(pts, t.dt), t.dt, cfg.a_max, cfg.j_max) ? 1.0 : 0.0;
}

inline double lane_keeping(const Trajectory& t, const Scene& s, const ScoringConfig& cfg = {}) {
  for (Eigen::Index k = 0; k < t.steps(); ++k)
    if (std::abs(geom::project_onto_polyline(t.position(k), s.centerline).lateral) > cfg.w_lk) return 0.0;
  return 1.0;
}

inline double direction_compliance(const Trajectory& t, const Scene& s, const ScoringConfig& cfg = {}) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < t.steps(); ++k) {
    const auto proj = geom::project_onto_polyline(t.position(k), s.centerline);
    worst = std::max(worst, std::abs(geom::wrap_angle(t.heading(k) - s.direction_field[proj.segment])));
  }
  const double deg = worst * 180.0 / std::numbers::pi;
  if (deg <= cfg.ddc_partial_deg) return 1.0;
  return deg <= cfg.ddc_fail_deg ? 0.5 : 0.0;
}

inline double traffic_light_compliance(const Trajectory& t, const Scene& s) {
  if (!s.red_light || !s.red_light_zone) return 1.0;
  for (Eigen::Index k = 0; k < t.steps(); ++k)
    if (geom::point_in_polygon(t.position(k), *s.red_light_zone)) return 0.0;
  return 1.0;
}

/// v1 fills nc, dac, ep, ttc and comfort and leaves the v2 extras at 1.
inline SubScores compute_subscores(const Trajectory& t, const Scene& s, MetricVersion version = MetricVersion::v2,
                                   const ScoringConfig& cfg = {}) {
  t.validate();
  s.validate();
  if (t.steps() != s.horizon()) throw Error(ErrorCode::dimension_mismatch, "trajectory length differs from scene horizon");
  if (std::abs(t.dt - s.dt) > 1e-12) throw Error(ErrorCode::dimension_mismatch, "trajectory dt differs from scene dt");
  SubScores out;
  out.nc = no_collision_score(t, s, cfg);
  out.dac = drivable_compliance(t, s, cfg);
  out.ep = ego_progress(t, s, cfg);
  out.ttc = time_to_collision(t, s, cfg);
  out.comfort = comfort_score(t, s, 1.0, cfg);
  if (version == MetricVersion::v2) {
    out.ddc = direction_compliance(t, s, cfg);
    out.tlc = traffic_light_compliance(t, s);
    out.hc = history_comfort(t, s, cfg);
    out.lk = lane_keeping(t, s, cfg);
    out.ec = comfort_score(t, s, cfg.ec_factor, cfg);
  }
  return out;
}

inline double pdms(const SubScores& s) { return s.nc * s.dac * (5.0 * s.ep + 5.0 * s.ttc + 2.0 * s.comfort) / 12.0; }

inline double epdms_filter(double agent, double human) { return human == 0.0 ? 1.0 : agent; }

inline double epdms(const SubScores& a, const SubScores& h) {
  const double mult = epdms_filter(a.nc, h.nc) * epdms_filter(a.dac, h.dac) * epdms_filter(a.ddc, h.ddc) *
                      epdms_filter(a.tlc, h.tlc);
  const double avg = 5.0 * epdms_filter(a.ttc, h.ttc) + 5.0 * epdms_filter(a.ep, h.ep) + 2.0 * epdms_filter(a.hc, h.hc) +
                     2.0 * epdms_filter(a.lk, h.lk) + 2.0 * epdms_filter(a.ec, h.ec);
  return mult * avg / 16.0;
}

struct FollowUp {
  EgoState start;
  double score = 0;
};

struct TwoStageScore {
  double score = 0;
  double second_stage = 0;
  bool nearest_fallback = false;
};

struct KernelScales {
  double r_theta = 2.0;  // m per rad
  double r_v = 0.5;      // m per m/s
};

inline double state_distance2(const EgoState& a, const EgoState& b, const KernelScales& k = {}) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  const double dth = geom::wrap_angle(a.theta - b.theta) * k.r_theta;
  const double dv = (a.v - b.v) * k.r_v;
  return dx * dx + dy * dy + dth * dth + dv * dv;
}

/// first_stage times the Gaussian-kernel-weighted mean of follow-up scores.
inline TwoStageScore epdms_two_stage(double first_stage, const std::vector<FollowUp>& followups, const EgoState& end,
                                     double sigma = 1.0, const KernelScales& k = {}) {
  if (followups.empty()) throw Error(ErrorCode::empty_dataset, "two-stage score needs at least one follow-up");
  if (!(sigma > 0.0)) throw Error(ErrorCode::invalid_argument, "two-stage sigma must be > 0");
  TwoStageScore out;
  double wsum = 0.0, acc = 0.0;
  std::size_t nearest = 0;
  double nearest_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < followups.size(); ++i) {
    const double d2 = state_distance2(followups[i].start, end, k);
    if (d2 < nearest_d2) nearest_d2 = d2, nearest = i;
    const double w = std::exp(-d2 / (2.0 * sigma * sigma));
    wsum += w;
    acc += w * followups[i].score;
  }
  if (wsum > 0.0) {
    out.second_stage = acc / wsum;
  } else {
    out.second_stage = followups[nearest].score;
    out.nearest_fallback = true;
  }
  out.score = first_stage * out.second_stage;
  return out;
}

/// Mean of |Δposition| / dt over consecutive waypoints.
inline double mean_speed(const Trajectory& t) {
  if (!(t.dt > 0.0)) throw Error(ErrorCode::invalid_argument, "mean_speed: dt must be > 0");
  if (t.steps() < 2) throw Error(ErrorCode::invalid_argument, "mean_speed: T >= 2 required");
  double sum = 0.0;
  for (Eigen::Index k = 1; k < t.steps(); ++k) sum += (t.position(k) - t.position(k - 1)).norm() / t.dt;
  return sum / static_cast<double>(t.steps() - 1);
}

struct ScoreRow {
  std::string scenario_id;
  std::string policy;
  SubScores sub;
  double pdms = 0;
  double epdms = 0;
};

/// Agent sub-scores (v2) with the expert's sub-scores as the human reference.
inline ScoreRow score_trajectory(const Trajectory& t, const Scene& s, const std::string& policy,
                                 const ScoringConfig& cfg = {}, const SubScores* human = nullptr) {
  ScoreRow r;
  r.scenario_id = s.scenario_id;
  r.policy = policy;
  r.sub = compute_subscores(t, s, MetricVersion::v2, cfg);
  const SubScores h = human ? *human : compute_subscores(s.expert, s, MetricVersion::v2, cfg);
  r.pdms = pdms(r.sub);
  r.epdms = epdms(r.sub, h);
  return r;
}

inline std::string scores_csv(const std::vector<ScoreRow>& rows) {
  csv::Table t({"scenario_id", "policy", "nc", "dac", "ddc", "tlc", "ep", "ttc", "c", "hc", "lk", "ec", "pdms", "epdms"});
  for (const auto& r : rows) {
    const SubScores& s = r.sub;
    t.cell(r.scenario_id).cell(r.policy);
    for (double v : {s.nc, s.dac, s.ddc, s.tlc, s.ep, s.ttc, s.comfort, s.hc, s.lk, s.ec, r.pdms, r.epdms}) t.cell(v);
    t.end_row();
  }
  return t.str();
}

}  // namespace tandem
