#pragma once

// Synthetic two-policy driving benchmark. Each scene is a gentle arc road
// with a lead vehicle and optional followers and parked cars; the expert
// cruises along the centerline. The two policies are edits of the expert
// (speed scaling, lateral offset, per-seed noise) and each fails outright on
// a planted, mutually exclusive fraction of scenes.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "tandem/error.hpp"
#include "tandem/features.hpp"
#include "tandem/rng.hpp"
#include "tandem/scene.hpp"
#include "tandem/scoring.hpp"
#include "tandem/synth.hpp"

namespace tandem {

enum class FailureMode { rear_end_risk, lateral_drift };

inline const char* to_string(FailureMode m) { return m == FailureMode::rear_end_risk ? "rear_end_risk" : "lateral_drift"; }

inline FailureMode parse_failure_mode(const std::string& s) {
  if (s == "rear_end_risk") return FailureMode::rear_end_risk;
  if (s == "lateral_drift") return FailureMode::lateral_drift;
  throw Error(ErrorCode::config, "unknown failure mode '" + s + "'");
}

struct PolicyStyle {
  double speed_bias = 1.0;    // multiplier on the expert's cruise speed
  double lateral_bias = 0.0;  // m, positive to the left
  double failure_rate = 0.0;
  FailureMode failure_mode = FailureMode::lateral_drift;
};

/// Which policy, if any, carries a planted failure in a scene.
enum class PlantedFailure { none, vit, vlm };

inline const char* to_string(PlantedFailure f) {
  switch (f) {
    case PlantedFailure::none: return "none";
    case PlantedFailure::vit: return "vit";
    case PlantedFailure::vlm: return "vlm";
  }
  return "?";
}

struct BenchmarkSpec {
  Eigen::Index n_scenes = 500;
  PolicyStyle vit{1.0, 0.15, 0.03, FailureMode::lateral_drift};   // fast policy
  PolicyStyle vlm{1.15, -0.1, 0.025, FailureMode::rear_end_risk};  // slow policy
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double difficulty = 0.5;
  double speed_spread = 0.08;  // log-normal sd of the per-scene speed factor
  double seed_speed_noise = 0.01;
  double seed_lateral_noise = 0.03;
  std::uint64_t seed = 0;
  int horizon = 8;
  double dt = 0.5;
  int max_attempts = 16;
  // paired feature rows
  Eigen::Index feature_dim = 32;
  Eigen::Index unique_dim = 4;
  double shared_fraction = 0.7;
  double feature_noise = 0.1;

  void validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::config, "benchmark: " + what); };
    if (n_scenes < 1) fail("n_scenes >= 1 required");
    for (const PolicyStyle* p : {&vit, &vlm}) {
      if (!(p->speed_bias > 0.0)) fail("speed_bias must be > 0");
      if (!(p->failure_rate >= 0.0 && p->failure_rate < 1.0)) fail("failure_rate must lie in [0, 1)");
      if (std::abs(p->lateral_bias) > 0.5) fail("|lateral_bias| must be <= 0.5 m");
    }
    if (vit.failure_rate + vlm.failure_rate > 1.0) fail("failure rates must sum to <= 1");
    if (seeds.empty()) fail("at least one seed required");
    if (!(difficulty >= 0.0 && difficulty <= 1.0)) fail("difficulty must lie in [0, 1]");
    if (!(speed_spread >= 0.0) || !(seed_speed_noise >= 0.0) || !(seed_lateral_noise >= 0.0)) fail("noise levels must be >= 0");
    if (horizon < 2 || !(dt > 0.0)) fail("horizon >= 2 and dt > 0 required");
    if (max_attempts < 1) fail("max_attempts >= 1 required");
  }
};

struct BenchmarkScene {
  Scene scene;
  PlantedFailure planted = PlantedFailure::none;
  std::vector<Trajectory> vit;  // one per seed
  std::vector<Trajectory> vlm;
  int attempts = 1;
};

struct Benchmark {
  BenchmarkSpec spec;
  std::vector<BenchmarkScene> scenes;
  FeaturePairDataset features;  // x = vlm branch, y = vision branch, ids = scenario ids
  PlantedTruth feature_truth;
};

namespace bench_detail {

/// Road frame: arc of constant curvature through the origin.
struct Arc {
  Vec2 origin = Vec2::Zero();
  double theta0 = 0;
  double kappa = 0;

  double heading(double s) const { return theta0 + kappa * s; }

  Vec2 point(double s, double lateral = 0.0) const {
    Vec2 p;
    if (std::abs(kappa) < 1e-12) {
      p = origin + s * geom::heading_vector(theta0);
    } else {
      const double th = heading(s);
      p = origin + Vec2((std::sin(th) - std::sin(theta0)) / kappa, (std::cos(theta0) - std::cos(th)) / kappa);
    }
    const double th = heading(s);
    return p + lateral * Vec2(-std::sin(th), std::cos(th));
  }
};

inline double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

inline double smoothstep_slope(double u) { return u <= 0.0 || u >= 1.0 ? 0.0 : 6.0 * u * (1.0 - u); }

/// Integral of smoothstep(t / ramp) dt from 0 to t (t <= ramp).
inline double smoothstep_integral(double t, double ramp) {
  const double u = std::clamp(t / ramp, 0.0, 1.0);
  return ramp * (u * u * u - 0.5 * u * u * u * u) + std::max(0.0, t - ramp);
}

/// Longitudinal/lateral motion profile in road coordinates.
struct Profile {
  double v0 = 10;
  double speed_factor = 1;
  double lateral = 0;
  double ramp = 4;
  // planted failure edits
  double surge = 0;  // extra arc length reached at the end of the ramp
  double drift = 0;  // extra lateral offset reached at the end of the ramp

  double s(double t) const {
    return v0 * (t + (speed_factor - 1.0) * smoothstep_integral(t, ramp)) + surge * smoothstep(t / ramp);
  }
  double ds(double t) const {
    return v0 * (1.0 + (speed_factor - 1.0) * smoothstep(t / ramp)) + surge * smoothstep_slope(t / ramp) / ramp;
  }
  double l(double t) const { return (lateral + drift) * smoothstep(t / ramp); }
  double dl(double t) const { return (lateral + drift) * smoothstep_slope(t / ramp) / ramp; }
};

inline Trajectory roll_out(const Arc& road, const Profile& p, int steps, double dt) {
  Trajectory t;
  t.dt = dt;
  t.waypoints.resize(steps, 3);
  for (int k = 0; k < steps; ++k) {
    const double time = (k + 1) * dt;
    const double s = p.s(time);
    const Vec2 pos = road.point(s, p.l(time));
    const double th = geom::wrap_angle(road.heading(s) + std::atan2(p.dl(time), p.ds(time)));
    t.waypoints.row(k) << pos.x(), pos.y(), th;
  }
  return t;
}

inline Agent road_agent(const Arc& road, double s0, double lateral, double speed, int steps, double dt,
                        double length = 4.5, double width = 2.0) {
  Agent a;
  a.length = length;
  a.width = width;
  for (int k = 0; k <= steps; ++k) {
    const double s = s0 + speed * k * dt;
    a.positions.push_back(road.point(s, lateral));
    a.headings.push_back(geom::wrap_angle(road.heading(s)));
  }
  return a;
}

/// Maps a unit uniform to zero mean, unit variance.
inline double unit_uniform(double u) { return (u - 0.5) * std::sqrt(12.0); }

struct SceneDraw {
  Arc road;
  double v0 = 10;
  double half_width = 2;
  double lead_gap = 40;
  double lead_speed = 10;
  Eigen::RowVectorXd latent;  // standardized scene attributes for the feature generator
};

inline Scene build_scene(const std::string& id, const BenchmarkSpec& spec, CounterRng& rng, SceneDraw& draw) {
  const double u_speed = rng.uniform(), u_curv = rng.uniform(), u_width = rng.uniform(), u_gap = rng.uniform();
  draw.v0 = 8.0 + 4.0 * u_speed;
  draw.road.theta0 = rng.uniform(-std::numbers::pi, std::numbers::pi);
  draw.road.kappa = (2.0 * u_curv - 1.0) / 300.0;
  draw.half_width = 0.5 * (6.0 - 3.0 * spec.difficulty * u_width);
  draw.lead_gap = 35.0 + 15.0 * u_gap;
  draw.lead_speed = draw.v0 * rng.uniform(1.0, 1.1);
  draw.latent = Eigen::RowVectorXd(4);
  draw.latent << unit_uniform(u_speed), unit_uniform(u_curv), unit_uniform(u_width), unit_uniform(u_gap);

  Scene s;
  s.scenario_id = id;
  s.dt = spec.dt;
  const Arc& road = draw.road;
  s.ego_start = {0.0, 0.0, geom::wrap_angle(road.theta0), draw.v0};
  for (double a = -40.0; a <= 160.0 + 1e-9; a += 2.0) s.centerline.push_back(road.point(a));
  s.direction_field = segment_headings(s.centerline);
  for (double a = -40.0; a <= 160.0 + 1e-9; a += 2.0) s.drivable.push_back(road.point(a, -draw.half_width));
  for (double a = 160.0; a >= -40.0 - 1e-9; a -= 2.0) s.drivable.push_back(road.point(a, draw.half_width));

  const int steps = spec.horizon;
  s.agents.push_back(road_agent(road, draw.lead_gap, 0.0, draw.lead_speed, steps, spec.dt));
  const int max_agents = 1 + static_cast<int>(std::lround(5.0 * spec.difficulty));
  const int n_agents = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(max_agents)));
  for (int i = 1; i < n_agents; ++i) {
    if (rng.uniform() < 0.3) {
      s.agents.push_back(road_agent(road, -rng.uniform(15.0, 25.0), 0.0, draw.v0, steps, spec.dt));
    } else {
      const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
      s.agents.push_back(road_agent(road, rng.uniform(10.0, 100.0), side * (draw.half_width + rng.uniform(2.5, 4.0)), 0.0,
                                    steps, spec.dt));
    }
  }
  if (rng.uniform() < 0.2) {
    s.red_light_zone = geom::Polygon{road.point(150.0, -draw.half_width), road.point(154.0, -draw.half_width),
                                     road.point(154.0, draw.half_width), road.point(150.0, draw.half_width)};
    s.red_light = true;
  }
  Profile expert;
  expert.v0 = draw.v0;
  expert.ramp = steps * spec.dt;
  s.expert = roll_out(road, expert, steps, spec.dt);
  return s;
}

}  // namespace bench_detail

/// Pure function of the benchmark settings: equal settings give bit-identical benchmarks.
inline Benchmark gen_benchmark(const BenchmarkSpec& spec) {
  using namespace bench_detail;
  spec.validate();
  Benchmark out;
  out.spec = spec;
  const auto ids = sequential_ids(spec.n_scenes);
  const CounterRng scene_root(spec.seed, Stream::scenes);
  const CounterRng policy_root(spec.seed, Stream::policies);
  const CounterRng noise_root(spec.seed, Stream::seed_noise);
  const double ramp = spec.horizon * spec.dt;
  Eigen::MatrixXd latent(spec.n_scenes, 4);

  for (Eigen::Index i = 0; i < spec.n_scenes; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    auto prng = policy_root.substream(idx);
    const double u_fail = prng.uniform();
    BenchmarkScene bs;
    bs.planted = u_fail < spec.vit.failure_rate                          ? PlantedFailure::vit
                 : u_fail < spec.vit.failure_rate + spec.vlm.failure_rate ? PlantedFailure::vlm
                                                                            : PlantedFailure::none;
    const double vit_factor = spec.vit.speed_bias * std::exp(spec.speed_spread * prng.normal());
    const double vlm_factor = spec.vlm.speed_bias * std::exp(spec.speed_spread * prng.normal());
    const double drift_side = prng.uniform() < 0.5 ? -1.0 : 1.0;

    bool ok = false;
    for (int attempt = 0; attempt < spec.max_attempts && !ok; ++attempt) {
      auto srng = scene_root.substream(idx).substream(static_cast<std::uint64_t>(attempt));
      SceneDraw draw;
      bs.scene = build_scene(ids[static_cast<std::size_t>(i)], spec, srng, draw);
      bs.attempts = attempt + 1;
      const SubScores human = compute_subscores(bs.scene.expert, bs.scene);
      if (!(human == SubScores::ones())) continue;

      auto make = [&](const PolicyStyle& style, double factor, bool fails, std::uint64_t seed, std::uint64_t which) {
        auto nrng = noise_root.substream(idx).substream(seed).substream(which);
        Profile p;
        p.v0 = draw.v0;
        p.ramp = ramp;
        p.speed_factor = factor * (1.0 + nrng.uniform(-spec.seed_speed_noise, spec.seed_speed_noise));
        p.lateral = style.lateral_bias + nrng.uniform(-spec.seed_lateral_noise, spec.seed_lateral_noise);
        if (fails) {
          if (style.failure_mode == FailureMode::lateral_drift) {
            p.drift = drift_side * (draw.half_width + 1.5);
          } else {
            const double lead_end = draw.lead_gap + draw.lead_speed * ramp;
            p.surge = std::max(0.0, lead_end - p.s(ramp));
          }
        }
        return roll_out(draw.road, p, spec.horizon, spec.dt);
      };
      bs.vit.clear();
      bs.vlm.clear();
      ok = true;
      for (std::uint64_t seed : spec.seeds) {
        bs.vit.push_back(make(spec.vit, vit_factor, bs.planted == PlantedFailure::vit, seed, 0));
        bs.vlm.push_back(make(spec.vlm, vlm_factor, bs.planted == PlantedFailure::vlm, seed, 1));
        // Planted failures must score 0 and everything else must stay collision- and area-clean.
        for (auto [traj, fails] : {std::pair{&bs.vit.back(), bs.planted == PlantedFailure::vit},
                                   std::pair{&bs.vlm.back(), bs.planted == PlantedFailure::vlm}}) {
          const SubScores sub = compute_subscores(*traj, bs.scene, MetricVersion::v2);
          if (fails ? pdms(sub) != 0.0 : (sub.nc < 1.0 || sub.dac < 1.0)) ok = false;
        }
      }
      if (ok) latent.row(i) = draw.latent;
    }
    if (!ok)
      throw Error(ErrorCode::infeasible_scene, "scene " + ids[static_cast<std::size_t>(i)] + " (benchmark seed " +
                                                   std::to_string(spec.seed) + ") infeasible after " +
                                                   std::to_string(spec.max_attempts) + " attempts");
    out.scenes.push_back(std::move(bs));
  }

  PlantedSpec fs;
  fs.n = spec.n_scenes;
  fs.d_x = fs.d_y = spec.feature_dim;
  fs.shared_dim = 4;
  fs.unique_dim_x = fs.unique_dim_y = spec.unique_dim;
  fs.shared_fraction = spec.shared_fraction;
  fs.noise_std = spec.feature_noise;
  fs.seed = spec.seed;
  if (spec.n_scenes >= 2) {
    PlantedPair pair = gen_paired_features(fs, latent);
    out.features = std::move(pair.data);
    out.feature_truth = std::move(pair.truth);
  }
  return out;
}

}  // namespace tandem
