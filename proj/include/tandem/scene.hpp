#pragma once

// Desk-scale 2D driving scenes and trajectories, plus the SCN1 JSON document
// format used to store them.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tandem/error.hpp"
#include "tandem/geometry.hpp"

namespace tandem {

using geom::Vec2;

/// Waypoints (x, y, theta) at t = dt, 2 dt, ..., T dt after the ego start.
struct Trajectory {
  Eigen::MatrixX3d waypoints;
  double dt = 0.5;

  Eigen::Index steps() const { return waypoints.rows(); }
  Vec2 position(Eigen::Index k) const { return waypoints.row(k).head<2>().transpose(); }
  double heading(Eigen::Index k) const { return waypoints(k, 2); }

  void validate() const {
    if (waypoints.rows() < 2) throw Error(ErrorCode::invalid_argument, "trajectory needs T >= 2 waypoints");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw Error(ErrorCode::invalid_argument, "trajectory dt must be > 0");
    if (!waypoints.allFinite()) throw Error(ErrorCode::non_finite_value, "trajectory waypoints must be finite");
  }
};

struct EgoState {
  double x = 0;
  double y = 0;
  double theta = 0;
  double v = 0;

  Vec2 position() const { return {x, y}; }
};

/// Other road user: pose per step for steps 0..T (index 0 is the start time).
struct Agent {
  std::vector<Vec2> positions;
  std::vector<double> headings;
  double length = 4.5;
  double width = 2.0;

  geom::OrientedBox box(std::size_t step) const { return {positions[step], headings[step], length, width}; }
};

struct Scene {
  std::string scenario_id;
  double dt = 0.5;
  EgoState ego_start;
  std::vector<Agent> agents;
  geom::Polygon drivable;
  std::vector<Vec2> centerline;
  std::vector<double> direction_field;  // allowed heading per centerline segment
  Trajectory expert;
  std::optional<geom::Polygon> red_light_zone;
  bool red_light = false;

  Eigen::Index horizon() const { return expert.steps(); }

  void validate() const {
    expert.validate();
    if (std::abs(expert.dt - dt) > 1e-12) throw Error(ErrorCode::invalid_argument, "scene: expert dt differs from scene dt");
    geom::validate_polygon(drivable, "drivable area");
    if (red_light_zone) geom::validate_polygon(*red_light_zone, "red light zone");
    if (centerline.size() < 2) throw Error(ErrorCode::invalid_argument, "scene: centerline needs >= 2 points");
    if (direction_field.size() != centerline.size() - 1)
      throw Error(ErrorCode::dimension_mismatch, "scene: direction_field needs one heading per centerline segment");
    const auto steps = static_cast<std::size_t>(horizon()) + 1;
    for (const auto& a : agents) {
      if (a.positions.size() < steps || a.headings.size() < steps)
        throw Error(ErrorCode::dimension_mismatch, "scene: agent pose lists must cover steps 0..T");
      if (!(a.length > 0.0 && a.width > 0.0)) throw Error(ErrorCode::invalid_argument, "scene: agent extent must be > 0");
    }
  }
};

/// Centerline direction field from segment headings.
inline std::vector<double> segment_headings(const std::vector<Vec2>& line) {
  std::vector<double> out;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const Vec2 d = line[i + 1] - line[i];
    out.push_back(std::atan2(d.y(), d.x()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// SCN1 documents

namespace scene_json {

using nlohmann::json;

inline json points(const std::vector<Vec2>& pts) {
  json a = json::array();
  for (const auto& p : pts) a.push_back({p.x(), p.y()});
  return a;
}

inline std::vector<Vec2> read_points(const json& a, const char* what) {
  if (!a.is_array()) throw Error(ErrorCode::malformed_row, std::string("scene: '") + what + "' must be an array");
  std::vector<Vec2> out;
  for (const auto& p : a) {
    if (!p.is_array() || p.size() != 2) throw Error(ErrorCode::malformed_row, std::string("scene: bad point in ") + what);
    out.emplace_back(p[0].get<double>(), p[1].get<double>());
  }
  return out;
}

inline json trajectory(const Trajectory& t) {
  json w = json::array();
  for (Eigen::Index k = 0; k < t.steps(); ++k) w.push_back({t.waypoints(k, 0), t.waypoints(k, 1), t.waypoints(k, 2)});
  return {{"dt", t.dt}, {"waypoints", w}};
}

inline Trajectory read_trajectory(const json& j) {
  Trajectory t;
  t.dt = j.at("dt").get<double>();
  const json& w = j.at("waypoints");
  t.waypoints.resize(static_cast<Eigen::Index>(w.size()), 3);
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (!w[k].is_array() || w[k].size() != 3) throw Error(ErrorCode::malformed_row, "trajectory: waypoint needs 3 values");
    for (int c = 0; c < 3; ++c) t.waypoints(static_cast<Eigen::Index>(k), c) = w[k][static_cast<std::size_t>(c)].get<double>();
  }
  return t;
}

}  // namespace scene_json

inline nlohmann::json scene_to_json(const Scene& s) {
  using namespace scene_json;
  json agents = json::array();
  for (const auto& a : s.agents)
    agents.push_back({{"length", a.length}, {"width", a.width}, {"positions", points(a.positions)}, {"headings", a.headings}});
  json doc = {{"version", "SCN1"},
              {"scenario_id", s.scenario_id},
              {"dt", s.dt},
              {"ego_start", {{"x", s.ego_start.x}, {"y", s.ego_start.y}, {"theta", s.ego_start.theta}, {"v", s.ego_start.v}}},
              {"agents", agents},
              {"drivable", points(s.drivable)},
              {"centerline", points(s.centerline)},
              {"direction_field", s.direction_field},
              {"expert", trajectory(s.expert)},
              {"red_light", s.red_light}};
  doc["red_light_zone"] = s.red_light_zone ? points(*s.red_light_zone) : json(nullptr);
  return doc;
}

inline Scene scene_from_json(const nlohmann::json& doc) {
  using namespace scene_json;
  try {
    if (doc.at("version").get<std::string>() != "SCN1") throw Error(ErrorCode::malformed_row, "scene: version must be SCN1");
    Scene s;
    s.scenario_id = doc.at("scenario_id").get<std::string>();
    s.dt = doc.at("dt").get<double>();
    const json& e = doc.at("ego_start");
    s.ego_start = {e.at("x").get<double>(), e.at("y").get<double>(), e.at("theta").get<double>(), e.at("v").get<double>()};
    for (const auto& a : doc.at("agents")) {
      Agent ag;
      ag.length = a.at("length").get<double>();
      ag.width = a.at("width").get<double>();
      ag.positions = read_points(a.at("positions"), "agent positions");
      ag.headings = a.at("headings").get<std::vector<double>>();
      s.agents.push_back(std::move(ag));
    }
    s.drivable = read_points(doc.at("drivable"), "drivable");
    s.centerline = read_points(doc.at("centerline"), "centerline");
    s.direction_field = doc.at("direction_field").get<std::vector<double>>();
    s.expert = read_trajectory(doc.at("expert"));
    if (!doc.at("red_light_zone").is_null()) s.red_light_zone = read_points(doc.at("red_light_zone"), "red_light_zone");
    s.red_light = doc.at("red_light").get<bool>();
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::malformed_row, std::string("scene document: ") + ex.what());
  }
}

inline std::string scene_document(const Scene& s) { return scene_to_json(s).dump(1) + "\n"; }

inline Scene parse_scene(const std::string& text) {
  try {
    return scene_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& ex) {
    throw Error(ErrorCode::malformed_row, std::string("scene document: ") + ex.what());
  }
}

}  // namespace tandem
