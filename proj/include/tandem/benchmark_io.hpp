#pragma once

// On-disk benchmark: a JSON manifest, one scene document per scene, a long
// trajectory table and the paired feature files.
//
//   bench.json          manifest (seeds, planted failures, file list)
//   scenes/<id>.json    scene documents
//   trajectories.csv    scenario_id,policy,seed,waypoint_index,x,y,theta
//   features_x.csv      slow-policy feature rows
//   features_y.csv      fast-policy feature rows

#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "tandem/benchmark.hpp"
#include "tandem/csv.hpp"
#include "tandem/error.hpp"
#include "tandem/features.hpp"
#include "tandem/scene.hpp"

namespace tandem {

inline constexpr const char* kBenchmarkManifest = "bench.json";

inline PlantedFailure parse_planted_failure(const std::string& s) {
  if (s == "none") return PlantedFailure::none;
  if (s == "vit") return PlantedFailure::vit;
  if (s == "vlm") return PlantedFailure::vlm;
  throw Error(ErrorCode::malformed_row, "unknown planted failure '" + s + "'");
}

inline std::string trajectories_csv(const Benchmark& b) {
  csv::Table t({"scenario_id", "policy", "seed", "waypoint_index", "x", "y", "theta"});
  for (const auto& bs : b.scenes)
    for (const auto& [policy, list] : {std::pair{"vit", &bs.vit}, std::pair{"vlm", &bs.vlm}})
      for (std::size_t r = 0; r < list->size(); ++r) {
        const Trajectory& tr = (*list)[r];
        for (Eigen::Index k = 0; k < tr.steps(); ++k)
          t.cell(bs.scene.scenario_id).cell(policy).cell(b.spec.seeds[r]).cell(k).cell(tr.waypoints(k, 0))
              .cell(tr.waypoints(k, 1)).cell(tr.waypoints(k, 2)).end_row();
      }
  return t.str();
}

/// Writes every file of the benchmark under `dir`; returns the paths written.
inline std::vector<std::filesystem::path> save_benchmark(const std::filesystem::path& dir, const Benchmark& b) {
  using nlohmann::json;
  std::vector<std::filesystem::path> written;
  json scenes = json::array();
  for (const auto& bs : b.scenes) {
    const std::string rel = "scenes/" + bs.scene.scenario_id + ".json";
    csv::write_atomic(dir / rel, scene_document(bs.scene));
    written.push_back(dir / rel);
    scenes.push_back({{"id", bs.scene.scenario_id}, {"file", rel}, {"planted", to_string(bs.planted)}, {"attempts", bs.attempts}});
  }
  csv::write_atomic(dir / "trajectories.csv", trajectories_csv(b));
  save_features(dir / "features_x.csv", b.features.x);
  save_features(dir / "features_y.csv", b.features.y);
  for (const char* f : {"trajectories.csv", "features_x.csv", "features_y.csv"}) written.push_back(dir / f);
  const json manifest = {{"version", "BENCH1"},
                         {"seeds", b.spec.seeds},
                         {"horizon", b.spec.horizon},
                         {"dt", b.spec.dt},
                         {"scenes", scenes},
                         {"trajectories", "trajectories.csv"},
                         {"features", {{"x", "features_x.csv"}, {"y", "features_y.csv"}}}};
  csv::write_atomic(dir / kBenchmarkManifest, manifest.dump(1) + "\n");
  written.push_back(dir / kBenchmarkManifest);
  return written;
}

/// Loaded benchmark plus the files it was read from.
struct LoadedBenchmark {
  Benchmark bench;
  std::vector<std::filesystem::path> files;
};

inline LoadedBenchmark load_benchmark(const std::filesystem::path& dir) {
  using nlohmann::json;
  LoadedBenchmark out;
  Benchmark& b = out.bench;
  json m;
  try {
    m = json::parse(csv::read_file(dir / kBenchmarkManifest));
    if (m.at("version").get<std::string>() != "BENCH1") throw Error(ErrorCode::malformed_row, "benchmark manifest version");
    b.spec.seeds = m.at("seeds").get<std::vector<std::uint64_t>>();
    b.spec.horizon = m.at("horizon").get<int>();
    b.spec.dt = m.at("dt").get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::malformed_row, std::string("benchmark manifest: ") + e.what());
  }
  out.files.push_back(dir / kBenchmarkManifest);
  std::map<std::string, std::size_t> index;
  for (const auto& entry : m.at("scenes")) {
    BenchmarkScene bs;
    const std::string rel = entry.at("file").get<std::string>();
    bs.scene = parse_scene(csv::read_file(dir / rel));
    bs.planted = parse_planted_failure(entry.at("planted").get<std::string>());
    bs.attempts = entry.value("attempts", 1);
    if (!index.emplace(bs.scene.scenario_id, b.scenes.size()).second)
      throw Error(ErrorCode::duplicate_id, "benchmark scene " + bs.scene.scenario_id);
    bs.vit.assign(b.spec.seeds.size(), {});
    bs.vlm.assign(b.spec.seeds.size(), {});
    for (auto* list : {&bs.vit, &bs.vlm})
      for (auto& t : *list) {
        t.dt = b.spec.dt;
        t.waypoints = Eigen::MatrixX3d::Constant(b.spec.horizon, 3, std::numeric_limits<double>::quiet_NaN());
      }
    b.scenes.push_back(std::move(bs));
    out.files.push_back(dir / rel);
  }
  b.spec.n_scenes = static_cast<Eigen::Index>(b.scenes.size());

  std::map<std::uint64_t, std::size_t> seed_index;
  for (std::size_t r = 0; r < b.spec.seeds.size(); ++r) seed_index[b.spec.seeds[r]] = r;
  const auto lines = csv::read_lines(dir / m.at("trajectories").get<std::string>());
  if (lines.empty() || lines[0] != "scenario_id,policy,seed,waypoint_index,x,y,theta")
    throw Error(ErrorCode::malformed_row, "trajectories.csv: unexpected header");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = csv::split(lines[i]);
    if (f.size() != 7) throw Error(ErrorCode::malformed_row, "trajectories.csv: expected 7 fields", i);
    const auto sc = index.find(f[0]);
    const auto seed = csv::parse_double(f[2]), k = csv::parse_double(f[3]);
    if (sc == index.end() || !seed || !k || !seed_index.count(static_cast<std::uint64_t>(*seed)) || *k < 0 ||
        *k >= b.spec.horizon || (f[1] != "vit" && f[1] != "vlm"))
      throw Error(ErrorCode::malformed_row, "trajectories.csv: bad key fields", i);
    BenchmarkScene& bs = b.scenes[sc->second];
    Trajectory& t = (f[1] == "vit" ? bs.vit : bs.vlm)[seed_index[static_cast<std::uint64_t>(*seed)]];
    for (int c = 0; c < 3; ++c) {
      const auto v = csv::parse_double(f[static_cast<std::size_t>(4 + c)]);
      if (!v || !std::isfinite(*v)) throw Error(ErrorCode::non_finite_value, "trajectories.csv: bad coordinate", i);
      t.waypoints(static_cast<Eigen::Index>(*k), c) = *v;
    }
  }
  for (const auto& bs : b.scenes)
    for (const auto* list : {&bs.vit, &bs.vlm})
      for (const auto& t : *list)
        if (!t.waypoints.allFinite()) throw Error(ErrorCode::malformed_row, "trajectories.csv: missing waypoints for " + bs.scene.scenario_id);
  out.files.push_back(dir / m.at("trajectories").get<std::string>());

  const auto fx = dir / m.at("features").at("x").get<std::string>();
  const auto fy = dir / m.at("features").at("y").get<std::string>();
  b.features.x = load_features(fx, Level::backbone, Branch::vlm);
  b.features.y = load_features(fy, Level::backbone, Branch::vision);
  b.features.validate();
  out.files.push_back(fx);
  out.files.push_back(fy);
  return out;
}

}  // namespace tandem
