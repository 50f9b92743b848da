// tandem: command-line front end for the feature-similarity, autoencoder,
// gating, scoring and routing tools.
//
// Every command writes into --out (default $TANDEM_OUT, else ./tandem_out):
//   <primary CSV artifacts>
//   <cmd>.config.json     resolved options (defaults < --config file < flags)
//   <cmd>.manifest.json   SHA-256 of every input and output
//   <cmd>.meta.json       wall-clock timestamps, kept apart from the artifacts
//
// Exit codes: 0 ok, 2 configuration, 3 data, 4 numerical failure.

#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <tuple>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tandem/benchmark.hpp"
#include "tandem/benchmark_io.hpp"
#include "tandem/features.hpp"
#include "tandem/gating.hpp"
#include "tandem/sae.hpp"
#include "tandem/scorer.hpp"
#include "tandem/scoring.hpp"
#include "tandem/selection.hpp"
#include "tandem/similarity.hpp"
#include "tandem/synth.hpp"

namespace {

using namespace tandem;
using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kConfigVersion = 1;

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCode::io_failure, "sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string file_sha256(const fs::path& p) { return sha256_hex(csv::read_file(p)); }

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<double> parse_doubles(const std::string& list, const char* what) {
  std::vector<double> out;
  if (list.empty()) return out;
  for (const auto& f : csv::split(list)) {
    const auto v = csv::parse_double(f);
    if (!v || !std::isfinite(*v)) throw Error(ErrorCode::config, std::string(what) + ": bad number '" + f + "'");
    out.push_back(*v);
  }
  return out;
}

std::vector<std::string> parse_strings(const std::string& list) {
  std::vector<std::string> out;
  if (list.empty()) return out;
  for (auto& f : csv::split(list)) out.push_back(f);
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "True") return true;
  if (s == "false" || s == "0" || s == "False") return false;
  throw Error(ErrorCode::config, "expected true/false, got '" + s + "'");
}

/// Drops the header line of a CSV string.
std::string body(const std::string& csv_text) {
  const auto nl = csv_text.find('\n');
  return nl == std::string::npos ? std::string() : csv_text.substr(nl + 1);
}

// ---------------------------------------------------------------------------
// Run bookkeeping

struct Run {
  std::string command;
  fs::path out;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::string started = utc_now();

  void input(const fs::path& p) { inputs.push_back(fs::absolute(p).lexically_normal()); }
  void write(const std::string& name, const std::string& content) {
    csv::write_atomic(out / name, content);
    outputs.push_back(out / name);
  }
};

json hashed(const std::vector<fs::path>& paths, const fs::path* relative_to) {
  json a = json::array();
  for (const auto& p : paths)
    a.push_back({{"path", relative_to ? fs::relative(p, *relative_to).generic_string() : p.generic_string()},
                 {"sha256", file_sha256(p)}});
  return a;
}

void finish(Run& run, const json& resolved) {
  run.write(run.command + ".config.json", resolved.dump(1) + "\n");
  const json manifest = {{"command", run.command},
                         {"inputs", hashed(run.inputs, nullptr)},
                         {"outputs", hashed(run.outputs, &run.out)}};
  csv::write_atomic(run.out / (run.command + ".manifest.json"), manifest.dump(1) + "\n");
  const json meta = {{"command", run.command}, {"started", run.started}, {"finished", utc_now()}};
  csv::write_atomic(run.out / (run.command + ".meta.json"), meta.dump(1) + "\n");
}

// ---------------------------------------------------------------------------
// Shared loaders

FeaturePairDataset load_pair(Run& run, const std::string& x, const std::string& y) {
  run.input(x);
  run.input(y);
  const auto p = pair(load_features(x, Level::backbone, Branch::vlm), load_features(y, Level::backbone, Branch::vision));
  if (!p.dropped_x.empty() || !p.dropped_y.empty())
    std::cerr << "note: " << p.dropped_x.size() << " x-only and " << p.dropped_y.size() << " y-only ids dropped\n";
  return p.dataset;
}

/// Per-scenario policy scores from a scores CSV (policy rows "vlm" and "vit").
std::vector<ScenarioScores> load_branch_scores(Run& run, const std::string& path, const std::string& column) {
  run.input(path);
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw Error(ErrorCode::empty_dataset, path + " is empty");
  const auto header = csv::split(lines[0]);
  std::size_t col = header.size();
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == column) col = i;
  if (header.size() < 2 || header[0] != "scenario_id" || header[1] != "policy" || col == header.size())
    throw Error(ErrorCode::malformed_row, path + ": expected scenario_id,policy,... with a '" + column + "' column");
  std::map<std::string, std::pair<std::optional<double>, std::optional<double>>> by_id;
  std::vector<std::string> order;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = csv::split(lines[i]);
    if (f.size() != header.size()) throw Error(ErrorCode::malformed_row, path + ": wrong field count", i);
    const auto v = csv::parse_double(f[col]);
    if (!v || !std::isfinite(*v)) throw Error(ErrorCode::non_finite_value, path + ": bad score", i);
    if (!by_id.count(f[0])) order.push_back(f[0]);
    auto& slot = by_id[f[0]];
    if (f[1] == "vlm") slot.first = *v;
    else if (f[1] == "vit") slot.second = *v;
  }
  std::vector<ScenarioScores> out;
  for (const auto& id : order) {
    const auto& s = by_id[id];
    if (!s.first || !s.second) throw Error(ErrorCode::missing_score, "scenario " + id + " lacks a vlm or vit score");
    out.push_back({id, *s.first, *s.second});
  }
  return out;
}

/// Keeps only rows whose ids have scores, in score order.
FeaturePairDataset restrict_to(const FeaturePairDataset& d, const std::vector<ScenarioScores>& scores) {
  std::map<std::string, Eigen::Index> row;
  for (Eigen::Index i = 0; i < d.n(); ++i) row[d.x.sample_ids[static_cast<std::size_t>(i)]] = i;
  std::vector<Eigen::Index> keep;
  for (const auto& s : scores) {
    auto it = row.find(s.scenario_id);
    if (it == row.end()) throw Error(ErrorCode::missing_score, "no feature row for scored scenario " + s.scenario_id);
    keep.push_back(it->second);
  }
  FeaturePairDataset out{select_rows(d.x, keep), select_rows(d.y, keep), d.split};
  out.validate();
  return out;
}

Benchmark load_bench(Run& run, const std::string& dir) {
  auto lb = load_benchmark(dir);
  for (const auto& f : lb.files) run.input(f);
  return std::move(lb.bench);
}

std::size_t seed_slot(const Benchmark& b, int index) {
  if (index < 0 || static_cast<std::size_t>(index) >= b.spec.seeds.size())
    throw Error(ErrorCode::config, "seed index out of range for this benchmark");
  return static_cast<std::size_t>(index);
}

std::string metrics_csv(const SaeMetrics& m) {
  csv::Table t({"r2_full_x", "r2_full_y", "r2_shared_x", "r2_shared_y", "cka_shared", "r2_cross_x", "r2_cross_y", "gap_x",
                "gap_y", "cka_orig"});
  t.cell(m.r2_full_x).cell(m.r2_full_y).cell(m.r2_shared_x).cell(m.r2_shared_y).cell(m.cka_shared).cell(m.r2_cross_x);
  t.cell(m.r2_cross_y).cell(m.gap_x).cell(m.gap_y).cell(m.cka_orig).end_row();
  return t.str();
}

std::string variance_csv(const VarianceReport& v) {
  csv::Table t({"branch", "var_shared", "var_unique", "covariance_term", "var_residual", "var_total", "identity_error"});
  for (const auto& [name, b] : {std::pair{"x", &v.x}, std::pair{"y", &v.y}})
    t.cell(name).cell(b->var_shared).cell(b->var_unique).cell(b->covariance_term).cell(b->var_residual)
        .cell(b->var_total).cell(b->identity_error()).end_row();
  return t.str();
}

// ---------------------------------------------------------------------------
// Option groups

struct SaeOptions {
  SaeTrainConfig train;
  SaeLossWeights weights;
  std::string raw_mse = "false";

  void add(CLI::App* c) {
    c->add_option("--epochs", train.epochs, "training epochs")->capture_default_str();
    c->add_option("--batch-size", train.batch_size, "mini-batch rows")->capture_default_str();
    c->add_option("--lr", train.lr, "Adam step size")->capture_default_str();
    c->add_option("--hidden", train.hidden, "encoder hidden width")->capture_default_str();
    c->add_option("--d-s", train.d_s, "shared latent width")->capture_default_str();
    c->add_option("--d-u", train.d_u, "unique latent width")->capture_default_str();
    c->add_option("--w-rec", weights.rec, "reconstruction weight")->capture_default_str();
    c->add_option("--w-sh", weights.sh, "shared-only reconstruction weight")->capture_default_str();
    c->add_option("--w-cross", weights.cross, "cross reconstruction weight")->capture_default_str();
    c->add_option("--w-vic", weights.vic, "shared-latent alignment weight")->capture_default_str();
    c->add_option("--w-ort", weights.ort, "shared/unique decorrelation weight")->capture_default_str();
    c->add_option("--w-sp", weights.sp, "unique sparsity weight")->capture_default_str();
    c->add_option("--raw-mse", raw_mse, "plain MSE instead of variance-weighted")->capture_default_str();
  }
  void resolve(std::uint64_t seed) {
    train.seed = seed;
    weights.use_raw_mse = parse_bool(raw_mse);
  }
};

struct GateRuleOptions {
  GateConfig cfg;
  void add(CLI::App* c) {
    c->add_option("--tau", cfg.tau, "shared-dominance threshold")->capture_default_str();
    c->add_option("--kappa", cfg.kappa, "sigmoid sharpness")->capture_default_str();
    c->add_option("--tau-strong", cfg.tau_strong, "fallback rule threshold")->capture_default_str();
    c->add_option("--epsilon", cfg.epsilon, "energy floor")->capture_default_str();
  }
};

struct DualOptions {
  DualConfig cfg;
  void add(CLI::App* c) {
    c->add_option("--cost-fast", cfg.cost_fast, "fast policy cost per call")->capture_default_str();
    c->add_option("--cost-slow", cfg.cost_slow, "slow policy cost per call")->capture_default_str();
    c->add_option("--cost-score", cfg.cost_score, "scorer cost per call")->capture_default_str();
    c->add_option("--cost-select", cfg.cost_select, "selection cost per call")->capture_default_str();
  }
};

std::unique_ptr<TrajectoryScorer> make_scorer(Run& run, const std::string& checkpoint, const std::string& oracle) {
  if (parse_bool(oracle)) return std::make_unique<OracleScorer>();
  if (checkpoint.empty()) throw Error(ErrorCode::config, "--scorer checkpoint or --oracle true required");
  run.input(checkpoint);
  return std::make_unique<LearnedScorer>(parse_scorer_checkpoint(csv::read_file(checkpoint)));
}

// ---------------------------------------------------------------------------
// report

std::string markdown_table(const std::string& csv_text) {
  std::istringstream in(csv_text);
  std::string line, out;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = csv::split(line);
    out += "|";
    for (const auto& c : f) out += " " + c + " |";
    out += "\n";
    if (first) {
      out += "|";
      for (std::size_t i = 0; i < f.size(); ++i) out += " --- |";
      out += "\n";
      first = false;
    }
  }
  return out;
}

/// Verifies every manifest's input hashes; throws input_drift on mismatch.
void check_manifests(const fs::path& dir, std::vector<fs::path>& manifests) {
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > 14 && name.ends_with(".manifest.json") && name != "report.manifest.json") manifests.push_back(e.path());
  }
  std::sort(manifests.begin(), manifests.end());
  for (const auto& m : manifests) {
    const json j = json::parse(csv::read_file(m));
    for (const auto& in : j.at("inputs")) {
      const fs::path p = in.at("path").get<std::string>();
      if (!fs::exists(p)) throw Error(ErrorCode::input_drift, m.filename().string() + ": input " + p.string() + " is gone");
      if (file_sha256(p) != in.at("sha256").get<std::string>())
        throw Error(ErrorCode::input_drift, m.filename().string() + ": input " + p.string() + " changed since the run");
    }
    for (const auto& o : j.at("outputs")) {
      const fs::path p = dir / o.at("path").get<std::string>();
      if (!fs::exists(p) || file_sha256(p) != o.at("sha256").get<std::string>())
        throw Error(ErrorCode::input_drift, m.filename().string() + ": artifact " + p.string() + " changed since the run");
    }
  }
}

std::optional<std::string> maybe_read(Run& run, const fs::path& p) {
  if (!fs::exists(p)) return std::nullopt;
  run.input(p);
  return csv::read_file(p);
}

}  // namespace

// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
  CLI::App app{"tandem: paired-representation analysis, trajectory scoring and fast/slow routing"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  const char* env_out = std::getenv("TANDEM_OUT");
  const std::string default_out = env_out && *env_out ? env_out : "tandem_out";

  struct Common {
    std::uint64_t seed = 0;
    std::string config;
    std::string out;
  };
  std::map<std::string, Common> common;
  std::map<std::string, std::function<void(Run&)>> handlers;

  auto command = [&](const std::string& name, const std::string& help) {
    CLI::App* c = app.add_subcommand(name, help);
    Common& k = common[name];
    k.out = default_out;
    c->add_option("--seed", k.seed, "random seed")->capture_default_str();
    c->add_option("--config", k.config, "JSON config file (flags override it)");
    c->add_option("--out", k.out, "output directory (default $TANDEM_OUT)")->capture_default_str();
    return c;
  };

  // gen-features ------------------------------------------------------------
  PlantedSpec planted;
  {
    auto* c = command("gen-features", "paired feature files with planted shared/unique structure");
    c->add_option("--n", planted.n)->capture_default_str();
    c->add_option("--d-x", planted.d_x)->capture_default_str();
    c->add_option("--d-y", planted.d_y)->capture_default_str();
    c->add_option("--shared-dim", planted.shared_dim)->capture_default_str();
    c->add_option("--unique-dim-x", planted.unique_dim_x)->capture_default_str();
    c->add_option("--unique-dim-y", planted.unique_dim_y)->capture_default_str();
    c->add_option("--shared-fraction", planted.shared_fraction)->capture_default_str();
    c->add_option("--noise-std", planted.noise_std)->capture_default_str();
    handlers["gen-features"] = [&](Run& run) {
      planted.seed = common["gen-features"].seed;
      const auto p = gen_paired_features(planted);
      run.write("features_x.csv", features_csv(p.data.x));
      run.write("features_y.csv", features_csv(p.data.y));
      csv::Table t({"quantity", "value"});
      t.cell("shared_fraction").cell(p.truth.shared_fraction).end_row();
      t.cell("unique_fraction").cell(p.truth.unique_fraction).end_row();
      t.cell("noise_fraction").cell(p.truth.noise_fraction).end_row();
      run.write("planted_truth.csv", t.str());
    };
  }

  // gen-benchmark -----------------------------------------------------------
  BenchmarkSpec bench_spec;
  std::string bench_seeds = "1,2,3", vit_mode = "lateral_drift", vlm_mode = "rear_end_risk";
  {
    auto* c = command("gen-benchmark", "synthetic two-policy driving benchmark");
    c->add_option("--n-scenes", bench_spec.n_scenes)->capture_default_str();
    c->add_option("--vit-speed-bias", bench_spec.vit.speed_bias)->capture_default_str();
    c->add_option("--vit-lateral-bias", bench_spec.vit.lateral_bias)->capture_default_str();
    c->add_option("--vit-failure-rate", bench_spec.vit.failure_rate)->capture_default_str();
    c->add_option("--vit-failure-mode", vit_mode)->capture_default_str();
    c->add_option("--vlm-speed-bias", bench_spec.vlm.speed_bias)->capture_default_str();
    c->add_option("--vlm-lateral-bias", bench_spec.vlm.lateral_bias)->capture_default_str();
    c->add_option("--vlm-failure-rate", bench_spec.vlm.failure_rate)->capture_default_str();
    c->add_option("--vlm-failure-mode", vlm_mode)->capture_default_str();
    c->add_option("--seeds", bench_seeds, "comma-separated per-run noise seeds")->capture_default_str();
    c->add_option("--difficulty", bench_spec.difficulty)->capture_default_str();
    c->add_option("--horizon", bench_spec.horizon)->capture_default_str();
    c->add_option("--dt", bench_spec.dt)->capture_default_str();
    handlers["gen-benchmark"] = [&](Run& run) {
      bench_spec.seed = common["gen-benchmark"].seed;
      bench_spec.vit.failure_mode = parse_failure_mode(vit_mode);
      bench_spec.vlm.failure_mode = parse_failure_mode(vlm_mode);
      bench_spec.seeds.clear();
      for (double s : parse_doubles(bench_seeds, "--seeds")) {
        if (s < 0 || s != std::floor(s)) throw Error(ErrorCode::config, "--seeds must be non-negative integers");
        bench_spec.seeds.push_back(static_cast<std::uint64_t>(s));
      }
      const Benchmark b = gen_benchmark(bench_spec);
      for (auto& p : save_benchmark(run.out, b)) run.outputs.push_back(p);
    };
  }

  // cka / cca / procrustes / project2d ---------------------------------------
  std::string x_path, y_path;
  auto add_pair_inputs = [&](CLI::App* c) {
    c->add_option("--x", x_path, "first feature CSV")->required();
    c->add_option("--y", y_path, "second feature CSV")->required();
  };
  {
    auto* c = command("cka", "linear CKA between two feature files");
    add_pair_inputs(c);
    handlers["cka"] = [&](Run& run) {
      const auto d = load_pair(run, x_path, y_path);
      const double v = linear_cka(d.x, d.y);
      csv::Table t({"metric", "value"});
      t.cell("cka").cell(v).end_row();
      t.cell("n").cell(d.n()).end_row();
      run.write("cka.csv", t.str());
      std::cout << "cka=" << csv::format_double(v) << "\n";
    };
  }
  double cca_eta = 0.99, cca_ridge = 1e-8;
  std::string cca_taus = "0.5,0.8,0.9";
  {
    auto* c = command("cca", "canonical correlations and aligned energy");
    add_pair_inputs(c);
    c->add_option("--eta", cca_eta, "retained PCA variance")->capture_default_str();
    c->add_option("--ridge", cca_ridge)->capture_default_str();
    c->add_option("--taus", cca_taus, "correlation thresholds for aligned energy")->capture_default_str();
    handlers["cca"] = [&](Run& run) {
      const auto d = load_pair(run, x_path, y_path);
      const CcaResult r = cca(d, cca_eta, cca_ridge);
      csv::Table s({"index", "rho"});
      for (Eigen::Index i = 0; i < r.k(); ++i) s.cell(i).cell(r.rho(i)).end_row();
      run.write("cca_spectrum.csv", s.str());
      csv::Table a({"side", "tau", "count", "frac"});
      for (double tau : parse_doubles(cca_taus, "--taus")) {
        const auto e = aligned_energy(d, r, tau);
        a.cell("x").cell(tau).cell(e.count_above).cell(e.frac_x).end_row();
        a.cell("y").cell(tau).cell(e.count_above).cell(e.frac_y).end_row();
      }
      run.write("aligned_energy.csv", a.str());
      const Eigen::Index top = std::min<Eigen::Index>(10, r.k());
      if (top > 0) std::cout << "mean_rho_top" << top << "=" << csv::format_double(cca_mean_at_k(r, top)) << "\n";
    };
  }
  {
    auto* c = command("procrustes", "orthogonal map from --x onto --y");
    add_pair_inputs(c);
    handlers["procrustes"] = [&](Run& run) {
      const auto d = load_pair(run, x_path, y_path);
      const auto m = procrustes(center(d.x), center(d.y));
      csv::Table t({"metric", "value"});
      t.cell("residual").cell(m.residual).end_row();
      t.cell("relative_residual").cell(m.residual / std::max(center(d.y).values.norm(), 1e-300)).end_row();
      run.write("procrustes.csv", t.str());
      std::vector<std::string> header;
      for (Eigen::Index j = 0; j < m.q.cols(); ++j) header.push_back("q" + std::to_string(j));
      csv::Table q(header);
      for (Eigen::Index i = 0; i < m.q.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.q.cols(); ++j) q.cell(m.q(i, j));
        q.end_row();
      }
      run.write("procrustes_map.csv", q.str());
    };
  }
  std::string project_inputs;
  {
    auto* c = command("project2d", "shared 2D PCA projection of several feature files");
    c->add_option("--inputs", project_inputs, "comma-separated model=path pairs")->required();
    handlers["project2d"] = [&](Run& run) {
      std::vector<LabeledFeatures> clouds;
      for (const auto& item : parse_strings(project_inputs)) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) throw Error(ErrorCode::config, "--inputs entries must be model=path");
        const std::string path = item.substr(eq + 1);
        run.input(path);
        clouds.push_back({item.substr(0, eq), load_features(path, Level::backbone, Branch::vlm)});
      }
      const auto table = project_2d(clouds);
      run.write("projection.csv", table.csv());
      run.write("projection_summary.csv", table.summary_csv());
    };
  }

  // sae-train / sae-eval / sae-sweep / shuffle-control -----------------------
  SaeOptions sae_opts;
  {
    auto* c = command("sae-train", "train the shared/unique autoencoder");
    add_pair_inputs(c);
    sae_opts.add(c);
    handlers["sae-train"] = [&](Run& run) {
      sae_opts.resolve(common["sae-train"].seed);
      const auto d = load_pair(run, x_path, y_path);
      const SaeFit fit = sae_train(d, sae_opts.weights, sae_opts.train);
      run.write("sae.ckpt", sae_checkpoint(fit.model));
      run.write("sae_history.csv", fit.history.csv());
      run.write("sae_metrics.csv", metrics_csv(sae_metrics(fit.model, d)));
      run.write("variance.csv", variance_csv(variance_attribution(fit.model, d)));
    };
  }
  std::string model_path;
  {
    auto* c = command("sae-eval", "evaluate a trained autoencoder on feature files");
    add_pair_inputs(c);
    c->add_option("--model", model_path, "autoencoder checkpoint")->required();
    handlers["sae-eval"] = [&](Run& run) {
      const auto d = load_pair(run, x_path, y_path);
      run.input(model_path);
      const SaeModel m = load_sae(model_path);
      run.write("sae_metrics.csv", metrics_csv(sae_metrics(m, d)));
      run.write("variance.csv", variance_csv(variance_attribution(m, d)));
    };
  }
  double train_fraction = 0.8;
  std::string sweep_cross = "0,0.1,0.2,0.5,1", sweep_raw = "false,true";
  {
    auto* c = command("sae-sweep", "autoencoder grid over loss normalization and cross weight");
    add_pair_inputs(c);
    sae_opts.add(c);
    c->add_option("--train-fraction", train_fraction, "leading rows used for training")->capture_default_str();
    c->add_option("--cross-weights", sweep_cross)->capture_default_str();
    c->add_option("--raw-mse-grid", sweep_raw)->capture_default_str();
    handlers["sae-sweep"] = [&](Run& run) {
      sae_opts.resolve(common["sae-sweep"].seed);
      const auto d = load_pair(run, x_path, y_path);
      if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw Error(ErrorCode::config, "--train-fraction must lie in (0, 1)");
      const auto [train, eval] = split_rows(d, static_cast<Eigen::Index>(std::floor(train_fraction * static_cast<double>(d.n()))));
      std::vector<SweepCell> grid;
      for (const auto& raw : parse_strings(sweep_raw))
        for (double w : parse_doubles(sweep_cross, "--cross-weights")) grid.push_back({parse_bool(raw), w});
      run.write("sae_sweep.csv", sae_sweep(train, eval, grid, sae_opts.weights, sae_opts.train, fs::path(x_path).stem().string()).csv());
    };
  }
  {
    auto* c = command("shuffle-control", "retrain on shuffled pairs and compare similarities");
    add_pair_inputs(c);
    sae_opts.add(c);
    handlers["shuffle-control"] = [&](Run& run) {
      const auto seed = common["shuffle-control"].seed;
      sae_opts.resolve(seed);
      const auto d = load_pair(run, x_path, y_path);
      const auto r = shuffled_pair_control(d, sae_opts.weights, sae_opts.train, seed);
      csv::Table t({"pairing", "cka_orig", "cka_shared"});
      t.cell("true").cell(r.true_pairing.cka_orig).cell(r.true_pairing.cka_shared).end_row();
      t.cell("shuffled").cell(r.shuffled.cka_orig).cell(r.shuffled.cka_shared).end_row();
      run.write("shuffle_control.csv", t.str());
    };
  }

  // gating ------------------------------------------------------------------
  GateRuleOptions gate_rule;
  std::string scores_path, score_column = "pdms", strategies = "more_unique,shared_conditional,smoothed,vit_fallback";
  std::string gate_taus = "0.5,0.6,0.7,0.8,0.9";
  auto add_gate_inputs = [&](CLI::App* c) {
    add_pair_inputs(c);
    c->add_option("--scores", scores_path, "scores CSV with vlm and vit rows per scenario")->required();
    c->add_option("--score-column", score_column, "score column to aggregate")->capture_default_str();
  };
  auto rule_indicators = [&](Run& run, const FeaturePairDataset& d) {
    run.input(model_path);
    const SaeModel m = load_sae(model_path);
    std::vector<GateIndicators> ind;
    for (const auto& f : energy_decomposition(m, d)) ind.push_back(gate_indicators(f, gate_rule.cfg.epsilon));
    return ind;
  };
  {
    auto* c = command("gate-rules", "rule-based branch gating from autoencoder energies");
    add_gate_inputs(c);
    c->add_option("--model", model_path, "autoencoder checkpoint")->required();
    gate_rule.add(c);
    c->add_option("--strategies", strategies)->capture_default_str();
    c->add_option("--taus", gate_taus, "thresholds for the sweep table")->capture_default_str();
    handlers["gate-rules"] = [&](Run& run) {
      gate_rule.cfg.validate();
      const auto scores = load_branch_scores(run, scores_path, score_column);
      const auto d = restrict_to(load_pair(run, x_path, y_path), scores);
      const auto ind = rule_indicators(run, d);
      std::vector<GateStrategy> list;
      for (const auto& s : parse_strings(strategies)) list.push_back(parse_gate_strategy(s));
      for (auto s : list) run.write(std::string("gate_decisions_") + to_string(s) + ".csv", decisions_csv(rule_decisions(d.x.sample_ids, ind, s, gate_rule.cfg)));
      run.write("gate_sweep.csv", threshold_sweep(d.x.sample_ids, ind, scores, list, parse_doubles(gate_taus, "--taus"), gate_rule.cfg).csv());
    };
  }
  GateTrainConfig gate_train_cfg;
  std::string gate_input = "combined";
  {
    auto* c = command("gate-train", "train the learned branch gate");
    add_gate_inputs(c);
    c->add_option("--epochs", gate_train_cfg.epochs)->capture_default_str();
    c->add_option("--batch-size", gate_train_cfg.batch_size)->capture_default_str();
    c->add_option("--lr", gate_train_cfg.lr)->capture_default_str();
    c->add_option("--hidden", gate_train_cfg.hidden)->capture_default_str();
    c->add_option("--input", gate_input, "concat, difference or combined")->capture_default_str();
    handlers["gate-train"] = [&](Run& run) {
      gate_train_cfg.seed = common["gate-train"].seed;
      gate_train_cfg.input = parse_gate_input(gate_input);
      const auto scores = load_branch_scores(run, scores_path, score_column);
      const auto d = restrict_to(load_pair(run, x_path, y_path), scores);
      const auto set = make_gate_training_set(d, scores);
      const GateModel m = learned_gate_train(set.x, set.y, set.labels, gate_train_cfg);
      run.write("gate.ckpt", gate_checkpoint(m));
      run.write("gate_decisions_learned.csv", decisions_csv(learned_gate_decisions(m, d)));
      if (set.dropped_ties > 0) std::cerr << "note: " << set.dropped_ties << " tied scenarios left out of training\n";
    };
  }
  std::string gate_path;
  {
    auto* c = command("gate-eval", "realized score of gating strategies against per-branch bounds");
    add_gate_inputs(c);
    c->add_option("--model", model_path, "autoencoder checkpoint (enables the rule strategies)");
    c->add_option("--gate", gate_path, "learned gate checkpoint");
    gate_rule.add(c);
    handlers["gate-eval"] = [&](Run& run) {
      gate_rule.cfg.validate();
      const auto scores = load_branch_scores(run, scores_path, score_column);
      const auto d = restrict_to(load_pair(run, x_path, y_path), scores);
      csv::Table t({"method", "realized_mean", "vlm_mean", "vit_mean", "oracle_mean", "min_mean", "vlm_choices", "n"});
      auto row = [&](const std::string& name, const std::vector<GateDecision>& dec) {
        const auto e = gate_evaluate(dec, scores);
        t.cell(name).cell(e.realized_mean).cell(e.vlm_mean).cell(e.vit_mean).cell(e.oracle_mean).cell(e.min_mean)
            .cell(e.vlm_choices).cell(e.n).end_row();
      };
      for (auto choice : {GateChoice::vlm, GateChoice::vit}) {
        std::vector<GateDecision> dec;
        for (const auto& id : d.x.sample_ids) dec.push_back({id, choice == GateChoice::vlm ? 1.0 : -1.0, choice});
        row(std::string("always_") + to_string(choice), dec);
      }
      if (!model_path.empty()) {
        const auto ind = rule_indicators(run, d);
        for (auto s : all_gate_strategies()) row(to_string(s), rule_decisions(d.x.sample_ids, ind, s, gate_rule.cfg));
      }
      if (!gate_path.empty()) {
        run.input(gate_path);
        row("learned", learned_gate_decisions(parse_gate_checkpoint(csv::read_file(gate_path)), d));
      }
      run.write("gate_eval.csv", t.str());
    };
  }

  // scoring and selection ---------------------------------------------------
  std::string bench_dir;
  int seed_index = 0;
  auto add_bench = [&](CLI::App* c) {
    c->add_option("--bench", bench_dir, "benchmark directory")->required();
    c->add_option("--seed-index", seed_index, "which per-run trajectory set to use")->capture_default_str();
  };
  {
    auto* c = command("score", "sub-scores and composite scores of both policies");
    add_bench(c);
    handlers["score"] = [&](Run& run) {
      const Benchmark b = load_bench(run, bench_dir);
      const std::size_t r = seed_slot(b, seed_index);
      std::vector<ScoreRow> rows;
      for (const auto& bs : b.scenes) {
        const SubScores human = compute_subscores(bs.scene.expert, bs.scene);
        rows.push_back(score_trajectory(bs.vlm[r], bs.scene, "vlm", {}, &human));
        rows.push_back(score_trajectory(bs.vit[r], bs.scene, "vit", {}, &human));
      }
      run.write("scores.csv", scores_csv(rows));
    };
  }
  std::string alphas = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
  {
    auto* c = command("bon", "oracle best-of-2 and best-of-candidates");
    add_bench(c);
    c->add_option("--alphas", alphas, "interpolation weights")->capture_default_str();
    handlers["bon"] = [&](Run& run) {
      const Benchmark b = load_bench(run, bench_dir);
      const std::size_t r = seed_slot(b, seed_index);
      const auto as = parse_doubles(alphas, "--alphas");
      csv::Table t({"scenario_id", "vlm", "vit", "best_of_2", "best_of_n", "alpha"});
      double s_vlm = 0, s_vit = 0, s2 = 0, sn = 0;
      int violations = 0;
      for (const auto& bs : b.scenes) {
        const auto cands = interpolate_candidates(bs.vit[r], bs.vlm[r], as);
        const Selection all = oracle_best_of_n(cands, bs.scene);
        const double v = all.scores.front(), f = all.scores.back(), two = std::max(v, f);
        violations += all.score < two;
        s_vlm += v, s_vit += f, s2 += two, sn += all.score;
        t.cell(bs.scene.scenario_id).cell(v).cell(f).cell(two).cell(all.score).cell(all.alpha).end_row();
      }
      run.write("bon.csv", t.str());
      const double n = static_cast<double>(b.scenes.size());
      csv::Table s({"metric", "value"});
      s.cell("vlm_mean").cell(s_vlm / n).end_row();
      s.cell("vit_mean").cell(s_vit / n).end_row();
      s.cell("best_of_2_mean").cell(s2 / n).end_row();
      s.cell("best_of_n_mean").cell(sn / n).end_row();
      s.cell("superset_violations").cell(violations).end_row();
      run.write("bon_summary.csv", s.str());
    };
  }
  ScorerTrainConfig scorer_cfg;
  {
    auto* c = command("scorer-train", "train the learned trajectory scorer on candidate sets");
    add_bench(c);
    c->add_option("--train-fraction", train_fraction, "leading scenes used for training")->capture_default_str();
    c->add_option("--alphas", alphas, "interpolation weights")->capture_default_str();
    c->add_option("--epochs", scorer_cfg.epochs)->capture_default_str();
    c->add_option("--batch-scenes", scorer_cfg.groups_per_batch)->capture_default_str();
    c->add_option("--lr", scorer_cfg.lr)->capture_default_str();
    c->add_option("--d-model", scorer_cfg.d_model)->capture_default_str();
    handlers["scorer-train"] = [&](Run& run) {
      scorer_cfg.seed = common["scorer-train"].seed;
      const Benchmark b = load_bench(run, bench_dir);
      const std::size_t r = seed_slot(b, seed_index);
      if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw Error(ErrorCode::config, "--train-fraction must lie in (0, 1]");
      const auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(b.scenes.size())));
      const auto as = parse_doubles(alphas, "--alphas");
      std::vector<ScorerGroup> train, val;
      for (std::size_t i = 0; i < b.scenes.size(); ++i) {
        const auto& bs = b.scenes[i];
        (i < n_train ? train : val).push_back(label_group(bs.scene, candidate_trajectories(interpolate_candidates(bs.vit[r], bs.vlm[r], as))));
      }
      const ScorerFit fit = scorer_train(train, scorer_cfg, val);
      run.write("scorer.ckpt", scorer_checkpoint(fit.model));
      run.write("scorer_history.csv", scorer_history_csv(fit.history));
    };
  }
  std::string scorer_path, use_oracle = "false";
  double holdout_from = 0.0;
  {
    auto* c = command("select", "pick one candidate per scene with a scorer");
    add_bench(c);
    c->add_option("--scorer", scorer_path, "scorer checkpoint");
    c->add_option("--oracle", use_oracle, "use exact sub-scores instead of a checkpoint")->capture_default_str();
    c->add_option("--alphas", alphas)->capture_default_str();
    c->add_option("--from-fraction", holdout_from, "skip the leading fraction of scenes (training split)")->capture_default_str();
    handlers["select"] = [&](Run& run) {
      const Benchmark b = load_bench(run, bench_dir);
      const std::size_t r = seed_slot(b, seed_index);
      const auto scorer = make_scorer(run, scorer_path, use_oracle);
      const auto as = parse_doubles(alphas, "--alphas");
      const auto first = static_cast<std::size_t>(std::ceil(holdout_from * static_cast<double>(b.scenes.size())));
      csv::Table t({"scenario_id", "alpha", "meta_score", "pdms", "oracle_alpha", "oracle_pdms"});
      std::string cand_text = "scenario_id,alpha,waypoint_index,x,y,theta\n";
      for (std::size_t i = first; i < b.scenes.size(); ++i) {
        const auto& bs = b.scenes[i];
        const auto cands = interpolate_candidates(bs.vit[r], bs.vlm[r], as);
        const Selection sel = select_candidate(cands, bs.scene, *scorer);
        const Selection best = oracle_best_of_n(cands, bs.scene);
        t.cell(bs.scene.scenario_id).cell(sel.alpha).cell(sel.score).cell(best.scores[sel.index]).cell(best.alpha)
            .cell(best.score).end_row();
        cand_text += body(candidates_csv(bs.scene.scenario_id, cands));
      }
      run.write("selection.csv", t.str());
      run.write("candidates.csv", cand_text);
    };
  }
  DualOptions dual;
  std::string gammas = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1";
  {
    auto* c = command("dual-sweep", "fast/slow routing trade-off over confidence thresholds");
    add_bench(c);
    c->add_option("--scorer", scorer_path, "scorer checkpoint");
    c->add_option("--oracle", use_oracle, "use exact sub-scores instead of a checkpoint")->capture_default_str();
    c->add_option("--gammas", gammas)->capture_default_str();
    c->add_option("--from-fraction", holdout_from, "skip the leading fraction of scenes (training split)")->capture_default_str();
    dual.add(c);
    handlers["dual-sweep"] = [&](Run& run) {
      const Benchmark b = load_bench(run, bench_dir);
      const std::size_t r = seed_slot(b, seed_index);
      const auto scorer = make_scorer(run, scorer_path, use_oracle);
      const auto first = static_cast<std::size_t>(std::ceil(holdout_from * static_cast<double>(b.scenes.size())));
      std::vector<RoutingCase> cases;
      for (std::size_t i = first; i < b.scenes.size(); ++i) cases.push_back({&b.scenes[i].scene, b.scenes[i].vit[r], b.scenes[i].vlm[r]});
      const auto rows = dual_sweep(cases, parse_doubles(gammas, "--gammas"), *scorer, dual.cfg);
      run.write("tradeoff.csv", tradeoff_csv(rows));
    };
  }
  std::string win_taus = "0.2,0.5";
  {
    auto* c = command("wins", "per-seed significant wins of each policy");
    c->add_option("--bench", bench_dir, "benchmark directory")->required();
    c->add_option("--taus", win_taus)->capture_default_str();
    handlers["wins"] = [&](Run& run) {
      const Benchmark b = load_bench(run, bench_dir);
      std::vector<AdvantageRecord> recs;
      csv::Table t({"scenario_id", "seed", "s_vlm", "s_vit", "delta"});
      for (const auto& bs : b.scenes)
        for (std::size_t r = 0; r < b.spec.seeds.size(); ++r) {
          const auto a = make_advantage(bs.scene.scenario_id, static_cast<int>(b.spec.seeds[r]),
                                        pdms(compute_subscores(bs.vlm[r], bs.scene, MetricVersion::v1)),
                                        pdms(compute_subscores(bs.vit[r], bs.scene, MetricVersion::v1)));
          t.cell(a.scenario_id).cell(a.seed).cell(a.s_vlm).cell(a.s_vit).cell(a.delta).end_row();
          recs.push_back(a);
        }
      run.write("advantage.csv", t.str());
      std::string wins = "seed,tau,vlm_wins,vit_wins,scenes\n";
      for (double tau : parse_doubles(win_taus, "--taus")) wins += body(win_report_csv(win_count(recs, tau)));
      run.write("wins.csv", wins);
    };
  }

  // report ------------------------------------------------------------------
  std::string run_dir;
  {
    auto* c = command("report", "verify a run directory and summarize its tables");
    c->add_option("--run", run_dir, "directory holding earlier command outputs")->required();
    handlers["report"] = [&](Run& run) {
      const fs::path dir = run_dir;
      std::vector<fs::path> manifests;
      check_manifests(dir, manifests);
      std::string md = "# Run summary\n\n";
      auto section = [&](const std::string& title, const std::string& file, const std::optional<std::string>& text) {
        md += "## " + title + "\n\n";
        if (!text) {
          md += "(source artifact missing from this run)\n\n";
          return;
        }
        md += markdown_table(*text) + "\n";
        run.write(file, *text);
      };

      // similarity: CKA, CCA summary, aligned energy
      std::optional<std::string> sim;
      {
        csv::Table t({"metric", "value"});
        bool any = false;
        if (auto c = maybe_read(run, dir / "cka.csv")) {
          const auto lines = csv::split(*c, '\n');
          for (std::size_t i = 1; i < lines.size(); ++i)
            if (!lines[i].empty()) {
              const auto f = csv::split(lines[i]);
              t.cell(f.at(0)).cell(f.at(1)).end_row();
              any = true;
            }
        }
        if (auto s = maybe_read(run, dir / "cca_spectrum.csv")) {
          std::vector<double> rho;
          const auto lines = csv::split(*s, '\n');
          for (std::size_t i = 1; i < lines.size(); ++i)
            if (!lines[i].empty()) rho.push_back(*csv::parse_double(csv::split(lines[i]).at(1)));
          const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(rho.data(), static_cast<Eigen::Index>(rho.size()));
          for (Eigen::Index k : {1, 5, 10, 20})
            if (k <= v.size()) t.cell("cca_mean_top" + std::to_string(k)).cell(cca_mean_at_k(v, k)).end_row();
          any = true;
        }
        if (auto a = maybe_read(run, dir / "aligned_energy.csv")) {
          const auto lines = csv::split(*a, '\n');
          for (std::size_t i = 1; i < lines.size(); ++i)
            if (!lines[i].empty()) {
              const auto f = csv::split(lines[i]);
              std::string tau = f.at(1);
              if (const auto v = csv::parse_double(tau)) {
                std::ostringstream label;
                label << *v;
                tau = label.str();
              }
              t.cell("aligned_energy_" + f.at(0) + "@" + tau).cell(f.at(3)).end_row();
            }
          any = true;
        }
        if (any) sim = t.str();
      }
      section("Representation similarity", "report_similarity.csv", sim);

      // policy comparison: mean composite scores plus oracle selection
      std::optional<std::string> pol;
      if (auto s = maybe_read(run, dir / "scores.csv")) {
        std::map<std::string, std::tuple<double, double, int>> agg;
        const auto lines = csv::split(*s, '\n');
        for (std::size_t i = 1; i < lines.size(); ++i) {
          if (lines[i].empty()) continue;
          const auto f = csv::split(lines[i]);
          auto& [p, e, n] = agg[f.at(1)];
          p += *csv::parse_double(f.at(12));
          e += *csv::parse_double(f.at(13));
          ++n;
        }
        csv::Table t({"policy", "mean_pdms", "mean_epdms", "n"});
        for (const auto& [name, v] : agg) {
          const auto& [p, e, n] = v;
          t.cell(name).cell(p / n).cell(e / n).cell(n).end_row();
        }
        pol = t.str();
      }
      section("Policy scores", "report_policies.csv", pol);
      section("Oracle selection", "report_oracle.csv", maybe_read(run, dir / "bon_summary.csv"));
      section("Autoencoder sweep", "report_sae_sweep.csv", maybe_read(run, dir / "sae_sweep.csv"));
      section("Gating sweep", "report_gating.csv", maybe_read(run, dir / "gate_sweep.csv"));
      md += "Verified " + std::to_string(manifests.size()) + " manifest(s); all inputs unchanged.\n";
      run.write("report.md", md);
    };
  }

  // ---------------------------------------------------------------------------
  // Config expansion: keys become flags placed before the real arguments so
  // explicit flags win under the take-last policy.

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    if (!args.empty() && handlers.count(args[0])) {
      CLI::App* sub = app.get_subcommand(args[0]);
      std::string config_path;
      for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
      }
      if (!config_path.empty()) {
        json cfg;
        try {
          cfg = json::parse(csv::read_file(config_path));
        } catch (const json::exception& e) {
          throw Error(ErrorCode::config, "config " + config_path + ": " + e.what());
        } catch (const Error& e) {
          throw Error(ErrorCode::config, e.what());
        }
        if (!cfg.is_object() || !cfg.contains("version") || cfg["version"] != kConfigVersion)
          throw Error(ErrorCode::config, "config needs \"version\": " + std::to_string(kConfigVersion));
        std::vector<std::string> expanded;
        for (const auto& [key, value] : cfg.items()) {
          if (key == "version" || key == "command") continue;
          std::string flag = key;
          std::replace(flag.begin(), flag.end(), '_', '-');
          if (flag == "config" || sub->get_option_no_throw("--" + flag) == nullptr)
            throw Error(ErrorCode::config, "unknown config key '" + key + "' for " + args[0]);
          std::string text;
          if (value.is_string()) text = value.get<std::string>();
          else if (value.is_boolean()) text = value.get<bool>() ? "true" : "false";
          else if (value.is_number_integer() || value.is_number_unsigned()) text = value.dump();
          else if (value.is_number()) text = csv::format_double(value.get<double>());
          else if (value.is_array()) {
            for (const auto& v : value) {
              if (!text.empty()) text += ",";
              text += v.is_string() ? v.get<std::string>() : v.is_number_float() ? csv::format_double(v.get<double>()) : v.dump();
            }
          } else
            throw Error(ErrorCode::config, "config key '" + key + "' has an unsupported value");
          expanded.push_back("--" + flag);
          expanded.push_back(text);
        }
        args.insert(args.begin() + 1, expanded.begin(), expanded.end());
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  for (const auto& [name, handler] : handlers) {
    CLI::App* sub = app.get_subcommand(name);
    if (!sub->parsed()) continue;
    Run run;
    run.command = name;
    run.out = common[name].out;
    try {
      handler(run);
      json resolved = {{"version", kConfigVersion}, {"command", name}};
      for (const CLI::Option* opt : sub->get_options()) {
        const std::string key = opt->get_single_name();
        if (key.empty() || key == "help" || key == "config") continue;
        std::string k = key;
        std::replace(k.begin(), k.end(), '-', '_');
        const auto& res = opt->results();
        resolved[k] = !res.empty() ? res.back() : opt->get_default_str();
      }
      finish(run, resolved);
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      switch (e.category()) {
        case ErrorCategory::config: return 2;
        case ErrorCategory::data: return 3;
        case ErrorCategory::numerical: return 4;
      }
    } catch (const json::exception& e) {
      std::cerr << "error: malformed document: " << e.what() << "\n";
      return 3;
    } catch (const fs::filesystem_error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 3;
    }
  }
  return 0;
}
