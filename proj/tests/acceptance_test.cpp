// Acceptance suite: one test per criterion, each printing a single
// "[PASS]/[FAIL] criterion N: ..." line with the measured quantities.

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sae_gradcheck.hpp"
#include "support.hpp"
#include "tandem/benchmark.hpp"
#include "tandem/csv.hpp"
#include "tandem/features.hpp"
#include "tandem/gating.hpp"
#include "tandem/sae.hpp"
#include "tandem/scorer.hpp"
#include "tandem/scoring.hpp"
#include "tandem/selection.hpp"
#include "tandem/similarity.hpp"
#include "tandem/synth.hpp"

namespace fs = std::filesystem;
using namespace tandem;
using tandem::test::gaussian;
using tandem::test::random_orthogonal;

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

FeaturePairDataset dataset(Eigen::MatrixXd x, Eigen::MatrixXd y) {
  const auto n = x.rows();
  return FeaturePairDataset{make_features(sequential_ids(n), std::move(x)), make_features(sequential_ids(n), std::move(y)),
                            Split::train};
}

// Every trained autoencoder, re-checked by the variance identity criterion.
std::vector<std::pair<std::string, std::pair<SaeModel, FeaturePairDataset>>>& trained_models() {
  static std::vector<std::pair<std::string, std::pair<SaeModel, FeaturePairDataset>>> models;
  return models;
}

SaeModel keep(const std::string& name, const SaeModel& m, const FeaturePairDataset& d) {
  trained_models().push_back({name, {m, d}});
  return m;
}

PlantedSpec planted(std::uint64_t seed, Eigen::Index n) {
  PlantedSpec s;
  s.n = n;
  s.d_x = s.d_y = 32;
  s.shared_dim = 4;
  s.unique_dim_x = s.unique_dim_y = 4;
  s.shared_fraction = 0.7;
  s.noise_std = 0.1;
  s.seed = seed;
  return s;
}

SaeTrainConfig sae_config(std::uint64_t seed, int epochs) {
  SaeTrainConfig c;
  c.seed = seed;
  c.epochs = epochs;
  c.batch_size = 256;
  c.hidden = 64;
  c.d_s = 16;
  c.d_u = 8;
  return c;
}

const Benchmark& benchmark_500() {
  static const Benchmark b = [] {
    BenchmarkSpec s;
    s.n_scenes = 500;
    return gen_benchmark(s);
  }();
  return b;
}

double pdms_v1(const Trajectory& t, const Scene& s) { return pdms(compute_subscores(t, s, MetricVersion::v1)); }

class Criterion : public ::testing::Test {
 protected:
  void report(int number, std::string title) {
    number_ = number;
    title_ = std::move(title);
  }
  void detail(const std::string& d) { detail_ += (detail_.empty() ? "" : ", ") + d; }
  void TearDown() override {
    std::printf("[%s] criterion %d: %s%s%s\n", HasFailure() ? "FAIL" : "PASS", number_, title_.c_str(),
                detail_.empty() ? "" : " | ", detail_.c_str());
    std::fflush(stdout);
  }

 private:
  int number_ = 0;
  std::string title_;
  std::string detail_;
};

}  // namespace

TEST_F(Criterion, C01_MetricExactness) {
  report(1, "pdms / epdms / filter match hand evaluation on the exhaustive grid");
  const std::array<double, 5> eps{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<SubScores> grid;
  for (int mask = 0; mask < (1 << 9); ++mask)
    for (double ep : eps) {
      auto bit = [&](int i) { return static_cast<double>((mask >> i) & 1); };
      grid.push_back({bit(0), bit(1), bit(2), bit(3), ep, bit(4), bit(5), bit(6), bit(7), bit(8)});
    }
  double worst = 0.0;
  for (const auto& s : grid) {
    const double gate = (s.nc == 0.0 || s.dac == 0.0) ? 0.0 : s.nc * s.dac;
    const double hand = gate * (s.ep * 5 + s.ttc * 5 + s.comfort * 2) / 12;
    worst = std::max(worst, std::abs(pdms(s) - hand));
  }
  for (double agent : eps)
    for (double human : eps) worst = std::max(worst, std::abs(epdms_filter(agent, human) - (human > 0.0 ? agent : 1.0)));
  // epdms: agent x human over the grid
  for (const auto& a : grid)
    for (const auto& h : grid) {
      auto f = [](double agent, double human) { return human > 0.0 ? agent : 1.0; };
      double mult = 1.0;
      for (auto field : {&SubScores::nc, &SubScores::dac, &SubScores::ddc, &SubScores::tlc}) mult *= f(a.*field, h.*field);
      const std::array<std::pair<double, double>, 5> weighted{{{f(a.ep, h.ep), 5.0},
                                                               {f(a.ttc, h.ttc), 5.0},
                                                               {f(a.lk, h.lk), 2.0},
                                                               {f(a.hc, h.hc), 2.0},
                                                               {f(a.ec, h.ec), 2.0}}};
      double num = 0.0, den = 0.0;
      for (const auto& [v, w] : weighted) num += w * v, den += w;
      worst = std::max(worst, std::abs(epdms(a, h) - mult * num / den));
    }
  detail("grid " + std::to_string(grid.size()) + " (" + std::to_string(grid.size() * grid.size()) + " pairs)");
  detail("max abs error " + fmt(worst));
  EXPECT_LE(worst, 1e-12);
}

TEST_F(Criterion, C02_CkaInvariances) {
  report(2, "linear CKA self-similarity, rotation, scale and symmetry");
  CounterRng rng(2, Stream::fixtures);
  double self = 0, rot = 0, scale = 0, sym = 0;
  for (int t = 0; t < 50; ++t) {
    const Eigen::Index n = 20 + static_cast<Eigen::Index>(rng.index(200));
    const Eigen::Index dx = 2 + static_cast<Eigen::Index>(rng.index(12)), dy = 2 + static_cast<Eigen::Index>(rng.index(12));
    const Eigen::MatrixXd x = gaussian(n, dx, rng, rng.uniform(0.1, 10.0)).array() + rng.uniform(-5.0, 5.0);
    const Eigen::MatrixXd y = x.leftCols(std::min(dx, dy)) * gaussian(std::min(dx, dy), dy, rng) + gaussian(n, dy, rng);
    const double base = linear_cka(x, y);
    self = std::max(self, std::abs(linear_cka(x, x) - 1.0));
    rot = std::max(rot, std::abs(linear_cka(Eigen::MatrixXd(x * random_orthogonal(dx, rng)), y) - base));
    rot = std::max(rot, std::abs(linear_cka(x, Eigen::MatrixXd(y * random_orthogonal(dy, rng))) - base));
    scale = std::max(scale, std::abs(linear_cka(Eigen::MatrixXd(rng.uniform(0.01, 100.0) * x), y) - base));
    sym = std::max(sym, std::abs(linear_cka(y, x) - base));
  }
  detail("self " + fmt(self) + ", rotation " + fmt(rot) + ", scale " + fmt(scale) + ", symmetry " + fmt(sym));
  EXPECT_LE(self, 1e-9);
  EXPECT_LE(rot, 1e-9);
  EXPECT_LE(scale, 1e-9);
  EXPECT_LE(sym, 1e-10);
}

TEST_F(Criterion, C03_CcaPlantedRank) {
  report(3, "rank-2 coupling gives exactly two correlations >= 0.9, rest under the shuffle null");
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CounterRng rng(seed, Stream::fixtures);
    const Eigen::Index n = 2000, d = 8;
    const Eigen::MatrixXd x = gaussian(n, d, rng);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
    a(0, 0) = a(1, 1) = 3.0;
    const Eigen::MatrixXd y = x * a * random_orthogonal(d, rng) + 0.5 * gaussian(n, d, rng);
    const auto data = dataset(x, y);
    const CcaResult r = cca(data);
    CounterRng perm_rng(seed, Stream::permutation);
    double ceiling = 0.0;
    for (int s = 0; s < 100; ++s) {
      const auto perm = perm_rng.permutation(static_cast<std::size_t>(n));
      Eigen::MatrixXd ys(n, d);
      for (Eigen::Index i = 0; i < n; ++i) ys.row(i) = y.row(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]));
      ceiling = std::max(ceiling, cca(dataset(x, ys)).rho(0));
    }
    double rest = 0.0;
    for (Eigen::Index j = 2; j < r.k(); ++j) rest = std::max(rest, r.rho(j));
    detail("seed " + std::to_string(seed) + ": above " + std::to_string(r.count_above(0.9)) + ", rho3 " + fmt(rest) +
           " < null " + fmt(ceiling));
    EXPECT_EQ(r.count_above(0.9), 2) << "seed " << seed;
    EXPECT_LT(rest, ceiling) << "seed " << seed;
  }
}

TEST_F(Criterion, C04_ProcrustesExact) {
  report(4, "Procrustes recovers an exact orthogonal transform");
  CounterRng rng(4, Stream::fixtures);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.index(15));
    const Eigen::MatrixXd src = gaussian(50 + static_cast<Eigen::Index>(rng.index(200)), d, rng, rng.uniform(0.5, 5.0));
    const Eigen::MatrixXd q = random_orthogonal(d, rng);
    worst = std::max(worst, procrustes(src, Eigen::MatrixXd(src * q)).residual);
  }
  detail("max residual " + fmt(worst));
  EXPECT_LT(worst, 1e-8);
}

TEST_F(Criterion, C05_SaeGradientCheck) {
  report(5, "autoencoder loss terms match central differences");
  const auto terms = test::isolated_terms();
  double worst = 0.0;
  for (std::uint64_t point = 0; point < 100; ++point) {
    const auto p = test::gradcheck_point(point + 1);
    for (const auto& t : terms) {
      const double e = test::gradient_relative_error(p, t.weights, 1e-5);
      worst = std::max(worst, e);
      EXPECT_LE(e, 1e-4) << t.name << " at point " << point;
    }
  }
  detail(std::to_string(terms.size()) + " terms x 100 points, max relative error " + fmt(worst));
}

TEST_F(Criterion, C06_CrossWeightNarrowsGap) {
  report(6, "cross reconstruction weight 1 gives a smaller self-cross gap than 0");
  const auto all = gen_paired_features(planted(6, 4000)).data;
  auto [train, test] = split_rows(all, 3000);
  SaeLossWeights w0, w1;
  w0.cross = 0.0;
  w1.cross = 1.0;
  const auto m0 = sae_metrics(keep("cross=0", sae_train(train, w0, sae_config(4, 60)).model, test), test);
  const auto m1 = sae_metrics(keep("cross=1", sae_train(train, w1, sae_config(4, 60)).model, test), test);
  detail("gap x " + fmt(m0.gap_x) + " -> " + fmt(m1.gap_x) + ", gap y " + fmt(m0.gap_y) + " -> " + fmt(m1.gap_y));
  EXPECT_LT(m1.gap_x, m0.gap_x);
  EXPECT_LT(m1.gap_y, m0.gap_y);
}

TEST_F(Criterion, C07_ShuffledPairControl) {
  report(7, "shuffled pairing destroys original and shared-space alignment");
  const auto data = gen_paired_features(planted(7, 1200)).data;
  const SaeLossWeights w;
  const SaeTrainConfig cfg = sae_config(6, 30);
  const auto perm = CounterRng(99, Stream::permutation).permutation(static_cast<std::size_t>(data.n()));
  const auto shuffled = repair_rows(data, perm);
  const auto t = sae_metrics(keep("true pairing", sae_train(data, w, cfg).model, data), data);
  const auto s = sae_metrics(keep("shuffled pairing", sae_train(shuffled, w, cfg).model, shuffled), shuffled);
  const ControlReport r = shuffled_pair_control(data, w, cfg, 99);
  detail("orig " + fmt(t.cka_orig) + " vs " + fmt(s.cka_orig) + ", shared " + fmt(t.cka_shared) + " vs " +
         fmt(s.cka_shared));
  EXPECT_GE(t.cka_orig, 0.4);
  EXPECT_LE(s.cka_orig, 0.1);
  EXPECT_LT(s.cka_shared, t.cka_shared);
  EXPECT_EQ(r.true_pairing.cka_shared, t.cka_shared);
  EXPECT_EQ(r.shuffled.cka_shared, s.cka_shared);
}

TEST_F(Criterion, C08_VarianceIdentity) {
  report(8, "variance decomposition sums to the total on every trained model");
  // models from the other criteria, plus one trained on the benchmark features
  const Benchmark& b = benchmark_500();
  keep("benchmark", sae_train(b.features, SaeLossWeights{}, sae_config(8, 20)).model, b.features);
  ASSERT_GE(trained_models().size(), 1u);
  double worst = 0.0;
  for (const auto& [name, md] : trained_models()) {
    const VarianceReport v = variance_attribution(md.first, md.second);
    // independent total: per-element variance of the standardized inputs
    for (const auto& [branch, raw, st] :
         {std::tuple{&v.x, &md.second.x.values, &md.first.standardizer_x}, std::tuple{&v.y, &md.second.y.values, &md.first.standardizer_y}}) {
      const Eigen::MatrixXd z = standardize(*raw, *st);
      const double total = (z.rowwise() - z.colwise().mean()).squaredNorm() / static_cast<double>(z.size());
      EXPECT_NEAR(branch->var_total, total, 1e-12 * total) << name;
      const double err = std::abs(branch->var_shared + branch->var_unique + 2.0 * branch->covariance_term +
                                  branch->var_residual - total) / total;
      worst = std::max(worst, err);
      EXPECT_LE(err, 1e-6) << name;
    }
  }
  detail(std::to_string(trained_models().size()) + " models, max relative error " + fmt(worst));
}

TEST_F(Criterion, C09_GateBounds) {
  report(9, "every gate lies between min-branch and oracle means; smoothed rule matches hard rule at large kappa");
  const Benchmark& b = benchmark_500();
  std::vector<ScenarioScores> scores;
  for (const auto& bs : b.scenes) {
    double vlm = 0.0, vit = 0.0;
    for (std::size_t r = 0; r < bs.vit.size(); ++r) vlm += pdms_v1(bs.vlm[r], bs.scene), vit += pdms_v1(bs.vit[r], bs.scene);
    const double k = static_cast<double>(bs.vit.size());
    scores.push_back({bs.scene.scenario_id, vlm / k, vit / k});
  }
  const SaeModel m = sae_train(b.features, SaeLossWeights{}, sae_config(9, 20)).model;
  std::vector<GateIndicators> ind;
  for (const auto& f : energy_decomposition(m, b.features)) ind.push_back(gate_indicators(f));
  const auto& ids = b.features.x.sample_ids;

  int checked = 0;
  auto bounded = [&](const std::string& name, const std::vector<GateDecision>& dec) {
    const GateEvaluation e = gate_evaluate(dec, scores);
    EXPECT_LE(e.min_mean, e.realized_mean + 1e-12) << name;
    EXPECT_LE(e.realized_mean, e.oracle_mean + 1e-12) << name;
    ++checked;
    return e;
  };
  for (double tau : default_gate_taus())
    for (GateStrategy s : all_gate_strategies()) {
      GateConfig cfg;
      cfg.tau = tau;
      bounded(to_string(s), rule_decisions(ids, ind, s, cfg));
    }
  const auto set = make_gate_training_set(b.features, scores);
  GateTrainConfig gcfg;
  gcfg.epochs = 100;
  gcfg.seed = 9;
  const GateModel gate = learned_gate_train(set.x, set.y, set.labels, gcfg);
  const GateEvaluation learned = bounded("learned", learned_gate_decisions(gate, b.features));

  GateConfig sharp;
  sharp.kappa = 1e4;
  int compared = 0;
  double worst = 0.0;
  for (const auto& g : ind) {
    if (std::abs(g.d_bar - sharp.tau) < 0.01) continue;
    ++compared;
    const GateDecision hard = rule_score(g, GateStrategy::shared_conditional, sharp);
    const GateDecision soft = rule_score(g, GateStrategy::smoothed, sharp);
    worst = std::max(worst, std::abs(hard.score - soft.score));
    EXPECT_EQ(hard.choice, soft.choice);
  }
  EXPECT_GT(compared, 0);
  EXPECT_LE(worst, 1e-9);
  detail(std::to_string(checked) + " gates bounded, learned " + fmt(learned.realized_mean) + " in [" +
         fmt(learned.min_mean) + ", " + fmt(learned.oracle_mean) + "], kappa 1e4 gap " + fmt(worst) + " over " +
         std::to_string(compared) + " scenes");
}

TEST_F(Criterion, C10_OracleDominance) {
  report(10, "oracle best-of-2 beats both policies; best-of-11 never below best-of-2");
  const Benchmark& b = benchmark_500();
  double vit = 0, vlm = 0, bo2 = 0, bo11 = 0;
  int violations = 0;
  for (const auto& bs : b.scenes) {
    const double pv = pdms_v1(bs.vit[0], bs.scene), pl = pdms_v1(bs.vlm[0], bs.scene);
    const double two = std::max(pv, pl);
    const Selection eleven = oracle_best_of_n(interpolate_candidates(bs.vit[0], bs.vlm[0]), bs.scene);
    vit += pv, vlm += pl, bo2 += two, bo11 += eleven.score;
    violations += eleven.score < two;
  }
  const double n = static_cast<double>(b.scenes.size());
  detail("vit " + fmt(vit / n) + ", vlm " + fmt(vlm / n) + ", best-of-2 " + fmt(bo2 / n) + ", best-of-11 " +
         fmt(bo11 / n) + ", violations " + std::to_string(violations));
  EXPECT_GT(bo2, vit);
  EXPECT_GT(bo2, vlm);
  EXPECT_EQ(violations, 0);
}

TEST_F(Criterion, C11_PerfectScorerEquivalence) {
  report(11, "selection with exact sub-scores returns the oracle trajectory");
  const Benchmark& b = benchmark_500();
  const OracleScorer perfect;
  int mismatches = 0, total = 0;
  for (const auto& bs : b.scenes)
    for (std::size_t r = 0; r < bs.vit.size(); ++r) {
      const auto c = interpolate_candidates(bs.vit[r], bs.vlm[r]);
      const Selection s = select_candidate(c, bs.scene, perfect);
      const Selection o = oracle_best_of_n(c, bs.scene);
      mismatches += c[s.index].trajectory.waypoints != c[o.index].trajectory.waypoints;
      ++total;
    }
  detail(std::to_string(total) + " candidate sets, " + std::to_string(mismatches) + " mismatches");
  EXPECT_EQ(mismatches, 0);
}

TEST_F(Criterion, C12_DualRouteMonotoneAndSpeedup) {
  report(12, "fast fraction non-increasing in gamma; 85% fast gives 3.2x speedup");
  const Benchmark& b = benchmark_500();
  std::vector<RoutingCase> cases;
  for (const auto& bs : b.scenes) cases.push_back({&bs.scene, bs.vit[0], bs.vlm[0]});
  DualConfig cfg;
  cfg.cost_fast = 1.0;
  cfg.cost_score = cfg.cost_select = 0.1;
  cfg.cost_slow = slow_cost_for_speedup(3.2, 0.85, cfg);
  const OracleScorer scorer;

  std::vector<double> gammas;
  for (int i = 0; i <= 10; ++i) gammas.push_back(i / 10.0);
  const auto rows = dual_sweep(cases, gammas, scorer, cfg);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LE(rows[i].fast_fraction, rows[i - 1].fast_fraction);

  // threshold placing exactly 85% of the scenes on the fast path
  std::vector<double> meta;
  for (const auto& c : cases) meta.push_back(meta_score(scorer.predict({c.fast}, *c.scene)[0]));
  std::sort(meta.begin(), meta.end());
  const std::size_t slow_count = cases.size() * 15 / 100;
  ASSERT_LT(meta[slow_count - 1], meta[slow_count]) << "tied confidences at the 15% quantile";
  const double gamma = meta[slow_count];
  const auto row = dual_sweep(cases, {gamma}, scorer, cfg).front();
  detail("c_slow " + fmt(cfg.cost_slow) + ", gamma " + fmt(gamma) + ", fast " + fmt(row.fast_fraction) + ", speedup " +
         fmt(row.speedup));
  std::string fractions;
  for (const auto& r : rows) fractions += (fractions.empty() ? "" : "/") + fmt(r.fast_fraction);
  detail("fractions " + fractions);
  EXPECT_DOUBLE_EQ(row.fast_fraction, 0.85);
  EXPECT_NEAR(row.speedup, 3.2, 0.01);
}

TEST_F(Criterion, C13_WinCountCalibration) {
  report(13, "planted failure tails recovered within 99% binomial intervals at tau 0.2");
  const Benchmark& b = benchmark_500();
  std::vector<AdvantageRecord> records;
  for (const auto& bs : b.scenes)
    for (std::size_t r = 0; r < bs.vit.size(); ++r)
      records.push_back(make_advantage(bs.scene.scenario_id, static_cast<int>(b.spec.seeds[r]), pdms_v1(bs.vlm[r], bs.scene),
                                       pdms_v1(bs.vit[r], bs.scene)));
  const WinReport w = win_count(records, 0.2);
  const int n = static_cast<int>(b.scenes.size());
  // vlm wins where the fast policy fails, and the reverse
  const auto vlm_band = test::binomial_interval(n, b.spec.vit.failure_rate);
  const auto vit_band = test::binomial_interval(n, b.spec.vlm.failure_rate);
  ASSERT_EQ(w.per_seed.size(), 3u);
  for (const auto& s : w.per_seed) {
    detail("seed " + std::to_string(s.seed) + ": vlm " + std::to_string(s.vlm) + " in [" + std::to_string(vlm_band.first) +
           "," + std::to_string(vlm_band.second) + "], vit " + std::to_string(s.vit) + " in [" +
           std::to_string(vit_band.first) + "," + std::to_string(vit_band.second) + "]");
    EXPECT_GE(s.vlm, vlm_band.first);
    EXPECT_LE(s.vlm, vlm_band.second);
    EXPECT_GE(s.vit, vit_band.first);
    EXPECT_LE(s.vit, vit_band.second);
  }
}

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TANDEM_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// Every file under `dir` keyed by relative path, skipping run metadata that
/// records timestamps or absolute paths.
std::map<std::string, std::string> artifacts(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).string();
    if (rel.ends_with(".meta.json") || rel.ends_with(".manifest.json") || rel.ends_with(".config.json")) continue;
    out[rel] = csv::read_file(e.path());
  }
  return out;
}

}  // namespace

TEST_F(Criterion, C14_Determinism) {
  report(14, "generation and training commands rerun byte-identically");
  const fs::path root = fs::temp_directory_path() / ("tandem_acceptance_" + std::to_string(getpid()));
  fs::remove_all(root);
  const std::vector<std::string> commands = {
      "gen-features --n 400 --d-x 16 --d-y 16 --seed 3 --out {o}/features",
      "gen-benchmark --n-scenes 40 --seed 3 --out {o}/bench",
      "sae-train --x {o}/features/features_x.csv --y {o}/features/features_y.csv --epochs 4 --hidden 16 --d-s 4 --d-u 2 "
      "--batch-size 64 --seed 5 --out {o}/sae",
      "sae-sweep --x {o}/features/features_x.csv --y {o}/features/features_y.csv --epochs 2 --hidden 16 --d-s 4 --d-u 2 "
      "--batch-size 64 --seed 5 --out {o}/sweep",
      "shuffle-control --x {o}/features/features_x.csv --y {o}/features/features_y.csv --epochs 2 --hidden 16 --d-s 4 "
      "--d-u 2 --batch-size 64 --seed 5 --out {o}/control",
      "score --bench {o}/bench --out {o}/score",
      "gate-train --x {o}/bench/features_x.csv --y {o}/bench/features_y.csv --scores {o}/score/scores.csv --epochs 5 "
      "--seed 6 --out {o}/gate",
      "scorer-train --bench {o}/bench --epochs 2 --seed 7 --out {o}/scorer",
  };
  std::map<std::string, std::string> first;
  for (const char* run : {"a", "b"}) {
    const std::string o = (root / run).string();
    for (std::string c : commands) {
      for (std::size_t at; (at = c.find("{o}")) != std::string::npos;) c.replace(at, 3, o);
      ASSERT_EQ(run_cli(c), 0) << c;
    }
    const auto files = artifacts(o);
    if (first.empty()) {
      first = files;
      continue;
    }
    EXPECT_EQ(files.size(), first.size());
    int differing = 0;
    for (const auto& [rel, text] : first) {
      auto it = files.find(rel);
      const bool same = it != files.end() && it->second == text;
      differing += !same;
      EXPECT_TRUE(same) << rel;
    }
    detail(std::to_string(commands.size()) + " commands, " + std::to_string(first.size()) + " artifacts, " +
           std::to_string(differing) + " differ");
  }
  // in-process training is seed-deterministic too
  const auto d = gen_paired_features(planted(14, 500)).data;
  EXPECT_EQ(sae_checkpoint(sae_train(d, SaeLossWeights{}, sae_config(1, 3)).model),
            sae_checkpoint(sae_train(d, SaeLossWeights{}, sae_config(1, 3)).model));
  fs::remove_all(root);
}
