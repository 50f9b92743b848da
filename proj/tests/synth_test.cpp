#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "support.hpp"
#include "tandem/benchmark.hpp"
#include "tandem/benchmark_io.hpp"
#include "tandem/similarity.hpp"

using namespace tandem;

namespace {

BenchmarkSpec small_spec(Eigen::Index n) {
  BenchmarkSpec s;
  s.n_scenes = n;
  return s;
}

/// Largest CKA over `shuffles` random re-pairings of y.
double null_ceiling(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int shuffles, std::uint64_t seed) {
  CounterRng rng(seed, Stream::permutation);
  double best = 0.0;
  for (int i = 0; i < shuffles; ++i) {
    const auto perm = rng.permutation(static_cast<std::size_t>(y.rows()));
    Eigen::MatrixXd yp(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) yp.row(r) = y.row(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(r)]));
    best = std::max(best, linear_cka(x, yp));
  }
  return best;
}

double pdms_of(const Trajectory& t, const Scene& s) { return pdms(compute_subscores(t, s, MetricVersion::v1)); }

}  // namespace

TEST(PairedFeatures, FullySharedIsNearIdenticalUnderCka) {
  PlantedSpec s;
  s.n = 1000;
  s.d_x = 16;
  s.d_y = 12;
  s.shared_fraction = 1.0;
  s.noise_std = 0.0;
  s.unique_dim_x = s.unique_dim_y = 0;
  s.seed = 3;
  const auto p = gen_paired_features(s);
  EXPECT_GE(linear_cka(p.data.x.values, p.data.y.values), 0.99);
}

TEST(PairedFeatures, NoSharingStaysUnderPermutationNull) {
  PlantedSpec s;
  s.n = 500;
  s.d_x = s.d_y = 8;
  s.shared_fraction = 0.0;
  s.shared_dim = 0;
  s.seed = 4;
  const auto p = gen_paired_features(s);
  const double cka = linear_cka(p.data.x.values, p.data.y.values);
  EXPECT_LE(cka, null_ceiling(p.data.x.values, p.data.y.values, 100, 4));
}

TEST(PairedFeatures, SameSeedIdentical) {
  PlantedSpec s;
  s.seed = 9;
  s.n = 300;
  const auto a = gen_paired_features(s), b = gen_paired_features(s);
  EXPECT_EQ(a.data.x.values, b.data.x.values);
  EXPECT_EQ(a.data.y.values, b.data.y.values);
  s.seed = 10;
  EXPECT_NE(gen_paired_features(s).data.x.values, a.data.x.values);
}

TEST(PairedFeatures, SharedEnergyFractionMatchesPlanted) {
  for (double f : {0.3, 0.7}) {
    PlantedSpec s;
    s.n = 2000;
    s.shared_fraction = f;
    s.seed = 11;
    const auto p = gen_paired_features(s);
    for (auto [shared, full] : {std::pair{&p.truth.shared_part_x, &p.data.x.values},
                                std::pair{&p.truth.shared_part_y, &p.data.y.values}}) {
      const double frac = center_columns(*shared).squaredNorm() / center_columns(*full).squaredNorm();
      EXPECT_NEAR(frac, f, 0.05);
    }
  }
}

TEST(PairedFeatures, FractionsSumToOneAndSpecValidated) {
  PlantedSpec s;
  EXPECT_NEAR(s.shared_fraction + s.unique_fraction() + s.noise_fraction(), 1.0, 1e-12);
  s.shared_dim = 30;
  EXPECT_THROW(gen_paired_features(s), Error);
  s = {};
  s.shared_fraction = 0.95;
  s.noise_std = 0.5;
  EXPECT_THROW(gen_paired_features(s), Error);
}

TEST(Benchmark, ExpertsScorePerfectly) {
  const Benchmark b = gen_benchmark(small_spec(120));
  for (const auto& bs : b.scenes) {
    EXPECT_EQ(compute_subscores(bs.scene.expert, bs.scene), SubScores::ones()) << bs.scene.scenario_id;
    EXPECT_DOUBLE_EQ(pdms_of(bs.scene.expert, bs.scene), 1.0);
  }
}

TEST(Benchmark, BitIdenticalForSameSpec) {
  const Benchmark a = gen_benchmark(small_spec(40)), b = gen_benchmark(small_spec(40));
  ASSERT_EQ(a.scenes.size(), b.scenes.size());
  for (std::size_t i = 0; i < a.scenes.size(); ++i) {
    EXPECT_EQ(scene_document(a.scenes[i].scene), scene_document(b.scenes[i].scene));
    for (std::size_t r = 0; r < a.scenes[i].vit.size(); ++r) {
      EXPECT_EQ(a.scenes[i].vit[r].waypoints, b.scenes[i].vit[r].waypoints);
      EXPECT_EQ(a.scenes[i].vlm[r].waypoints, b.scenes[i].vlm[r].waypoints);
    }
  }
  EXPECT_EQ(a.features.x.values, b.features.x.values);
  BenchmarkSpec other = small_spec(40);
  other.seed = 1;
  EXPECT_NE(scene_document(gen_benchmark(other).scenes[0].scene), scene_document(a.scenes[0].scene));
}

TEST(Benchmark, PlantedFailuresScoreZeroAndOthersStayClean) {
  BenchmarkSpec spec = small_spec(300);
  spec.vit.failure_rate = 0.1;
  spec.vlm.failure_rate = 0.1;
  const Benchmark b = gen_benchmark(spec);
  int vit_fail = 0, vlm_fail = 0;
  for (const auto& bs : b.scenes) {
    for (std::size_t r = 0; r < spec.seeds.size(); ++r) {
      const double pv = pdms_of(bs.vit[r], bs.scene), pl = pdms_of(bs.vlm[r], bs.scene);
      EXPECT_EQ(pv == 0.0, bs.planted == PlantedFailure::vit);
      EXPECT_EQ(pl == 0.0, bs.planted == PlantedFailure::vlm);
      EXPECT_GT(std::max(pv, pl), 0.8);
    }
    vit_fail += bs.planted == PlantedFailure::vit;
    vlm_fail += bs.planted == PlantedFailure::vlm;
  }
  const auto [lo, hi] = test::binomial_interval(300, 0.1);
  EXPECT_GE(vit_fail, lo);
  EXPECT_LE(vit_fail, hi);
  EXPECT_GE(vlm_fail, lo);
  EXPECT_LE(vlm_fail, hi);
}

TEST(Benchmark, WinTailsMatchPlantedRates) {
  const Benchmark b = gen_benchmark(small_spec(500));
  for (std::size_t r = 0; r < b.spec.seeds.size(); ++r) {
    int vlm_wins = 0, vit_wins = 0;
    for (const auto& bs : b.scenes) {
      const double delta = pdms_of(bs.vlm[r], bs.scene) - pdms_of(bs.vit[r], bs.scene);
      vlm_wins += delta > 0.2;
      vit_wins += delta < -0.2;
    }
    const auto vlm_band = test::binomial_interval(500, 0.03);
    const auto vit_band = test::binomial_interval(500, 0.025);
    EXPECT_GE(vlm_wins, vlm_band.first);
    EXPECT_LE(vlm_wins, vlm_band.second);
    EXPECT_GE(vit_wins, vit_band.first);
    EXPECT_LE(vit_wins, vit_band.second);
  }
}

TEST(Benchmark, SpeedBiasMakesSlowPolicyFaster) {
  const Benchmark b = gen_benchmark(small_spec(300));
  int faster = 0;
  for (const auto& bs : b.scenes) faster += mean_speed(bs.vlm[0]) > mean_speed(bs.vit[0]);
  EXPECT_GE(faster, static_cast<int>(0.6 * 300));
}

TEST(Benchmark, NoTailsAndUniformDominance) {
  BenchmarkSpec spec = small_spec(100);
  spec.vit.failure_rate = spec.vlm.failure_rate = 0.0;
  spec.vit.speed_bias = 0.85;
  spec.speed_spread = 0.0;
  const Benchmark b = gen_benchmark(spec);
  double vlm = 0, vit = 0, oracle = 0;
  for (const auto& bs : b.scenes) {
    const double pl = pdms_of(bs.vlm[0], bs.scene), pv = pdms_of(bs.vit[0], bs.scene);
    vlm += pl;
    vit += pv;
    oracle += std::max(pl, pv);
  }
  EXPECT_NEAR(oracle, std::max(vlm, vit), 1e-9);
}

TEST(Benchmark, FeatureRowsFollowScenes) {
  const Benchmark b = gen_benchmark(small_spec(50));
  ASSERT_EQ(b.features.n(), 50);
  for (Eigen::Index i = 0; i < 50; ++i)
    EXPECT_EQ(b.features.x.sample_ids[static_cast<std::size_t>(i)], b.scenes[static_cast<std::size_t>(i)].scene.scenario_id);
  EXPECT_EQ(b.features.x.values.cols(), 32);
}

TEST(Benchmark, SpecValidation) {
  BenchmarkSpec s;
  s.vit.speed_bias = 0.0;
  EXPECT_THROW(gen_benchmark(s), Error);
  s = {};
  s.vit.failure_rate = 0.6;
  s.vlm.failure_rate = 0.6;
  EXPECT_THROW(gen_benchmark(s), Error);
  s = {};
  s.n_scenes = 0;
  EXPECT_THROW(gen_benchmark(s), Error);
}

TEST(Benchmark, SaveLoadRoundTrip) {
  BenchmarkSpec spec = small_spec(12);
  spec.vit.failure_rate = 0.2;
  const Benchmark b = gen_benchmark(spec);
  const auto dir = std::filesystem::temp_directory_path() / "tandem_bench_roundtrip";
  std::filesystem::remove_all(dir);
  save_benchmark(dir, b);
  const Benchmark back = load_benchmark(dir).bench;
  ASSERT_EQ(back.scenes.size(), b.scenes.size());
  EXPECT_EQ(back.spec.seeds, b.spec.seeds);
  for (std::size_t i = 0; i < b.scenes.size(); ++i) {
    EXPECT_EQ(scene_document(back.scenes[i].scene), scene_document(b.scenes[i].scene));
    EXPECT_EQ(back.scenes[i].planted, b.scenes[i].planted);
    for (std::size_t r = 0; r < b.spec.seeds.size(); ++r) {
      EXPECT_EQ(back.scenes[i].vit[r].waypoints, b.scenes[i].vit[r].waypoints);
      EXPECT_EQ(back.scenes[i].vlm[r].waypoints, b.scenes[i].vlm[r].waypoints);
    }
  }
  EXPECT_EQ(back.features.x.values, b.features.x.values);
  std::ofstream(dir / "trajectories.csv", std::ios::app) << "s0,vit,1,99,0,0,0\n";
  EXPECT_THROW(load_benchmark(dir), Error);
  std::filesystem::remove_all(dir);
}
