#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "support.hpp"
#include "tandem/features.hpp"

using namespace tandem;
using tandem::test::gaussian;
using tandem::test::random_orthogonal;
using tandem::test::sample_covariance;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
  auto dir = std::filesystem::temp_directory_path() / "tandem_features_test";
  std::filesystem::create_directories(dir);
  auto p = dir / name;
  csv::write_atomic(p, content);
  return p;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::config;
}

FeatureMatrix fm(Eigen::MatrixXd v) {
  auto ids = sequential_ids(v.rows());
  return make_features(std::move(ids), std::move(v));
}

}  // namespace

TEST(LoadFeatures, RoundTripsHandWrittenFile) {
  auto p = temp_file("ok.csv", "sample_id,f0,f1\na,1,2\nb,3.5,-4e-1\nc,0,1E2\n");
  auto m = load_features(p, Level::decision, Branch::vision);
  ASSERT_EQ(m.n(), 3);
  ASSERT_EQ(m.d(), 2);
  EXPECT_EQ(m.sample_ids, (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_DOUBLE_EQ(m.values(1, 1), -0.4);
  EXPECT_DOUBLE_EQ(m.values(2, 1), 100.0);
  EXPECT_EQ(m.level, Level::decision);
  EXPECT_EQ(m.branch, Branch::vision);

  // save/load is lossless with 17 significant digits
  Eigen::MatrixXd v(2, 1);
  v << 0.1 + 0.2, std::numbers::pi;
  auto q = temp_file("rt.csv", features_csv(fm(v)));
  EXPECT_EQ(load_features(q, Level::backbone, Branch::vlm).values, v);
}

TEST(LoadFeatures, RejectsDuplicateIdWithRowIndex) {
  auto p = temp_file("dup.csv", "sample_id,f0\ns1,1\ns2,2\ns1,3\n");
  try {
    load_features(p, Level::backbone, Branch::vlm);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::duplicate_id);
    EXPECT_EQ(e.row(), 2u);
    EXPECT_NE(std::string(e.what()).find("s1"), std::string::npos);
  }
}

TEST(LoadFeatures, HeaderOnlyIsTooFewSamples) {
  auto p = temp_file("empty.csv", "sample_id,f0,f1\n");
  EXPECT_EQ(code_of([&] { load_features(p, Level::backbone, Branch::vlm); }), ErrorCode::too_few_samples);
}

TEST(LoadFeatures, RejectsMalformedAndNonFiniteRows) {
  auto short_row = temp_file("short.csv", "sample_id,f0,f1\na,1,2\nb,3\n");
  try {
    load_features(short_row, Level::backbone, Branch::vlm);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::malformed_row);
    EXPECT_EQ(e.row(), 1u);
  }
  auto garbage = temp_file("garbage.csv", "sample_id,f0\na,1\nb,1x\n");
  EXPECT_EQ(code_of([&] { load_features(garbage, Level::backbone, Branch::vlm); }), ErrorCode::malformed_row);
  auto nan = temp_file("nan.csv", "sample_id,f0\na,1\nb,nan\n");
  EXPECT_EQ(code_of([&] { load_features(nan, Level::backbone, Branch::vlm); }), ErrorCode::non_finite_value);
  auto bad_header = temp_file("hdr.csv", "id,f0\na,1\nb,2\n");
  EXPECT_EQ(code_of([&] { load_features(bad_header, Level::backbone, Branch::vlm); }), ErrorCode::malformed_row);
}

TEST(Pair, IntersectsAndReportsDrops) {
  Eigen::MatrixXd xv(3, 1), yv(3, 1);
  xv << 1, 2, 3;
  yv << 20, 30, 40;
  auto x = make_features({"a", "b", "c"}, xv);
  auto y = make_features({"b", "c", "d"}, yv);
  auto r = pair(x, y);
  EXPECT_EQ(r.dataset.x.sample_ids, (std::vector<std::string>{"b", "c"}));
  EXPECT_EQ(r.dataset.y.sample_ids, (std::vector<std::string>{"b", "c"}));
  EXPECT_EQ(r.dataset.x.values(0, 0), 2);
  EXPECT_EQ(r.dataset.y.values(1, 0), 30);
  EXPECT_EQ(r.dropped_x, (std::vector<std::string>{"a"}));
  EXPECT_EQ(r.dropped_y, (std::vector<std::string>{"d"}));
}

TEST(Pair, CanonicalizesOrderForIdenticalSets) {
  Eigen::MatrixXd xv(3, 1), yv(3, 1);
  xv << 3, 1, 2;
  yv << 10, 30, 20;
  auto r = pair(make_features({"c", "a", "b"}, xv), make_features({"a", "c", "b"}, yv));
  EXPECT_TRUE(r.dropped_x.empty());
  EXPECT_TRUE(r.dropped_y.empty());
  EXPECT_EQ(r.dataset.x.sample_ids, (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(r.dataset.x.values.col(0), Eigen::Vector3d(1, 2, 3));
  EXPECT_EQ(r.dataset.y.values.col(0), Eigen::Vector3d(10, 20, 30));
}

TEST(Pair, DisjointIsEmptyIntersection) {
  Eigen::MatrixXd v(2, 1);
  v << 1, 2;
  EXPECT_EQ(code_of([&] { pair(make_features({"a", "b"}, v), make_features({"c", "d"}, v)); }),
            ErrorCode::empty_intersection);
}

TEST(Center, SmallExample) {
  Eigen::MatrixXd v(2, 1);
  v << 1, 3;
  auto c = center(fm(v));
  EXPECT_DOUBLE_EQ(c.values(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(c.values(1, 0), 1.0);
}

TEST(Center, MatchesDenseCenteringMatrix) {
  CounterRng rng(11, Stream::fixtures);
  const Eigen::MatrixXd x = gaussian(5, 3, rng, 4.0).array() + 2.0;
  const Eigen::MatrixXd h = Eigen::MatrixXd::Identity(5, 5) - Eigen::MatrixXd::Constant(5, 5, 1.0 / 5.0);
  const auto c = center(fm(x));
  EXPECT_LT((c.values - h * x).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(c.values.colwise().sum().cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Center, IdempotentAndLinear) {
  CounterRng rng(12, Stream::fixtures);
  for (int trial = 0; trial < 25; ++trial) {
    const Eigen::MatrixXd x = gaussian(7, 4, rng, 3.0).array() + rng.uniform(-5, 5);
    const Eigen::MatrixXd y = gaussian(7, 4, rng, 0.5).array() + rng.uniform(-5, 5);
    const double a = rng.uniform(-3, 3), b = rng.uniform(-3, 3);
    const Eigen::MatrixXd cx = center_columns(x);
    EXPECT_LT((center_columns(cx) - cx).cwiseAbs().maxCoeff(), 1e-12);
    const Eigen::MatrixXd lhs = center_columns(a * x + b * y);
    EXPECT_LT((lhs - (a * cx + b * center_columns(y))).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Standardizer, PopulationConvention) {
  Eigen::MatrixXd v(2, 1);
  v << 2, 4;
  auto s = fit_standardizer(fm(v));
  EXPECT_DOUBLE_EQ(s.mean(0), 3.0);
  EXPECT_DOUBLE_EQ(s.stddev(0), 1.0);  // sqrt(((2-3)^2 + (4-3)^2) / 2)
  auto z = apply_standardizer(fm(v), s);
  EXPECT_DOUBLE_EQ(z.values(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(z.values(1, 0), 1.0);
}

TEST(Standardizer, ConstantColumnIsFlooredAndZero) {
  Eigen::MatrixXd v(3, 2);
  v << 5, 1, 5, 2, 5, 3;
  auto s = fit_standardizer(fm(v));
  EXPECT_EQ(s.stddev(0), Standardizer::kStdFloor);
  EXPECT_EQ(s.floored_columns, (std::vector<Eigen::Index>{0}));
  auto z = apply_standardizer(fm(v), s);
  EXPECT_TRUE((z.values.col(0).array() == 0.0).all());
}

TEST(Standardizer, TrainStatisticsReusedOnTest) {
  CounterRng rng(3, Stream::fixtures);
  const Eigen::MatrixXd train = gaussian(40, 3, rng, 2.0).array() + 1.5;
  auto s = fit_standardizer(fm(train));
  auto z = apply_standardizer(fm(train), s);
  EXPECT_LT(z.values.colwise().mean().cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::RowVectorXd pop_std = (z.values.array().square().colwise().mean()).sqrt();
  EXPECT_LT((pop_std.array() - 1.0).abs().maxCoeff(), 1e-12);

  Eigen::MatrixXd test(2, 3);
  test.row(0) = s.mean.transpose();
  test.row(1) = s.mean.transpose();
  EXPECT_TRUE((standardize(test, s).array() == 0.0).all());
  EXPECT_THROW(fit_standardizer(fm(train), Split::test), Error);
}

namespace {
// Columns are orthogonal centered vectors, so the covariance is exactly diagonal.
Eigen::MatrixXd diagonal_covariance_data(double var1, double var2) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(5, 2);
  const double s1 = std::sqrt(var1 * 4.0 / 2.0), s2 = std::sqrt(var2 * 4.0 / 2.0);
  x(0, 0) = s1;
  x(1, 0) = -s1;
  x(2, 1) = s2;
  x(3, 1) = -s2;
  return x;
}
}  // namespace

TEST(PcaTruncate, CumulativeFractionRule) {
  const auto m = fm(diagonal_covariance_data(9.0, 1.0));
  auto b1 = pca_truncate(m, 0.89);
  EXPECT_EQ(b1.k(), 1);
  EXPECT_NEAR(b1.eigenvalues(0), 9.0, 1e-12);
  EXPECT_NEAR(b1.explained_fraction, 0.9, 1e-12);
  EXPECT_EQ(pca_truncate(m, 0.91).k(), 2);
}

TEST(PcaTruncate, IsotropicFullThreshold) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(6, 3);
  for (int j = 0; j < 3; ++j) {
    x(2 * j, j) = 1.0;
    x(2 * j + 1, j) = -1.0;
  }
  auto b = pca_truncate(fm(x), 1.0);
  EXPECT_EQ(b.k(), 3);
  EXPECT_LT((b.components.transpose() * b.components - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(PcaTruncate, DominantDirection) {
  EXPECT_EQ(pca_truncate(fm(diagonal_covariance_data(199.0, 1.0)), 0.99).k(), 1);
}

TEST(PcaTruncate, RankMonotoneInEtaAndRejectsZeroMatrix) {
  CounterRng rng(5, Stream::fixtures);
  const Eigen::MatrixXd x = center_columns(gaussian(50, 6, rng) * gaussian(6, 6, rng));
  Eigen::Index prev = 0;
  for (double eta = 0.05; eta <= 1.0; eta += 0.05) {
    auto b = pca_truncate(fm(x), eta);
    EXPECT_GE(b.k(), prev);
    prev = b.k();
    for (Eigen::Index i = 1; i < b.k(); ++i) EXPECT_LE(b.eigenvalues(i), b.eigenvalues(i - 1));
  }
  EXPECT_EQ(code_of([] { pca_truncate(fm(Eigen::MatrixXd::Zero(4, 2)), 0.9); }), ErrorCode::degenerate_input);
}

TEST(Whiten, CovarianceBecomesIdentity) {
  CounterRng rng(6, Stream::fixtures);
  Eigen::MatrixXd x = gaussian(400, 2, rng);
  x.col(0) *= 2.0;  // population covariance diag(4, 1)
  const auto c = center(fm(x));
  const auto b = pca_truncate(c, 1.0);
  const auto w = whiten(c, b);
  EXPECT_LT((sample_covariance(w.values) - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Whiten, WellConditionedOffDiagonalBound) {
  CounterRng rng(7, Stream::fixtures);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::MatrixXd mix = gaussian(5, 5, rng) + 3.0 * Eigen::MatrixXd::Identity(5, 5);
    const auto c = center(fm(gaussian(300, 5, rng) * mix));
    const auto b = pca_truncate(c, 1.0);
    ASSERT_GE(b.eigenvalues.minCoeff(), 1e-6);
    Eigen::MatrixXd cov = sample_covariance(whiten(c, b).values);
    // the ridge shrinks each diagonal entry to lambda / (lambda + ridge)
    const Eigen::ArrayXd expected = b.eigenvalues.array() / (b.eigenvalues.array() + b.ridge);
    EXPECT_LT((cov.diagonal().array() - expected).abs().maxCoeff(), 1e-9);
    cov.diagonal().setZero();
    EXPECT_LE(cov.cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(Whiten, AlreadyWhiteIsRotation) {
  CounterRng rng(8, Stream::fixtures);
  const Eigen::MatrixXd z = center_columns(gaussian(500, 3, rng));
  // make the sample covariance exactly I
  Eigen::LLT<Eigen::MatrixXd> llt(sample_covariance(z));
  const Eigen::MatrixXd white = z * llt.matrixU().solve(Eigen::MatrixXd::Identity(3, 3));
  const auto b = pca_truncate(fm(white), 1.0);
  const Eigen::MatrixXd map = b.whitening_map();
  EXPECT_LT((map.transpose() * map - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((sample_covariance(whiten(fm(white), b).values) - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Whiten, NearSingularDirectionStaysFinite) {
  Eigen::MatrixXd x = diagonal_covariance_data(1.0, 1e-14);
  const auto b = pca_truncate(fm(x), 1.0);
  const auto w = whiten(fm(x), b);
  EXPECT_TRUE(w.values.allFinite());
  EXPECT_LT(w.values.cwiseAbs().maxCoeff(), 10.0);
  Eigen::MatrixXd wrong(5, 3);
  EXPECT_THROW(whiten(fm(wrong.setOnes()), b), Error);
}

TEST(Procrustes, RecoversExactOrthogonalMap) {
  CounterRng rng(9, Stream::fixtures);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::MatrixXd src = center_columns(gaussian(30, 4, rng));
    const Eigen::MatrixXd q0 = random_orthogonal(4, rng);
    const auto map = procrustes(src, src * q0);
    EXPECT_LT(map.residual, 1e-8);
    EXPECT_LT((map.q - q0).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((map.q.transpose() * map.q - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Procrustes, SelfAlignmentIsIdentity) {
  CounterRng rng(10, Stream::fixtures);
  const Eigen::MatrixXd src = center_columns(gaussian(20, 3, rng));
  EXPECT_LT((procrustes(src, src).q - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Procrustes, MatchesGridSearchOverPlanarOrthogonalGroup) {
  // Oracle: exhaustive scan of O(2) (rotations and reflections) at 1e-5 rad.
  CounterRng rng(13, Stream::fixtures);
  const Eigen::MatrixXd src = center_columns(gaussian(20, 2, rng));
  const Eigen::MatrixXd ref = center_columns(gaussian(20, 2, rng));
  double best = std::numeric_limits<double>::infinity();
  const int steps = 628319;
  for (int i = 0; i < steps; ++i) {
    const double a = 2.0 * std::numbers::pi * i / steps;
    const double c = std::cos(a), s = std::sin(a);
    Eigen::Matrix2d rot, refl;
    rot << c, -s, s, c;
    refl << c, s, s, -c;
    best = std::min({best, (src * rot - ref).norm(), (src * refl - ref).norm()});
  }
  const auto map = procrustes(src, ref);
  EXPECT_LE(map.residual, best + 1e-12);
  EXPECT_NEAR(map.residual, best, 1e-3);
}

TEST(Procrustes, ResidualInvariantToSourceRotation) {
  CounterRng rng(14, Stream::fixtures);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd src = center_columns(gaussian(25, 4, rng));
    const Eigen::MatrixXd ref = center_columns(gaussian(25, 4, rng));
    const Eigen::MatrixXd r = random_orthogonal(4, rng);
    EXPECT_NEAR(procrustes(src, ref).residual, procrustes(Eigen::MatrixXd(src * r), ref).residual, 1e-8);
  }
  EXPECT_THROW(procrustes(Eigen::MatrixXd::Ones(3, 2), Eigen::MatrixXd::Ones(3, 3)), Error);
}

TEST(Project2d, IdenticalInputsGiveIdenticalClouds) {
  CounterRng rng(15, Stream::fixtures);
  const auto m = fm(gaussian(10, 4, rng));
  std::vector<LabeledFeatures> clouds{{"a", m}, {"b", m}};
  auto t = project_2d(clouds);
  ASSERT_EQ(t.rows.size(), 20u);
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(t.rows[i].pc1, t.rows[i + 10].pc1);
    EXPECT_EQ(t.rows[i].pc2, t.rows[i + 10].pc2);
    EXPECT_EQ(t.rows[i].model, "a");
    EXPECT_EQ(t.rows[i + 10].model, "b");
  }
  EXPECT_EQ(t.robust_means[0].median_pc1, t.robust_means[1].median_pc1);
}

TEST(Project2d, OneDimensionalVariationHasFlatSecondAxis) {
  CounterRng rng(16, Stream::fixtures);
  Eigen::VectorXd dir = gaussian(5, 1, rng).col(0).normalized();
  Eigen::MatrixXd x(30, 5);
  for (int i = 0; i < 30; ++i) x.row(i) = (rng.normal() * 3.0) * dir.transpose() + Eigen::RowVectorXd::Constant(5, 1.0);
  std::vector<LabeledFeatures> clouds{{"m", fm(x)}};
  auto t = project_2d(clouds);
  for (const auto& r : t.rows) EXPECT_NEAR(r.pc2, 0.0, 1e-9);
}

TEST(Project2d, PlantedClustersStaySeparated) {
  CounterRng rng(17, Stream::fixtures);
  const double separation = 6.0;
  Eigen::VectorXd offset = Eigen::VectorXd::Zero(6);
  offset(2) = separation;
  Eigen::MatrixXd a = gaussian(80, 6, rng, 0.5);
  Eigen::MatrixXd b = gaussian(80, 6, rng, 0.5).rowwise() + offset.transpose();
  std::vector<LabeledFeatures> clouds{{"a", fm(a)}, {"b", fm(b)}};
  auto t = project_2d(clouds);
  const double dx = t.robust_means[0].median_pc1 - t.robust_means[1].median_pc1;
  const double dy = t.robust_means[0].median_pc2 - t.robust_means[1].median_pc2;
  EXPECT_GE(std::hypot(dx, dy), 0.5 * separation);
  EXPECT_NE(t.csv().find("model,sample_id,pc1,pc2\n"), std::string::npos);
}

TEST(Project2d, RejectsTooFewRows) {
  Eigen::MatrixXd v(2, 2);
  v << 1, 2, 3, 4;
  std::vector<LabeledFeatures> clouds{{"a", fm(v)}};
  EXPECT_EQ(code_of([&] { project_2d(clouds); }), ErrorCode::too_few_samples);
}
