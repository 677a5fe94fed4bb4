#include "empc/data_pipeline.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

using namespace empc::data;
using empc::Mat;
using empc::Vec;

namespace {

Sample dummy(double v, SampleKind kind) {
  Sample s;
  s.inputs = Vec::Constant(2, v);
  s.targets = Vec::Constant(2, 1.0);
  s.kind = kind;
  return s;
}

Samples dummies(int n, SampleKind kind, double offset = 0.0) {
  Samples out;
  for (int i = 0; i < n; ++i) out.push_back(dummy(offset + i, kind));
  return out;
}

}  // namespace

TEST(Xcov, Examples) {
  const std::vector<double> s = {0.3, -1.2, 2.5, 0.7, 4.1};
  std::vector<double> neg(s.size());
  std::transform(s.begin(), s.end(), neg.begin(), [](double x) { return -x; });
  EXPECT_NEAR(normalized_xcov(s, s), 1.0, 1e-15);
  EXPECT_NEAR(normalized_xcov(s, neg), -1.0, 1e-15);
  EXPECT_NEAR(normalized_xcov({1, 2, 3}, {1, 3, 5}), 1.0, 1e-15);
  EXPECT_THROW(normalized_xcov({1, 1, 1}, {1, 2, 3}), empc::ConfigError);
  EXPECT_THROW(normalized_xcov({1}, {1}), empc::ConfigError);
  EXPECT_THROW(normalized_xcov({1, 2}, {1, 2, 3}), empc::ConfigError);
}

TEST(Xcov, SymmetricAndAffineInvariant) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  std::vector<double> a(300), b(300), a2(300);
  for (int i = 0; i < 300; ++i) {
    a[i] = nd(rng);
    b[i] = 0.4 * a[i] + nd(rng);
    a2[i] = 3.7 * a[i] - 12.0;
  }
  EXPECT_NEAR(normalized_xcov(a, b), normalized_xcov(b, a), 1e-15);
  EXPECT_NEAR(normalized_xcov(a, b), normalized_xcov(a2, b), 1e-12);
}

TEST(SelectInputs, RetainsCopyOfTargetAndDropsNoise) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  const int n = 5000;
  TargetSeries steady, transient;
  std::vector<double> noise_s(n), noise_t(n);
  for (int i = 0; i < n; ++i) {
    steady.nox.push_back(nd(rng));
    steady.soot.push_back(nd(rng));
    transient.nox.push_back(nd(rng));
    transient.soot.push_back(nd(rng));
    noise_s[i] = nd(rng);
    noise_t[i] = nd(rng);
  }
  const std::vector<Candidate> c = {{"copy", steady.nox, transient.nox}, {"noise", noise_s, noise_t}};
  const auto kept = select_inputs(c, steady, transient, 0.05);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0], "copy");
  EXPECT_LT(std::abs(normalized_xcov(noise_t, transient.nox)), 0.05);
  EXPECT_THROW(select_inputs(c, steady, transient, 0.0), empc::ConfigError);
}

TEST(Mahalanobis, IdentityAndEuclideanCasesExact) {
  DatasetStats st;
  st.mean = Vec::Zero(10);
  st.mean(3) = 1.5;
  st.cov = Mat::Identity(10, 10);
  EXPECT_EQ(mahalanobis(st.mean, st), 0.0);
  Vec y = st.mean;
  y(0) += 3.0;
  y(1) += 4.0;
  EXPECT_EQ(mahalanobis(y, st), 5.0);
}

TEST(Mahalanobis, MatchesExplicitInverseOracle) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd;
  Mat M(10, 10);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) M(i, j) = nd(rng);
  DatasetStats st;
  st.cov = M * M.transpose() + 0.5 * Mat::Identity(10, 10);
  st.mean = Vec::Zero(10);
  for (int i = 0; i < 10; ++i) st.mean(i) = nd(rng);
  const Mat inv = st.cov.fullPivLu().inverse();
  for (int k = 0; k < 20; ++k) {
    Vec y(10);
    for (int i = 0; i < 10; ++i) y(i) = st.mean(i) + 2.0 * nd(rng);
    const double ref = std::sqrt((y - st.mean).dot(inv * (y - st.mean)));
    EXPECT_NEAR(mahalanobis(y, st), ref, 1e-10 * ref);
  }
}

TEST(Mahalanobis, AffineInvariance) {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> nd;
  Mat M(4, 4), T(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      M(i, j) = nd(rng);
      T(i, j) = nd(rng) + (i == j ? 3.0 : 0.0);
    }
  DatasetStats a;
  a.cov = M * M.transpose() + Mat::Identity(4, 4);
  a.mean = Vec::Ones(4);
  const Vec shift = Vec::Constant(4, -2.0);
  DatasetStats b;
  b.cov = T * a.cov * T.transpose();
  b.mean = T * a.mean + shift;
  Vec y(4);
  y << 0.3, -1.0, 2.0, 0.5;
  EXPECT_NEAR(mahalanobis(y, a), mahalanobis(T * y + shift, b), 1e-9);
}

TEST(Mahalanobis, SingularCovarianceIsRegularized) {
  DatasetStats st;
  st.mean = Vec::Zero(3);
  st.cov = Mat::Zero(3, 3);
  st.cov(0, 0) = 1.0;
  st.cov(1, 1) = 1.0;
  Vec y = Vec::Zero(3);
  y(0) = 2.0;
  EXPECT_NEAR(mahalanobis(y, st), 2.0, 1e-6);
  DatasetStats zero;
  zero.mean = Vec::Zero(2);
  zero.cov = Mat::Zero(2, 2);
  EXPECT_THROW(mahalanobis(Vec::Zero(2), zero), empc::NumericalError);
}

TEST(FilterOutliers, EdgeCasesAndPlantedOutliers) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  Samples steady, transient;
  for (int i = 0; i < 400; ++i) {
    Sample s;
    s.inputs.resize(3);
    for (int j = 0; j < 3; ++j) s.inputs(j) = std::clamp(nd(rng), -2.5, 2.5);
    s.targets = Vec::Ones(2);
    s.kind = SampleKind::SteadyState;
    steady.push_back(s);
    s.kind = SampleKind::Transient;
    for (int j = 0; j < 3; ++j) s.inputs(j) = std::clamp(nd(rng), -2.5, 2.5);
    transient.push_back(s);
  }
  const std::vector<int> planted = {17, 80, 150, 233, 399};
  for (int idx : planted) transient[idx].inputs = Vec::Constant(3, 40.0 + idx);
  const DatasetStats st = compute_stats(steady);
  EXPECT_EQ(filter_outliers(transient, st, std::numeric_limits<double>::infinity()).size(), transient.size());

  double inlier_max = 0.0;
  for (int i = 0; i < 400; ++i)
    if (std::find(planted.begin(), planted.end(), i) == planted.end())
      inlier_max = std::max(inlier_max, mahalanobis(transient[i].inputs, st));
  const auto kept = filter_outliers(transient, st, inlier_max);
  EXPECT_EQ(kept.size(), transient.size() - planted.size());
  for (const auto& s : kept) EXPECT_LT(s.inputs.maxCoeff(), 39.0);

  Samples with_mean = transient;
  with_mean[5].inputs = st.mean;
  const auto only_mean = filter_outliers(with_mean, st, 0.0);
  ASSERT_EQ(only_mean.size(), 1u);
  EXPECT_EQ(only_mean[0].inputs, st.mean);

  EXPECT_EQ(filter_outliers(steady, st, 0.0).size(), steady.size());
}

TEST(FilterOutliers, MonotoneInEpsilon) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  Samples s;
  for (int i = 0; i < 300; ++i) {
    Sample x;
    x.inputs.resize(2);
    x.inputs << nd(rng), 2.0 * nd(rng);
    x.targets = Vec::Ones(2);
    x.kind = i < 150 ? SampleKind::SteadyState : SampleKind::Transient;
    s.push_back(x);
  }
  Samples steady(s.begin(), s.begin() + 150);
  const auto st = compute_stats(steady);
  std::size_t prev = 0;
  for (double eps : {0.5, 1.0, 1.5, 2.0, 3.0}) {
    const auto kept = filter_outliers(s, st, eps);
    EXPECT_GE(kept.size(), prev);
    prev = kept.size();
  }
  const double e = default_epsilon(steady, st);
  std::size_t within = 0;
  for (const auto& x : steady)
    if (mahalanobis(x.inputs, st) <= e) ++within;
  EXPECT_EQ(within, static_cast<std::size_t>(std::ceil(0.975 * 150)));
}

TEST(Balance, ReferenceSizes) {
  EXPECT_EQ(balance(dummies(306, SampleKind::SteadyState), dummies(12001, SampleKind::Transient)).size(), 14143u);
  EXPECT_EQ(balance({}, dummies(12, SampleKind::Transient)).size(), 12u);
  const auto one = balance(dummies(1, SampleKind::SteadyState, 500.0), dummies(3, SampleKind::Transient));
  EXPECT_EQ(std::count_if(one.begin(), one.end(), [](const Sample& s) { return s.inputs(0) == 500.0; }), 7);
}

TEST(Split, RoundingRuleAndDeterminism) {
  const auto a = split(dummies(100, SampleKind::Transient), {}, 42);
  EXPECT_EQ(a.train.size(), 70u);
  EXPECT_EQ(a.validation.size(), 15u);
  EXPECT_EQ(a.test.size(), 15u);
  const auto b = split(dummies(10, SampleKind::Transient), {}, 42);
  EXPECT_EQ(b.train.size(), 7u);
  EXPECT_EQ(b.validation.size(), 1u);
  EXPECT_EQ(b.test.size(), 2u);
  const auto c = split(dummies(100, SampleKind::Transient), {}, 42);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].inputs, c.train[i].inputs);
  std::set<double> seen;
  for (const auto* part : {&a.train, &a.validation, &a.test})
    for (const auto& s : *part) seen.insert(s.inputs(0));
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_THROW(split({}, {}, 1), empc::ConfigError);
  EXPECT_THROW(split(dummies(3, SampleKind::Transient), {0.5, 0.5, 0.5}, 1), empc::ConfigError);
}

TEST(Split, StratifiedPoolDuplicatesOnlyTraining) {
  const auto s = split_stratified(dummies(306, SampleKind::SteadyState, 1e6), dummies(12001, SampleKind::Transient),
                                  {}, 9);
  EXPECT_EQ(s.train.size(), 8400u + 7u * 214u);
  EXPECT_EQ(s.validation.size(), 1800u + 45u);
  EXPECT_EQ(s.test.size(), 1801u + 47u);
  std::set<double> train_steady;
  for (const auto& x : s.train)
    if (x.kind == SampleKind::SteadyState) train_steady.insert(x.inputs(0));
  for (const auto* part : {&s.validation, &s.test})
    for (const auto& x : *part) EXPECT_EQ(train_steady.count(x.inputs(0)), 0u);
}

TEST(Generation, DropsExactlyPreInjection) {
  const auto params = empc::plant::reference_params();
  GenerationConfig cfg;
  cfg.steady_points = 306;
  cfg.transient_steps = 12001;
  cfg.seed = 1;
  const Samples steady = generate_steady(cfg, params);
  const Samples transient = generate_transient(cfg, params);
  ASSERT_EQ(steady.size(), 306u);
  ASSERT_EQ(transient.size(), 12001u);
  const auto names = candidate_names();
  ASSERT_EQ(names.size(), 11u);
  std::vector<Candidate> cands;
  for (std::size_t j = 0; j < names.size(); ++j) {
    Candidate c;
    c.name = names[j];
    for (const auto& s : steady) c.steady.push_back(s.inputs(static_cast<Eigen::Index>(j)));
    for (const auto& s : transient) c.transient.push_back(s.inputs(static_cast<Eigen::Index>(j)));
    cands.push_back(c);
  }
  TargetSeries ts, tt;
  for (const auto& s : steady) {
    ts.nox.push_back(s.targets(0));
    ts.soot.push_back(s.targets(1));
  }
  for (const auto& s : transient) {
    tt.nox.push_back(s.targets(0));
    tt.soot.push_back(s.targets(1));
  }
  const auto kept = select_inputs(cands, ts, tt, 0.05);
  EXPECT_EQ(kept.size(), 10u);
  EXPECT_EQ(std::find(kept.begin(), kept.end(), "pre_injection_fuel_rate"), kept.end());
}

TEST(DatasetCsv, RoundTrip) {
  Samples s = dummies(4, SampleKind::Transient);
  s[1].kind = SampleKind::SteadyState;
  s[2].timestamp = 0.30000000000000004;
  const auto path = std::filesystem::temp_directory_path() / "empc_test_dataset.csv";
  write_samples_csv(path, s, {"a", "b"});
  std::vector<std::string> names;
  const Samples r = read_samples_csv(path, &names);
  ASSERT_EQ(r.size(), 4u);
  EXPECT_EQ(names, (std::vector<std::string>{"a", "b"}));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(r[i].inputs, s[i].inputs);
    EXPECT_EQ(r[i].kind, s[i].kind);
    EXPECT_EQ(r[i].timestamp, s[i].timestamp);
  }
  EXPECT_THROW(read_samples_csv(std::filesystem::temp_directory_path() / "empc_missing.csv"), empc::ArtifactError);
}
