#include "empc/condense.hpp"
#include "empc/qp.hpp"
#include "empc/rate_model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace empc;
using namespace empc::mpc;

namespace {

Mat random_stable(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> g(0.0, 1.0);
  Mat A = Mat::NullaryExpr(n, n, [&] { return g(rng); });
  return A * (0.9 / std::max(spectral_radius(A), 1e-9));
}

Signal sig(const Mat& C, const Mat& D) { return {C, D, {}}; }

}  // namespace

TEST(RateModel, ZeroModelIsTheIdentityTemplate) {
  const auto m = make_rate_model(Mat::Zero(2, 2), Mat::Zero(2, 3));
  Mat A(7, 7), B(7, 3);
  A.setZero();
  A.block(2, 0, 2, 2).setIdentity();
  A.block(2, 2, 2, 2).setIdentity();
  A.block(4, 4, 3, 3).setIdentity();
  B.setZero();
  B.bottomRows(3).setIdentity();
  EXPECT_EQ(m.A_ext, A);
  EXPECT_EQ(m.B_ext, B);
  EXPECT_EQ(m.x_prev_offset(), 2);
  EXPECT_EQ(m.u_prev_offset(), 4);
}

TEST(RateModel, BlocksMatchTemplate) {
  std::mt19937_64 rng(1);
  const Mat A = random_stable(rng, 2);
  const Mat B = Mat::Random(2, 3);
  const auto m = make_rate_model(A, B);
  EXPECT_EQ(Mat(m.A_ext.topLeftCorner(2, 2)), A);
  EXPECT_EQ(Mat(m.A_ext.topRightCorner(2, 5)), Mat::Zero(2, 5));
  EXPECT_EQ(Mat(m.B_ext.topRows(2)), B);
  const auto t = make_tracking_rate_model(A, B);
  EXPECT_EQ(t.n_ext(), 3 * 2 + 3);
  EXPECT_EQ(Mat(t.A_ext.block(2, 0, 2, 2)), A);
  EXPECT_EQ(Mat(t.B_ext.middleRows(2, 2)), B);
  EXPECT_EQ(t.error_offset(), 2);
}

TEST(RateModel, DimensionMismatchIsConfigError) {
  EXPECT_THROW(make_rate_model(Mat::Zero(2, 3), Mat::Zero(2, 1)), ConfigError);
  EXPECT_THROW(make_rate_model(Mat::Zero(2, 2), Mat::Zero(3, 1)), ConfigError);
  const auto m = make_rate_model(Mat::Zero(2, 2), Mat::Zero(2, 1));
  EXPECT_THROW(m.error_offset(), ConfigError);
  EXPECT_THROW(extended_state(m, Vec::Zero(3), Vec::Zero(2), Vec::Zero(1)), ConfigError);
}

TEST(RateModel, EquilibriumWithZeroIncrementsStaysConstant) {
  std::mt19937_64 rng(2);
  const auto m = make_rate_model(random_stable(rng, 2), Mat::Random(2, 3));
  const Vec x = Vec::Random(2), u = Vec::Random(3);
  const Vec e0 = extended_state(m, x, x, u);
  const Mat X = rollout(m, e0, Mat::Zero(3, 20));
  for (int j = 0; j <= 20; ++j) EXPECT_EQ(X.col(j), e0);
}

// Direct affine model x+ = A x + B u + c, with c standing for the unknown
// equilibrium offset.  The rate model never sees c.
TEST(RateModel, ReproducesDirectRolloutForHundredModels) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int nx = 2, nu = 3, N = 30;
    const Mat A = random_stable(rng, nx);
    const Mat B = Mat::NullaryExpr(nx, nu, [&] { return g(rng); });
    const Vec c = Vec::NullaryExpr(nx, [&] { return 5.0 * g(rng); });
    const Vec x_prev = Vec::NullaryExpr(nx, [&] { return g(rng); });
    const Vec u_prev = Vec::NullaryExpr(nu, [&] { return g(rng); });
    Mat u(nu, N);
    for (int j = 0; j < N; ++j) u.col(j) = Vec::NullaryExpr(nu, [&] { return g(rng); });
    Mat x(nx, N + 1);
    x.col(0) = A * x_prev + B * u_prev + c;
    for (int j = 0; j < N; ++j) x.col(j + 1) = A * x.col(j) + B * u.col(j) + c;

    const auto m = make_rate_model(A, B);
    Mat du(nu, N);
    du.col(0) = u.col(0) - u_prev;
    for (int j = 1; j < N; ++j) du.col(j) = u.col(j) - u.col(j - 1);
    const Mat X = rollout(m, extended_state(m, x.col(0), x_prev, u_prev), du);
    for (int j = 0; j <= N; ++j) {
      const Vec xr = X.col(j).segment(m.x_prev_offset(), nx) + X.col(j).head(nx);
      worst = std::max(worst, (xr - x.col(j)).cwiseAbs().maxCoeff());
      if (j > 0) worst = std::max(worst, (X.col(j).segment(m.u_prev_offset(), nu) - u.col(j - 1)).cwiseAbs().maxCoeff());
    }
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(RateModel, TrackingErrorFollowsState) {
  std::mt19937_64 rng(4);
  const Mat A = random_stable(rng, 2);
  const Mat B = Mat::Random(2, 2);
  const Vec c = Vec::Random(2), r = Vec::Random(2);
  const Vec z_prev = Vec::Random(2), v_prev = Vec::Random(2);
  const auto m = make_tracking_rate_model(A, B);
  Vec z = A * z_prev + B * v_prev + c;
  const Mat du = Mat::Random(2, 15);
  const Mat X = rollout(m, extended_tracking_state(m, z, z_prev, r, v_prev), du);
  Vec v = v_prev;
  for (int j = 0; j < 15; ++j) {
    EXPECT_LT((X.col(j).segment(2, 2) - (z - r)).cwiseAbs().maxCoeff(), 1e-12);
    v += du.col(j);
    z = A * z + B * v + c;
  }
}

TEST(Condense, CostMatchesDirectSimulation) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  OcpSpec p;
  p.A = random_stable(rng, 3);
  p.B = Mat::NullaryExpr(3, 2, [&] { return g(rng); });
  p.c = Vec::NullaryExpr(3, [&] { return g(rng); });
  p.x0 = Vec::NullaryExpr(3, [&] { return g(rng); });
  p.N = 5;
  p.R = 0.3 * Mat::Identity(2, 2);
  p.quadratic.push_back({sig(Mat::Identity(3, 3).topRows(2), Mat::Zero(2, 2)), Vec::Ones(2), Mat::Identity(2, 2), 0, 5});
  p.linear.push_back({sig(Mat::Zero(1, 3), Mat::Ones(1, 2)), Vec::Constant(1, 0.7), 0, 4});
  p.absolute.push_back({sig(Mat::Ones(1, 3), Mat::Zero(1, 2)), 2.0, 1, 5});
  BoundConstraint soft{sig(Mat::Identity(3, 3).bottomRows(1), Mat::Zero(1, 2)), Vec::Constant(1, -1.0),
                       Vec::Constant(1, 1.0), 1, 5, true};
  p.bounds.push_back(soft);
  p.slack_linear = 3.0;
  p.slack_quadratic = 0.5;
  const auto cq = condense(p);
  ASSERT_EQ(cq.qp.num_vars(), 10 + 5 + 5);
  for (int t = 0; t < 20; ++t) {
    Vec w = Vec::NullaryExpr(cq.qp.num_vars(), [&] { return g(rng); });
    const Mat X = cq.predict(w);
    for (int j = 1; j <= 5; ++j) w[cq.aux_offset + j - 1] = std::abs(X.col(j).sum());
    const double direct = ocp_cost(p, cq.inputs(w), cq.slacks(w));
    EXPECT_NEAR(qp_objective(cq.qp, w) + cq.constant, direct, 1e-9 * (1.0 + std::abs(direct)));
  }
}

TEST(Condense, ZeroProblemReturnsZeroInput) {
  OcpSpec p;
  p.A = Mat::Identity(2, 2);
  p.B = Mat::Identity(2, 2);
  p.x0 = Vec::Ones(2);
  p.N = 1;
  const auto cq = condense(p);
  const auto r = solve_qp(cq.qp);
  ASSERT_TRUE(r.ok());
  EXPECT_LT(r.w.norm(), 1e-12);
  EXPECT_EQ(qp_objective(cq.qp, r.w) + cq.constant, 0.0);
}

TEST(Condense, TwoStepMatchesGridSearch) {
  OcpSpec p;
  p.A = (Mat(2, 2) << 0.9, 0.2, 0.0, 0.7).finished();
  p.B = (Mat(2, 1) << 0.0, 1.0).finished();
  p.x0 = Eigen::Vector2d(1.0, -0.5);
  p.N = 2;
  p.R = Mat::Constant(1, 1, 0.1);
  p.quadratic.push_back({sig(Mat::Identity(2, 2), Mat::Zero(2, 1)), Eigen::Vector2d(0.3, 0.0), Mat::Identity(2, 2), 1, 2});
  p.bounds.push_back({sig(Mat::Zero(1, 2), Mat::Ones(1, 1)), Vec::Constant(1, -0.4), Vec::Constant(1, 0.4), 0, 1, false});
  const auto cq = condense(p);
  const auto r = solve_qp(cq.qp);
  ASSERT_TRUE(r.ok());

  auto cost = [&](double a, double b) {
    Vec x = p.x0;
    double J = 0.1 * (a * a + b * b);
    for (double u : {a, b}) {
      x = p.A * x + p.B * u;
      J += (x - Eigen::Vector2d(0.3, 0.0)).squaredNorm();
    }
    return J;
  };
  double best = 1e300, ba = 0, bb = 0;
  for (double a = -0.4; a <= 0.4 + 1e-12; a += 0.002)
    for (double b = -0.4; b <= 0.4 + 1e-12; b += 0.002)
      if (const double J = cost(a, b); J < best) {
        best = J;
        ba = a;
        bb = b;
      }
  for (double a = ba - 0.002; a <= ba + 0.002; a += 0.0001)
    for (double b = bb - 0.002; b <= bb + 0.002; b += 0.0001)
      if (std::abs(a) <= 0.4 && std::abs(b) <= 0.4)
        if (const double J = cost(a, b); J < best) {
          best = J;
          ba = a;
          bb = b;
        }
  EXPECT_NEAR(r.w[0], ba, 1e-3);
  EXPECT_NEAR(r.w[1], bb, 1e-3);
  EXPECT_NEAR(qp_objective(cq.qp, r.w) + cq.constant, best, 1e-6);
}

TEST(Condense, SlackEqualsUnavoidableViolation) {
  OcpSpec p;
  p.A = Mat::Identity(1, 1);
  p.B = Mat::Zero(1, 1);
  p.x0 = Vec::Constant(1, 3.0);
  p.N = 4;
  p.R = Mat::Identity(1, 1);
  p.bounds.push_back({sig(Mat::Identity(1, 1), Mat::Zero(1, 1)), Vec::Constant(1, -INFINITY), Vec::Constant(1, 2.0),
                      1, 4, true});
  p.slack_linear = 1e3;
  const auto cq = condense(p);
  const auto r = solve_qp(cq.qp);
  ASSERT_TRUE(r.ok());
  const Vec eps = cq.slacks(r.w);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(eps[j], 1.0, 1e-9);
}

TEST(Condense, OptimumBeatsRandomFeasiblePoints) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.0, 1.0);
  OcpSpec p;
  p.A = random_stable(rng, 2);
  p.B = Mat::NullaryExpr(2, 2, [&] { return g(rng); });
  p.x0 = Vec::NullaryExpr(2, [&] { return 2.0 * g(rng); });
  p.N = 4;
  p.R = 0.2 * Mat::Identity(2, 2);
  p.quadratic.push_back({sig(Mat::Identity(2, 2), Mat::Zero(2, 2)), Vec::Zero(2), Mat::Identity(2, 2), 0, 4});
  p.absolute.push_back({sig(Mat::Ones(1, 2), Mat::Zero(1, 2)), 0.5, 1, 4});
  p.bounds.push_back({sig(Mat::Zero(2, 2), Mat::Identity(2, 2)), Vec::Constant(2, -1.0), Vec::Constant(2, 1.0), 0, 3, false});
  p.bounds.push_back({sig(Mat::Identity(2, 2).topRows(1), Mat::Zero(1, 2)), Vec::Constant(1, -0.5),
                      Vec::Constant(1, 0.5), 1, 4, true});
  p.slack_linear = 10.0;
  const auto cq = condense(p);
  const auto r = solve_qp(cq.qp);
  ASSERT_TRUE(r.ok());
  const auto k = kkt_residuals(cq.qp, r);
  EXPECT_LT(k.stationarity, 1e-8);
  EXPECT_LT(k.primal, 1e-8);
  const double opt = ocp_cost(p, cq.inputs(r.w), cq.slacks(r.w));
  std::uniform_real_distribution<double> box(-1.0, 1.0);
  for (int t = 0; t < 1000; ++t) {
    Mat u(2, 4);
    for (int j = 0; j < 4; ++j) u.col(j) = Vec::NullaryExpr(2, [&] { return box(rng); });
    // Smallest feasible slack per step.
    Vec x = p.x0, eps(4);
    for (int j = 0; j < 4; ++j) {
      x = p.A * x + p.B * u.col(j);
      eps[j] = std::max(0.0, std::abs(x[0]) - 0.5);
    }
    EXPECT_LE(opt, ocp_cost(p, u, eps) + 1e-9);
  }
}

TEST(Condense, ValidationCatchesBadSpec) {
  OcpSpec p;
  p.A = Mat::Identity(2, 2);
  p.B = Mat::Identity(2, 1).leftCols(1);
  p.x0 = Vec::Zero(2);
  p.N = 3;
  p.quadratic.push_back({sig(Mat::Identity(2, 2), Mat::Zero(2, 1)), Vec::Zero(2), -Mat::Identity(2, 2), 0, 3});
  EXPECT_THROW(condense(p), ConfigError);
  p.quadratic.back().W = Mat::Identity(2, 2);
  p.quadratic.back().last = 4;
  EXPECT_THROW(condense(p), ConfigError);
  p.quadratic.back().last = 3;
  p.bounds.push_back({sig(Mat::Identity(2, 2), Mat::Zero(2, 1)), Vec::Zero(2), Vec::Ones(2), 0, 3, true});
  EXPECT_THROW(condense(p), ConfigError);  // soft bound at j = 0
  p.bounds.back().first = 1;
  EXPECT_NO_THROW(condense(p));
}

TEST(Condense, DumpRoundTrips) {
  OcpSpec p;
  p.A = Mat::Identity(1, 1);
  p.B = Mat::Ones(1, 1);
  p.x0 = Vec::Ones(1);
  p.N = 3;
  p.R = Mat::Identity(1, 1);
  const auto cq = condense(p);
  const auto dir = std::filesystem::temp_directory_path() / "empc_dump_test";
  const auto path = dump_qp(dir, "case", cq.qp);
  const auto back = qp_from_json(read_text_file(path));
  EXPECT_EQ(back.H, cq.qp.H);
  EXPECT_EQ(back.f, cq.qp.f);
  std::filesystem::remove_all(dir);
}
