#include "empc/controllers.hpp"
#include "empc/pipeline.hpp"
#include "synthetic.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace empc;
using namespace empc::control;

namespace {

const plant::OperatingPoint kNode{1700.0, 43.0};

Vec v2(const plant::AirpathState& z) { return Eigen::Vector2d(z.intake_pressure, z.egr_rate); }
Vec v2(const plant::ActuatorInput& v) { return Eigen::Vector2d(v.egr_valve, v.vgt_position); }

EmpcInputs at_equilibrium(const plant::OperatingPoint& rho) {
  const auto lm = synth::emissions_local(rho);
  return {lm.x_ss, lm.x_ss, lm.u_ss, rho};
}

struct Fixture : ::testing::Test {
  lpv::LpvGridModel air = synth::airpath_model();
  lpv::LpvGridModel em = synth::emissions_model();
  TargetMaps maps = target_maps_from(air);
};

using TargetMapTest = Fixture;
using EmpcTest = Fixture;
using AirpathTest = Fixture;
using PipelineTest = Fixture;

}  // namespace

TEST_F(TargetMapTest, ExactAtNodesAndBilinearBetween) {
  for (std::size_t i = 0; i < maps.grid.speeds.size(); ++i)
    for (std::size_t j = 0; j < maps.grid.fuels.size(); ++j) {
      const auto rho = maps.grid.node(i, j);
      EXPECT_EQ(v2(lookup_targets(maps, rho)), synth::airpath_ss(rho));
      EXPECT_EQ(v2(lookup_actuators(maps, rho)), synth::airpath_local(rho).u_ss);
    }
  // airpath_ss is affine in (speed, fuel): bilinear interpolation is exact.
  const plant::OperatingPoint mid{1234.0, 57.5};
  EXPECT_NEAR((v2(lookup_targets(maps, mid)) - synth::airpath_ss(mid)).norm(), 0.0, 1e-12);
}

TEST_F(TargetMapTest, RejectsOutOfRangeTables) {
  TargetMaps bad = maps;
  bad.egr_rate[3] = 1.5;
  EXPECT_THROW(validate(bad), ConfigError);
  bad = maps;
  bad.vgt_position.pop_back();
  EXPECT_THROW(validate(bad), ConfigError);
}

TEST_F(EmpcTest, SmallNoxPenaltyKeepsLookupTargets) {
  EmpcWeights w;
  w.eta = 1e-6;
  const auto r = empc_step(at_equilibrium(kNode), maps, em, w, make_scenario(ScenarioName::EmpcA));
  ASSERT_FALSE(r.fallback) << r.warning;
  const auto lut = lookup_targets(maps, kNode);
  EXPECT_NEAR(r.targets.intake_pressure, lut.intake_pressure, 1e-3);
  EXPECT_NEAR(r.targets.egr_rate, lut.egr_rate, 1e-5);
  EXPECT_NEAR(r.targets.fuel_rate, kNode.fuel_rate, 1e-9);
}

TEST_F(EmpcTest, BaselineScenarioReturnsLookupTargets) {
  const auto r = empc_step(at_equilibrium(kNode), maps, em, EmpcWeights{}, make_scenario(ScenarioName::Baseline));
  const auto lut = lookup_targets(maps, kNode);
  EXPECT_EQ(r.targets.intake_pressure, lut.intake_pressure);
  EXPECT_EQ(r.targets.egr_rate, lut.egr_rate);
  EXPECT_EQ(r.targets.fuel_rate, kNode.fuel_rate);
  EXPECT_FALSE(r.fallback);
}

TEST_F(EmpcTest, FuelStaysInBandOnRandomStates) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> sp(800, 3200), fu(10, 120), n(-2, 2);
  EmpcWeights w;
  for (int k = 0; k < 60; ++k) {
    const plant::OperatingPoint rho{sp(rng), fu(rng)};
    auto in = at_equilibrium(rho);
    const auto lm = synth::emissions_local(rho);
    in.x += lm.sigma_x.cwiseProduct(Eigen::Vector2d(n(rng), n(rng)));
    in.x_prev += lm.sigma_x.cwiseProduct(Eigen::Vector2d(n(rng), n(rng)));
    in.u_prev += lm.sigma_u.cwiseProduct(Eigen::Vector3d(n(rng), 0.2 * n(rng), n(rng)));
    for (auto name : {ScenarioName::EmpcB, ScenarioName::EmpcD}) {
      w.eta = 20.0;
      w.soot_max = lm.x_ss[1];
      const auto r = empc_step(in, maps, em, w, make_scenario(name));
      ASSERT_FALSE(r.fallback) << r.warning;
      EXPECT_GE(r.targets.fuel_rate, 0.9 * rho.fuel_rate);
      EXPECT_LE(r.targets.fuel_rate, rho.fuel_rate);
      const auto lut = lookup_targets(maps, rho);
      EXPECT_LE(std::abs(r.targets.intake_pressure - lut.intake_pressure), w.pim_band + 1e-9);
      EXPECT_LE(std::abs(r.targets.egr_rate - lut.egr_rate), w.chi_band + 1e-9);
    }
  }
}

TEST_F(EmpcTest, HigherNoxPenaltyLowersPredictedNox) {
  EmpcWeights lo, hi;
  lo.eta = 1.0;
  hi.eta = 20.0;
  const auto in = at_equilibrium(kNode);
  const auto a = empc_step(in, maps, em, lo, make_scenario(ScenarioName::EmpcA));
  const auto b = empc_step(in, maps, em, hi, make_scenario(ScenarioName::EmpcB));
  ASSERT_FALSE(a.fallback || b.fallback);
  EXPECT_LT(b.predicted.row(0).tail(lo.horizon).sum(), a.predicted.row(0).tail(lo.horizon).sum());
  EXPECT_LE(b.predicted(0, 1), a.predicted(0, 1) + 1e-9);
  EXPECT_GE(b.targets.egr_rate, a.targets.egr_rate);
}

TEST_F(EmpcTest, SootLimitReportsSlackAndHoldsSoftBound) {
  EmpcWeights w;
  auto in = at_equilibrium(kNode);
  w.soot_max = in.x[1];
  in.x[1] += 2.0;  // settled 4 sigma above the limit: one step cannot clear it
  in.x_prev[1] += 2.0;
  const auto r = empc_step(in, maps, em, w, make_scenario(ScenarioName::EmpcC));
  ASSERT_FALSE(r.fallback) << r.warning;
  ASSERT_EQ(r.slack.size(), w.horizon);
  EXPECT_GT(r.slack[0], 0.0);
  for (int j = 1; j <= w.horizon; ++j) EXPECT_LE(r.predicted(1, j), w.soot_max + r.slack[j - 1] + 1e-6) << j;
  // Without the limit there is no slack and soot is left higher.
  const auto free = empc_step(in, maps, em, w, make_scenario(ScenarioName::EmpcA));
  EXPECT_EQ(free.slack.norm(), 0.0);
  EXPECT_GT(free.predicted(1, w.horizon), r.predicted(1, w.horizon));
}

TEST_F(EmpcTest, InvalidWeightsAreConfigErrors) {
  EmpcWeights w;
  w.R(0, 0) = -1.0;
  EXPECT_THROW(validate(w), ConfigError);
  w = {};
  w.horizon = 0;
  EXPECT_THROW(validate(w), ConfigError);
  w = {};
  w.beta = 0.0;
  EXPECT_THROW(validate(w), ConfigError);
  EXPECT_THROW(scenario_from_string("EMPC-E"), ConfigError);
}

TEST_F(EmpcTest, ScenarioFlags) {
  EXPECT_FALSE(make_scenario(ScenarioName::Baseline).empc_enabled());
  EXPECT_FALSE(make_scenario(ScenarioName::EmpcA).high_nox_penalty);
  EXPECT_TRUE(make_scenario(ScenarioName::EmpcB).high_nox_penalty);
  EXPECT_TRUE(make_scenario(ScenarioName::EmpcC).soot_limit);
  EXPECT_FALSE(make_scenario(ScenarioName::EmpcC).high_nox_penalty);
  EXPECT_TRUE(make_scenario(ScenarioName::EmpcD).soot_limit && make_scenario(ScenarioName::EmpcD).high_nox_penalty);
  for (auto n : {ScenarioName::Baseline, ScenarioName::EmpcA, ScenarioName::EmpcD})
    EXPECT_EQ(scenario_from_string(to_string(n)), n);
}

TEST_F(AirpathTest, FeedforwardHoldsEquilibrium) {
  const auto lm = synth::airpath_local(kNode);
  const plant::AirpathState z{lm.x_ss[0], lm.x_ss[1]};
  const auto r = airpath_ff_step(z, z, kNode, kNode.fuel_rate, air, AirpathMpcConfig{}, {});
  ASSERT_FALSE(r.fallback);
  EXPECT_NEAR((v2(r.v) - lm.u_ss).norm(), 0.0, 1e-9);
}

TEST_F(AirpathTest, FeedforwardTracksStepOnNominalModel) {
  const auto lm = synth::airpath_local(kNode);
  Vec z = lm.x_ss;
  const plant::AirpathState target{lm.x_ss[0] + 6.0, lm.x_ss[1] + 0.02};
  const double fuel = kNode.fuel_rate + 2.0;
  plant::ActuatorInput v{lm.u_ss[0], lm.u_ss[1]};
  for (int k = 0; k < 300; ++k) {
    const auto r = airpath_ff_step({z[0], z[1]}, target, kNode, fuel, air, AirpathMpcConfig{}, v);
    ASSERT_FALSE(r.fallback);
    v = r.v;
    z = lpv::step_physical(lm, z, v2(v), fuel);
  }
  EXPECT_LT(((z - v2(target)).cwiseQuotient(lm.sigma_x)).norm(), 1e-6);
}

TEST_F(AirpathTest, FeedbackGivesNoCorrectionAtEquilibrium) {
  const auto lm = synth::airpath_local(kNode);
  const plant::AirpathState z{lm.x_ss[0], lm.x_ss[1]};
  FbInputs in{z, z, z, kNode, {lm.u_ss[0], lm.u_ss[1]}};
  const auto r = airpath_fb_step(in, air, AirpathMpcConfig{});
  ASSERT_FALSE(r.fallback);
  EXPECT_NEAR((v2(r.v) - lm.u_ss).norm(), 0.0, 1e-9);
}

// Offset-free tracking: the plant's input gain is off by +-10 % and a
// constant fuel offset acts on it; the rate-based FB controller still
// drives the normalized error below 1e-3.
class FeedbackOffsetFree : public Fixture, public ::testing::WithParamInterface<double> {};

TEST_P(FeedbackOffsetFree, SteadyStateErrorBelowTolerance) {
  const double gain = GetParam();
  const auto nominal = synth::airpath_local(kNode);
  auto truth = nominal;
  truth.B *= gain;
  const Vec r = nominal.x_ss + Eigen::Vector2d(5.0, 0.02);
  Vec z = nominal.x_ss, z_prev = z;
  Vec v = nominal.u_ss;
  for (int k = 0; k < 400; ++k) {
    FbInputs in{{z[0], z[1]}, {z_prev[0], z_prev[1]}, {r[0], r[1]}, kNode, {v[0], v[1]}};
    const auto out = airpath_fb_step(in, air, AirpathMpcConfig{});
    ASSERT_FALSE(out.fallback) << out.warning;
    v = v2(out.v);
    z_prev = z;
    z = lpv::step_physical(truth, z, v, kNode.fuel_rate + 2.0);
  }
  EXPECT_LT(((z - r).cwiseQuotient(nominal.sigma_x)).cwiseAbs().maxCoeff(), 1e-3);
}

INSTANTIATE_TEST_SUITE_P(GainPerturbation, FeedbackOffsetFree, ::testing::Values(0.9, 1.1));

TEST_F(AirpathTest, InvalidConfigIsConfigError) {
  AirpathMpcConfig c;
  c.v_min = Eigen::Vector2d(50.0, 0.0);
  c.v_max = Eigen::Vector2d(40.0, 100.0);
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.R = Mat::Zero(2, 2);
  EXPECT_THROW(validate(c), ConfigError);
}

namespace {

struct LoopOutcome {
  std::vector<TelemetryRow> rows;
  long long fallbacks = 0;
};

// Closed loop against the synthetic LPV models themselves.
LoopOutcome synthetic_loop(const lpv::LpvGridModel& air, const lpv::LpvGridModel& em, ScenarioName name,
                           int steps, std::uint64_t seed) {
  PipelineConfig cfg;
  cfg.empc.eta = 20.0;
  cfg.empc.soot_max = 3.0;
  ControllerPipeline pipe(em, air, make_scenario(name), cfg);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> sp(1000, 3000), fu(20, 100);
  plant::OperatingPoint rho{1700.0, 43.0};
  const auto a0 = synth::airpath_local(rho);
  const auto e0 = synth::emissions_local(rho);
  Vec z = a0.x_ss, e = e0.x_ss;
  pipe.reset({z[0], z[1]}, e, {a0.u_ss[0], a0.u_ss[1]}, rho);
  LoopOutcome out;
  for (int k = 0; k < steps; ++k) {
    if (k % 40 == 0) rho = {sp(rng), fu(rng)};
    TelemetryRow row;
    const auto cmd = pipe.step({z[0], z[1]}, e, rho, &row);
    out.rows.push_back(row);
    const plant::OperatingPoint applied{rho.engine_speed, cmd.fuel};
    z = lpv::step_physical(lpv::interpolate(air, applied), z, v2(cmd.v), cmd.fuel);
    e = lpv::step_physical(lpv::interpolate(em, applied), e, Eigen::Vector3d(z[0], z[1], cmd.fuel));
  }
  out.fallbacks = pipe.empc_fallbacks() + pipe.airpath_fallbacks();
  return out;
}

}  // namespace

TEST_F(PipelineTest, BaselineFollowsLookupAndDemand) {
  const auto out = synthetic_loop(air, em, ScenarioName::Baseline, 200, 3);
  for (const auto& r : out.rows) {
    EXPECT_EQ(r.fuel_adjusted, r.fuel_target);
    EXPECT_EQ(r.pim_adjusted, r.pim_target);
    EXPECT_EQ(r.chi_adjusted, r.chi_target);
    EXPECT_EQ(r.slack, 0.0);
  }
  EXPECT_EQ(out.fallbacks, 0);
}

TEST_F(PipelineTest, EmpcRatesAndFuelBand) {
  const auto out = synthetic_loop(air, em, ScenarioName::EmpcD, 240, 4);
  ASSERT_EQ(out.rows.size(), 240u);
  for (std::size_t k = 0; k < out.rows.size(); ++k) {
    const auto& r = out.rows[k];
    EXPECT_EQ(r.empc_solved, k % 2 == 0 ? 1 : 0) << k;
    EXPECT_GE(r.fuel_adjusted, 0.9 * r.fuel_target);
    EXPECT_LE(r.fuel_adjusted, r.fuel_target);
    EXPECT_GE(r.slack, 0.0);
    EXPECT_DOUBLE_EQ(r.t, 0.1 * static_cast<double>(k));
  }
  EXPECT_EQ(out.fallbacks, 0);
}

TEST_F(PipelineTest, DeterministicTelemetry) {
  const auto a = synthetic_loop(air, em, ScenarioName::EmpcC, 120, 9);
  const auto b = synthetic_loop(air, em, ScenarioName::EmpcC, 120, 9);
  EXPECT_EQ(telemetry_csv(a.rows), telemetry_csv(b.rows));
}

TEST_F(PipelineTest, StepBeforeResetIsConfigError) {
  ControllerPipeline pipe(em, air, make_scenario(ScenarioName::EmpcA), PipelineConfig{});
  EXPECT_THROW(pipe.step({150.0, 0.2}, Eigen::Vector2d(500.0, 2.0), kNode), ConfigError);
}

TEST_F(PipelineTest, TelemetryCsvHeaderMatchesColumns) {
  const auto csv = telemetry_csv({TelemetryRow{}});
  const auto header = csv.substr(0, csv.find('\n'));
  std::string joined;
  for (const auto& c : telemetry_columns()) joined += (joined.empty() ? "" : ",") + c;
  EXPECT_EQ(header, joined);
}
