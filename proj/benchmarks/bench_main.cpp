#include "empc/controllers.hpp"
#include "empc/mlp.hpp"
#include "empc/plant.hpp"
#include "empc/qp.hpp"
#include "synthetic.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace empc;

namespace {

mpc::QpProblem random_box_qp(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  const Mat M = Mat::NullaryExpr(n, n, [&] { return g(rng); });
  mpc::QpProblem p;
  p.H = M.transpose() * M + 0.1 * Mat::Identity(n, n);
  p.f = Vec::NullaryExpr(n, [&] { return 3.0 * g(rng); });
  p.G.resize(2 * n, n);
  p.G << Mat::Identity(n, n), -Mat::Identity(n, n);
  p.h = Vec::Ones(2 * n);
  p.E.resize(0, n);
  p.d.resize(0);
  return p;
}

const plant::OperatingPoint kNode{1700.0, 43.0};

control::EmpcInputs empc_inputs() {
  const auto em = synth::emissions_local(kNode);
  const Vec z = synth::airpath_ss(kNode);
  control::EmpcInputs in;
  in.x = em.x_ss + Eigen::Vector2d(0.0, 2.0);
  in.x_prev = in.x;
  in.u_prev = Eigen::Vector3d(z[0], z[1], kNode.fuel_rate);
  in.rho = kNode;
  return in;
}

}  // namespace

static void BM_QpBox(benchmark::State& state) {
  const auto p = random_box_qp(static_cast<int>(state.range(0)), 7);
  for (auto _ : state) benchmark::DoNotOptimize(mpc::solve_qp(p));
}
BENCHMARK(BM_QpBox)->Arg(5)->Arg(10)->Arg(30);

// One EMPC decision: condense the 10-step problem and solve it.
static void BM_EmpcStep(benchmark::State& state) {
  const auto air = synth::airpath_model();
  const auto em = synth::emissions_model();
  const auto maps = control::target_maps_from(air);
  const auto scen = control::make_scenario(state.range(0) ? control::ScenarioName::EmpcD : control::ScenarioName::EmpcA);
  control::EmpcWeights w;
  w.soot_max = synth::emissions_local(kNode).x_ss[1];
  const auto in = empc_inputs();
  for (auto _ : state) benchmark::DoNotOptimize(control::empc_step(in, maps, em, w, scen));
}
BENCHMARK(BM_EmpcStep)->Arg(0)->Arg(1)->ArgNames({"soot_limit"});

static void BM_AirpathFb(benchmark::State& state) {
  const auto air = synth::airpath_model();
  const auto lm = synth::airpath_local(kNode);
  const plant::AirpathState z{lm.x_ss[0], lm.x_ss[1]};
  const control::FbInputs in{z, z, {lm.x_ss[0] + 5.0, lm.x_ss[1] + 0.02}, kNode, {lm.u_ss[0], lm.u_ss[1]}};
  for (auto _ : state) benchmark::DoNotOptimize(control::airpath_fb_step(in, air, control::AirpathMpcConfig{}));
}
BENCHMARK(BM_AirpathFb);

static void BM_NnForward(benchmark::State& state) {
  const int w = static_cast<int>(state.range(0));
  const auto net = nn::make_mlp({10, w, w / 2, 32, 2}, 1);
  const Vec x = Vec::LinSpaced(10, -1.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(nn::forward(net, x));
}
BENCHMARK(BM_NnForward)->Arg(256)->Arg(1024)->ArgNames({"width"});

static void BM_PlantStep(benchmark::State& state) {
  const auto p = plant::reference_params();
  const plant::ActuatorInput v{30.0, 50.0};
  const auto s0 = plant::settle(v, kNode, p);
  for (auto _ : state) benchmark::DoNotOptimize(plant::plant_step(s0, v, kNode, kBaseDt, p));
}
BENCHMARK(BM_PlantStep);

static void BM_LpvInterpolate(benchmark::State& state) {
  const auto em = synth::emissions_model();
  const plant::OperatingPoint rho{1850.0, 47.5};
  for (auto _ : state) benchmark::DoNotOptimize(lpv::interpolate(em, rho));
}
BENCHMARK(BM_LpvInterpolate);

BENCHMARK_MAIN();
