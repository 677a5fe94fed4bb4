#include "empc/cycles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace empc;
using namespace empc::cycles;

TEST(Cycles, StepRampShape) {
  const auto c = make_step_ramp_cycle();
  ASSERT_EQ(c.samples.size(), 1000u);
  EXPECT_EQ(c.warmup_steps(), 300u);
  int jumps = 0;
  for (std::size_t k = 1; k < c.samples.size(); ++k)
    if (c.samples[k].fuel_rate != c.samples[k - 1].fuel_rate) ++jumps;
  EXPECT_EQ(jumps, 2);
  EXPECT_EQ(c.samples[349].fuel_rate, 30.0);
  EXPECT_EQ(c.samples[350].fuel_rate, 75.0);
  EXPECT_EQ(c.samples[500].fuel_rate, 30.0);
  EXPECT_EQ(c.samples[600].engine_speed, 1600.0);
  EXPECT_NEAR(c.samples[725].engine_speed, 2100.0, 1e-9);
  EXPECT_EQ(c.samples.back().engine_speed, 2600.0);
  EXPECT_NO_THROW(validate(c, plant::reference_params()));
}

TEST(Cycles, StepRampRejectsDisorderedEvents) {
  StepRampConfig cfg;
  cfg.step_down = cfg.step_up;
  EXPECT_THROW(make_step_ramp_cycle(cfg), ConfigError);
}

TEST(Cycles, TransientLengthsAndEnvelope) {
  const auto p = plant::reference_params();
  for (auto kind : {TransientKind::FtpLike, TransientKind::WhtcLike}) {
    const auto c = make_transient_cycle(kind, 7);
    EXPECT_EQ(c.samples.size(), 7000u);
    EXPECT_EQ(c.warmup_steps(), 1000u);
    EXPECT_NO_THROW(validate(c, p));
  }
}

TEST(Cycles, SeededAndDistinct) {
  const auto a = make_cycle("whtc_like", 3), b = make_cycle("whtc_like", 3), c = make_cycle("whtc_like", 4);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  bool differs = false;
  for (std::size_t k = 0; k < a.samples.size(); ++k) {
    EXPECT_EQ(a.samples[k].engine_speed, b.samples[k].engine_speed);
    EXPECT_EQ(a.samples[k].fuel_rate, b.samples[k].fuel_rate);
    differs = differs || a.samples[k].fuel_rate != c.samples[k].fuel_rate;
  }
  EXPECT_TRUE(differs);
}

TEST(Cycles, TransientIsSmooth) {
  const auto c = make_cycle("ftp_like", 5);
  double worst = 0.0;
  for (std::size_t k = 1; k < c.samples.size(); ++k)
    worst = std::max(worst, std::abs(c.samples[k].fuel_rate - c.samples[k - 1].fuel_rate));
  // Largest knot jump (~92 mm^3) over the shortest knot (1.5 s): pi/2 * 92 / 15 per step.
  EXPECT_LT(worst, 10.0);
}

TEST(Cycles, WhtcLikeSpansTheGrid) {
  const auto c = make_cycle("whtc_like", 1);
  double smin = 1e9, smax = 0, fmin = 1e9, fmax = 0;
  for (const auto& s : c.samples) {
    smin = std::min(smin, s.engine_speed);
    smax = std::max(smax, s.engine_speed);
    fmin = std::min(fmin, s.fuel_rate);
    fmax = std::max(fmax, s.fuel_rate);
  }
  EXPECT_LT(smin, 900.0);
  EXPECT_GT(smax, 2900.0);
  EXPECT_LT(fmin, 15.0);
  EXPECT_GT(fmax, 100.0);
}

TEST(Cycles, UnknownNameIsConfigError) { EXPECT_THROW(make_cycle("nedc", 1), ConfigError); }
