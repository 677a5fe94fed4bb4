#include "empc/cycles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace empc::cycles {

std::size_t DriveCycle::warmup_steps() const {
  return static_cast<std::size_t>(std::llround(warmup / dt));
}

void validate(const DriveCycle& c, const plant::PlantParams& p) {
  if (!(c.dt > 0.0)) throw ConfigError("cycle " + c.name + ": dt must be positive");
  if (c.samples.empty()) throw ConfigError("cycle " + c.name + ": no samples");
  if (!(c.warmup >= 0.0) || c.warmup_steps() >= c.samples.size())
    throw ConfigError("cycle " + c.name + ": warmup must be shorter than the cycle");
  for (const auto& s : c.samples) plant::validate(s, p);
}

DriveCycle make_step_ramp_cycle(const StepRampConfig& cfg) {
  if (!(cfg.warmup <= cfg.step_up && cfg.step_up < cfg.step_down && cfg.step_down <= cfg.ramp_start &&
        cfg.ramp_start < cfg.ramp_end && cfg.ramp_end <= cfg.duration))
    throw ConfigError("step_ramp: event times must be ordered");
  DriveCycle c;
  c.name = "step_ramp";
  c.warmup = cfg.warmup;
  const auto n = static_cast<std::size_t>(std::llround(cfg.duration / c.dt));
  c.samples.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = c.dt * static_cast<double>(k);
    plant::OperatingPoint rho;
    rho.fuel_rate = (t >= cfg.step_up - 1e-9 && t < cfg.step_down - 1e-9) ? cfg.fuel_high : cfg.fuel_low;
    const double a = std::clamp((t - cfg.ramp_start) / (cfg.ramp_end - cfg.ramp_start), 0.0, 1.0);
    rho.engine_speed = cfg.speed + a * (cfg.speed_end - cfg.speed);
    c.samples.push_back(rho);
  }
  return c;
}

const char* to_string(TransientKind kind) { return kind == TransientKind::FtpLike ? "ftp_like" : "whtc_like"; }

TransientKind transient_kind_from_string(const std::string& name) {
  if (name == "ftp_like") return TransientKind::FtpLike;
  if (name == "whtc_like") return TransientKind::WhtcLike;
  throw ConfigError("unknown transient cycle '" + name + "'");
}

namespace {

struct Profile {
  double knot_min, knot_max;  // s between knots
  double speed_lo, speed_hi;
  double fuel_lo, fuel_hi;
  double idle_prob;
  std::uint64_t salt;
};

Profile profile(TransientKind kind) {
  if (kind == TransientKind::FtpLike) return {1.5, 4.0, 900.0, 2600.0, 8.0, 100.0, 0.08, 0x46545031ULL};
  return {2.5, 7.0, 820.0, 3150.0, 6.0, 118.0, 0.15, 0x57485443ULL};
}

}  // namespace

DriveCycle make_transient_cycle(TransientKind kind, std::uint64_t seed) {
  const Profile pf = profile(kind);
  DriveCycle c;
  c.name = to_string(kind);
  c.warmup = 100.0;
  const double duration = 700.0;
  const auto n = static_cast<std::size_t>(std::llround(duration / c.dt));
  std::mt19937_64 rng(seed ^ pf.salt);
  std::uniform_real_distribution<double> gap(pf.knot_min, pf.knot_max), unit(0.0, 1.0);

  struct Knot {
    double t, speed, fuel;
  };
  std::vector<Knot> knots;
  knots.push_back({0.0, pf.speed_lo + 0.25 * (pf.speed_hi - pf.speed_lo), pf.fuel_lo + 0.2 * (pf.fuel_hi - pf.fuel_lo)});
  while (knots.back().t < duration) {
    Knot k;
    k.t = knots.back().t + gap(rng);
    if (unit(rng) < pf.idle_prob) {
      k.speed = pf.speed_lo;
      k.fuel = pf.fuel_lo;
    } else {
      k.speed = pf.speed_lo + unit(rng) * (pf.speed_hi - pf.speed_lo);
      k.fuel = pf.fuel_lo + unit(rng) * (pf.fuel_hi - pf.fuel_lo);
    }
    knots.push_back(k);
  }
  c.samples.reserve(n);
  std::size_t seg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = c.dt * static_cast<double>(i);
    while (knots[seg + 1].t <= t) ++seg;
    const Knot& a = knots[seg];
    const Knot& b = knots[seg + 1];
    // Raised-cosine blend: continuous with zero slope at every knot.
    const double s = 0.5 - 0.5 * std::cos(std::numbers::pi * (t - a.t) / (b.t - a.t));
    c.samples.push_back({a.speed + s * (b.speed - a.speed), a.fuel + s * (b.fuel - a.fuel)});
  }
  return c;
}

DriveCycle make_cycle(const std::string& name, std::uint64_t seed) {
  if (name == "step_ramp") return make_step_ramp_cycle();
  return make_transient_cycle(transient_kind_from_string(name), seed);
}

}  // namespace empc::cycles
