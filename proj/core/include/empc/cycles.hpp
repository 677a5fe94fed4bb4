#pragma once

#include "empc/common.hpp"
#include "empc/plant.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace empc::cycles {

struct DriveCycle {
  std::string name;
  std::vector<plant::OperatingPoint> samples;  // one per base step
  double dt = kBaseDt;
  double warmup = 0.0;  // s excluded from metrics

  std::size_t warmup_steps() const;
  double duration() const { return dt * static_cast<double>(samples.size()); }
};

/// Envelope, positive dt, warmup shorter than the cycle.
void validate(const DriveCycle& c, const plant::PlantParams& p);

struct StepRampConfig {
  double warmup = 30.0;
  double speed = 1600.0;
  double fuel_low = 30.0;
  double fuel_high = 75.0;
  double step_up = 35.0;     // s
  double step_down = 50.0;   // s
  double ramp_start = 65.0;  // s
  double ramp_end = 80.0;    // s
  double speed_end = 2600.0;
  double duration = 100.0;   // s
};

/// Warmup at (speed, fuel_low), fuel tip-in/tip-out at constant speed, then
/// a linear speed ramp at fuel_low.
DriveCycle make_step_ramp_cycle(const StepRampConfig& cfg = {});

enum class TransientKind { FtpLike, WhtcLike };

const char* to_string(TransientKind kind);
TransientKind transient_kind_from_string(const std::string& name);

/// 100 s warmup followed by 600 s of seeded, smoothly interpolated random
/// knots in speed and fuel.  The FTP-like profile has shorter knots and a
/// narrower speed band; the WHTC-like one spans the grid and idles more.
DriveCycle make_transient_cycle(TransientKind kind, std::uint64_t seed);

/// "step_ramp", "ftp_like" or "whtc_like".
DriveCycle make_cycle(const std::string& name, std::uint64_t seed);

}  // namespace empc::cycles
