#pragma once

#include "empc/controllers.hpp"

#include <optional>
#include <string>
#include <vector>

namespace empc::control {

struct PipelineConfig {
  EmpcWeights empc;
  AirpathMpcConfig airpath;
  int empc_every = 2;  // base steps between EMPC solves
  bool feedforward = true;
  std::optional<std::filesystem::path> dump_dir;
};

void validate(const PipelineConfig& cfg);

/// One row per base step.
struct TelemetryRow {
  double t = 0.0;
  double engine_speed = 0.0;
  double fuel_target = 0.0;
  double fuel_adjusted = 0.0;
  double pim_target = 0.0;  // look-up table
  double chi_target = 0.0;
  double pim_adjusted = 0.0;
  double chi_adjusted = 0.0;
  double pim = 0.0;  // measured at the start of the step
  double chi = 0.0;
  double egr_ff = 0.0;
  double vgt_ff = 0.0;
  double egr = 0.0;  // applied command
  double vgt = 0.0;
  double nox = 0.0;  // measured at the start of the step
  double soot = 0.0;
  double slack = 0.0;  // first predicted soot slack of the latest EMPC solve
  int empc_solved = 0;  // 1 on steps where the EMPC ran
  int empc_fallback = 0;
  int airpath_fallback = 0;
};

/// Fixed CSV header matching TelemetryRow.
const std::vector<std::string>& telemetry_columns();
std::string telemetry_csv(const std::vector<TelemetryRow>& rows);

struct Command {
  plant::ActuatorInput v;
  double fuel = 0.0;
};

/// EMPC at the supervisory rate, FF + FB airpath MPC every base step.
/// The fuel command goes straight to the engine.
class ControllerPipeline {
 public:
  ControllerPipeline(const lpv::LpvGridModel& emissions, const lpv::LpvGridModel& airpath, Scenario scenario,
                     PipelineConfig cfg);

  /// Start from a settled state: measured airpath, emissions and the
  /// actuator setting that produced them.
  void reset(const plant::AirpathState& z, const Vec& emissions, const plant::ActuatorInput& v,
             const plant::OperatingPoint& rho);

  /// z and emissions are measured now; rho is the demanded operating point.
  Command step(const plant::AirpathState& z, const Vec& emissions, const plant::OperatingPoint& rho,
               TelemetryRow* row = nullptr);

  const TargetMaps& maps() const { return maps_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  long long empc_fallbacks() const { return empc_fallbacks_; }
  long long airpath_fallbacks() const { return airpath_fallbacks_; }

 private:
  const lpv::LpvGridModel& emissions_;
  const lpv::LpvGridModel& airpath_;
  TargetMaps maps_;
  Scenario scenario_;
  PipelineConfig cfg_;

  long long k_ = 0;
  plant::AirpathState z_prev_;
  Vec e_prev_;
  plant::ActuatorInput v_prev_;
  plant::ActuatorInput v_ff_prev_;
  plant::AirpathState z_model_;
  AdjustedTargets targets_;
  double slack_ = 0.0;
  double fuel_prev_ = 0.0;
  bool initialized_ = false;
  std::vector<std::string> warnings_;
  long long empc_fallbacks_ = 0;
  long long airpath_fallbacks_ = 0;
};

}  // namespace empc::control
