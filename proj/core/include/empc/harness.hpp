#pragma once

#include "empc/cycles.hpp"
#include "empc/emissions_model.hpp"
#include "empc/lpv.hpp"
#include "empc/pipeline.hpp"
#include "empc/plant.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace empc::harness {

struct Artifacts {
  plant::PlantParams plant;
  nn::EmissionsModel nn;
  lpv::LpvGridModel emissions;
  lpv::LpvGridModel airpath;
};

/// Throws ArtifactError naming every missing file before reading any.
Artifacts load_artifacts(const std::filesystem::path& plant_json, const std::filesystem::path& nn_bin,
                         const std::filesystem::path& lpv_emissions, const std::filesystem::path& lpv_airpath);

/// Aggregates over the active part of a run (warmup excluded).
struct MetricsReport {
  double cumulative_nox = 0.0;  // ppm s
  double peak_nox = 0.0;        // ppm
  double average_soot = 0.0;    // %
  double peak_soot = 0.0;       // %
  std::size_t active_steps = 0;
  double soot_max = 0.0;              // limit in force, 0 without one
  double soot_violation_fraction = 0.0;  // steps with Soot > Soot_max
  double max_soot_excess = 0.0;       // max(Soot - Soot_max)
  double max_predicted_slack = 0.0;   // EMPC eps_1 over the run
  std::size_t fuel_bound_violations = 0;
};

/// soot_max <= 0 disables the limit bookkeeping.
MetricsReport compute_metrics(const std::vector<control::TelemetryRow>& rows, std::size_t warmup_steps, double dt,
                              double soot_max);

/// 100 (test - base) / base; 0 when both are 0.
double percent_delta(double test, double base);

/// "-10.000%" style (CSV) and with an arrow (tables): "↓ 10.000%".
std::string signed_percent(double pct);
std::string arrow_percent(double pct);

/// Per-run tuning shared by all scenarios plus the per-scenario switches.
struct ScenarioSettings {
  control::PipelineConfig pipeline;
  double eta_low = 1.0;
  double eta_high = 20.0;
  double zeta_factor = 1000.0;  // zeta = factor * eta_high
  double soot_max_fraction = 0.8;  // of the baseline peak on the same cycle
  std::vector<control::ScenarioName> scenarios = {control::ScenarioName::Baseline, control::ScenarioName::EmpcA,
                                                  control::ScenarioName::EmpcB, control::ScenarioName::EmpcC,
                                                  control::ScenarioName::EmpcD};
};

ScenarioSettings scenario_settings_from_json(const std::string& text);

/// Weights for one scenario.  soot_reference is the baseline peak soot.
control::PipelineConfig resolve(const ScenarioSettings& s, const control::Scenario& scen, double soot_reference);

struct RunResult {
  std::string cycle;
  control::Scenario scenario;
  std::size_t warmup_steps = 0;
  std::vector<control::TelemetryRow> telemetry;
  MetricsReport metrics;
  std::vector<std::string> warnings;
  long long empc_fallbacks = 0;
  long long airpath_fallbacks = 0;
};

/// Closed loop: plant + NN emissions (measured) under the controller stack.
RunResult run_scenario(const cycles::DriveCycle& cycle, const control::Scenario& scen,
                       const control::PipelineConfig& cfg, const Artifacts& art, double soot_max);

/// Baseline first (it sets Soot_max), then the rest in settings order.
std::vector<RunResult> run_sweep(const cycles::DriveCycle& cycle, const ScenarioSettings& s, const Artifacts& art);

}  // namespace empc::harness
