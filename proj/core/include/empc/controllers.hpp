#pragma once

#include "empc/common.hpp"
#include "empc/condense.hpp"
#include "empc/lpv.hpp"
#include "empc/plant.hpp"
#include "empc/qp.hpp"
#include "empc/rate_model.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace empc::control {

/// Steady targets p_im_trg(rho), chi_trg(rho) on the schedule grid, plus the
/// actuator settings that hold them.
struct TargetMaps {
  lpv::ScheduleGrid grid;
  std::vector<double> intake_pressure;
  std::vector<double> egr_rate;
  std::vector<double> egr_valve;
  std::vector<double> vgt_position;
};

/// Read off the airpath model's equilibrium tables (z_ss, v_ss).
TargetMaps target_maps_from(const lpv::LpvGridModel& airpath);

/// p_im > 0, chi in [0, 1], actuators in [0, 100], table sizes match.
void validate(const TargetMaps& maps);

/// Clamped bilinear lookup.
plant::AirpathState lookup_targets(const TargetMaps& maps, const plant::OperatingPoint& rho);
plant::ActuatorInput lookup_actuators(const TargetMaps& maps, const plant::OperatingPoint& rho);

struct AdjustedTargets {
  double intake_pressure = 0.0;  // kPa
  double egr_rate = 0.0;         // fraction
  double fuel_rate = 0.0;        // mm^3/st
};

/// Stage cost
///   alpha (p_trg - p_adj)^2 + beta (chi_trg - chi_adj)^2 + gamma (w_trg - w_adj)
///   + eta |NOx| + zeta eps + du' R du
/// in physical units, du on the model's normalized inputs.
struct EmpcWeights {
  double alpha = 0.01;
  double beta = 400.0;
  double gamma = 20.0;
  double eta = 1.0;
  double zeta = 2.0e4;
  Mat R = Mat::Identity(3, 3);
  double soot_max = 5.0;  // %
  int horizon = 10;
  /// Adjusted targets stay within these distances of the look-up targets.
  double pim_band = 40.0;  // kPa
  double chi_band = 0.15;
};

void validate(const EmpcWeights& w);

enum class ScenarioName { Baseline, EmpcA, EmpcB, EmpcC, EmpcD };

const char* to_string(ScenarioName name);
ScenarioName scenario_from_string(const std::string& name);

struct Scenario {
  ScenarioName name = ScenarioName::Baseline;
  bool high_nox_penalty = false;
  bool soot_limit = false;

  bool empc_enabled() const { return name != ScenarioName::Baseline; }
};

/// The four tunings and the baseline.
Scenario make_scenario(ScenarioName name);

struct EmpcInputs {
  Vec x;       // emissions now (NOx, Soot)
  Vec x_prev;  // one base step earlier
  Vec u_prev;  // (p_im, chi) measured now and the last applied fuel
  plant::OperatingPoint rho;  // demanded speed and fuel
};

struct EmpcOptions {
  std::optional<std::filesystem::path> dump_dir;  // failed QPs go here
  std::string dump_label = "empc";
};

struct EmpcResult {
  AdjustedTargets targets;
  plant::AirpathState lookup;  // look-up targets at rho
  bool fallback = false;
  mpc::QpStatus status = mpc::QpStatus::Optimal;
  Vec slack;      // eps_1..eps_N (zero without the soot limit)
  Mat predicted;  // 2 x (N+1) physical emissions along the optimum
  std::string warning;
};

/// Builds the target-adjustment QP on the rate model at rho (held constant
/// over the horizon) and returns the first adjusted targets.  A failed solve
/// falls back to the look-up targets and sets `warning`.
EmpcResult empc_step(const EmpcInputs& in, const TargetMaps& maps, const lpv::LpvGridModel& emissions,
                     const EmpcWeights& w, const Scenario& scen, const EmpcOptions& opt = {});

/// The condensed OCP behind empc_step, for tests.
mpc::OcpSpec empc_problem(const EmpcInputs& in, const TargetMaps& maps, const lpv::LpvGridModel& emissions,
                          const EmpcWeights& w, const Scenario& scen);

struct AirpathMpcConfig {
  int horizon = 8;
  Mat Q = Mat::Identity(2, 2);          // tracking error, normalized units
  Mat R = 0.05 * Mat::Identity(2, 2);   // input moves (FB) / input deviation (FF)
  double terminal_factor = 5.0;          // terminal weight = factor * Q
  Vec z_min = Eigen::Vector2d(90.0, 0.0);
  Vec z_max = Eigen::Vector2d(350.0, 0.6);
  Vec v_min = Eigen::Vector2d(0.0, 0.0);
  Vec v_max = Eigen::Vector2d(100.0, 100.0);
  double slack_weight = 1.0e3;  // quadratic on the soft state bounds
};

void validate(const AirpathMpcConfig& cfg);

struct AirpathResult {
  plant::ActuatorInput v;
  mpc::QpStatus status = mpc::QpStatus::Optimal;
  bool fallback = false;
  std::string warning;
};

/// Feedforward: tracking on the nominal model from its own simulated state
/// z_model, penalizing deviation from the input that holds r on the model.
/// A failed solve returns `hold`.
AirpathResult airpath_ff_step(const plant::AirpathState& z_model, const plant::AirpathState& r,
                              const plant::OperatingPoint& rho, double fuel, const lpv::LpvGridModel& airpath,
                              const AirpathMpcConfig& cfg, const plant::ActuatorInput& hold,
                              const std::optional<std::filesystem::path>& dump_dir = {});

struct FbInputs {
  plant::AirpathState z;       // measured now
  plant::AirpathState z_prev;  // one step earlier
  plant::AirpathState r;       // adjusted targets
  plant::OperatingPoint rho;
  /// v_prev + (v_ff - v_ff_prev): the previous command shifted by the
  /// feedforward increment.
  plant::ActuatorInput v_bar;
};

/// Rate-based tracking MPC.  Returns clamp(v_bar + dv_0).  A failed solve
/// returns clamp(v_bar), i.e. no feedback correction this step.
AirpathResult airpath_fb_step(const FbInputs& in, const lpv::LpvGridModel& airpath, const AirpathMpcConfig& cfg,
                              const std::optional<std::filesystem::path>& dump_dir = {});

mpc::OcpSpec airpath_fb_problem(const FbInputs& in, const lpv::LpvGridModel& airpath, const AirpathMpcConfig& cfg);

}  // namespace empc::control
