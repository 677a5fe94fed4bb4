#pragma once

#include "empc/common.hpp"
#include "empc/emissions_model.hpp"
#include "empc/lpv.hpp"
#include "empc/plant.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace empc::lpv {

/// Seeded random binary perturbation around a node equilibrium.
struct PerturbationSpec {
  double amplitude_pct = 5.0;     // of the 0..100 % actuator range
  double fuel_amplitude = 3.0;    // mm^3/st; 0 disables the fuel channel
  double duration = 200.0;        // s
  double dt = kBaseDt;
  double clock = 1.0;             // s between possible switches
  std::uint64_t seed = 1;
};

void validate(const PerturbationSpec& spec);

/// Column k holds the input applied over [t_k, t_k + dt); outputs at column
/// k + 1 are read after that step.  Emission columns are the NN evaluated
/// on the measurement vector after each step (column 0 at equilibrium).
struct ExperimentLog {
  plant::OperatingPoint node;
  plant::ActuatorInput v_ss;
  plant::PlantState equilibrium;
  Mat v;     // 2 x T  (egr, vgt)
  Vec fuel;  // T
  Mat z;     // 2 x (T+1)  (p_im, chi_egr)
  Mat e;     // 2 x (T+1)  (NOx, Soot); empty without an emissions model
  std::string description;

  Eigen::Index length() const { return v.cols(); }
};

/// Inputs for the emissions model: measurement channels picked by name.
Vec nn_inputs(const nn::EmissionsModel& model, const plant::Measurements& m);

/// NN emissions after a step held at (v, rho).
Vec nn_emissions(const nn::EmissionsModel& model, const plant::PlantState& s, const plant::ActuatorInput& v,
                 const plant::OperatingPoint& rho, const plant::PlantParams& p);

/// Settles at (v_ss, node) then applies the perturbation.  Throws
/// NumericalError when the plant does not settle.
ExperimentLog run_perturbation(const plant::OperatingPoint& node, const plant::ActuatorInput& v_ss,
                               const PerturbationSpec& spec, const plant::PlantParams& params,
                               const nn::EmissionsModel* emissions = nullptr);

/// Raw identification data: x has T+1 columns, u and f have T.
struct IdentData {
  Mat x;
  Mat u;
  Vec f;  // empty: no fuel channel
  Vec x_ss;
  Vec u_ss;
  double f_ss = 0.0;
  std::vector<std::string> state_names;
  std::vector<std::string> input_names;
};

struct FitOptions {
  int horizon = 50;
  double gate = 0.5;
  double max_spectral_radius = 0.995;
  /// Accept state channels that never move (e.g. a ReLU output pinned at
  /// zero): they get sigma 1 and zero rows/columns instead of an error.
  bool allow_constant_states = false;
  /// Levenberg-Marquardt iterations on the `horizon`-step rollout error
  /// after the one-step fit; 0 keeps the plain least-squares model.
  int refine_iterations = 40;
};

struct FitReport {
  double one_step_rmse = 0.0;  // normalized units
  double rollout_error = 0.0;  // normalized RMS over windows of `horizon` steps
  double rollout_error_initial = 0.0;  // before refinement
  double spectral_radius_raw = 0.0;
  bool projected = false;
  bool accepted = false;
  std::vector<std::string> constant_states;
};

/// Least squares on normalized deviations, sigmas from the log's standard
/// deviations.  Throws NumericalError naming the channel when the regressor
/// is rank deficient and ConfigError when the log is too short.
LocalModel fit_local(const IdentData& data, const FitOptions& options, FitReport* report = nullptr);

/// Scales every eigenvalue with modulus above r_max onto the circle of
/// radius r_max, keeping the eigenvectors.
Mat project_spectral_radius(const Mat& A, double r_max);

/// Normalized RMS error of `horizon`-step open-loop rollouts started from
/// the measured state every `horizon` samples.
double rollout_error(const LocalModel& m, const IdentData& data, int horizon);

/// Emission inputs at column k are the airpath values read together with
/// the emission output at k + 1 (the NN is static in its inputs).
IdentData emission_data(const ExperimentLog& log);
IdentData airpath_data(const ExperimentLog& log);

/// Weights of the steady target trade-off evaluated at each node.
struct TargetSearch {
  double egr_min = 5.0;
  double egr_max = 80.0;
  double vgt_min = 10.0;
  double vgt_max = 80.0;
  int coarse = 6;            // grid points per axis
  double refine_tol = 0.25;  // % actuator
  double soot_cap = 2.0;     // % tolerated before the penalty starts
  double soot_weight = 200.0;
  double pump_weight = 2.0;  // per kPa of (p_ex - p_im), fuel proxy
};

struct NodeEquilibrium {
  plant::OperatingPoint rho;
  plant::ActuatorInput v;
  plant::PlantState state;
  Vec emissions;
  double cost = 0.0;
};

double target_cost(const TargetSearch& cfg, const plant::PlantState& s, const Vec& emissions);

/// Coarse grid then compass search over (egr, vgt).  Settings where the NOx
/// prediction is exactly zero are skipped: the ReLU head is saturated there.
NodeEquilibrium optimal_equilibrium(const plant::OperatingPoint& rho, const TargetSearch& cfg,
                                    const plant::PlantParams& params, const nn::EmissionsModel& emissions);

/// What identify_grid does with a fit above the rollout gate.
enum class GateAction { Flag, Reject };

struct GridConfig {
  ScheduleGrid grid = reference_grid();
  PerturbationSpec perturbation;
  FitOptions fit;
  TargetSearch targets;
  GateAction gate_action = GateAction::Flag;
};

GridConfig grid_config_from_json(const std::string& text);

struct IdentificationResult {
  LpvGridModel emissions;
  LpvGridModel airpath;
  std::vector<NodeEquilibrium> equilibria;
  std::vector<FitReport> emission_fits;
  std::vector<FitReport> airpath_fits;

  /// Node indices whose fit is above the gate.
  std::vector<std::size_t> rejected_emission_nodes() const;
  std::vector<std::size_t> rejected_airpath_nodes() const;
};

using NodeCallback = std::function<void(std::size_t node, std::size_t total)>;

/// Runs every node: equilibrium search, perturbation, both fits.  With
/// GateAction::Reject a fit above the rollout gate throws NumericalError
/// naming the node; with Flag it is kept and marked in its FitReport.
IdentificationResult identify_grid(const GridConfig& cfg, const plant::PlantParams& params,
                                   const nn::EmissionsModel& emissions, const NodeCallback& progress = {});

/// A recorded run to replay through the emissions LPV.
struct ValidationTrace {
  std::vector<plant::OperatingPoint> rho;  // per step
  Mat u;                                    // 3 x T  (p_im, chi after step k, w_inj at k)
  Mat y;                                    // 2 x (T+1) reference emissions
};

struct ValidationReport {
  double nox_mae = 0.0;   // prediction clipped at zero, as emissions are
  double soot_mae = 0.0;
  double nox_mae_raw = 0.0;  // linear prediction as is
  double soot_mae_raw = 0.0;
  Mat predicted;  // 2 x (T+1), unclipped
};

/// Simulates the LPV from y(:,0) with per-step renormalization at rho_k.
/// The recursion stays linear; only the scored output is clipped.
ValidationReport validate_lpv(const LpvGridModel& model, const ValidationTrace& trace);

/// Open-loop drive of plant + NN along an operating-point trajectory with
/// actuators from the airpath equilibrium tables.
ValidationTrace record_trace(const std::vector<plant::OperatingPoint>& rho, const LpvGridModel& airpath,
                             const plant::PlantParams& params, const nn::EmissionsModel& emissions);

}  // namespace empc::lpv
