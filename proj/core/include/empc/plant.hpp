#pragma once

#include "empc/common.hpp"

#include <array>
#include <string>

namespace empc::plant {

struct OperatingPoint {
  double engine_speed = 1600.0;  // rpm
  double fuel_rate = 40.0;       // mm^3/stroke
};

struct AirpathState {
  double intake_pressure = 101.3;  // kPa
  double egr_rate = 0.0;           // fraction
};

struct ActuatorInput {
  double egr_valve = 0.0;     // % open
  double vgt_position = 0.0;  // % closed
};

struct EmissionState {
  double nox = 0.0;   // ppm
  double soot = 0.0;  // % opacity
};

struct PlantState {
  double intake_pressure = 101.3;   // kPa
  double exhaust_pressure = 101.3;  // kPa
  double turbo_speed = 0.0;         // normalized
  double compressor_flow = 0.0;     // g/s
  double egr_flow = 0.0;            // g/s
  double nox = 0.0;                 // lagged, ppm
  double soot = 0.0;                // lagged, %

  AirpathState airpath() const;
  EmissionState emissions() const { return {nox, soot}; }
};

/// Coefficients of the synthetic mean-value engine.  All pressures kPa,
/// flows g/s, temperatures K.
struct PlantParams {
  double idle_rpm = 800.0;
  double max_rpm = 3200.0;
  double max_fuel = 120.0;

  double p_amb = 101.3;
  double t_im = 320.0;
  double k_fuel = 2.0e-5;     // fuel flow per (mm^3/st * rpm)
  double k_eng = 1.8e-4;      // speed-density pumping
  double k_egr = 6.0;         // EGR valve capacity
  double k_tex = 14000.0;     // exhaust temperature rise
  double k_turb = 9.5;        // turbine capacity
  double vgt_min_area = 0.4;  // effective area at full closure
  double k_comp = 5.0;        // compressor flow gain
  double c_comp = 1.8;        // head coefficient on turbo speed^2
  double k_power = 37.0;      // windage: P = k_power * 1000 * n^3
  double tau_turbo = 0.4;     // s
  double k_im = 10.0;         // intake manifold filling
  double k_ex = 20.0;         // exhaust manifold filling
  double smooth_dp = 1.0;     // smooth-positive width in flow laws

  double tau_nox = 0.5;
  double tau_soot = 0.3;
  double nox_floor = 20.0;
  double nox_gain = 900.0;
  double nox_fuel_exp = 1.1;
  double nox_egr_coef = 3.5;
  double nox_pim_exp = 0.3;
  double nox_speed_exp = 0.2;
  double soot_floor = 0.3;
  double soot_gain = 20.0;
  double soot_phi0 = 0.95;
  double soot_phi_width = 0.1;
  double soot_egr_coef = 1.5;

  int substeps = 5;
};

/// Reference plant shipped with the library.
PlantParams reference_params();

/// Parses a plant JSON document ({"schema_version": 1, "params": {...}}).
/// Missing keys keep reference values; unknown keys are rejected.
PlantParams params_from_json(const std::string& text);
std::string params_to_json(const PlantParams& p);
PlantParams load_params(const std::filesystem::path& path);

void validate(const OperatingPoint& rho, const PlantParams& p);
void validate(const ActuatorInput& v);

/// w_egr / (w_egr + w_c).
double egr_rate(double w_egr, double w_c);

struct Flows {
  double fuel = 0.0;
  double engine = 0.0;
  double egr = 0.0;
  double turbine = 0.0;
  double compressor = 0.0;
  double exhaust_temp = 0.0;
  double turbine_power = 0.0;
};

Flows flows(double p_im, double p_ex, double n_t, const ActuatorInput& v, const OperatingPoint& rho,
            const PlantParams& p);

PlantState plant_step(const PlantState& state, const ActuatorInput& v, const OperatingPoint& rho, double dt,
                      const PlantParams& p);

/// Static emission maps evaluated at the state's airpath condition (the
/// lag states in PlantState relax toward these).
EmissionState emission_truth(const PlantState& state, const ActuatorInput& v, const OperatingPoint& rho,
                             const PlantParams& p);

/// A deterministic starting guess for settle().
PlantState initial_guess(const PlantParams& p);

/// Runs the plant at constant inputs until the per-step change is below
/// tol.  Throws NumericalError when it does not settle within max_steps.
PlantState settle(const ActuatorInput& v, const OperatingPoint& rho, const PlantParams& p,
                  const PlantState& start, double tol = 1e-11, int max_steps = 40000);
PlantState settle(const ActuatorInput& v, const OperatingPoint& rho, const PlantParams& p);

inline constexpr int kNumMeasurements = 10;
using Measurements = std::array<double, kNumMeasurements>;

/// Channel names in order.
const std::array<const char*, kNumMeasurements>& measurement_names();

/// Synthetic proxies for the NN input channels.
Measurements measurement_vector(const PlantState& state, const ActuatorInput& v, const OperatingPoint& rho,
                                const PlantParams& p);

/// Header of trajectory dumps.
inline constexpr const char* kTrajectoryHeader =
    "t,ne,winj,egr_cmd,vgt_cmd,pim,pex,nturb,wc,wegr,chi_egr,nox,soot";

std::string trajectory_row(double t, const OperatingPoint& rho, const ActuatorInput& v, const PlantState& s);

}  // namespace empc::plant
