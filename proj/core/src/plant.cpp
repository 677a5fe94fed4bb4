#include "empc/plant.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace empc::plant {

namespace {

using json = nlohmann::json;

double smooth_pos(double x, double width) { return 0.5 * (x + std::sqrt(x * x + width * width)); }

const std::pair<const char*, double PlantParams::*> kDoubleFields[] = {
    {"idle_rpm", &PlantParams::idle_rpm},
    {"max_rpm", &PlantParams::max_rpm},
    {"max_fuel", &PlantParams::max_fuel},
    {"p_amb", &PlantParams::p_amb},
    {"t_im", &PlantParams::t_im},
    {"k_fuel", &PlantParams::k_fuel},
    {"k_eng", &PlantParams::k_eng},
    {"k_egr", &PlantParams::k_egr},
    {"k_tex", &PlantParams::k_tex},
    {"k_turb", &PlantParams::k_turb},
    {"vgt_min_area", &PlantParams::vgt_min_area},
    {"k_comp", &PlantParams::k_comp},
    {"c_comp", &PlantParams::c_comp},
    {"k_power", &PlantParams::k_power},
    {"tau_turbo", &PlantParams::tau_turbo},
    {"k_im", &PlantParams::k_im},
    {"k_ex", &PlantParams::k_ex},
    {"smooth_dp", &PlantParams::smooth_dp},
    {"tau_nox", &PlantParams::tau_nox},
    {"tau_soot", &PlantParams::tau_soot},
    {"nox_floor", &PlantParams::nox_floor},
    {"nox_gain", &PlantParams::nox_gain},
    {"nox_fuel_exp", &PlantParams::nox_fuel_exp},
    {"nox_egr_coef", &PlantParams::nox_egr_coef},
    {"nox_pim_exp", &PlantParams::nox_pim_exp},
    {"nox_speed_exp", &PlantParams::nox_speed_exp},
    {"soot_floor", &PlantParams::soot_floor},
    {"soot_gain", &PlantParams::soot_gain},
    {"soot_phi0", &PlantParams::soot_phi0},
    {"soot_phi_width", &PlantParams::soot_phi_width},
    {"soot_egr_coef", &PlantParams::soot_egr_coef},
};

struct Derivs {
  double p_im, p_ex, n_t, nox, soot;
};

EmissionState static_emissions(const Flows& fl, double p_im, const OperatingPoint& rho, const PlantParams& p) {
  const double chi = egr_rate(fl.egr, fl.compressor);
  const double load = rho.fuel_rate / 60.0;
  EmissionState e;
  e.nox = p.nox_floor;
  e.soot = p.soot_floor;
  if (rho.fuel_rate > 0.0) {
    e.nox += p.nox_gain * std::pow(load, p.nox_fuel_exp) * std::exp(-p.nox_egr_coef * chi) *
             std::pow(std::max(p_im, 1.0) / 150.0, p.nox_pim_exp) *
             std::pow(rho.engine_speed / 1600.0, p.nox_speed_exp);
    const double fresh = std::max(fl.engine * (1.0 - chi), 1e-9);
    const double phi = 14.5 * fl.fuel / fresh;
    const double sig = 1.0 / (1.0 + std::exp(-(phi - p.soot_phi0) / p.soot_phi_width));
    e.soot += p.soot_gain * (rho.fuel_rate / p.max_fuel) * sig * (1.0 + p.soot_egr_coef * chi);
  }
  return e;
}

Derivs derivs(const double* x, const ActuatorInput& v, const OperatingPoint& rho, const PlantParams& p) {
  const Flows fl = flows(x[0], x[1], x[2], v, rho, p);
  const EmissionState e = static_emissions(fl, x[0], rho, p);
  const double n_eq = std::cbrt(std::max(fl.turbine_power, 0.0) / (p.k_power * 1000.0));
  Derivs d;
  d.p_im = p.k_im * (fl.compressor + fl.egr - fl.engine) / 10.0;
  d.p_ex = p.k_ex * (fl.engine + fl.fuel - fl.egr - fl.turbine) / 10.0;
  d.n_t = (n_eq - x[2]) / p.tau_turbo;
  d.nox = (e.nox - x[3]) / p.tau_nox;
  d.soot = (e.soot - x[4]) / p.tau_soot;
  return d;
}

}  // namespace

AirpathState PlantState::airpath() const { return {intake_pressure, egr_rate(egr_flow, compressor_flow)}; }

PlantParams reference_params() { return PlantParams{}; }

PlantParams params_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("plant config: ") + e.what());
  }
  if (!j.is_object() || !j.contains("schema_version")) throw ConfigError("plant config: missing schema_version");
  if (j.at("schema_version") != 1) throw ConfigError("plant config: unsupported schema_version");
  PlantParams p = reference_params();
  if (!j.contains("params")) return p;
  const json& body = j.at("params");
  if (!body.is_object()) throw ConfigError("plant config: params must be an object");
  for (auto it = body.begin(); it != body.end(); ++it) {
    bool found = false;
    for (const auto& [name, member] : kDoubleFields) {
      if (it.key() == name) {
        if (!it->is_number()) throw ConfigError("plant config: " + it.key() + " must be a number");
        p.*member = it->get<double>();
        found = true;
      }
    }
    if (it.key() == "substeps") {
      if (!it->is_number_integer() || it->get<int>() < 1) throw ConfigError("plant config: substeps must be >= 1");
      p.substeps = it->get<int>();
      found = true;
    }
    if (!found) throw ConfigError("plant config: unknown key " + it.key());
  }
  for (const auto& [name, member] : kDoubleFields)
    if (!std::isfinite(p.*member)) throw ConfigError(std::string("plant config: non-finite ") + name);
  if (p.idle_rpm <= 0.0 || p.max_rpm <= p.idle_rpm || p.max_fuel <= 0.0)
    throw ConfigError("plant config: invalid envelope");
  if (p.tau_turbo <= 0.0 || p.tau_nox <= 0.0 || p.tau_soot <= 0.0)
    throw ConfigError("plant config: time constants must be positive");
  return p;
}

std::string params_to_json(const PlantParams& p) {
  json body = json::object();
  for (const auto& [name, member] : kDoubleFields) body[name] = p.*member;
  body["substeps"] = p.substeps;
  json j;
  j["schema_version"] = 1;
  j["params"] = body;
  return j.dump(2) + "\n";
}

PlantParams load_params(const std::filesystem::path& path) { return params_from_json(read_text_file(path)); }

void validate(const OperatingPoint& rho, const PlantParams& p) {
  if (!std::isfinite(rho.engine_speed) || !std::isfinite(rho.fuel_rate))
    throw ConfigError("operating point is not finite");
  if (rho.engine_speed < p.idle_rpm - 1e-9 || rho.engine_speed > p.max_rpm + 1e-9)
    throw ConfigError("engine speed outside envelope");
  if (rho.fuel_rate < 0.0 || rho.fuel_rate > p.max_fuel + 1e-9) throw ConfigError("fuel rate outside envelope");
}

void validate(const ActuatorInput& v) {
  if (!(v.egr_valve >= 0.0 && v.egr_valve <= 100.0) || !(v.vgt_position >= 0.0 && v.vgt_position <= 100.0))
    throw ConfigError("actuator command outside [0, 100]");
}

double egr_rate(double w_egr, double w_c) {
  if (!(w_egr >= 0.0) || !(w_c >= 0.0)) throw ConfigError("egr_rate: flows must be nonnegative");
  const double total = w_egr + w_c;
  if (!(total > 0.0)) throw NumericalError("egr_rate: zero total flow");
  return w_egr / total;
}

Flows flows(double p_im, double p_ex, double n_t, const ActuatorInput& v, const OperatingPoint& rho,
            const PlantParams& p) {
  Flows f;
  const double pex = std::max(p_ex, 1.0);
  f.fuel = p.k_fuel * rho.fuel_rate * rho.engine_speed;
  f.engine = p.k_eng * std::max(p_im, 0.0) * rho.engine_speed;
  f.egr = p.k_egr * (v.egr_valve / 100.0) * std::sqrt(smooth_pos(pex - p_im, p.smooth_dp));
  f.exhaust_temp = p.t_im + p.k_tex * f.fuel / std::max(f.engine + f.fuel, 1e-9);
  const double area = 1.0 - (1.0 - p.vgt_min_area) * v.vgt_position / 100.0;
  f.turbine = p.k_turb * area * std::sqrt(smooth_pos(pex - p.p_amb, p.smooth_dp) * pex / p.p_amb);
  const double head = p.p_amb * (1.0 + p.c_comp * n_t * n_t);
  f.compressor = p.k_comp * smooth_pos(head - p_im, 2.0 * p.smooth_dp);
  f.turbine_power = f.turbine * f.exhaust_temp * (1.0 - std::pow(p.p_amb / pex, 0.286));
  return f;
}

PlantState plant_step(const PlantState& s, const ActuatorInput& v, const OperatingPoint& rho, double dt,
                      const PlantParams& p) {
  if (!(dt > 0.0)) throw ConfigError("plant_step: dt must be positive");
  validate(rho, p);
  validate(v);
  if (!std::isfinite(s.intake_pressure) || !std::isfinite(s.exhaust_pressure) || !std::isfinite(s.turbo_speed) ||
      !std::isfinite(s.nox) || !std::isfinite(s.soot))
    throw NumericalError("plant_step: non-finite input state");
  double x[5] = {s.intake_pressure, s.exhaust_pressure, s.turbo_speed, s.nox, s.soot};
  const double h = dt / p.substeps;
  auto eval = [&](const double* y, double* k) {
    const Derivs d = derivs(y, v, rho, p);
    k[0] = d.p_im;
    k[1] = d.p_ex;
    k[2] = d.n_t;
    k[3] = d.nox;
    k[4] = d.soot;
  };
  for (int i = 0; i < p.substeps; ++i) {
    double k1[5], k2[5], k3[5], k4[5], y[5];
    eval(x, k1);
    for (int j = 0; j < 5; ++j) y[j] = x[j] + 0.5 * h * k1[j];
    eval(y, k2);
    for (int j = 0; j < 5; ++j) y[j] = x[j] + 0.5 * h * k2[j];
    eval(y, k3);
    for (int j = 0; j < 5; ++j) y[j] = x[j] + h * k3[j];
    eval(y, k4);
    for (int j = 0; j < 5; ++j) x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
  }
  for (double xi : x)
    if (!std::isfinite(xi)) throw NumericalError("plant_step: non-finite state");
  PlantState out;
  out.intake_pressure = x[0];
  out.exhaust_pressure = x[1];
  out.turbo_speed = std::max(x[2], 0.0);
  out.nox = x[3];
  out.soot = x[4];
  const Flows fl = flows(out.intake_pressure, out.exhaust_pressure, out.turbo_speed, v, rho, p);
  out.compressor_flow = fl.compressor;
  out.egr_flow = fl.egr;
  if (out.intake_pressure <= 0.0 || out.exhaust_pressure <= 0.0)
    throw NumericalError("plant_step: pressure left the physical range");
  return out;
}

EmissionState emission_truth(const PlantState& s, const ActuatorInput& v, const OperatingPoint& rho,
                             const PlantParams& p) {
  validate(rho, p);
  validate(v);
  const Flows fl = flows(s.intake_pressure, s.exhaust_pressure, s.turbo_speed, v, rho, p);
  return static_emissions(fl, s.intake_pressure, rho, p);
}

PlantState initial_guess(const PlantParams& p) {
  PlantState s;
  s.intake_pressure = p.p_amb + 5.0;
  s.exhaust_pressure = p.p_amb + 10.0;
  s.turbo_speed = 0.3;
  s.nox = p.nox_floor;
  s.soot = p.soot_floor;
  return s;
}

PlantState settle(const ActuatorInput& v, const OperatingPoint& rho, const PlantParams& p, const PlantState& start,
                  double tol, int max_steps) {
  PlantState s = start;
  for (int k = 0; k < max_steps; ++k) {
    const PlantState n = plant_step(s, v, rho, kBaseDt, p);
    const double change = std::max({std::abs(n.intake_pressure - s.intake_pressure),
                                    std::abs(n.exhaust_pressure - s.exhaust_pressure),
                                    std::abs(n.turbo_speed - s.turbo_speed), std::abs(n.nox - s.nox),
                                    std::abs(n.soot - s.soot)});
    s = n;
    if (change < tol) return s;
  }
  std::ostringstream msg;
  msg << "plant did not settle at ne=" << rho.engine_speed << " winj=" << rho.fuel_rate << " egr=" << v.egr_valve
      << " vgt=" << v.vgt_position;
  throw NumericalError(msg.str());
}

PlantState settle(const ActuatorInput& v, const OperatingPoint& rho, const PlantParams& p) {
  return settle(v, rho, p, initial_guess(p));
}

const std::array<const char*, kNumMeasurements>& measurement_names() {
  static const std::array<const char*, kNumMeasurements> names = {
      "injection_pressure", "main_injection_timing", "main_fuel_rate", "engine_torque", "engine_speed",
      "intake_pressure",    "exhaust_pressure",      "mass_air_flow",  "egr_position",  "vgt_position"};
  return names;
}

Measurements measurement_vector(const PlantState& s, const ActuatorInput& v, const OperatingPoint& rho,
                                const PlantParams& p) {
  (void)p;
  const double ne = rho.engine_speed;
  const double w = rho.fuel_rate;
  const double shape = (ne - 1800.0) / 1000.0;
  Measurements m{};
  m[0] = 40.0 + 0.9 * w + 0.02 * (ne - 800.0);
  m[1] = 4.0 + 0.003 * (ne - 800.0) - 0.02 * w;
  m[2] = w;
  m[3] = 12.0 * w * (1.0 - 0.04 * shape * shape) - (20.0 + 0.01 * ne) -
         0.5 * (s.exhaust_pressure - s.intake_pressure);
  m[4] = ne;
  m[5] = s.intake_pressure;
  m[6] = s.exhaust_pressure;
  m[7] = s.compressor_flow;
  m[8] = v.egr_valve;
  m[9] = v.vgt_position;
  return m;
}

std::string trajectory_row(double t, const OperatingPoint& rho, const ActuatorInput& v, const PlantState& s) {
  std::string row;
  const double vals[] = {t,
                         rho.engine_speed,
                         rho.fuel_rate,
                         v.egr_valve,
                         v.vgt_position,
                         s.intake_pressure,
                         s.exhaust_pressure,
                         s.turbo_speed,
                         s.compressor_flow,
                         s.egr_flow,
                         egr_rate(s.egr_flow, s.compressor_flow),
                         s.nox,
                         s.soot};
  for (std::size_t i = 0; i < std::size(vals); ++i) {
    if (i) row += ',';
    row += format_double(vals[i]);
  }
  return row;
}

}  // namespace empc::plant
