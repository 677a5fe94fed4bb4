#include "empc/harness.hpp"

#include "empc/identification.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace empc::harness {

using detail::json;
using detail::mat_from;
using detail::read_object;
using detail::vec_from;

Artifacts load_artifacts(const std::filesystem::path& plant_json, const std::filesystem::path& nn_bin,
                         const std::filesystem::path& lpv_emissions, const std::filesystem::path& lpv_airpath) {
  std::string missing;
  for (const auto* p : {&plant_json, &nn_bin, &lpv_emissions, &lpv_airpath})
    if (!std::filesystem::is_regular_file(*p)) missing += (missing.empty() ? "" : ", ") + p->string();
  if (!missing.empty()) throw ArtifactError("missing artifacts: " + missing);
  Artifacts a;
  a.plant = plant::load_params(plant_json);
  a.nn = nn::load_model(nn_bin);
  a.emissions = lpv::load_model(lpv_emissions);
  a.airpath = lpv::load_model(lpv_airpath);
  if (a.emissions.kind != "emissions") throw ConfigError(lpv_emissions.string() + ": not an emissions LPV model");
  if (a.airpath.kind != "airpath") throw ConfigError(lpv_airpath.string() + ": not an airpath LPV model");
  return a;
}

MetricsReport compute_metrics(const std::vector<control::TelemetryRow>& rows, std::size_t warmup_steps, double dt,
                              double soot_max) {
  if (warmup_steps >= rows.size()) throw ConfigError("metrics: warmup covers the whole run");
  MetricsReport m;
  m.soot_max = soot_max > 0.0 ? soot_max : 0.0;
  double soot_sum = 0.0;
  std::size_t over = 0;
  for (std::size_t k = warmup_steps; k < rows.size(); ++k) {
    const auto& r = rows[k];
    m.cumulative_nox += r.nox * dt;
    m.peak_nox = std::max(m.peak_nox, r.nox);
    soot_sum += r.soot;
    m.peak_soot = std::max(m.peak_soot, r.soot);
    m.max_predicted_slack = std::max(m.max_predicted_slack, r.slack);
    if (r.fuel_adjusted < 0.9 * r.fuel_target || r.fuel_adjusted > r.fuel_target) ++m.fuel_bound_violations;
    if (soot_max > 0.0 && r.soot > soot_max) {
      ++over;
      m.max_soot_excess = std::max(m.max_soot_excess, r.soot - soot_max);
    }
  }
  m.active_steps = rows.size() - warmup_steps;
  m.average_soot = soot_sum / static_cast<double>(m.active_steps);
  m.soot_violation_fraction = static_cast<double>(over) / static_cast<double>(m.active_steps);
  return m;
}

double percent_delta(double test, double base) {
  if (test == base) return 0.0;
  if (base == 0.0) return test > 0.0 ? INFINITY : -INFINITY;
  return 100.0 * (test - base) / std::abs(base);
}

std::string signed_percent(double pct) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%+.3f%%", pct);
  return pct == 0.0 ? "0.000%" : buf;
}

std::string arrow_percent(double pct) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f%%", std::abs(pct));
  if (pct == 0.0) return "0.000%";
  return std::string(pct < 0.0 ? "↓ " : "↑ ") + buf;
}

namespace {

Mat weight_matrix(const json& v, Eigen::Index n, const std::string& what) {
  if (v.is_array() && !v.empty() && v.front().is_array()) {
    const Mat m = mat_from(v, n, what);
    if (m.rows() != n) throw ConfigError(what + ": wrong size");
    return m;
  }
  const Vec d = vec_from(v);
  if (d.size() != n) throw ConfigError(what + ": expected " + std::to_string(n) + " diagonal entries");
  return d.asDiagonal();
}

Vec fixed_vec(const json& v, Eigen::Index n, const std::string& what) {
  const Vec d = vec_from(v);
  if (d.size() != n) throw ConfigError(what + ": expected " + std::to_string(n) + " entries");
  return d;
}

}  // namespace

ScenarioSettings scenario_settings_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenarios: ") + e.what());
  }
  ScenarioSettings s;
  auto& w = s.pipeline.empc;
  auto& a = s.pipeline.airpath;
  try {
    read_object(j, "scenarios", [&](const std::string& k, const json& v) {
      if (k == "format") return v.get<std::string>() == "empc-scenarios";
      if (k == "empc") {
        read_object(v, "scenarios empc", [&](const std::string& ek, const json& ev) {
          if (ek == "alpha") w.alpha = ev.get<double>();
          else if (ek == "beta") w.beta = ev.get<double>();
          else if (ek == "gamma") w.gamma = ev.get<double>();
          else if (ek == "eta_low") s.eta_low = ev.get<double>();
          else if (ek == "eta_high") s.eta_high = ev.get<double>();
          else if (ek == "zeta_factor") s.zeta_factor = ev.get<double>();
          else if (ek == "R") w.R = weight_matrix(ev, 3, "scenarios empc R");
          else if (ek == "horizon") w.horizon = ev.get<int>();
          else if (ek == "every") s.pipeline.empc_every = ev.get<int>();
          else if (ek == "pim_band") w.pim_band = ev.get<double>();
          else if (ek == "chi_band") w.chi_band = ev.get<double>();
          else if (ek == "soot_max_fraction") s.soot_max_fraction = ev.get<double>();
          else return false;
          return true;
        });
      } else if (k == "airpath") {
        read_object(v, "scenarios airpath", [&](const std::string& ak, const json& av) {
          if (ak == "horizon") a.horizon = av.get<int>();
          else if (ak == "Q") a.Q = weight_matrix(av, 2, "scenarios airpath Q");
          else if (ak == "R") a.R = weight_matrix(av, 2, "scenarios airpath R");
          else if (ak == "terminal_factor") a.terminal_factor = av.get<double>();
          else if (ak == "z_min") a.z_min = fixed_vec(av, 2, "scenarios airpath z_min");
          else if (ak == "z_max") a.z_max = fixed_vec(av, 2, "scenarios airpath z_max");
          else if (ak == "v_min") a.v_min = fixed_vec(av, 2, "scenarios airpath v_min");
          else if (ak == "v_max") a.v_max = fixed_vec(av, 2, "scenarios airpath v_max");
          else if (ak == "slack_weight") a.slack_weight = av.get<double>();
          else if (ak == "feedforward") s.pipeline.feedforward = av.get<bool>();
          else return false;
          return true;
        });
      } else if (k == "scenarios") {
        s.scenarios.clear();
        for (const auto& n : v) s.scenarios.push_back(control::scenario_from_string(n.get<std::string>()));
      } else {
        return false;
      }
      return true;
    });
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenarios: ") + e.what());
  }
  if (!(s.eta_low > 0.0 && s.eta_high >= s.eta_low && s.zeta_factor > 0.0))
    throw ConfigError("scenarios: need 0 < eta_low <= eta_high and zeta_factor > 0");
  if (!(s.soot_max_fraction > 0.0)) throw ConfigError("scenarios: soot_max_fraction must be positive");
  if (s.scenarios.empty()) throw ConfigError("scenarios: empty scenario list");
  control::validate(resolve(s, control::make_scenario(control::ScenarioName::EmpcD), 1.0));
  return s;
}

control::PipelineConfig resolve(const ScenarioSettings& s, const control::Scenario& scen, double soot_reference) {
  control::PipelineConfig c = s.pipeline;
  c.empc.eta = scen.high_nox_penalty ? s.eta_high : s.eta_low;
  c.empc.zeta = s.zeta_factor * s.eta_high;
  c.empc.soot_max = s.soot_max_fraction * soot_reference;
  return c;
}

RunResult run_scenario(const cycles::DriveCycle& cycle, const control::Scenario& scen,
                       const control::PipelineConfig& cfg, const Artifacts& art, double soot_max) {
  cycles::validate(cycle, art.plant);
  RunResult out;
  out.cycle = cycle.name;
  out.scenario = scen;
  out.warmup_steps = cycle.warmup_steps();
  control::ControllerPipeline pipe(art.emissions, art.airpath, scen, cfg);

  const auto& rho0 = cycle.samples.front();
  const auto v0_raw = control::lookup_actuators(pipe.maps(), rho0);
  const plant::ActuatorInput v0{std::clamp(v0_raw.egr_valve, 0.0, 100.0), std::clamp(v0_raw.vgt_position, 0.0, 100.0)};
  plant::PlantState s = plant::settle(v0, rho0, art.plant);
  Vec e = lpv::nn_emissions(art.nn, s, v0, rho0, art.plant);
  pipe.reset(s.airpath(), e, v0, rho0);

  out.telemetry.resize(cycle.samples.size());
  for (std::size_t k = 0; k < cycle.samples.size(); ++k) {
    const auto& rho = cycle.samples[k];
    const control::Command cmd = pipe.step(s.airpath(), e, rho, &out.telemetry[k]);
    out.telemetry[k].t = cycle.dt * static_cast<double>(k);
    const plant::OperatingPoint applied{rho.engine_speed, cmd.fuel};
    s = plant::plant_step(s, cmd.v, applied, cycle.dt, art.plant);
    e = lpv::nn_emissions(art.nn, s, cmd.v, applied, art.plant);
    if (!e.allFinite()) throw NumericalError("run_scenario: non-finite emissions at step " + std::to_string(k));
  }
  out.metrics = compute_metrics(out.telemetry, out.warmup_steps, cycle.dt, scen.soot_limit ? soot_max : 0.0);
  out.warnings = pipe.warnings();
  out.empc_fallbacks = pipe.empc_fallbacks();
  out.airpath_fallbacks = pipe.airpath_fallbacks();
  return out;
}

std::vector<RunResult> run_sweep(const cycles::DriveCycle& cycle, const ScenarioSettings& s, const Artifacts& art) {
  std::vector<RunResult> out;
  const auto base_scen = control::make_scenario(control::ScenarioName::Baseline);
  RunResult base = run_scenario(cycle, base_scen, resolve(s, base_scen, 1.0), art, 0.0);
  const double soot_ref = base.metrics.peak_soot;
  for (const auto name : s.scenarios) {
    if (name == control::ScenarioName::Baseline) {
      out.push_back(base);
      continue;
    }
    const auto scen = control::make_scenario(name);
    const auto cfg = resolve(s, scen, soot_ref);
    out.push_back(run_scenario(cycle, scen, cfg, art, cfg.empc.soot_max));
  }
  return out;
}

}  // namespace empc::harness
