#include "empc/pipeline.hpp"

#include <sstream>

namespace empc::control {

void validate(const PipelineConfig& cfg) {
  validate(cfg.empc);
  validate(cfg.airpath);
  if (cfg.empc_every < 1) throw ConfigError("pipeline: empc_every must be >= 1");
}

const std::vector<std::string>& telemetry_columns() {
  static const std::vector<std::string> cols = {
      "t",       "ne",     "w_trg",  "w_adj", "pim_trg", "chi_trg", "pim_adj",  "chi_adj",       "pim",
      "chi_egr", "egr_ff", "vgt_ff", "egr",   "vgt",     "nox",     "soot",     "soot_slack",    "empc_solved",
      "empc_fallback", "airpath_fallback"};
  return cols;
}

std::string telemetry_csv(const std::vector<TelemetryRow>& rows) {
  std::ostringstream o;
  const auto& cols = telemetry_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) o << (i ? "," : "") << cols[i];
  o << '\n';
  for (const auto& r : rows) {
    const double v[] = {r.t,   r.engine_speed, r.fuel_target, r.fuel_adjusted, r.pim_target, r.chi_target, r.pim_adjusted,
                        r.chi_adjusted, r.pim, r.chi, r.egr_ff, r.vgt_ff, r.egr, r.vgt, r.nox, r.soot, r.slack};
    for (std::size_t i = 0; i < std::size(v); ++i) o << (i ? "," : "") << format_double(v[i]);
    o << ',' << r.empc_solved << ',' << r.empc_fallback << ',' << r.airpath_fallback << '\n';
  }
  return o.str();
}

ControllerPipeline::ControllerPipeline(const lpv::LpvGridModel& emissions, const lpv::LpvGridModel& airpath,
                                       Scenario scenario, PipelineConfig cfg)
    : emissions_(emissions), airpath_(airpath), maps_(target_maps_from(airpath)), scenario_(scenario),
      cfg_(std::move(cfg)) {
  lpv::validate(emissions_);
  validate(cfg_);
}

void ControllerPipeline::reset(const plant::AirpathState& z, const Vec& emissions, const plant::ActuatorInput& v,
                               const plant::OperatingPoint& rho) {
  if (emissions.size() != 2) throw ConfigError("pipeline: expected two emission channels");
  k_ = 0;
  z_prev_ = z;
  e_prev_ = emissions;
  v_prev_ = v;
  v_ff_prev_ = v;
  z_model_ = z;
  const auto lut = lookup_targets(maps_, rho);
  targets_ = {lut.intake_pressure, lut.egr_rate, rho.fuel_rate};
  slack_ = 0.0;
  fuel_prev_ = rho.fuel_rate;
  warnings_.clear();
  empc_fallbacks_ = 0;
  airpath_fallbacks_ = 0;
  initialized_ = true;
}

Command ControllerPipeline::step(const plant::AirpathState& z, const Vec& emissions, const plant::OperatingPoint& rho,
                                 TelemetryRow* row) {
  if (!initialized_) throw ConfigError("pipeline: reset() must be called before step()");
  if (emissions.size() != 2 || !emissions.allFinite()) throw NumericalError("pipeline: bad emission measurement");
  TelemetryRow tr;
  const auto lut = lookup_targets(maps_, rho);

  // Supervisory layer.
  if (k_ % cfg_.empc_every == 0) {
    if (scenario_.empc_enabled()) {
      EmpcInputs in;
      in.x = emissions;
      in.x_prev = e_prev_;
      in.u_prev = Eigen::Vector3d(z.intake_pressure, z.egr_rate, fuel_prev_);
      in.rho = rho;
      EmpcOptions opt;
      opt.dump_dir = cfg_.dump_dir;
      const EmpcResult r = empc_step(in, maps_, emissions_, cfg_.empc, scenario_, opt);
      targets_ = r.targets;
      slack_ = r.slack.size() ? r.slack[0] : 0.0;
      if (r.fallback) {
        ++empc_fallbacks_;
        tr.empc_fallback = 1;
        warnings_.push_back("t=" + format_double(kBaseDt * static_cast<double>(k_)) + " " + r.warning);
      }
    } else {
      targets_ = {lut.intake_pressure, lut.egr_rate, rho.fuel_rate};
      slack_ = 0.0;
    }
    tr.empc_solved = 1;
  }
  // Fuel limits follow the current demand even between EMPC solves.
  if (scenario_.empc_enabled())
    targets_.fuel_rate = std::clamp(targets_.fuel_rate, 0.9 * rho.fuel_rate, rho.fuel_rate);
  else
    targets_ = {lut.intake_pressure, lut.egr_rate, rho.fuel_rate};
  const double fuel = targets_.fuel_rate;
  const plant::AirpathState r{targets_.intake_pressure, targets_.egr_rate};

  // Airpath layer.
  plant::ActuatorInput v_ff = v_ff_prev_;
  if (cfg_.feedforward) {
    const AirpathResult ff = airpath_ff_step(z_model_, r, rho, fuel, airpath_, cfg_.airpath, v_ff_prev_, cfg_.dump_dir);
    v_ff = ff.v;
    if (ff.fallback) {
      ++airpath_fallbacks_;
      tr.airpath_fallback = 1;
      warnings_.push_back("t=" + format_double(kBaseDt * static_cast<double>(k_)) + " " + ff.warning);
    }
    const Vec zn = lpv::step_physical(lpv::interpolate(airpath_, rho), Eigen::Vector2d(z_model_.intake_pressure, z_model_.egr_rate),
                                      Eigen::Vector2d(v_ff.egr_valve, v_ff.vgt_position), fuel);
    if (!zn.allFinite()) throw NumericalError("pipeline: feedforward model state became non-finite");
    z_model_ = {zn[0], zn[1]};
  }
  FbInputs fb;
  fb.z = z;
  fb.z_prev = z_prev_;
  fb.r = r;
  fb.rho = rho;
  fb.v_bar = {v_prev_.egr_valve + v_ff.egr_valve - v_ff_prev_.egr_valve,
              v_prev_.vgt_position + v_ff.vgt_position - v_ff_prev_.vgt_position};
  const AirpathResult fr = airpath_fb_step(fb, airpath_, cfg_.airpath, cfg_.dump_dir);
  if (fr.fallback) {
    ++airpath_fallbacks_;
    tr.airpath_fallback = 1;
    warnings_.push_back("t=" + format_double(kBaseDt * static_cast<double>(k_)) + " " + fr.warning);
  }

  tr.t = kBaseDt * static_cast<double>(k_);
  tr.engine_speed = rho.engine_speed;
  tr.fuel_target = rho.fuel_rate;
  tr.fuel_adjusted = fuel;
  tr.pim_target = lut.intake_pressure;
  tr.chi_target = lut.egr_rate;
  tr.pim_adjusted = r.intake_pressure;
  tr.chi_adjusted = r.egr_rate;
  tr.pim = z.intake_pressure;
  tr.chi = z.egr_rate;
  tr.egr_ff = v_ff.egr_valve;
  tr.vgt_ff = v_ff.vgt_position;
  tr.egr = fr.v.egr_valve;
  tr.vgt = fr.v.vgt_position;
  tr.nox = emissions[0];
  tr.soot = emissions[1];
  tr.slack = slack_;
  if (row) *row = tr;

  z_prev_ = z;
  e_prev_ = emissions;
  v_prev_ = fr.v;
  v_ff_prev_ = v_ff;
  fuel_prev_ = fuel;
  ++k_;
  return {fr.v, fuel};
}

}  // namespace empc::control
