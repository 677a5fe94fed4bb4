#include "empc/controllers.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

namespace empc::control {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double bilinear(const lpv::ScheduleGrid& g, const std::vector<double>& table, const plant::OperatingPoint& rho) {
  std::size_t i = 0, j = 0;
  double s = 0.0, f = 0.0;
  lpv::locate(g.speeds, rho.engine_speed, i, s);
  lpv::locate(g.fuels, rho.fuel_rate, j, f);
  const double a00 = table[g.index(i, j)], a01 = table[g.index(i, j + 1)];
  const double a10 = table[g.index(i + 1, j)], a11 = table[g.index(i + 1, j + 1)];
  return ((1.0 - s) * (1.0 - f)) * a00 + ((1.0 - s) * f) * a01 + (s * (1.0 - f)) * a10 + (s * f) * a11;
}

void check_psd(const Mat& W, Eigen::Index n, const std::string& what, bool strict) {
  if (W.rows() != n || W.cols() != n) throw ConfigError(what + ": wrong shape");
  if (!W.allFinite() || (W - W.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + W.cwiseAbs().maxCoeff()))
    throw ConfigError(what + ": must be symmetric and finite");
  const double lmin = Eigen::SelfAdjointEigenSolver<Mat>(W).eigenvalues().minCoeff();
  if (strict ? !(lmin > 0.0) : lmin < -1e-12) throw ConfigError(what + (strict ? ": must be positive definite" : ": must be PSD"));
}

std::string dump_on_failure(const std::optional<std::filesystem::path>& dir, const std::string& label,
                            const mpc::QpProblem& qp) {
  if (!dir) return {};
  static std::atomic<unsigned> counter{0};
  try {
    return " (dumped to " + mpc::dump_qp(*dir, label + "_" + std::to_string(counter++), qp).string() + ")";
  } catch (const Error& e) {
    return std::string(" (dump failed: ") + e.what() + ")";
  }
}

mpc::Signal row_signal(Eigen::Index n_ext, Eigen::Index nu) {
  return {Mat::Zero(1, n_ext), Mat::Zero(1, nu), Vec::Zero(1)};
}

}  // namespace

TargetMaps target_maps_from(const lpv::LpvGridModel& airpath) {
  lpv::validate(airpath);
  TargetMaps m;
  m.grid = airpath.grid;
  for (const auto& lm : airpath.locals) {
    if (lm.nx() != 2 || lm.nu() != 2) throw ConfigError("target maps: airpath model must be 2 x 2");
    m.intake_pressure.push_back(lm.x_ss[0]);
    m.egr_rate.push_back(lm.x_ss[1]);
    m.egr_valve.push_back(lm.u_ss[0]);
    m.vgt_position.push_back(lm.u_ss[1]);
  }
  validate(m);
  return m;
}

void validate(const TargetMaps& m) {
  lpv::validate(m.grid);
  const auto n = m.grid.size();
  if (m.intake_pressure.size() != n || m.egr_rate.size() != n || m.egr_valve.size() != n || m.vgt_position.size() != n)
    throw ConfigError("target maps: table size does not match the grid");
  for (std::size_t k = 0; k < n; ++k) {
    if (!(m.intake_pressure[k] > 0.0)) throw ConfigError("target maps: intake pressure must be positive");
    if (!(m.egr_rate[k] >= 0.0 && m.egr_rate[k] <= 1.0)) throw ConfigError("target maps: EGR rate outside [0, 1]");
    for (double v : {m.egr_valve[k], m.vgt_position[k]})
      if (!(v >= 0.0 && v <= 100.0)) throw ConfigError("target maps: actuator outside [0, 100]");
  }
}

plant::AirpathState lookup_targets(const TargetMaps& m, const plant::OperatingPoint& rho) {
  return {bilinear(m.grid, m.intake_pressure, rho), bilinear(m.grid, m.egr_rate, rho)};
}

plant::ActuatorInput lookup_actuators(const TargetMaps& m, const plant::OperatingPoint& rho) {
  return {bilinear(m.grid, m.egr_valve, rho), bilinear(m.grid, m.vgt_position, rho)};
}

void validate(const EmpcWeights& w) {
  for (double v : {w.alpha, w.beta, w.gamma, w.eta, w.zeta, w.pim_band, w.chi_band})
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("empc weights: alpha..zeta and bands must be positive");
  if (!std::isfinite(w.soot_max)) throw ConfigError("empc weights: soot_max must be finite");
  if (w.horizon < 1) throw ConfigError("empc weights: horizon must be >= 1");
  check_psd(w.R, 3, "empc weights R", true);
}

const char* to_string(ScenarioName n) {
  switch (n) {
    case ScenarioName::Baseline: return "baseline";
    case ScenarioName::EmpcA: return "EMPC-A";
    case ScenarioName::EmpcB: return "EMPC-B";
    case ScenarioName::EmpcC: return "EMPC-C";
    case ScenarioName::EmpcD: return "EMPC-D";
  }
  return "?";
}

ScenarioName scenario_from_string(const std::string& s) {
  for (auto n : {ScenarioName::Baseline, ScenarioName::EmpcA, ScenarioName::EmpcB, ScenarioName::EmpcC,
                 ScenarioName::EmpcD})
    if (s == to_string(n)) return n;
  throw ConfigError("unknown scenario '" + s + "'");
}

Scenario make_scenario(ScenarioName n) {
  Scenario s;
  s.name = n;
  s.high_nox_penalty = n == ScenarioName::EmpcB || n == ScenarioName::EmpcD;
  s.soot_limit = n == ScenarioName::EmpcC || n == ScenarioName::EmpcD;
  return s;
}

mpc::OcpSpec empc_problem(const EmpcInputs& in, const TargetMaps& maps, const lpv::LpvGridModel& emissions,
                          const EmpcWeights& w, const Scenario& scen) {
  validate(w);
  if (in.x.size() != 2 || in.x_prev.size() != 2 || in.u_prev.size() != 3)
    throw ConfigError("empc: expected 2 emissions and 3 inputs");
  if (!in.x.allFinite() || !in.x_prev.allFinite() || !in.u_prev.allFinite())
    throw NumericalError("empc: non-finite measurement");
  const lpv::LocalModel lm = lpv::interpolate(emissions, in.rho);
  if (lm.nx() != 2 || lm.nu() != 3) throw ConfigError("empc: emissions model must have 2 states and 3 inputs");
  const mpc::RateModel rm = mpc::make_rate_model(lm);
  const auto n = rm.n_ext(), nu = rm.nu;
  const int N = w.horizon;

  mpc::OcpSpec p;
  p.A = rm.A_ext;
  p.B = rm.B_ext;
  p.x0 = mpc::extended_state(rm, lpv::normalize_state(lm, in.x), lpv::normalize_state(lm, in.x_prev),
                             lpv::normalize_input(lm, in.u_prev));
  p.N = N;
  p.R = w.R;

  // Physical input i at step j: u_ss + sigma (u~_{j-1} + du_j).
  auto input_signal = [&](Eigen::Index i) {
    auto s = row_signal(n, nu);
    s.C(0, rm.u_prev_offset() + i) = lm.sigma_u[i];
    s.D(0, i) = lm.sigma_u[i];
    s.offset[0] = lm.u_ss[i];
    return s;
  };
  // Physical emission i at step j: x_ss + sigma (dx_j + x~_{j-1}).
  auto state_signal = [&](Eigen::Index i) {
    auto s = row_signal(n, nu);
    s.C(0, rm.dx_offset() + i) = lm.sigma_x[i];
    s.C(0, rm.x_prev_offset() + i) = lm.sigma_x[i];
    s.offset[0] = lm.x_ss[i];
    return s;
  };
  auto one = [](double v) { return Vec::Constant(1, v); };

  const auto lut = lookup_targets(maps, in.rho);
  const double w_trg = in.rho.fuel_rate;
  p.quadratic.push_back({input_signal(0), one(lut.intake_pressure), Mat::Constant(1, 1, w.alpha), 0, N});
  p.quadratic.push_back({input_signal(1), one(lut.egr_rate), Mat::Constant(1, 1, w.beta), 0, N});
  // gamma (w_trg - w_adj): the constant part is dropped; the fuel bound fixes the sign.
  p.linear.push_back({input_signal(2), one(-w.gamma), 0, N});
  p.absolute.push_back({state_signal(0), w.eta, 1, N});

  p.bounds.push_back({input_signal(2), one(0.9 * w_trg), one(w_trg), 0, N - 1, false});
  p.bounds.push_back({input_signal(0), one(std::max(1.0, lut.intake_pressure - w.pim_band)),
                      one(lut.intake_pressure + w.pim_band), 0, N - 1, false});
  p.bounds.push_back({input_signal(1), one(std::max(0.0, lut.egr_rate - w.chi_band)),
                      one(std::min(1.0, lut.egr_rate + w.chi_band)), 0, N - 1, false});
  if (scen.soot_limit) {
    p.bounds.push_back({state_signal(1), one(-kInf), one(w.soot_max), 1, N, true});
    p.slack_linear = w.zeta;
  }
  return p;
}

EmpcResult empc_step(const EmpcInputs& in, const TargetMaps& maps, const lpv::LpvGridModel& emissions,
                     const EmpcWeights& w, const Scenario& scen, const EmpcOptions& opt) {
  EmpcResult out;
  out.lookup = lookup_targets(maps, in.rho);
  const double w_trg = in.rho.fuel_rate;
  auto fallback = [&](const std::string& why) {
    out.fallback = true;
    out.targets = {out.lookup.intake_pressure, out.lookup.egr_rate, w_trg};
    out.slack = Vec::Zero(w.horizon);
    out.predicted.resize(0, 0);
    out.warning = why;
    return out;
  };
  if (!scen.empc_enabled()) {
    out.targets = {out.lookup.intake_pressure, out.lookup.egr_rate, w_trg};
    out.slack = Vec::Zero(w.horizon);
    return out;
  }
  const mpc::OcpSpec p = empc_problem(in, maps, emissions, w, scen);
  const mpc::CondensedQp cq = mpc::condense(p);
  mpc::QpResult r;
  try {
    r = mpc::solve_qp(cq.qp);
  } catch (const NumericalError& e) {
    out.status = mpc::QpStatus::MaxIterations;
    return fallback(std::string("empc: ") + e.what() + dump_on_failure(opt.dump_dir, opt.dump_label, cq.qp));
  }
  out.status = r.status;
  if (!r.ok())
    return fallback(std::string("empc: QP ") + mpc::to_string(r.status) +
                    dump_on_failure(opt.dump_dir, opt.dump_label, cq.qp));

  const lpv::LocalModel lm = lpv::interpolate(emissions, in.rho);
  const Vec u_prev = p.x0.tail(3);
  const Vec du0 = cq.inputs(r.w).col(0);
  const Vec u0 = lpv::denormalize_input(lm, u_prev + du0);
  // Projection onto the hard bounds removes solver round-off only.
  out.targets.intake_pressure = u0[0];
  out.targets.egr_rate = std::clamp(u0[1], 0.0, 1.0);
  out.targets.fuel_rate = std::clamp(u0[2], 0.9 * w_trg, w_trg);
  out.slack = out.status == mpc::QpStatus::Optimal && cq.n_slack > 0 ? Vec(cq.slacks(r.w).cwiseMax(0.0))
                                                                      : Vec(Vec::Zero(w.horizon));
  const Mat X = cq.predict(r.w);
  out.predicted.resize(2, X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j)
    out.predicted.col(j) = lpv::denormalize_state(lm, X.col(j).head(2) + X.col(j).segment(2, 2));
  return out;
}

void validate(const AirpathMpcConfig& c) {
  if (c.horizon < 1) throw ConfigError("airpath mpc: horizon must be >= 1");
  check_psd(c.Q, 2, "airpath mpc Q", false);
  check_psd(c.R, 2, "airpath mpc R", true);
  if (!(c.terminal_factor >= 0.0) || !(c.slack_weight > 0.0))
    throw ConfigError("airpath mpc: terminal factor must be >= 0 and slack weight > 0");
  if (c.z_min.size() != 2 || c.z_max.size() != 2 || c.v_min.size() != 2 || c.v_max.size() != 2)
    throw ConfigError("airpath mpc: bounds must have two entries");
  if ((c.z_min.array() >= c.z_max.array()).any() || (c.v_min.array() >= c.v_max.array()).any())
    throw ConfigError("airpath mpc: bounds must be ordered");
}

namespace {

Vec vec2(const plant::AirpathState& z) { return Eigen::Vector2d(z.intake_pressure, z.egr_rate); }
Vec vec2(const plant::ActuatorInput& v) { return Eigen::Vector2d(v.egr_valve, v.vgt_position); }

plant::ActuatorInput clamp_input(const Vec& v, const AirpathMpcConfig& c) {
  const Vec k = v.cwiseMax(c.v_min).cwiseMin(c.v_max);
  return {k[0], k[1]};
}

// Normalized box for a physical box.
void normalized_box(const Vec& lo, const Vec& hi, const Vec& ss, const Vec& sigma, Vec& nlo, Vec& nhi) {
  nlo = (lo - ss).cwiseQuotient(sigma);
  nhi = (hi - ss).cwiseQuotient(sigma);
}

AirpathResult solve_airpath(const mpc::OcpSpec& p, const std::optional<std::filesystem::path>& dump_dir,
                            const char* label, mpc::CondensedQp& cq, mpc::QpResult& r) {
  AirpathResult out;
  cq = mpc::condense(p);
  try {
    r = mpc::solve_qp(cq.qp);
    out.status = r.status;
  } catch (const NumericalError& e) {
    out.status = mpc::QpStatus::MaxIterations;
    out.warning = std::string(label) + ": " + e.what();
  }
  if (out.status != mpc::QpStatus::Optimal) {
    out.fallback = true;
    if (out.warning.empty()) out.warning = std::string(label) + ": QP " + mpc::to_string(out.status);
    out.warning += dump_on_failure(dump_dir, label, cq.qp);
  }
  return out;
}

}  // namespace

AirpathResult airpath_ff_step(const plant::AirpathState& z_model, const plant::AirpathState& r,
                              const plant::OperatingPoint& rho, double fuel, const lpv::LpvGridModel& airpath,
                              const AirpathMpcConfig& cfg, const plant::ActuatorInput& hold,
                              const std::optional<std::filesystem::path>& dump_dir) {
  validate(cfg);
  const lpv::LocalModel lm = lpv::interpolate(airpath, rho);
  if (lm.nx() != 2 || lm.nu() != 2) throw ConfigError("airpath ff: model must be 2 x 2");
  const Vec z0 = lpv::normalize_state(lm, vec2(z_model));
  const Vec rt = lpv::normalize_state(lm, vec2(r));
  if (!z0.allFinite() || !rt.allFinite()) throw NumericalError("airpath ff: non-finite state or target");
  const Vec c = lm.has_fuel_channel() ? Vec(lm.Bf.col(0) * ((fuel - lm.f_ss) / lm.sigma_f)) : Vec(Vec::Zero(2));
  // Input that holds r on the model: B v = (I - A) r - c.
  const Vec v_ref = lm.B.colPivHouseholderQr().solve((Mat::Identity(2, 2) - lm.A) * rt - c);
  const int N = cfg.horizon;

  mpc::OcpSpec p;
  p.A = lm.A;
  p.B = lm.B;
  p.c = c;
  p.x0 = z0;
  p.N = N;
  const mpc::Signal state{Mat::Identity(2, 2), Mat::Zero(2, 2), {}};
  const mpc::Signal input{Mat::Zero(2, 2), Mat::Identity(2, 2), {}};
  if (N > 1) p.quadratic.push_back({state, rt, cfg.Q, 1, N - 1});
  p.quadratic.push_back({state, rt, cfg.terminal_factor * cfg.Q, N, N});
  p.quadratic.push_back({input, v_ref, cfg.R, 0, N - 1});
  Vec lo, hi;
  normalized_box(cfg.v_min, cfg.v_max, lm.u_ss, lm.sigma_u, lo, hi);
  p.bounds.push_back({input, lo, hi, 0, N - 1, false});
  normalized_box(cfg.z_min, cfg.z_max, lm.x_ss, lm.sigma_x, lo, hi);
  p.bounds.push_back({state, lo, hi, 1, N, true});
  p.slack_quadratic = cfg.slack_weight;

  mpc::CondensedQp cq;
  mpc::QpResult qr;
  AirpathResult out = solve_airpath(p, dump_dir, "airpath_ff", cq, qr);
  if (out.fallback) {
    out.v = hold;
    return out;
  }
  out.v = clamp_input(lpv::denormalize_input(lm, cq.inputs(qr.w).col(0)), cfg);
  return out;
}

mpc::OcpSpec airpath_fb_problem(const FbInputs& in, const lpv::LpvGridModel& airpath, const AirpathMpcConfig& cfg) {
  validate(cfg);
  const lpv::LocalModel lm = lpv::interpolate(airpath, in.rho);
  if (lm.nx() != 2 || lm.nu() != 2) throw ConfigError("airpath fb: model must be 2 x 2");
  const mpc::RateModel rm = mpc::make_tracking_rate_model(lm.A, lm.B);
  const Vec z = lpv::normalize_state(lm, vec2(in.z));
  const Vec z_prev = lpv::normalize_state(lm, vec2(in.z_prev));
  const Vec r = lpv::normalize_state(lm, vec2(in.r));
  const Vec v_bar = lpv::normalize_input(lm, vec2(in.v_bar));
  if (!z.allFinite() || !z_prev.allFinite() || !r.allFinite() || !v_bar.allFinite())
    throw NumericalError("airpath fb: non-finite measurement");
  const auto n = rm.n_ext();
  const int N = cfg.horizon;

  mpc::OcpSpec p;
  p.A = rm.A_ext;
  p.B = rm.B_ext;
  p.x0 = mpc::extended_tracking_state(rm, z, z_prev, r, v_bar);
  p.N = N;
  p.R = cfg.R;
  mpc::Signal error{Mat::Zero(2, n), Mat::Zero(2, 2), {}};
  error.C.block(0, rm.error_offset(), 2, 2).setIdentity();
  mpc::Signal level{Mat::Zero(2, n), Mat::Identity(2, 2), {}};
  level.C.block(0, rm.u_prev_offset(), 2, 2).setIdentity();
  mpc::Signal state{Mat::Zero(2, n), Mat::Zero(2, 2), {}};
  state.C.block(0, rm.dx_offset(), 2, 2).setIdentity();
  state.C.block(0, rm.x_prev_offset(), 2, 2).setIdentity();
  if (N > 1) p.quadratic.push_back({error, Vec::Zero(2), cfg.Q, 1, N - 1});
  p.quadratic.push_back({error, Vec::Zero(2), cfg.terminal_factor * cfg.Q, N, N});
  Vec lo, hi;
  normalized_box(cfg.v_min, cfg.v_max, lm.u_ss, lm.sigma_u, lo, hi);
  p.bounds.push_back({level, lo, hi, 0, N - 1, false});
  normalized_box(cfg.z_min, cfg.z_max, lm.x_ss, lm.sigma_x, lo, hi);
  p.bounds.push_back({state, lo, hi, 1, N, true});
  p.slack_quadratic = cfg.slack_weight;
  return p;
}

AirpathResult airpath_fb_step(const FbInputs& in, const lpv::LpvGridModel& airpath, const AirpathMpcConfig& cfg,
                              const std::optional<std::filesystem::path>& dump_dir) {
  const mpc::OcpSpec p = airpath_fb_problem(in, airpath, cfg);
  mpc::CondensedQp cq;
  mpc::QpResult qr;
  AirpathResult out = solve_airpath(p, dump_dir, "airpath_fb", cq, qr);
  const Vec v_bar = vec2(in.v_bar);
  if (out.fallback) {
    out.v = clamp_input(v_bar, cfg);
    return out;
  }
  const lpv::LocalModel lm = lpv::interpolate(airpath, in.rho);
  out.v = clamp_input(v_bar + lm.sigma_u.cwiseProduct(cq.inputs(qr.w).col(0)), cfg);
  return out;
}

}  // namespace empc::control
