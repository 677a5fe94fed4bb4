#include "empc/identification.hpp"

#include "json_util.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace empc::lpv {

using detail::json;
using detail::read_object;

void validate(const PerturbationSpec& s) {
  if (!(s.amplitude_pct >= 0.0 && s.amplitude_pct <= 50.0)) throw ConfigError("perturbation: amplitude out of range");
  if (!(s.fuel_amplitude >= 0.0)) throw ConfigError("perturbation: negative fuel amplitude");
  if (!(s.dt > 0.0) || !(s.duration >= s.dt) || !(s.clock >= s.dt))
    throw ConfigError("perturbation: duration, dt and clock must satisfy duration >= clock >= dt > 0");
}

Vec nn_inputs(const nn::EmissionsModel& model, const plant::Measurements& m) {
  const auto& names = plant::measurement_names();
  Vec x(static_cast<Eigen::Index>(model.input_names.size()));
  for (std::size_t i = 0; i < model.input_names.size(); ++i) {
    const auto it = std::find_if(names.begin(), names.end(), [&](const char* n) { return model.input_names[i] == n; });
    if (it == names.end()) throw ConfigError("emissions model input '" + model.input_names[i] + "' is not a measurement");
    x[static_cast<Eigen::Index>(i)] = m[static_cast<std::size_t>(it - names.begin())];
  }
  return x;
}

Vec nn_emissions(const nn::EmissionsModel& model, const plant::PlantState& s, const plant::ActuatorInput& v,
                 const plant::OperatingPoint& rho, const plant::PlantParams& p) {
  return nn::predict(model, nn_inputs(model, plant::measurement_vector(s, v, rho, p)));
}

ExperimentLog run_perturbation(const plant::OperatingPoint& node, const plant::ActuatorInput& v_ss,
                               const PerturbationSpec& spec, const plant::PlantParams& params,
                               const nn::EmissionsModel* emissions) {
  validate(spec);
  plant::validate(node, params);
  plant::validate(v_ss);
  ExperimentLog log;
  log.node = node;
  log.v_ss = v_ss;
  log.equilibrium = plant::settle(v_ss, node, params);

  const auto T = static_cast<Eigen::Index>(std::llround(spec.duration / spec.dt));
  const auto clock = std::max<long long>(1, std::llround(spec.clock / spec.dt));
  std::mt19937_64 rng(spec.seed);
  std::bernoulli_distribution flip(0.5);
  std::array<double, 3> sign{};
  for (auto& s : sign) s = flip(rng) ? 1.0 : -1.0;

  log.v.resize(2, T);
  log.fuel.resize(T);
  log.z.resize(2, T + 1);
  if (emissions) log.e.resize(2, T + 1);

  plant::PlantState s = log.equilibrium;
  auto record = [&](Eigen::Index k, const plant::ActuatorInput& v, const plant::OperatingPoint& rho) {
    const auto a = s.airpath();
    log.z(0, k) = a.intake_pressure;
    log.z(1, k) = a.egr_rate;
    if (emissions) log.e.col(k) = nn_emissions(*emissions, s, v, rho, params);
  };
  record(0, v_ss, node);
  for (Eigen::Index k = 0; k < T; ++k) {
    if (k > 0 && k % clock == 0)
      for (auto& sg : sign)
        if (flip(rng)) sg = -sg;
    const plant::ActuatorInput v{std::clamp(v_ss.egr_valve + sign[0] * spec.amplitude_pct, 0.0, 100.0),
                                 std::clamp(v_ss.vgt_position + sign[1] * spec.amplitude_pct, 0.0, 100.0)};
    const plant::OperatingPoint rho{node.engine_speed,
                                    std::clamp(node.fuel_rate + sign[2] * spec.fuel_amplitude, 0.0, params.max_fuel)};
    log.v(0, k) = v.egr_valve;
    log.v(1, k) = v.vgt_position;
    log.fuel[k] = rho.fuel_rate;
    s = plant::plant_step(s, v, rho, spec.dt, params);
    record(k + 1, v, rho);
  }
  std::ostringstream d;
  d << "PRBS +/-" << spec.amplitude_pct << "% EGR/VGT, +/-" << spec.fuel_amplitude << " fuel, clock " << spec.clock
    << " s, " << spec.duration << " s, seed " << spec.seed;
  log.description = d.str();
  return log;
}

namespace {

double population_std(const Eigen::Ref<const Vec>& v) {
  if (v.size() == 0) return 0.0;
  const double m = v.mean();
  return std::sqrt((v.array() - m).square().mean());
}

std::string channel_name(const IdentData& d, Eigen::Index col) {
  const auto n = d.x.rows(), m = d.u.rows();
  if (col < n)
    return static_cast<std::size_t>(col) < d.state_names.size() ? d.state_names[static_cast<std::size_t>(col)]
                                                                : "x" + std::to_string(col);
  if (col < n + m) {
    const auto i = static_cast<std::size_t>(col - n);
    return i < d.input_names.size() ? d.input_names[i] : "u" + std::to_string(i);
  }
  return "fuel";
}

struct Normalized {
  Mat x, u;
  Vec f;
};

Normalized normalized(const LocalModel& m, const IdentData& d) {
  Normalized out;
  out.x = m.sigma_x.cwiseInverse().asDiagonal() * (d.x.colwise() - m.x_ss);
  out.u = m.sigma_u.cwiseInverse().asDiagonal() * (d.u.colwise() - m.u_ss);
  if (d.f.size() > 0) out.f = (d.f.array() - m.f_ss) / m.sigma_f;
  return out;
}

double rollout_error_normalized(const LocalModel& m, const Normalized& z, int horizon) {
  const Eigen::Index T = z.u.cols();
  double err = 0.0;
  Eigen::Index count = 0;
  for (Eigen::Index k = 0; k + horizon <= T; k += horizon) {
    Vec xh = z.x.col(k);
    for (int j = 0; j < horizon; ++j) {
      Vec nxt = m.A * xh + m.B * z.u.col(k + j);
      if (m.has_fuel_channel()) nxt += m.Bf.col(0) * z.f[k + j];
      xh = nxt;
      err += (xh - z.x.col(k + j + 1)).squaredNorm();
      ++count;
    }
  }
  if (count == 0) return std::numeric_limits<double>::infinity();
  return std::sqrt(err / static_cast<double>(count * m.nx()));
}

Vec rollout_residuals(const LocalModel& m, const Normalized& z, int horizon) {
  const Eigen::Index T = z.u.cols(), n = m.nx();
  const Eigen::Index windows = T / horizon;
  Vec r(windows * horizon * n);
  Vec xh(n), nxt(n);
  Eigen::Index o = 0;
  for (Eigen::Index k = 0; k + horizon <= T; k += horizon) {
    xh = z.x.col(k);
    for (int j = 0; j < horizon; ++j) {
      nxt.noalias() = m.A * xh;
      nxt.noalias() += m.B * z.u.col(k + j);
      if (m.has_fuel_channel()) nxt += m.Bf.col(0) * z.f[k + j];
      xh = nxt;
      r.segment(o, n) = xh - z.x.col(k + j + 1);
      o += n;
    }
  }
  return r;
}

// Free parameters: active columns of A, all of B, Bf.
Vec pack(const LocalModel& m, const std::vector<Eigen::Index>& active) {
  const Eigen::Index n = m.nx();
  Vec th(n * static_cast<Eigen::Index>(active.size()) + m.B.size() + m.Bf.size());
  Eigen::Index o = 0;
  for (auto c : active) {
    th.segment(o, n) = m.A.col(c);
    o += n;
  }
  th.segment(o, m.B.size()) = Eigen::Map<const Vec>(m.B.data(), m.B.size());
  o += m.B.size();
  if (m.Bf.size()) th.segment(o, m.Bf.size()) = Eigen::Map<const Vec>(m.Bf.data(), m.Bf.size());
  return th;
}

void unpack(LocalModel& m, const std::vector<Eigen::Index>& active, const Vec& th) {
  const Eigen::Index n = m.nx();
  Eigen::Index o = 0;
  for (auto c : active) {
    m.A.col(c) = th.segment(o, n);
    o += n;
  }
  Eigen::Map<Vec>(m.B.data(), m.B.size()) = th.segment(o, m.B.size());
  o += m.B.size();
  if (m.Bf.size()) Eigen::Map<Vec>(m.Bf.data(), m.Bf.size()) = th.segment(o, m.Bf.size());
}

// Levenberg-Marquardt on the stacked multi-step residuals.  Steps that
// would push the spectral radius to r_max or beyond are rejected.
void refine_rollout(LocalModel& lm, const Normalized& z, const std::vector<Eigen::Index>& active,
                    const FitOptions& opt) {
  Vec th = pack(lm, active);
  Vec r = rollout_residuals(lm, z, opt.horizon);
  if (r.size() == 0) return;
  double cost = r.squaredNorm();
  double mu = 1e-3;
  LocalModel trial = lm;
  Mat J(r.size(), th.size());
  for (int it = 0; it < opt.refine_iterations; ++it) {
    for (Eigen::Index p = 0; p < th.size(); ++p) {
      Vec tp = th;
      const double h = 1e-6 * std::max(1.0, std::abs(th[p]));
      tp[p] += h;
      unpack(trial, active, tp);
      J.col(p) = (rollout_residuals(trial, z, opt.horizon) - r) / h;
    }
    const Mat JtJ = J.transpose() * J;
    const Vec g = J.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() < 1e-12 * (1.0 + cost)) break;
    bool improved = false;
    for (int tries = 0; tries < 12 && !improved; ++tries) {
      Mat Aug = JtJ;
      Aug.diagonal().array() += mu * (1.0 + JtJ.diagonal().array());
      const Vec step = Aug.ldlt().solve(-g);
      const Vec tn = th + step;
      unpack(trial, active, tn);
      if (!(spectral_radius(trial.A) < opt.max_spectral_radius)) {
        mu *= 10.0;
        continue;
      }
      const Vec rn = rollout_residuals(trial, z, opt.horizon);
      const double cn = rn.squaredNorm();
      if (cn < cost) {
        improved = cost - cn > 1e-10 * cost;
        th = tn;
        r = rn;
        cost = cn;
        mu = std::max(mu / 10.0, 1e-12);
        if (!improved) it = opt.refine_iterations;
        improved = true;
      } else {
        mu *= 10.0;
      }
    }
    if (!improved) break;
  }
  unpack(lm, active, th);
}

}  // namespace

Mat project_spectral_radius(const Mat& A, double r_max) {
  if (!(r_max > 0.0)) throw ConfigError("spectral projection: radius must be positive");
  Eigen::EigenSolver<Mat> es(A);
  const Eigen::VectorXcd lam = es.eigenvalues();
  if (lam.cwiseAbs().maxCoeff() <= r_max) return A;
  const Eigen::MatrixXcd V = es.eigenvectors();
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(V);
  const double cond = svd.singularValues()(0) / svd.singularValues().tail(1)(0);
  if (!(cond < 1e10)) return A * (r_max / lam.cwiseAbs().maxCoeff());
  Eigen::VectorXcd scaled = lam;
  for (Eigen::Index i = 0; i < lam.size(); ++i)
    if (std::abs(lam[i]) > r_max) scaled[i] = lam[i] * (r_max / std::abs(lam[i]));
  const Eigen::MatrixXcd Ac = V * scaled.asDiagonal() * V.inverse();
  return Ac.real();
}

double rollout_error(const LocalModel& m, const IdentData& data, int horizon) {
  return rollout_error_normalized(m, normalized(m, data), horizon);
}

LocalModel fit_local(const IdentData& d, const FitOptions& opt, FitReport* report) {
  const Eigen::Index n = d.x.rows(), m = d.u.rows(), T = d.u.cols();
  const bool fuel = d.f.size() > 0;
  if (n == 0 || m == 0) throw ConfigError("fit_local: empty state or input");
  if (d.x.cols() != T + 1) throw ConfigError("fit_local: state log must have one more column than the input log");
  if (fuel && d.f.size() != T) throw ConfigError("fit_local: fuel log length mismatch");
  if (d.x_ss.size() != n || d.u_ss.size() != m) throw ConfigError("fit_local: equilibrium dimension mismatch");
  if (opt.horizon < 1) throw ConfigError("fit_local: horizon must be positive");
  const Eigen::Index p = n + m + (fuel ? 1 : 0);
  if (T < 10 * n * p)
    throw ConfigError("fit_local: log has " + std::to_string(T) + " rows, need at least " + std::to_string(10 * n * p));
  if (!d.x.allFinite() || !d.u.allFinite() || !d.f.allFinite()) throw NumericalError("fit_local: non-finite log");

  LocalModel lm;
  lm.x_ss = d.x_ss;
  lm.u_ss = d.u_ss;
  lm.f_ss = d.f_ss;
  lm.sigma_x.resize(n);
  lm.sigma_u.resize(m);
  auto require_spread = [&](double sd, double level, Eigen::Index col) {
    if (!(sd > 1e-12 * (1.0 + std::abs(level))))
      throw NumericalError("fit_local: rank-deficient regressor, channel '" + channel_name(d, col) +
                           "' has no excitation");
  };
  FitReport rep;
  std::vector<Eigen::Index> active;  // state columns that enter the regressor
  for (Eigen::Index i = 0; i < n; ++i) {
    lm.sigma_x[i] = population_std(d.x.row(i).transpose());
    const bool flat = !(lm.sigma_x[i] > 1e-12 * (1.0 + std::abs(d.x_ss[i])));
    if (flat && opt.allow_constant_states) {
      lm.sigma_x[i] = 1.0;
      rep.constant_states.push_back(channel_name(d, i));
      continue;
    }
    require_spread(lm.sigma_x[i], d.x_ss[i], i);
    active.push_back(i);
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    lm.sigma_u[i] = population_std(d.u.row(i).transpose());
    require_spread(lm.sigma_u[i], d.u_ss[i], n + i);
  }
  if (fuel) {
    lm.sigma_f = population_std(d.f);
    require_spread(lm.sigma_f, d.f_ss, n + m);
  }
  // Placeholders so normalized() can run before the fit.
  lm.A = Mat::Zero(n, n);
  lm.B = Mat::Zero(n, m);
  if (fuel) lm.Bf = Mat::Zero(n, 1);
  const Normalized z = normalized(lm, d);

  const auto na = static_cast<Eigen::Index>(active.size());
  const Eigen::Index q = na + m + (fuel ? 1 : 0);
  std::vector<Eigen::Index> col_channel(static_cast<std::size_t>(q));
  Mat Phi(T, q);
  for (Eigen::Index c = 0; c < na; ++c) {
    Phi.col(c) = z.x.row(active[static_cast<std::size_t>(c)]).head(T).transpose();
    col_channel[static_cast<std::size_t>(c)] = active[static_cast<std::size_t>(c)];
  }
  Phi.middleCols(na, m) = z.u.transpose();
  for (Eigen::Index c = 0; c < m; ++c) col_channel[static_cast<std::size_t>(na + c)] = n + c;
  if (fuel) {
    Phi.col(na + m) = z.f;
    col_channel[static_cast<std::size_t>(na + m)] = n + m;
  }
  const Mat Y = z.x.rightCols(T).transpose();

  Eigen::ColPivHouseholderQR<Mat> qr(Phi);
  qr.setThreshold(1e-9);
  if (qr.rank() < q) {
    Eigen::Index worst = 0;
    double worst_res = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < q; ++c) {
      Mat others(T, q - 1);
      for (Eigen::Index k = 0, o = 0; k < q; ++k)
        if (k != c) others.col(o++) = Phi.col(k);
      const Vec coef = others.colPivHouseholderQr().solve(Phi.col(c));
      const double res = (Phi.col(c) - others * coef).norm() / std::max(Phi.col(c).norm(), 1e-300);
      if (res < worst_res) {
        worst_res = res;
        worst = c;
      }
    }
    throw NumericalError("fit_local: rank-deficient regressor, channel '" +
                         channel_name(d, col_channel[static_cast<std::size_t>(worst)]) +
                         "' is collinear with the others");
  }
  const Mat Theta = qr.solve(Y);  // q x n
  for (Eigen::Index c = 0; c < na; ++c) lm.A.col(active[static_cast<std::size_t>(c)]) = Theta.row(c).transpose();
  lm.B = Theta.middleRows(na, m).transpose();
  if (fuel) lm.Bf = Theta.row(na + m).transpose();

  rep.one_step_rmse = std::sqrt((Phi * Theta - Y).squaredNorm() / static_cast<double>(Y.size()));
  rep.spectral_radius_raw = spectral_radius(lm.A);
  if (!(rep.spectral_radius_raw < opt.max_spectral_radius)) {
    lm.A = project_spectral_radius(lm.A, opt.max_spectral_radius);
    rep.projected = true;
  }
  rep.rollout_error_initial = rollout_error_normalized(lm, z, opt.horizon);
  if (opt.refine_iterations > 0 && T >= opt.horizon) refine_rollout(lm, z, active, opt);
  rep.rollout_error = rollout_error_normalized(lm, z, opt.horizon);
  rep.accepted = rep.rollout_error <= opt.gate;
  if (report) *report = rep;
  return lm;
}

IdentData emission_data(const ExperimentLog& log) {
  if (log.e.size() == 0) throw ConfigError("emission_data: log has no emission channel");
  const Eigen::Index T = log.length();
  IdentData d;
  d.x = log.e;
  d.u.resize(3, T);
  d.u.topRows(2) = log.z.rightCols(T);
  d.u.row(2) = log.fuel.transpose();
  d.x_ss = log.e.col(0);
  const auto a = log.equilibrium.airpath();
  d.u_ss = (Vec(3) << a.intake_pressure, a.egr_rate, log.node.fuel_rate).finished();
  d.state_names = {"nox", "soot"};
  d.input_names = {"intake_pressure", "egr_rate", "fuel_rate"};
  return d;
}

IdentData airpath_data(const ExperimentLog& log) {
  IdentData d;
  d.x = log.z;
  d.u = log.v;
  if (log.fuel.size() > 0 && population_std(log.fuel) > 0.0) {
    d.f = log.fuel;
    d.f_ss = log.node.fuel_rate;
  }
  const auto a = log.equilibrium.airpath();
  d.x_ss = (Vec(2) << a.intake_pressure, a.egr_rate).finished();
  d.u_ss = (Vec(2) << log.v_ss.egr_valve, log.v_ss.vgt_position).finished();
  d.state_names = {"intake_pressure", "egr_rate"};
  d.input_names = {"egr_valve", "vgt_position"};
  return d;
}

double target_cost(const TargetSearch& cfg, const plant::PlantState& s, const Vec& e) {
  const double excess = std::max(0.0, e[1] - cfg.soot_cap);
  return e[0] + cfg.soot_weight * excess * excess + cfg.pump_weight * (s.exhaust_pressure - s.intake_pressure);
}

NodeEquilibrium optimal_equilibrium(const plant::OperatingPoint& rho, const TargetSearch& cfg,
                                    const plant::PlantParams& params, const nn::EmissionsModel& emissions) {
  if (cfg.coarse < 2 || !(cfg.egr_max > cfg.egr_min) || !(cfg.vgt_max > cfg.vgt_min) || !(cfg.refine_tol > 0.0))
    throw ConfigError("target search: invalid ranges");
  NodeEquilibrium best;
  best.rho = rho;
  best.cost = std::numeric_limits<double>::infinity();
  plant::PlantState warm = plant::initial_guess(params);
  auto evaluate = [&](double egr, double vgt) {
    const plant::ActuatorInput v{egr, vgt};
    plant::PlantState s;
    try {
      s = plant::settle(v, rho, params, warm);
    } catch (const NumericalError&) {
      return;
    }
    warm = s;
    const Vec e = nn_emissions(emissions, s, v, rho, params);
    if (!(e[0] > 0.0)) return;
    const double J = target_cost(cfg, s, e);
    if (J < best.cost) {
      best.cost = J;
      best.v = v;
      best.state = s;
      best.emissions = e;
    }
  };
  const double de = (cfg.egr_max - cfg.egr_min) / (cfg.coarse - 1);
  const double dv = (cfg.vgt_max - cfg.vgt_min) / (cfg.coarse - 1);
  for (int i = 0; i < cfg.coarse; ++i)
    for (int j = 0; j < cfg.coarse; ++j) evaluate(cfg.egr_min + i * de, cfg.vgt_min + j * dv);
  if (!std::isfinite(best.cost))
    throw NumericalError("target search: no settling actuator setting at speed " + format_double(rho.engine_speed) +
                         ", fuel " + format_double(rho.fuel_rate));
  // Compass search from the best coarse point.
  double step_e = de / 2.0, step_v = dv / 2.0;
  while (std::max(step_e, step_v) > cfg.refine_tol) {
    const double J0 = best.cost;
    const plant::ActuatorInput c = best.v;
    warm = best.state;
    const std::array<std::array<double, 2>, 4> moves = {{{step_e, 0.0}, {-step_e, 0.0}, {0.0, step_v}, {0.0, -step_v}}};
    for (const auto& mv : moves) {
      const double egr = std::clamp(c.egr_valve + mv[0], cfg.egr_min, cfg.egr_max);
      const double vgt = std::clamp(c.vgt_position + mv[1], cfg.vgt_min, cfg.vgt_max);
      if (egr != c.egr_valve || vgt != c.vgt_position) evaluate(egr, vgt);
    }
    if (!(best.cost < J0)) {
      step_e /= 2.0;
      step_v /= 2.0;
    }
  }
  // Re-settle from the deterministic start so the stored equilibrium does
  // not depend on the search path beyond the chosen inputs.
  best.state = plant::settle(best.v, rho, params);
  best.emissions = nn_emissions(emissions, best.state, best.v, rho, params);
  best.cost = target_cost(cfg, best.state, best.emissions);
  return best;
}

GridConfig grid_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("grid config: ") + e.what());
  }
  GridConfig c;
  try {
    read_object(j, "grid config", [&](const std::string& k, const json& v) {
      if (k == "speeds") c.grid.speeds = v.get<std::vector<double>>();
      else if (k == "fuels") c.grid.fuels = v.get<std::vector<double>>();
      else if (k == "gate_action") {
        const auto a = v.get<std::string>();
        if (a == "flag") c.gate_action = GateAction::Flag;
        else if (a == "reject") c.gate_action = GateAction::Reject;
        else throw ConfigError("grid config: gate_action must be 'flag' or 'reject'");
      } else if (k == "perturbation")
        read_object(v, "grid config perturbation", [&](const std::string& pk, const json& pv) {
          auto& p = c.perturbation;
          if (pk == "amplitude_pct") p.amplitude_pct = pv.get<double>();
          else if (pk == "fuel_amplitude") p.fuel_amplitude = pv.get<double>();
          else if (pk == "duration") p.duration = pv.get<double>();
          else if (pk == "clock") p.clock = pv.get<double>();
          else if (pk == "seed") p.seed = pv.get<std::uint64_t>();
          else return false;
          return true;
        });
      else if (k == "fit")
        read_object(v, "grid config fit", [&](const std::string& fk, const json& fv) {
          if (fk == "horizon") c.fit.horizon = fv.get<int>();
          else if (fk == "gate") c.fit.gate = fv.get<double>();
          else if (fk == "max_spectral_radius") c.fit.max_spectral_radius = fv.get<double>();
          else return false;
          return true;
        });
      else if (k == "targets")
        read_object(v, "grid config targets", [&](const std::string& tk, const json& tv) {
          auto& t = c.targets;
          if (tk == "egr_min") t.egr_min = tv.get<double>();
          else if (tk == "egr_max") t.egr_max = tv.get<double>();
          else if (tk == "vgt_min") t.vgt_min = tv.get<double>();
          else if (tk == "vgt_max") t.vgt_max = tv.get<double>();
          else if (tk == "coarse") t.coarse = tv.get<int>();
          else if (tk == "refine_tol") t.refine_tol = tv.get<double>();
          else if (tk == "soot_cap") t.soot_cap = tv.get<double>();
          else if (tk == "soot_weight") t.soot_weight = tv.get<double>();
          else if (tk == "pump_weight") t.pump_weight = tv.get<double>();
          else return false;
          return true;
        });
      else return false;
      return true;
    });
  } catch (const json::exception& e) {
    throw ConfigError(std::string("grid config: ") + e.what());
  }
  validate(c.grid);
  validate(c.perturbation);
  if (c.fit.horizon < 1 || !(c.fit.gate > 0.0) || !(c.fit.max_spectral_radius > 0.0 && c.fit.max_spectral_radius < 1.0))
    throw ConfigError("grid config: invalid fit options");
  return c;
}

namespace {

std::vector<std::size_t> rejected(const std::vector<FitReport>& fits) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fits.size(); ++i)
    if (!fits[i].accepted) out.push_back(i);
  return out;
}

}  // namespace

std::vector<std::size_t> IdentificationResult::rejected_emission_nodes() const { return rejected(emission_fits); }
std::vector<std::size_t> IdentificationResult::rejected_airpath_nodes() const { return rejected(airpath_fits); }

IdentificationResult identify_grid(const GridConfig& cfg, const plant::PlantParams& params,
                                   const nn::EmissionsModel& emissions, const NodeCallback& progress) {
  validate(cfg.grid);
  IdentificationResult r;
  r.emissions.kind = "emissions";
  r.emissions.grid = cfg.grid;
  r.emissions.state_names = {"nox", "soot"};
  r.emissions.input_names = {"intake_pressure", "egr_rate", "fuel_rate"};
  r.airpath.kind = "airpath";
  r.airpath.grid = cfg.grid;
  r.airpath.state_names = {"intake_pressure", "egr_rate"};
  r.airpath.input_names = {"egr_valve", "vgt_position"};
  const std::size_t total = cfg.grid.size();
  for (std::size_t i = 0; i < cfg.grid.speeds.size(); ++i)
    for (std::size_t j = 0; j < cfg.grid.fuels.size(); ++j) {
      const auto idx = cfg.grid.index(i, j);
      const auto rho = cfg.grid.node(i, j);
      const NodeEquilibrium eq = optimal_equilibrium(rho, cfg.targets, params, emissions);
      PerturbationSpec spec = cfg.perturbation;
      spec.seed = cfg.perturbation.seed + idx;
      const ExperimentLog log = run_perturbation(rho, eq.v, spec, params, &emissions);
      FitReport fe, fa;
      FitOptions fit = cfg.fit;
      fit.allow_constant_states = true;
      LocalModel me = fit_local(emission_data(log), fit, &fe);
      LocalModel ma = fit_local(airpath_data(log), cfg.fit, &fa);
      const std::string where = "node (speed " + format_double(rho.engine_speed) + ", fuel " +
                                format_double(rho.fuel_rate) + ")";
      if (cfg.gate_action == GateAction::Reject && !fe.accepted)
        throw NumericalError(where + ": emissions fit rollout error " + format_double(fe.rollout_error) +
                             " exceeds gate " + format_double(cfg.fit.gate));
      if (cfg.gate_action == GateAction::Reject && !fa.accepted)
        throw NumericalError(where + ": airpath fit rollout error " + format_double(fa.rollout_error) +
                             " exceeds gate " + format_double(cfg.fit.gate));
      r.emissions.locals.push_back(std::move(me));
      r.airpath.locals.push_back(std::move(ma));
      r.emission_fits.push_back(fe);
      r.airpath_fits.push_back(fa);
      r.equilibria.push_back(eq);
      if (progress) progress(idx + 1, total);
    }
  validate(r.emissions);
  validate(r.airpath);
  return r;
}

ValidationReport validate_lpv(const LpvGridModel& model, const ValidationTrace& tr) {
  const auto T = static_cast<Eigen::Index>(tr.rho.size());
  if (tr.u.cols() != T || tr.y.cols() != T + 1) throw ConfigError("validate_lpv: trace length mismatch");
  ValidationReport r;
  r.predicted.resize(tr.y.rows(), T + 1);
  Vec x = tr.y.col(0);
  r.predicted.col(0) = x;
  for (Eigen::Index k = 0; k < T; ++k) {
    const LocalModel lm = interpolate(model, tr.rho[static_cast<std::size_t>(k)]);
    x = step_physical(lm, x, tr.u.col(k), tr.rho[static_cast<std::size_t>(k)].fuel_rate);
    r.predicted.col(k + 1) = x;
  }
  if (T > 0) {
    const Mat raw = (r.predicted.rightCols(T) - tr.y.rightCols(T)).cwiseAbs();
    const Mat clipped = (r.predicted.rightCols(T).cwiseMax(0.0) - tr.y.rightCols(T)).cwiseAbs();
    r.nox_mae_raw = raw.row(0).mean();
    r.soot_mae_raw = raw.row(1).mean();
    r.nox_mae = clipped.row(0).mean();
    r.soot_mae = clipped.row(1).mean();
  }
  return r;
}

ValidationTrace record_trace(const std::vector<plant::OperatingPoint>& rho, const LpvGridModel& airpath,
                             const plant::PlantParams& params, const nn::EmissionsModel& emissions) {
  if (rho.empty()) throw ConfigError("record_trace: empty trajectory");
  auto actuators = [&](const plant::OperatingPoint& r) {
    const Vec u = interpolate(airpath, r).u_ss;
    return plant::ActuatorInput{std::clamp(u[0], 0.0, 100.0), std::clamp(u[1], 0.0, 100.0)};
  };
  const auto T = static_cast<Eigen::Index>(rho.size());
  ValidationTrace tr;
  tr.rho = rho;
  tr.u.resize(3, T);
  tr.y.resize(2, T + 1);
  plant::ActuatorInput v = actuators(rho.front());
  plant::PlantState s = plant::settle(v, rho.front(), params);
  tr.y.col(0) = nn_emissions(emissions, s, v, rho.front(), params);
  for (Eigen::Index k = 0; k < T; ++k) {
    const auto& r = rho[static_cast<std::size_t>(k)];
    v = actuators(r);
    s = plant::plant_step(s, v, r, kBaseDt, params);
    const auto a = s.airpath();
    tr.u.col(k) << a.intake_pressure, a.egr_rate, r.fuel_rate;
    tr.y.col(k + 1) = nn_emissions(emissions, s, v, r, params);
  }
  return tr;
}

}  // namespace empc::lpv
