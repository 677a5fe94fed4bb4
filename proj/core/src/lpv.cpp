#include "empc/lpv.hpp"

#include "json_util.hpp"

#include <algorithm>
#include <cmath>

namespace empc::lpv {

using detail::json;
using detail::mat_from;
using detail::mat_json;
using detail::vec_from;
using detail::vec_json;

ScheduleGrid reference_grid() {
  ScheduleGrid g;
  for (int i = 0; i < 9; ++i) g.speeds.push_back(800.0 + 300.0 * i);
  for (int j = 0; j < 11; ++j) g.fuels.push_back(10.0 + 11.0 * j);
  return g;
}

void validate(const ScheduleGrid& g) {
  for (const auto* axis : {&g.speeds, &g.fuels}) {
    if (axis->size() < 2) throw ConfigError("schedule grid: each axis needs at least two values");
    for (std::size_t i = 0; i < axis->size(); ++i) {
      if (!std::isfinite((*axis)[i])) throw ConfigError("schedule grid: non-finite axis value");
      if (i > 0 && !((*axis)[i] > (*axis)[i - 1])) throw ConfigError("schedule grid: axis not strictly ascending");
    }
  }
}

void validate(const LocalModel& m) {
  const auto n = m.A.rows();
  if (n == 0 || m.A.cols() != n) throw ConfigError("local model: A must be square and nonempty");
  if (m.B.rows() != n || m.x_ss.size() != n || m.sigma_x.size() != n)
    throw ConfigError("local model: state dimension mismatch");
  if (m.u_ss.size() != m.B.cols() || m.sigma_u.size() != m.B.cols())
    throw ConfigError("local model: input dimension mismatch");
  if (m.Bf.size() > 0 && (m.Bf.rows() != n || m.Bf.cols() != 1))
    throw ConfigError("local model: Bf must be n x 1");
  if ((m.sigma_x.array() <= 0.0).any() || (m.sigma_u.array() <= 0.0).any() || !(m.sigma_f > 0.0))
    throw ConfigError("local model: normalization sigma must be positive");
  if (!m.A.allFinite() || !m.B.allFinite() || !m.Bf.allFinite() || !m.x_ss.allFinite() || !m.u_ss.allFinite() ||
      !m.sigma_x.allFinite() || !m.sigma_u.allFinite() || !std::isfinite(m.f_ss))
    throw ConfigError("local model: non-finite entries");
}

namespace {

void check_sigma(const Vec& sigma, Eigen::Index n, const char* what) {
  if (sigma.size() != n) throw ConfigError(std::string(what) + ": dimension mismatch");
  if ((sigma.array() <= 0.0).any()) throw ConfigError(std::string(what) + ": sigma entry is not positive");
}

}  // namespace

Vec normalize_state(const LocalModel& m, const Vec& x) {
  check_sigma(m.sigma_x, x.size(), "normalize state");
  return (x - m.x_ss).cwiseQuotient(m.sigma_x);
}

Vec denormalize_state(const LocalModel& m, const Vec& xt) {
  check_sigma(m.sigma_x, xt.size(), "denormalize state");
  return m.x_ss + m.sigma_x.cwiseProduct(xt);
}

Vec normalize_input(const LocalModel& m, const Vec& u) {
  check_sigma(m.sigma_u, u.size(), "normalize input");
  return (u - m.u_ss).cwiseQuotient(m.sigma_u);
}

Vec denormalize_input(const LocalModel& m, const Vec& ut) {
  check_sigma(m.sigma_u, ut.size(), "denormalize input");
  return m.u_ss + m.sigma_u.cwiseProduct(ut);
}

Vec step_physical(const LocalModel& m, const Vec& x, const Vec& u, double fuel) {
  Vec next = m.A * normalize_state(m, x) + m.B * normalize_input(m, u);
  if (m.has_fuel_channel()) next += m.Bf.col(0) * ((fuel - m.f_ss) / m.sigma_f);
  return denormalize_state(m, next);
}

void validate(const LpvGridModel& model) {
  validate(model.grid);
  if (model.locals.size() != model.grid.size())
    throw ConfigError("lpv model: expected " + std::to_string(model.grid.size()) + " local models, got " +
                      std::to_string(model.locals.size()));
  for (std::size_t k = 0; k < model.locals.size(); ++k) {
    const auto& m = model.locals[k];
    validate(m);
    const auto& f = model.locals.front();
    if (m.nx() != f.nx() || m.nu() != f.nu() || m.has_fuel_channel() != f.has_fuel_channel())
      throw ConfigError("lpv model: node " + std::to_string(k) + " has different dimensions");
  }
  const auto& f = model.locals.front();
  if (!model.state_names.empty() && static_cast<Eigen::Index>(model.state_names.size()) != f.nx())
    throw ConfigError("lpv model: state name count mismatch");
  if (!model.input_names.empty() && static_cast<Eigen::Index>(model.input_names.size()) != f.nu())
    throw ConfigError("lpv model: input name count mismatch");
}

void locate(const std::vector<double>& axis, double q, std::size_t& lower, double& frac) {
  if (axis.size() < 2) throw ConfigError("locate: axis needs two values");
  if (!(q > axis.front())) {
    lower = 0;
    frac = 0.0;
    return;
  }
  if (!(q < axis.back())) {
    lower = axis.size() - 2;
    frac = 1.0;
    return;
  }
  const auto it = std::upper_bound(axis.begin(), axis.end(), q);
  lower = static_cast<std::size_t>(it - axis.begin()) - 1;
  frac = (q - axis[lower]) / (axis[lower + 1] - axis[lower]);
}

namespace {

template <class T>
T blend(const T& a00, const T& a01, const T& a10, const T& a11, double s, double f) {
  return ((1.0 - s) * (1.0 - f)) * a00 + ((1.0 - s) * f) * a01 + (s * (1.0 - f)) * a10 + (s * f) * a11;
}

}  // namespace

LocalModel interpolate(const LpvGridModel& model, const plant::OperatingPoint& rho) {
  std::size_t i = 0, j = 0;
  double s = 0.0, f = 0.0;
  locate(model.grid.speeds, rho.engine_speed, i, s);
  locate(model.grid.fuels, rho.fuel_rate, j, f);
  const auto& m00 = model.at(i, j);
  const auto& m01 = model.at(i, j + 1);
  const auto& m10 = model.at(i + 1, j);
  const auto& m11 = model.at(i + 1, j + 1);
  LocalModel out;
  out.A = blend<Mat>(m00.A, m01.A, m10.A, m11.A, s, f);
  out.B = blend<Mat>(m00.B, m01.B, m10.B, m11.B, s, f);
  if (m00.has_fuel_channel()) out.Bf = blend<Mat>(m00.Bf, m01.Bf, m10.Bf, m11.Bf, s, f);
  out.x_ss = blend<Vec>(m00.x_ss, m01.x_ss, m10.x_ss, m11.x_ss, s, f);
  out.u_ss = blend<Vec>(m00.u_ss, m01.u_ss, m10.u_ss, m11.u_ss, s, f);
  out.sigma_x = blend<Vec>(m00.sigma_x, m01.sigma_x, m10.sigma_x, m11.sigma_x, s, f);
  out.sigma_u = blend<Vec>(m00.sigma_u, m01.sigma_u, m10.sigma_u, m11.sigma_u, s, f);
  out.f_ss = blend<double>(m00.f_ss, m01.f_ss, m10.f_ss, m11.f_ss, s, f);
  out.sigma_f = blend<double>(m00.sigma_f, m01.sigma_f, m10.sigma_f, m11.sigma_f, s, f);
  return out;
}

std::string to_json(const LpvGridModel& model) {
  validate(model);
  json j;
  j["format"] = "empc-lpv";
  j["version"] = 1;
  j["kind"] = model.kind;
  j["state_names"] = model.state_names;
  j["input_names"] = model.input_names;
  j["grid"] = {{"speeds", model.grid.speeds}, {"fuels", model.grid.fuels}};
  json nodes = json::array();
  for (std::size_t i = 0; i < model.grid.speeds.size(); ++i)
    for (std::size_t k = 0; k < model.grid.fuels.size(); ++k) {
      const auto& m = model.at(i, k);
      json n;
      n["speed"] = model.grid.speeds[i];
      n["fuel"] = model.grid.fuels[k];
      n["A"] = mat_json(m.A);
      n["B"] = mat_json(m.B);
      if (m.has_fuel_channel()) {
        n["Bf"] = mat_json(m.Bf);
        n["f_ss"] = m.f_ss;
        n["sigma_f"] = m.sigma_f;
      }
      n["x_ss"] = vec_json(m.x_ss);
      n["u_ss"] = vec_json(m.u_ss);
      n["sigma_x"] = vec_json(m.sigma_x);
      n["sigma_u"] = vec_json(m.sigma_u);
      nodes.push_back(n);
    }
  j["nodes"] = nodes;
  return j.dump(1);
}

LpvGridModel from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("lpv json: ") + e.what());
  }
  LpvGridModel model;
  try {
    if (j.value("format", "") != "empc-lpv") throw ConfigError("lpv json: unexpected format tag");
    if (j.value("version", 0) != 1) throw ConfigError("lpv json: unsupported version");
    model.kind = j.at("kind").get<std::string>();
    model.state_names = j.at("state_names").get<std::vector<std::string>>();
    model.input_names = j.at("input_names").get<std::vector<std::string>>();
    model.grid.speeds = j.at("grid").at("speeds").get<std::vector<double>>();
    model.grid.fuels = j.at("grid").at("fuels").get<std::vector<double>>();
    validate(model.grid);
    const auto& nodes = j.at("nodes");
    if (nodes.size() != model.grid.size()) throw ConfigError("lpv json: node count does not match grid");
    for (const auto& n : nodes) {
      LocalModel m;
      m.A = mat_from(n.at("A"), "lpv json A");
      m.B = mat_from(n.at("B"), "lpv json B");
      if (n.contains("Bf")) {
        m.Bf = mat_from(n.at("Bf"), "lpv json Bf");
        m.f_ss = n.at("f_ss").get<double>();
        m.sigma_f = n.at("sigma_f").get<double>();
      }
      m.x_ss = vec_from(n.at("x_ss"));
      m.u_ss = vec_from(n.at("u_ss"));
      m.sigma_x = vec_from(n.at("sigma_x"));
      m.sigma_u = vec_from(n.at("sigma_u"));
      model.locals.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("lpv json: ") + e.what());
  }
  validate(model);
  return model;
}

void save_model(const std::filesystem::path& path, const LpvGridModel& model) {
  write_text_file(path, to_json(model));
}

LpvGridModel load_model(const std::filesystem::path& path) { return from_json(read_text_file(path)); }

}  // namespace empc::lpv
