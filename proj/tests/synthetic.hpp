#pragma once

#include "empc/lpv.hpp"

// Smooth, hand-built LPV models on the reference grid.  The airpath
// equilibria give the look-up targets and the emissions model is scheduled
// on the same points, so (x_ss, u_ss) of both agree.
namespace empc::synth {

inline Vec airpath_ss(const plant::OperatingPoint& rho) {
  return Eigen::Vector2d(120.0 + 0.02 * (rho.engine_speed - 800.0) + 1.0 * rho.fuel_rate, 0.35 - 0.002 * rho.fuel_rate);
}

inline lpv::LocalModel airpath_local(const plant::OperatingPoint& rho) {
  lpv::LocalModel m;
  m.A = (Mat(2, 2) << 0.85, 0.02, 0.01, 0.80).finished();
  m.B = (Mat(2, 2) << -0.30, 0.50, 0.40, -0.10).finished();
  m.Bf = (Mat(2, 1) << 0.20, -0.05).finished();
  m.x_ss = airpath_ss(rho);
  m.u_ss = Eigen::Vector2d(30.0 + 0.1 * rho.fuel_rate, 40.0 + 0.005 * rho.engine_speed);
  m.sigma_x = Eigen::Vector2d(15.0, 0.05);
  m.sigma_u = Eigen::Vector2d(10.0, 10.0);
  m.f_ss = rho.fuel_rate;
  m.sigma_f = 5.0;
  return m;
}

inline lpv::LocalModel emissions_local(const plant::OperatingPoint& rho) {
  lpv::LocalModel m;
  m.A = (Mat(2, 2) << 0.6, 0.0, 0.0, 0.5).finished();
  m.B = (Mat(2, 3) << 0.1, -0.6, 0.5, -0.4, 0.3, 0.5).finished();
  m.x_ss = Eigen::Vector2d(300.0 + 5.0 * rho.fuel_rate, 1.0 + 0.05 * rho.fuel_rate);
  const Vec z = airpath_ss(rho);
  m.u_ss = Eigen::Vector3d(z[0], z[1], rho.fuel_rate);
  m.sigma_x = Eigen::Vector2d(50.0, 0.5);
  m.sigma_u = Eigen::Vector3d(15.0, 0.05, 5.0);
  return m;
}

template <class F>
lpv::LpvGridModel grid_model(const std::string& kind, F&& local) {
  lpv::LpvGridModel g;
  g.kind = kind;
  g.grid = lpv::reference_grid();
  for (std::size_t i = 0; i < g.grid.speeds.size(); ++i)
    for (std::size_t j = 0; j < g.grid.fuels.size(); ++j) g.locals.push_back(local(g.grid.node(i, j)));
  return g;
}

inline lpv::LpvGridModel airpath_model() {
  auto g = grid_model("airpath", airpath_local);
  g.state_names = {"intake_pressure", "egr_rate"};
  g.input_names = {"egr_valve", "vgt_position"};
  return g;
}

inline lpv::LpvGridModel emissions_model() {
  auto g = grid_model("emissions", emissions_local);
  g.state_names = {"nox", "soot"};
  g.input_names = {"intake_pressure", "egr_rate", "fuel_rate"};
  return g;
}

}  // namespace empc::synth
