#pragma once

#include "empc/common.hpp"
#include "empc/plant.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace empc::lpv {

/// Scheduling grid over (engine speed, fuel rate).  Node (i, j) sits at
/// (speeds[i], fuels[j]) and is stored at index i * fuels.size() + j.
struct ScheduleGrid {
  std::vector<double> speeds;
  std::vector<double> fuels;

  std::size_t size() const { return speeds.size() * fuels.size(); }
  std::size_t index(std::size_t i, std::size_t j) const { return i * fuels.size() + j; }
  plant::OperatingPoint node(std::size_t i, std::size_t j) const { return {speeds[i], fuels[j]}; }
};

/// 9 speeds (800..3200 rpm) by 11 fuels (10..120 mm^3/st).
ScheduleGrid reference_grid();

/// Both axes strictly ascending with at least two entries.
void validate(const ScheduleGrid& g);

/// Local model in normalized deviation coordinates:
///   x~+ = A x~ + B u~ + Bf f~,   x~ = (x - x_ss) / sigma_x, u~ = (u - u_ss) / sigma_u,
///   f~ = (f - f_ss) / sigma_f.
/// Bf is empty for models without the additive fuel channel.
struct LocalModel {
  Mat A;
  Mat B;
  Mat Bf;
  Vec x_ss;
  Vec u_ss;
  Vec sigma_x;
  Vec sigma_u;
  double f_ss = 0.0;
  double sigma_f = 1.0;

  Eigen::Index nx() const { return A.rows(); }
  Eigen::Index nu() const { return B.cols(); }
  bool has_fuel_channel() const { return Bf.size() > 0; }
};

/// Shapes, positive sigmas, finite entries.  Does not check stability.
void validate(const LocalModel& m);

Vec normalize_state(const LocalModel& m, const Vec& x);
Vec denormalize_state(const LocalModel& m, const Vec& xt);
Vec normalize_input(const LocalModel& m, const Vec& u);
Vec denormalize_input(const LocalModel& m, const Vec& ut);

/// One step in physical units with the state renormalized at this step's
/// operating point.
Vec step_physical(const LocalModel& m, const Vec& x, const Vec& u, double fuel = 0.0);

struct LpvGridModel {
  std::string kind;  // "emissions" or "airpath"
  ScheduleGrid grid;
  std::vector<LocalModel> locals;
  std::vector<std::string> state_names;
  std::vector<std::string> input_names;

  const LocalModel& at(std::size_t i, std::size_t j) const { return locals.at(grid.index(i, j)); }
};

void validate(const LpvGridModel& model);

/// Clamped bilinear interpolation of every matrix/vector entry.
LocalModel interpolate(const LpvGridModel& model, const plant::OperatingPoint& rho);

/// Cell search shared with the look-up tables: returns the lower index and
/// the fraction in [0, 1] after clamping to the axis range.
void locate(const std::vector<double>& axis, double q, std::size_t& lower, double& frac);

std::string to_json(const LpvGridModel& model);
LpvGridModel from_json(const std::string& text);
void save_model(const std::filesystem::path& path, const LpvGridModel& model);
LpvGridModel load_model(const std::filesystem::path& path);

}  // namespace empc::lpv
