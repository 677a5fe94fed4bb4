#pragma once

#include "empc/common.hpp"
#include "empc/lpv.hpp"

namespace empc::mpc {

/// Extended-state model x+ = A_ext x + B_ext du.
///
/// Plain form, state (dx, x_prev, u_prev):
///   [A 0 0]       [B]
///   [I I 0]  and  [0]
///   [0 0 I]       [I]
///
/// Tracking form, state (dz, e, z_prev, v_prev) with e = z - r:
///   [A 0 0 0]       [B]
///   [A I 0 0]  and  [B]
///   [I 0 I 0]       [0]
///   [0 0 0 I]       [I]
struct RateModel {
  Mat A_ext;
  Mat B_ext;
  Eigen::Index nx = 0;
  Eigen::Index nu = 0;
  bool tracking = false;

  Eigen::Index n_ext() const { return A_ext.rows(); }
  // Offsets of the blocks inside the extended state.
  Eigen::Index dx_offset() const { return 0; }
  Eigen::Index error_offset() const;  // tracking form only
  Eigen::Index x_prev_offset() const { return tracking ? 2 * nx : nx; }
  Eigen::Index u_prev_offset() const { return x_prev_offset() + nx; }
};

/// Throws ConfigError unless A is square and B has as many rows.
RateModel make_rate_model(const Mat& A, const Mat& B);
RateModel make_rate_model(const lpv::LocalModel& local);
RateModel make_tracking_rate_model(const Mat& A, const Mat& B);

/// Extended state from the current and previous state and the previous
/// input (plain form).
Vec extended_state(const RateModel& m, const Vec& x, const Vec& x_prev, const Vec& u_prev);

/// Tracking form: e = z - r.
Vec extended_tracking_state(const RateModel& m, const Vec& z, const Vec& z_prev, const Vec& r, const Vec& v_prev);

/// Columns 0..N of the extended state under the increments du (nu x N).
Mat rollout(const RateModel& m, const Vec& x0, const Mat& du);

}  // namespace empc::mpc
