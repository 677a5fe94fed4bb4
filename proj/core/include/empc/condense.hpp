#pragma once

#include "empc/common.hpp"
#include "empc/qp.hpp"

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace empc::mpc {

/// Signal s_j = C x_j + D u_j + offset at prediction step j.  At the
/// terminal step j = N the input is taken as zero.
struct Signal {
  Mat C;
  Mat D;
  Vec offset;  // empty: zero

  Eigen::Index rows() const { return C.rows(); }
};

/// sum_{j=first..last} (s_j - r)' W (s_j - r)
struct QuadraticTerm {
  Signal s;
  Vec r;
  Mat W;
  int first = 0;
  int last = 0;
};

/// sum_j q' s_j.  Only meaningful where constraints fix the sign of s.
struct LinearTerm {
  Signal s;
  Vec q;
  int first = 0;
  int last = 0;
};

/// sum_j weight * |s_j| for a one-row signal, through an epigraph variable
/// t_j >= +-s_j per step.
struct AbsTerm {
  Signal s;
  double weight = 0.0;
  int first = 0;
  int last = 0;
};

/// lo <= s_j <= hi.  Infinite bounds are dropped.  A soft bound is relaxed
/// by the per-step slack: lo - eps_j <= s_j <= hi + eps_j.
struct BoundConstraint {
  Signal s;
  Vec lo;
  Vec hi;
  int first = 0;
  int last = 0;
  bool soft = false;
};

/// Finite-horizon problem over x_{j+1} = A x_j + B u_j + c, u_0..u_{N-1}
/// free, x_0 given.  Slacks eps_1..eps_N exist when any soft bound does,
/// with cost slack_linear * eps + slack_quadratic * eps^2 per step.
struct OcpSpec {
  Mat A;
  Mat B;
  Vec c;  // empty: zero
  Vec x0;
  int N = 1;
  Mat R;  // u_j' R u_j, j = 0..N-1; empty: none
  std::vector<QuadraticTerm> quadratic;
  std::vector<LinearTerm> linear;
  std::vector<AbsTerm> absolute;
  std::vector<BoundConstraint> bounds;
  double slack_linear = 0.0;
  double slack_quadratic = 0.0;

  Eigen::Index nx() const { return A.rows(); }
  Eigen::Index nu() const { return B.cols(); }
  bool has_slack() const;
};

/// Shapes, step ranges, PSD weights, nonnegative linear slack weight.
void validate(const OcpSpec& spec);

/// Decision vector w = (u_0..u_{N-1}, eps_1..eps_N, t per AbsTerm step).
/// objective(w) of the full OCP = qp_objective(qp, w) + constant.
struct CondensedQp {
  QpProblem qp;
  double constant = 0.0;
  Eigen::Index nu = 0;
  int N = 0;
  Eigen::Index slack_offset = 0;
  Eigen::Index n_slack = 0;
  Eigen::Index aux_offset = 0;
  Eigen::Index n_aux = 0;
  Mat Phi;    // (N+1) nx x nx
  Mat Gamma;  // (N+1) nx x N nu
  Vec drift;  // (N+1) nx: free response to x0 and c

  /// Columns 0..N of the predicted state.
  Mat predict(const Vec& w) const;
  Mat inputs(const Vec& w) const;  // nu x N
  Vec slacks(const Vec& w) const;  // N (empty without slack)
};

CondensedQp condense(const OcpSpec& spec);

/// Direct evaluation by forward simulation, independent of condense().
/// eps may be empty when the spec has no slack.
double ocp_cost(const OcpSpec& spec, const Mat& u, const Vec& eps);

/// Writes the QP as JSON to dir/<label>.json, creating dir.  Returns the path.
std::filesystem::path dump_qp(const std::filesystem::path& dir, const std::string& label, const QpProblem& qp);

}  // namespace empc::mpc
