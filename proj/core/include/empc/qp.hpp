#pragma once

#include "empc/common.hpp"

#include <string>
#include <vector>

namespace empc::mpc {

/// Dense convex QP
///
///   minimize    1/2 w'Hw + f'w
///   subject to  G w <= h,   E w = d.
///
/// Empty G/E (zero rows) are allowed; their column count must still match.
struct QpProblem {
  Mat H;
  Vec f;
  Mat G;
  Vec h;
  Mat E;
  Vec d;

  Eigen::Index num_vars() const { return f.size(); }
};

enum class QpStatus { Optimal, Infeasible, Unbounded, MaxIterations };

const char* to_string(QpStatus status);

struct QpOptions {
  int max_iterations = 500;
  /// Relative ridge added to H; selects the minimum-norm point among ties.
  double ridge = 1e-10;
  double feasibility_tol = 1e-9;
  double optimality_tol = 1e-11;
};

struct QpResult {
  QpStatus status = QpStatus::MaxIterations;
  Vec w;
  Vec ineq_duals;  // one per row of G, >= 0 at optimum
  Vec eq_duals;    // one per row of E
  /// For Infeasible: Farkas multipliers (ineq rows then eq rows) with
  /// G'y + E'l = 0, y >= 0, h'y + d'l < 0.  For Unbounded: a descent ray.
  Vec certificate;
  std::vector<int> active_set;  // indices into G rows
  int iterations = 0;

  bool ok() const { return status == QpStatus::Optimal; }
};

struct KktResiduals {
  double stationarity = 0.0;     // ||Hw + f + G'mu + E'lambda||_inf
  double primal = 0.0;           // max(max(Gw - h, 0), |Ew - d|)
  double complementarity = 0.0;  // max |mu_i (G_i w - h_i)|
  double dual_sign = 0.0;        // max(-mu_i, 0)
};

/// Throws ConfigError when dimensions disagree or H is not symmetric PSD
/// (tolerance 1e-10 relative to the largest |H_ij|).
void validate(const QpProblem& problem);

/// Primal active-set method with a null-space step and Bland's rule for
/// both the dropping and the blocking choice.  Deterministic.
QpResult solve_qp(const QpProblem& problem, const QpOptions& options = {});

KktResiduals kkt_residuals(const QpProblem& problem, const QpResult& result);

/// Objective value 1/2 w'Hw + f'w.
double qp_objective(const QpProblem& problem, const Vec& w);

std::string qp_to_json(const QpProblem& problem);
QpProblem qp_from_json(const std::string& text);

}  // namespace empc::mpc
