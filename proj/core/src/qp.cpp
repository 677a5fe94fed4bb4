#include "empc/qp.hpp"

#include "json_util.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace empc::mpc {

namespace {

using json = nlohmann::json;

struct Working {
  Mat H;     // regularized, used for steps
  Mat Hraw;  // unregularized, used for the curvature (unboundedness) test
  Vec f;
  Mat E;     // independent, row-normalized equality rows
  Mat G;     // row-normalized inequality rows
  Vec h;
};

struct CoreOutcome {
  QpStatus status = QpStatus::MaxIterations;
  Vec w;
  std::vector<int> working;
  Vec mu;       // per G row (normalized rows)
  Vec lambda;   // per E row (normalized rows)
  Vec ray;
  int iterations = 0;
};

double inf_norm(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

Mat stack_rows(const Mat& E, const Mat& G, const std::vector<int>& W) {
  const Eigen::Index n = E.rows() ? E.cols() : G.cols();
  Mat A(E.rows() + static_cast<Eigen::Index>(W.size()), n);
  if (E.rows()) A.topRows(E.rows()) = E;
  for (std::size_t k = 0; k < W.size(); ++k) A.row(E.rows() + static_cast<Eigen::Index>(k)) = G.row(W[k]);
  return A;
}

Eigen::Index row_rank(const Mat& A) {
  if (A.rows() == 0) return 0;
  Eigen::ColPivHouseholderQR<Mat> qr(A.transpose());
  qr.setThreshold(1e-10);
  return qr.rank();
}

// Primal active-set iterations from a feasible point w with working set W.
CoreOutcome run_core(const Working& P, Vec w, std::vector<int> W, const QpOptions& opt, int max_iterations,
                     bool detect_unbounded) {
  const Eigen::Index n = P.f.size();
  const Eigen::Index m = P.G.rows();
  const double hscale = std::max(1.0, P.Hraw.size() ? P.Hraw.cwiseAbs().maxCoeff() : 0.0);
  CoreOutcome out;
  std::vector<char> in_w(static_cast<std::size_t>(m), 0);
  for (int i : W) in_w[static_cast<std::size_t>(i)] = 1;

  for (int iter = 0; iter < max_iterations; ++iter) {
    out.iterations = iter + 1;
    const Vec g = P.H * w + P.f;
    const Mat A = stack_rows(P.E, P.G, W);
    const Eigen::Index mw = A.rows();

    Mat Y, Z, R;
    if (mw > 0) {
      Eigen::HouseholderQR<Mat> qr(A.transpose());
      const Mat Q = qr.householderQ() * Mat::Identity(n, n);
      Y = Q.leftCols(mw);
      Z = Q.rightCols(n - mw);
      R = qr.matrixQR().topRows(mw).triangularView<Eigen::Upper>();
    } else {
      Z = Mat::Identity(n, n);
    }

    Vec p = Vec::Zero(n);
    if (Z.cols() > 0) {
      const Mat Hz = Z.transpose() * P.H * Z;
      Eigen::LLT<Mat> llt(Hz);
      if (llt.info() != Eigen::Success) {
        Eigen::LDLT<Mat> ldlt(Hz);
        p = -Z * ldlt.solve(Z.transpose() * g);
      } else {
        p = -Z * llt.solve(Z.transpose() * g);
      }
    }

    const double step_tol = 1e-12 * (1.0 + inf_norm(w));
    if (inf_norm(p) <= step_tol) {
      Vec lam = Vec::Zero(mw);
      if (mw > 0) {
        const Vec rhs = -(P.H * p + g);
        lam = R.triangularView<Eigen::Upper>().solve(Y.transpose() * rhs);
      }
      // Bland: lowest constraint index among negative multipliers.
      const double dual_tol = opt.optimality_tol * std::max(1.0, inf_norm(g));
      int drop = -1;
      int drop_index = std::numeric_limits<int>::max();
      for (std::size_t k = 0; k < W.size(); ++k) {
        const double mu_k = lam(P.E.rows() + static_cast<Eigen::Index>(k));
        if (mu_k < -dual_tol && W[k] < drop_index) {
          drop = static_cast<int>(k);
          drop_index = W[k];
        }
      }
      if (drop < 0) {
        out.status = QpStatus::Optimal;
        out.w = w;
        out.working = W;
        out.lambda = lam.head(P.E.rows());
        out.mu = Vec::Zero(m);
        for (std::size_t k = 0; k < W.size(); ++k)
          out.mu(W[k]) = std::max(0.0, lam(P.E.rows() + static_cast<Eigen::Index>(k)));
        return out;
      }
      in_w[static_cast<std::size_t>(W[static_cast<std::size_t>(drop)])] = 0;
      W.erase(W.begin() + drop);
      continue;
    }

    double alpha = 1.0;
    int block = -1;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (in_w[static_cast<std::size_t>(i)]) continue;
      const double gp = P.G.row(i).dot(p);
      if (gp <= 1e-14 * inf_norm(p)) continue;
      const double slack = std::max(0.0, P.h(i) - P.G.row(i).dot(w));
      const double step = slack / gp;
      if (step < alpha) {
        alpha = step;
        block = static_cast<int>(i);
      }
    }
    if (block < 0 && detect_unbounded) {
      const double pn2 = p.squaredNorm();
      const double curvature = p.dot(P.Hraw * p);
      if (curvature <= 1e-8 * hscale * pn2 && g.dot(p) < 0.0) {
        out.status = QpStatus::Unbounded;
        out.w = w;
        out.ray = p / std::sqrt(pn2);
        out.working = W;
        return out;
      }
    }
    w += alpha * p;
    if (block >= 0) {
      W.push_back(block);
      in_w[static_cast<std::size_t>(block)] = 1;
    }
  }
  out.status = QpStatus::MaxIterations;
  out.w = w;
  out.working = W;
  return out;
}

}  // namespace

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::Optimal: return "optimal";
    case QpStatus::Infeasible: return "infeasible";
    case QpStatus::Unbounded: return "unbounded";
    case QpStatus::MaxIterations: return "max_iterations";
  }
  return "unknown";
}

void validate(const QpProblem& p) {
  const Eigen::Index n = p.f.size();
  if (p.H.rows() != n || p.H.cols() != n) throw ConfigError("qp: H must be n x n with n = size(f)");
  if (p.G.rows() != p.h.size() || (p.G.rows() > 0 && p.G.cols() != n))
    throw ConfigError("qp: inequality system has inconsistent dimensions");
  if (p.E.rows() != p.d.size() || (p.E.rows() > 0 && p.E.cols() != n))
    throw ConfigError("qp: equality system has inconsistent dimensions");
  if (!p.H.allFinite() || !p.f.allFinite() || !p.G.allFinite() || !p.h.allFinite() ||
      !p.E.allFinite() || !p.d.allFinite())
    throw ConfigError("qp: non-finite problem data");
  if (n == 0) return;
  const double scale = std::max(1e-300, p.H.cwiseAbs().maxCoeff());
  const double tol = 1e-10 * std::max(1.0, scale);
  if ((p.H - p.H.transpose()).cwiseAbs().maxCoeff() > tol) throw ConfigError("qp: H is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (p.H + p.H.transpose()), Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -tol) throw ConfigError("qp: H is not positive semidefinite");
}

double qp_objective(const QpProblem& p, const Vec& w) { return 0.5 * w.dot(p.H * w) + p.f.dot(w); }

QpResult solve_qp(const QpProblem& problem, const QpOptions& opt) {
  validate(problem);
  const Eigen::Index n = problem.f.size();
  const Eigen::Index m = problem.G.rows();
  QpResult result;
  result.ineq_duals = Vec::Zero(m);
  result.eq_duals = Vec::Zero(problem.E.rows());

  if (n == 0) {
    for (Eigen::Index i = 0; i < m; ++i) {
      if (problem.h(i) < -opt.feasibility_tol) {
        result.status = QpStatus::Infeasible;
        result.certificate = Vec::Zero(m + problem.E.rows());
        result.certificate(i) = 1.0;
        return result;
      }
    }
    result.status = QpStatus::Optimal;
    result.w = Vec();
    return result;
  }

  // Row normalization makes tolerances invariant to constraint scaling.
  Vec g_scale = Vec::Ones(m);
  std::vector<Eigen::Index> g_rows;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double nrm = problem.G.row(i).norm();
    if (nrm <= 1e-300) {
      if (problem.h(i) < -opt.feasibility_tol) {
        result.status = QpStatus::Infeasible;
        result.certificate = Vec::Zero(m + problem.E.rows());
        result.certificate(i) = 1.0;
        return result;
      }
      continue;
    }
    g_scale(i) = nrm;
    g_rows.push_back(i);
  }
  Working P;
  P.Hraw = 0.5 * (problem.H + problem.H.transpose());
  const double hdiag = P.Hraw.diagonal().cwiseAbs().maxCoeff();
  const double ridge = opt.ridge * (hdiag > 0.0 ? hdiag : 1.0);
  P.H = P.Hraw + ridge * Mat::Identity(n, n);
  P.f = problem.f;
  P.G.resize(static_cast<Eigen::Index>(g_rows.size()), n);
  P.h.resize(static_cast<Eigen::Index>(g_rows.size()));
  for (std::size_t k = 0; k < g_rows.size(); ++k) {
    const auto i = g_rows[k];
    P.G.row(static_cast<Eigen::Index>(k)) = problem.G.row(i) / g_scale(i);
    P.h(static_cast<Eigen::Index>(k)) = problem.h(i) / g_scale(i);
  }

  // Equalities: pick an independent subset, check consistency of the rest.
  Vec w0 = Vec::Zero(n);
  std::vector<Eigen::Index> e_rows;
  Vec e_scale = Vec::Ones(problem.E.rows());
  if (problem.E.rows() > 0) {
    Mat En = problem.E;
    Vec dn = problem.d;
    for (Eigen::Index i = 0; i < En.rows(); ++i) {
      const double nrm = En.row(i).norm();
      if (nrm > 1e-300) {
        e_scale(i) = nrm;
        En.row(i) /= nrm;
        dn(i) /= nrm;
      }
    }
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(En);
    cod.setThreshold(1e-12);
    w0 = cod.solve(dn);
    const Vec res = En * w0 - dn;
    if (inf_norm(res) > opt.feasibility_tol * (1.0 + inf_norm(dn))) {
      result.status = QpStatus::Infeasible;
      result.certificate = Vec::Zero(m + problem.E.rows());
      // Residual of the least-squares fit lies in null(E'): E'r = 0, d'r != 0.
      Vec r = -res;
      for (Eigen::Index i = 0; i < r.size(); ++i) r(i) /= e_scale(i);
      result.certificate.tail(problem.E.rows()) = r;
      result.w = w0;
      return result;
    }
    Eigen::ColPivHouseholderQR<Mat> qr(En.transpose());
    qr.setThreshold(1e-10);
    const auto rank = qr.rank();
    for (Eigen::Index k = 0; k < rank; ++k) e_rows.push_back(qr.colsPermutation().indices()(k));
    std::sort(e_rows.begin(), e_rows.end());
    P.E.resize(rank, n);
    for (Eigen::Index k = 0; k < rank; ++k) P.E.row(k) = En.row(e_rows[static_cast<std::size_t>(k)]);
  } else {
    P.E.resize(0, n);
  }

  // Phase 1 when w0 violates some inequality.
  Vec w = w0;
  int iterations = 0;
  const double viol0 = P.G.rows() ? (P.G * w0 - P.h).maxCoeff() : 0.0;
  if (viol0 > opt.feasibility_tol) {
    Working P1;
    const Eigen::Index n1 = n + 1;
    const double ridge1 = 1e-13;
    // Bounded below by t >= 0, so the unboundedness test is skipped.
    P1.H = ridge1 * Mat::Identity(n1, n1);
    P1.Hraw = P1.H;
    P1.f = Vec::Zero(n1);
    P1.f(n) = 1.0;
    P1.E = Mat::Zero(P.E.rows(), n1);
    P1.E.leftCols(n) = P.E;
    const Eigen::Index m1 = P.G.rows();
    P1.G = Mat::Zero(m1 + 1, n1);
    P1.G.topLeftCorner(m1, n) = P.G;
    P1.G.col(n).head(m1).setConstant(-1.0);
    P1.G(m1, n) = -1.0;
    P1.h = Vec::Zero(m1 + 1);
    P1.h.head(m1) = P.h;
    Vec start(n1);
    start.head(n) = w0;
    start(n) = viol0;
    CoreOutcome ph1 = run_core(P1, start, {}, opt, opt.max_iterations, false);
    iterations += ph1.iterations;
    if (ph1.status != QpStatus::Optimal) {
      result.status = ph1.status == QpStatus::MaxIterations ? QpStatus::MaxIterations : QpStatus::Infeasible;
      result.iterations = iterations;
      result.w = ph1.w.head(n);
      return result;
    }
    if (ph1.w(n) > opt.feasibility_tol) {
      result.status = QpStatus::Infeasible;
      result.iterations = iterations;
      result.w = ph1.w.head(n);
      result.certificate = Vec::Zero(m + problem.E.rows());
      for (std::size_t k = 0; k < g_rows.size(); ++k)
        result.certificate(g_rows[k]) = ph1.mu(static_cast<Eigen::Index>(k)) / g_scale(g_rows[k]);
      for (std::size_t k = 0; k < e_rows.size(); ++k)
        result.certificate(m + e_rows[k]) = ph1.lambda(static_cast<Eigen::Index>(k)) / e_scale(e_rows[k]);
      return result;
    }
    w = ph1.w.head(n);
  }

  // Initial working set: active rows that keep the stacked rows independent.
  std::vector<int> W;
  for (Eigen::Index i = 0; i < P.G.rows(); ++i) {
    if (std::abs(P.G.row(i).dot(w) - P.h(i)) <= opt.feasibility_tol) {
      W.push_back(static_cast<int>(i));
      if (row_rank(stack_rows(P.E, P.G, W)) < static_cast<Eigen::Index>(P.E.rows() + W.size())) W.pop_back();
      if (static_cast<Eigen::Index>(P.E.rows() + W.size()) >= n) break;
    }
  }

  CoreOutcome ph2 = run_core(P, w, W, opt, std::max(1, opt.max_iterations - iterations), true);
  iterations += ph2.iterations;
  result.status = ph2.status;
  result.iterations = iterations;
  result.w = ph2.w;
  if (ph2.status == QpStatus::Unbounded) result.certificate = ph2.ray;
  if (ph2.status == QpStatus::Optimal) {
    for (std::size_t k = 0; k < g_rows.size(); ++k)
      result.ineq_duals(g_rows[k]) = ph2.mu(static_cast<Eigen::Index>(k)) / g_scale(g_rows[k]);
    for (std::size_t k = 0; k < e_rows.size(); ++k)
      result.eq_duals(e_rows[k]) = ph2.lambda(static_cast<Eigen::Index>(k)) / e_scale(e_rows[k]);
    for (int i : ph2.working) result.active_set.push_back(static_cast<int>(g_rows[static_cast<std::size_t>(i)]));
    std::sort(result.active_set.begin(), result.active_set.end());
  }
  return result;
}

KktResiduals kkt_residuals(const QpProblem& p, const QpResult& r) {
  KktResiduals k;
  if (r.w.size() != p.f.size()) return k;
  Vec stat = p.H * r.w + p.f;
  if (p.G.rows()) stat += p.G.transpose() * r.ineq_duals;
  if (p.E.rows()) stat += p.E.transpose() * r.eq_duals;
  k.stationarity = inf_norm(stat);
  if (p.G.rows()) {
    const Vec viol = p.G * r.w - p.h;
    k.primal = std::max(0.0, viol.maxCoeff());
    k.complementarity = inf_norm(r.ineq_duals.cwiseProduct(viol));
    k.dual_sign = std::max(0.0, -r.ineq_duals.minCoeff());
  }
  if (p.E.rows()) k.primal = std::max(k.primal, inf_norm(p.E * r.w - p.d));
  return k;
}

using detail::mat_json;
using detail::vec_from;
using detail::vec_json;

std::string qp_to_json(const QpProblem& p) {
  json j;
  j["format"] = "empc-qp";
  j["version"] = 1;
  j["n"] = p.f.size();
  j["H"] = mat_json(p.H);
  j["f"] = vec_json(p.f);
  j["G"] = mat_json(p.G);
  j["h"] = vec_json(p.h);
  j["E"] = mat_json(p.E);
  j["d"] = vec_json(p.d);
  return j.dump(1);
}

QpProblem qp_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("qp json: ") + e.what());
  }
  if (j.value("format", "") != "empc-qp") throw ConfigError("qp json: unexpected format tag");
  const auto n = j.at("n").get<Eigen::Index>();
  QpProblem p;
  p.H = detail::mat_from(j.at("H"), n, "qp json");
  p.f = vec_from(j.at("f"));
  p.G = detail::mat_from(j.at("G"), n, "qp json");
  p.h = vec_from(j.at("h"));
  p.E = detail::mat_from(j.at("E"), n, "qp json");
  p.d = vec_from(j.at("d"));
  validate(p);
  return p;
}

}  // namespace empc::mpc
