#include "empc/condense.hpp"

#include <cmath>

namespace empc::mpc {

bool OcpSpec::has_slack() const {
  for (const auto& b : bounds)
    if (b.soft) return true;
  return false;
}

namespace {

void check_signal(const Signal& s, Eigen::Index nx, Eigen::Index nu, const std::string& what) {
  if (s.C.cols() != nx) throw ConfigError("ocp: " + what + " signal C has wrong column count");
  if (s.D.rows() != s.C.rows() || s.D.cols() != nu) throw ConfigError("ocp: " + what + " signal D has wrong shape");
  if (s.offset.size() != 0 && s.offset.size() != s.C.rows())
    throw ConfigError("ocp: " + what + " signal offset has wrong length");
  if (s.C.rows() == 0) throw ConfigError("ocp: " + what + " signal is empty");
}

void check_range(int first, int last, int lo, int N, const std::string& what) {
  if (first < lo || last > N || first > last)
    throw ConfigError("ocp: " + what + " step range [" + std::to_string(first) + ", " + std::to_string(last) +
                      "] outside [" + std::to_string(lo) + ", " + std::to_string(N) + "]");
}

void check_psd(const Mat& W, const std::string& what) {
  if ((W - W.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + W.cwiseAbs().maxCoeff()))
    throw ConfigError("ocp: " + what + " weight is not symmetric");
  const Eigen::SelfAdjointEigenSolver<Mat> es(W);
  if (es.eigenvalues().minCoeff() < -1e-10 * (1.0 + W.cwiseAbs().maxCoeff()))
    throw ConfigError("ocp: " + what + " weight is not positive semidefinite");
}

Vec offset_of(const Signal& s) { return s.offset.size() ? s.offset : Vec::Zero(s.rows()); }

}  // namespace

void validate(const OcpSpec& p) {
  const auto nx = p.nx(), nu = p.nu();
  if (nx == 0 || p.A.cols() != nx) throw ConfigError("ocp: A must be square and nonempty");
  if (p.B.rows() != nx || nu == 0) throw ConfigError("ocp: B must have as many rows as A");
  if (p.c.size() != 0 && p.c.size() != nx) throw ConfigError("ocp: drift c has wrong length");
  if (p.x0.size() != nx) throw ConfigError("ocp: x0 has wrong length");
  if (p.N < 1) throw ConfigError("ocp: horizon must be at least 1");
  if (p.R.size() != 0) {
    if (p.R.rows() != nu || p.R.cols() != nu) throw ConfigError("ocp: R must be nu x nu");
    check_psd(p.R, "R");
  }
  for (const auto& t : p.quadratic) {
    check_signal(t.s, nx, nu, "quadratic");
    if (t.r.size() != t.s.rows() || t.W.rows() != t.s.rows() || t.W.cols() != t.s.rows())
      throw ConfigError("ocp: quadratic term reference/weight has wrong shape");
    check_psd(t.W, "quadratic term");
    check_range(t.first, t.last, 0, p.N, "quadratic term");
  }
  for (const auto& t : p.linear) {
    check_signal(t.s, nx, nu, "linear");
    if (t.q.size() != t.s.rows()) throw ConfigError("ocp: linear term weight has wrong length");
    check_range(t.first, t.last, 0, p.N, "linear term");
  }
  for (const auto& t : p.absolute) {
    check_signal(t.s, nx, nu, "absolute");
    if (t.s.rows() != 1) throw ConfigError("ocp: absolute term signal must have one row");
    if (!(t.weight >= 0.0)) throw ConfigError("ocp: absolute term weight must be nonnegative");
    check_range(t.first, t.last, 0, p.N, "absolute term");
  }
  for (const auto& b : p.bounds) {
    check_signal(b.s, nx, nu, "bound");
    if (b.lo.size() != b.s.rows() || b.hi.size() != b.s.rows()) throw ConfigError("ocp: bound vectors have wrong length");
    if ((b.lo.array() > b.hi.array()).any()) throw ConfigError("ocp: bound lo > hi");
    check_range(b.first, b.last, b.soft ? 1 : 0, p.N, b.soft ? "soft bound" : "bound");
  }
  if (!(p.slack_linear >= 0.0) || !(p.slack_quadratic >= 0.0)) throw ConfigError("ocp: slack weights must be >= 0");
}

Mat CondensedQp::predict(const Vec& w) const {
  const auto nx = Phi.cols();
  const Vec flat = Gamma * w.head(N * nu) + drift;
  Mat X(nx, N + 1);
  for (int j = 0; j <= N; ++j) X.col(j) = flat.segment(j * nx, nx);
  return X;
}

Mat CondensedQp::inputs(const Vec& w) const { return w.head(N * nu).reshaped(nu, N); }

Vec CondensedQp::slacks(const Vec& w) const { return w.segment(slack_offset, n_slack); }

CondensedQp condense(const OcpSpec& p) {
  validate(p);
  const auto nx = p.nx(), nu = p.nu();
  const int N = p.N;
  CondensedQp out;
  out.nu = nu;
  out.N = N;
  out.slack_offset = N * nu;
  out.n_slack = p.has_slack() ? N : 0;
  out.aux_offset = out.slack_offset + out.n_slack;
  for (const auto& t : p.absolute) out.n_aux += t.last - t.first + 1;
  const Eigen::Index nw = out.aux_offset + out.n_aux;
  const Eigen::Index nU = N * nu;

  // Stacked predictions x_j = Phi_j x0 + Gamma_j U + d_j.
  const Vec c = p.c.size() ? p.c : Vec::Zero(nx);
  out.Phi = Mat::Zero((N + 1) * nx, nx);
  out.Gamma = Mat::Zero((N + 1) * nx, nU);
  out.drift = Vec::Zero((N + 1) * nx);
  out.Phi.topRows(nx).setIdentity();
  for (int j = 0; j < N; ++j) {
    out.Phi.middleRows((j + 1) * nx, nx) = p.A * out.Phi.middleRows(j * nx, nx);
    out.Gamma.middleRows((j + 1) * nx, nx) = p.A * out.Gamma.middleRows(j * nx, nx);
    out.Gamma.block((j + 1) * nx, j * nu, nx, nu) += p.B;
    out.drift.segment((j + 1) * nx, nx) = p.A * out.drift.segment(j * nx, nx) + c;
  }
  // Fold x0 into the drift so predict() needs only w.
  const Vec free = out.Phi * p.x0 + out.drift;
  out.drift = free;

  // Affine map of a signal at step j onto U: s_j = M U + m.
  auto affine = [&](const Signal& s, int j, Mat& M, Vec& m) {
    M = s.C * out.Gamma.middleRows(j * nx, nx);
    if (j < N) M.middleCols(j * nu, nu) += s.D;
    m = s.C * free.segment(j * nx, nx) + offset_of(s);
  };

  Mat H = Mat::Zero(nw, nw);
  Vec f = Vec::Zero(nw);
  double constant = 0.0;
  if (p.R.size() != 0)
    for (int j = 0; j < N; ++j) H.block(j * nu, j * nu, nu, nu) += 2.0 * p.R;
  for (const auto& t : p.quadratic)
    for (int j = t.first; j <= t.last; ++j) {
      Mat M;
      Vec m;
      affine(t.s, j, M, m);
      const Vec res = m - t.r;
      H.topLeftCorner(nU, nU) += 2.0 * M.transpose() * t.W * M;
      f.head(nU) += 2.0 * M.transpose() * (t.W * res);
      constant += res.dot(t.W * res);
    }
  for (const auto& t : p.linear)
    for (int j = t.first; j <= t.last; ++j) {
      Mat M;
      Vec m;
      affine(t.s, j, M, m);
      f.head(nU) += M.transpose() * t.q;
      constant += t.q.dot(m);
    }

  std::vector<Eigen::VectorXd> rows;
  std::vector<double> rhs;
  auto add_row = [&](const Vec& g, double h) {
    rows.push_back(g);
    rhs.push_back(h);
  };

  Eigen::Index aux = out.aux_offset;
  for (const auto& t : p.absolute)
    for (int j = t.first; j <= t.last; ++j, ++aux) {
      Mat M;
      Vec m;
      affine(t.s, j, M, m);
      f[aux] += t.weight;
      Vec g = Vec::Zero(nw);
      g.head(nU) = M.row(0).transpose();
      g[aux] = -1.0;
      add_row(g, -m[0]);  //  s - t <= 0
      g.head(nU) = -M.row(0).transpose();
      add_row(g, m[0]);  // -s - t <= 0
    }

  for (int j = 1; j <= N && out.n_slack > 0; ++j) {
    const Eigen::Index e = out.slack_offset + (j - 1);
    f[e] += p.slack_linear;
    H(e, e) += 2.0 * p.slack_quadratic;
    Vec g = Vec::Zero(nw);
    g[e] = -1.0;
    add_row(g, 0.0);
  }
  for (const auto& b : p.bounds)
    for (int j = b.first; j <= b.last; ++j) {
      Mat M;
      Vec m;
      affine(b.s, j, M, m);
      for (Eigen::Index r = 0; r < b.s.rows(); ++r) {
        Vec g = Vec::Zero(nw);
        if (std::isfinite(b.hi[r])) {
          g.head(nU) = M.row(r).transpose();
          if (b.soft) g[out.slack_offset + (j - 1)] = -1.0;
          add_row(g, b.hi[r] - m[r]);
        }
        if (std::isfinite(b.lo[r])) {
          g.setZero();
          g.head(nU) = -M.row(r).transpose();
          if (b.soft) g[out.slack_offset + (j - 1)] = -1.0;
          add_row(g, m[r] - b.lo[r]);
        }
      }
    }

  out.qp.H = 0.5 * (H + H.transpose());
  out.qp.f = f;
  out.qp.G.resize(static_cast<Eigen::Index>(rows.size()), nw);
  out.qp.h.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.qp.G.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    out.qp.h[static_cast<Eigen::Index>(i)] = rhs[i];
  }
  out.qp.E.resize(0, nw);
  out.qp.d.resize(0);
  out.constant = constant;
  return out;
}

double ocp_cost(const OcpSpec& p, const Mat& u, const Vec& eps) {
  validate(p);
  const auto nx = p.nx(), nu = p.nu();
  if (u.rows() != nu || u.cols() != p.N) throw ConfigError("ocp_cost: u must be nu x N");
  if (p.has_slack() && eps.size() != p.N) throw ConfigError("ocp_cost: eps must have N entries");
  Mat X(nx, p.N + 1);
  X.col(0) = p.x0;
  for (int j = 0; j < p.N; ++j) {
    X.col(j + 1) = p.A * X.col(j) + p.B * u.col(j);
    if (p.c.size()) X.col(j + 1) += p.c;
  }
  auto signal = [&](const Signal& s, int j) {
    Vec v = s.C * X.col(j) + offset_of(s);
    if (j < p.N) v += s.D * u.col(j);
    return v;
  };
  double J = 0.0;
  if (p.R.size() != 0)
    for (int j = 0; j < p.N; ++j) J += u.col(j).dot(p.R * u.col(j));
  for (const auto& t : p.quadratic)
    for (int j = t.first; j <= t.last; ++j) {
      const Vec r = signal(t.s, j) - t.r;
      J += r.dot(t.W * r);
    }
  for (const auto& t : p.linear)
    for (int j = t.first; j <= t.last; ++j) J += t.q.dot(signal(t.s, j));
  for (const auto& t : p.absolute)
    for (int j = t.first; j <= t.last; ++j) J += t.weight * std::abs(signal(t.s, j)[0]);
  if (p.has_slack())
    for (int j = 0; j < p.N; ++j) J += p.slack_linear * eps[j] + p.slack_quadratic * eps[j] * eps[j];
  return J;
}

std::filesystem::path dump_qp(const std::filesystem::path& dir, const std::string& label, const QpProblem& qp) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ArtifactError("dump_qp: cannot create " + dir.string() + ": " + ec.message());
  const auto path = dir / (label + ".json");
  write_text_file(path, qp_to_json(qp));
  return path;
}

}  // namespace empc::mpc
