#include "empc/rate_model.hpp"

namespace empc::mpc {

namespace {

void check(const Mat& A, const Mat& B) {
  if (A.rows() == 0 || A.rows() != A.cols()) throw ConfigError("rate model: A must be square and nonempty");
  if (B.rows() != A.rows() || B.cols() == 0) throw ConfigError("rate model: B must have as many rows as A");
}

}  // namespace

Eigen::Index RateModel::error_offset() const {
  if (!tracking) throw ConfigError("rate model: no tracking error block in the plain form");
  return nx;
}

RateModel make_rate_model(const Mat& A, const Mat& B) {
  check(A, B);
  RateModel m;
  m.nx = A.rows();
  m.nu = B.cols();
  const auto nx = m.nx, nu = m.nu, n = 2 * nx + nu;
  m.A_ext = Mat::Zero(n, n);
  m.A_ext.topLeftCorner(nx, nx) = A;
  m.A_ext.block(nx, 0, nx, nx).setIdentity();
  m.A_ext.block(nx, nx, nx, nx).setIdentity();
  m.A_ext.bottomRightCorner(nu, nu).setIdentity();
  m.B_ext = Mat::Zero(n, nu);
  m.B_ext.topRows(nx) = B;
  m.B_ext.bottomRows(nu).setIdentity();
  return m;
}

RateModel make_rate_model(const lpv::LocalModel& local) { return make_rate_model(local.A, local.B); }

RateModel make_tracking_rate_model(const Mat& A, const Mat& B) {
  check(A, B);
  RateModel m;
  m.tracking = true;
  m.nx = A.rows();
  m.nu = B.cols();
  const auto nx = m.nx, nu = m.nu, n = 3 * nx + nu;
  m.A_ext = Mat::Zero(n, n);
  m.A_ext.topLeftCorner(nx, nx) = A;
  m.A_ext.block(nx, 0, nx, nx) = A;
  m.A_ext.block(nx, nx, nx, nx).setIdentity();
  m.A_ext.block(2 * nx, 0, nx, nx).setIdentity();
  m.A_ext.block(2 * nx, 2 * nx, nx, nx).setIdentity();
  m.A_ext.bottomRightCorner(nu, nu).setIdentity();
  m.B_ext = Mat::Zero(n, nu);
  m.B_ext.topRows(nx) = B;
  m.B_ext.middleRows(nx, nx) = B;
  m.B_ext.bottomRows(nu).setIdentity();
  return m;
}

Vec extended_state(const RateModel& m, const Vec& x, const Vec& x_prev, const Vec& u_prev) {
  if (m.tracking) throw ConfigError("extended_state: model is in tracking form");
  if (x.size() != m.nx || x_prev.size() != m.nx || u_prev.size() != m.nu)
    throw ConfigError("extended_state: dimension mismatch");
  Vec e(m.n_ext());
  e << x - x_prev, x_prev, u_prev;
  return e;
}

Vec extended_tracking_state(const RateModel& m, const Vec& z, const Vec& z_prev, const Vec& r, const Vec& v_prev) {
  if (!m.tracking) throw ConfigError("extended_tracking_state: model is in plain form");
  if (z.size() != m.nx || z_prev.size() != m.nx || r.size() != m.nx || v_prev.size() != m.nu)
    throw ConfigError("extended_tracking_state: dimension mismatch");
  Vec e(m.n_ext());
  e << z - z_prev, z - r, z_prev, v_prev;
  return e;
}

Mat rollout(const RateModel& m, const Vec& x0, const Mat& du) {
  if (x0.size() != m.n_ext() || du.rows() != m.nu) throw ConfigError("rollout: dimension mismatch");
  Mat X(m.n_ext(), du.cols() + 1);
  X.col(0) = x0;
  for (Eigen::Index j = 0; j < du.cols(); ++j) X.col(j + 1) = m.A_ext * X.col(j) + m.B_ext * du.col(j);
  return X;
}

}  // namespace empc::mpc
