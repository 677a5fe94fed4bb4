#include "empc/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace empc::nn {

std::vector<int> Mlp::sizes() const {
  std::vector<int> s;
  if (layers.empty()) return s;
  s.push_back(static_cast<int>(layers.front().W.cols()));
  for (const auto& l : layers) s.push_back(static_cast<int>(l.W.rows()));
  return s;
}

std::vector<int> reference_sizes() { return {10, 1024, 512, 32, 2}; }

std::size_t parameter_count(const std::vector<int>& sizes) {
  std::size_t n = 0;
  for (std::size_t i = 1; i < sizes.size(); ++i)
    n += static_cast<std::size_t>(sizes[i]) * static_cast<std::size_t>(sizes[i - 1]) +
         static_cast<std::size_t>(sizes[i]);
  return n;
}

std::size_t parameter_count(const Mlp& net) {
  std::size_t n = 0;
  for (const auto& l : net.layers) n += static_cast<std::size_t>(l.W.size() + l.b.size());
  return n;
}

Mlp make_mlp(const std::vector<int>& sizes, std::uint64_t seed) {
  if (sizes.size() < 2) throw ConfigError("mlp: need at least an input and an output size");
  for (int s : sizes)
    if (s <= 0) throw ConfigError("mlp: layer sizes must be positive");
  std::mt19937_64 rng(seed);
  Mlp net;
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    const double bound = std::sqrt(6.0 / sizes[i - 1]);
    std::uniform_real_distribution<double> u(-bound, bound);
    Layer l;
    l.W.resize(sizes[i], sizes[i - 1]);
    for (Eigen::Index c = 0; c < l.W.cols(); ++c)
      for (Eigen::Index r = 0; r < l.W.rows(); ++r) l.W(r, c) = u(rng);
    l.b = Vec::Constant(sizes[i], i + 1 == sizes.size() ? 0.1 : 0.0);
    net.layers.push_back(std::move(l));
  }
  return net;
}

void validate(const Mlp& net) {
  if (net.layers.empty()) throw ConfigError("mlp: no layers");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    if (l.b.size() != l.W.rows()) throw ConfigError("mlp: bias size mismatch in layer " + std::to_string(i + 1));
    if (i > 0 && l.W.cols() != net.layers[i - 1].W.rows())
      throw ConfigError("mlp: shape chain broken at layer " + std::to_string(i + 1));
    if (!l.W.allFinite() || !l.b.allFinite())
      throw ConfigError("mlp: non-finite parameters in layer " + std::to_string(i + 1));
  }
}

Vec forward(const Mlp& net, const Vec& y0) {
  if (net.layers.empty() || y0.size() != net.layers.front().W.cols())
    throw ConfigError("mlp forward: input dimension mismatch");
  if (!y0.allFinite()) throw NumericalError("mlp forward: non-finite input");
  Vec y = y0;
  for (const auto& l : net.layers) y = (l.W * y + l.b).cwiseMax(0.0);
  return y;
}

Mat forward_batch(const Mlp& net, const Mat& X) {
  if (net.layers.empty() || X.rows() != net.layers.front().W.cols())
    throw ConfigError("mlp forward: input dimension mismatch");
  Mat A = X;
  for (const auto& l : net.layers) {
    Mat Z = l.W * A;
    Z.colwise() += l.b;
    A = Z.cwiseMax(0.0);
  }
  return A;
}

double mse(const Mlp& net, const Mat& X, const Mat& Y) {
  if (X.cols() == 0) return 0.0;
  const Mat R = forward_batch(net, X) - Y;
  return R.squaredNorm() / static_cast<double>(R.size());
}

double loss_and_gradient(const Mlp& net, const Mat& X, const Mat& Y, Mlp& grad) {
  const std::size_t L = net.layers.size();
  if (X.cols() == 0) throw ConfigError("mlp gradient: empty batch");
  if (X.cols() != Y.cols() || Y.rows() != net.layers.back().W.rows())
    throw ConfigError("mlp gradient: target shape mismatch");
  std::vector<Mat> Z(L), A(L + 1);
  A[0] = X;
  for (std::size_t i = 0; i < L; ++i) {
    Z[i] = net.layers[i].W * A[i];
    Z[i].colwise() += net.layers[i].b;
    A[i + 1] = Z[i].cwiseMax(0.0);
  }
  const Mat R = A[L] - Y;
  const double scale = 1.0 / static_cast<double>(R.size());
  grad.layers.resize(L);
  Mat dA = 2.0 * scale * R;
  for (std::size_t k = L; k-- > 0;) {
    const Mat dZ = dA.cwiseProduct((Z[k].array() > 0.0).cast<double>().matrix());
    grad.layers[k].W.noalias() = dZ * A[k].transpose();
    grad.layers[k].b = dZ.rowwise().sum();
    if (k > 0) dA.noalias() = net.layers[k].W.transpose() * dZ;
  }
  return R.squaredNorm() * scale;
}

Mlp gradient(const Mlp& net, const Mat& X, const Mat& Y) {
  Mlp g;
  loss_and_gradient(net, X, Y, g);
  return g;
}

Vec flatten(const Mlp& net) {
  Vec theta(static_cast<Eigen::Index>(parameter_count(net)));
  Eigen::Index k = 0;
  for (const auto& l : net.layers) {
    theta.segment(k, l.W.size()) = Eigen::Map<const Vec>(l.W.data(), l.W.size());
    k += l.W.size();
    theta.segment(k, l.b.size()) = l.b;
    k += l.b.size();
  }
  return theta;
}

void unflatten(Mlp& net, const Vec& theta) {
  if (theta.size() != static_cast<Eigen::Index>(parameter_count(net)))
    throw ConfigError("mlp unflatten: parameter count mismatch");
  Eigen::Index k = 0;
  for (auto& l : net.layers) {
    Eigen::Map<Vec>(l.W.data(), l.W.size()) = theta.segment(k, l.W.size());
    k += l.W.size();
    l.b = theta.segment(k, l.b.size());
    k += l.b.size();
  }
}

void validate(const TrainConfig& c) {
  if (c.epochs < 0 || c.batch_size <= 0 || !(c.lr0 > 0.0) || !(c.momentum >= 0.0 && c.momentum < 1.0) ||
      !(c.decay > 0.0 && c.decay <= 1.0) || c.decay_every <= 0)
    throw ConfigError("train config: invalid hyperparameters");
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  return cfg.lr0 * std::pow(cfg.decay, static_cast<double>(epoch / cfg.decay_every));
}

Mlp train(const Mlp& init, const Mat& X_train, const Mat& Y_train, const Mat& X_val, const Mat& Y_val,
          const TrainConfig& cfg, TrainReport& report, const EpochCallback& on_epoch) {
  validate(cfg);
  validate(init);
  if (X_train.cols() == 0) throw ConfigError("train: empty training set");
  if (X_train.cols() != Y_train.cols() || X_val.cols() != Y_val.cols())
    throw ConfigError("train: input/target count mismatch");
  const bool has_val = X_val.cols() > 0;

  Mlp net = init;
  Mlp velocity = init;
  for (auto& l : velocity.layers) {
    l.W.setZero();
    l.b.setZero();
  }
  Mlp grad;
  report = TrainReport{};
  auto evaluate = [&](int epoch) {
    const double tl = mse(net, X_train, Y_train);
    const double vl = has_val ? mse(net, X_val, Y_val) : tl;
    if (!std::isfinite(tl) || !std::isfinite(vl))
      throw NumericalError("train: loss diverged at epoch " + std::to_string(epoch));
    report.train_loss.push_back(tl);
    report.val_loss.push_back(vl);
    if (on_epoch) on_epoch(epoch, tl, vl);
    return vl;
  };

  Mlp best = net;
  report.best_val_loss = evaluate(0);
  report.best_epoch = 0;

  std::mt19937_64 rng(cfg.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(X_train.cols()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Mat Xb, Yb;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    report.learning_rate.push_back(lr);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const auto B = static_cast<Eigen::Index>(end - start);
      Xb.resize(X_train.rows(), B);
      Yb.resize(Y_train.rows(), B);
      for (Eigen::Index j = 0; j < B; ++j) {
        Xb.col(j) = X_train.col(order[start + static_cast<std::size_t>(j)]);
        Yb.col(j) = Y_train.col(order[start + static_cast<std::size_t>(j)]);
      }
      const double loss = loss_and_gradient(net, Xb, Yb, grad);
      if (!std::isfinite(loss)) throw NumericalError("train: loss diverged at epoch " + std::to_string(epoch + 1));
      for (std::size_t i = 0; i < net.layers.size(); ++i) {
        velocity.layers[i].W = cfg.momentum * velocity.layers[i].W - lr * grad.layers[i].W;
        velocity.layers[i].b = cfg.momentum * velocity.layers[i].b - lr * grad.layers[i].b;
        net.layers[i].W += velocity.layers[i].W;
        net.layers[i].b += velocity.layers[i].b;
      }
    }
    const double vl = evaluate(epoch + 1);
    if (vl < report.best_val_loss) {
      report.best_val_loss = vl;
      report.best_epoch = epoch + 1;
      best = net;
    }
  }
  return best;
}

}  // namespace empc::nn
