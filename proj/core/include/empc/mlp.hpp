#pragma once

#include "empc/common.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace empc::nn {

struct Layer {
  Mat W;
  Vec b;
};

/// Fully connected network; every layer, including the last, is followed
/// by a rectified-linear activation.
struct Mlp {
  std::vector<Layer> layers;

  std::vector<int> sizes() const;
};

/// 10 -> 1024 -> 512 -> 32 -> 2
std::vector<int> reference_sizes();

std::size_t parameter_count(const std::vector<int>& sizes);
std::size_t parameter_count(const Mlp& net);

/// He-style uniform weights (bound sqrt(6 / fan_in)), zero hidden biases,
/// output biases 0.1 so the last ReLU starts active.
Mlp make_mlp(const std::vector<int>& sizes, std::uint64_t seed);

/// Throws ConfigError on inconsistent shapes or non-finite parameters.
void validate(const Mlp& net);

Vec forward(const Mlp& net, const Vec& y0);

/// Column-wise batch forward.
Mat forward_batch(const Mlp& net, const Mat& X);

/// Mean over samples and outputs of the squared residual.
double mse(const Mlp& net, const Mat& X, const Mat& Y);

/// Loss and gradient of mse() w.r.t. every parameter.  At a ReLU kink the
/// subgradient 0 is used.
double loss_and_gradient(const Mlp& net, const Mat& X, const Mat& Y, Mlp& grad);
Mlp gradient(const Mlp& net, const Mat& X, const Mat& Y);

Vec flatten(const Mlp& net);
void unflatten(Mlp& net, const Vec& theta);

struct TrainConfig {
  int epochs = 1000;
  int batch_size = 40;
  double lr0 = 1e-4;
  double momentum = 0.9;
  double decay = 0.5;
  int decay_every = 100;
  std::uint64_t seed = 1;
};

void validate(const TrainConfig& cfg);

/// lr0 * decay^floor(epoch / decay_every) for a 0-based epoch index.
double learning_rate(const TrainConfig& cfg, int epoch);

struct TrainReport {
  std::vector<double> train_loss;  // index 0 = before the first update
  std::vector<double> val_loss;
  std::vector<double> learning_rate;  // per trained epoch
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

using EpochCallback = std::function<void(int epoch, double train_loss, double val_loss)>;

/// Mini-batch SGD with momentum: v <- mu v - lr g, theta <- theta + v.
/// Returns the snapshot with the lowest validation loss.  Throws
/// NumericalError naming the epoch if the loss becomes non-finite.
Mlp train(const Mlp& init, const Mat& X_train, const Mat& Y_train, const Mat& X_val, const Mat& Y_val,
          const TrainConfig& cfg, TrainReport& report, const EpochCallback& on_epoch = {});

}  // namespace empc::nn
