#pragma once

#include "empc/common.hpp"
#include "empc/data_pipeline.hpp"
#include "empc/mlp.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace empc::nn {

/// Network plus the standardization it was trained under.  Inputs are
/// shifted and scaled, targets only scaled so the ReLU head stays valid.
struct EmissionsModel {
  Mlp net;
  Vec input_mean;
  Vec input_std;
  Vec output_scale;
  std::vector<std::string> input_names;

  std::size_t input_dim() const { return static_cast<std::size_t>(input_mean.size()); }
};

/// Physical inputs -> (NOx ppm, Soot %).
Vec predict(const EmissionsModel& model, const Vec& inputs);
Mat predict_batch(const EmissionsModel& model, const Mat& inputs);

/// Input mean/std and target std of the given samples.  Zero spreads are
/// replaced by 1.
void fit_standardization(const data::Samples& train, EmissionsModel& model);

/// Standardized column matrices.
void to_matrices(const EmissionsModel& model, const data::Samples& samples, Mat& X, Mat& Y);

struct EmissionErrors {
  double nox_mae = 0.0;
  double soot_mae = 0.0;
  std::size_t count = 0;
};

struct TestMetrics {
  EmissionErrors transient;
  EmissionErrors steady;
};

TestMetrics evaluate(const EmissionsModel& model, const data::Samples& test);

struct TrainOptions {
  TrainConfig config;
  std::vector<int> sizes = reference_sizes();
  std::uint64_t init_seed = 1;
};

struct TrainOutcome {
  EmissionsModel model;
  TrainReport report;
  TestMetrics test;
};

TrainOutcome train_emissions_model(const data::SplitDataset& data, const std::vector<std::string>& input_names,
                                   const TrainOptions& options, const EpochCallback& on_epoch = {});

TrainOptions train_options_from_json(const std::string& text);

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Layout: 8-byte magic, uint32 version, uint64 header length, JSON header,
/// then every parameter as little-endian float64 (layer by layer, W column
/// major followed by b).
void save_model(const std::filesystem::path& path, const EmissionsModel& model);
EmissionsModel load_model(const std::filesystem::path& path);

std::string serialize_model(const EmissionsModel& model);
EmissionsModel deserialize_model(const std::string& bytes);

}  // namespace empc::nn
