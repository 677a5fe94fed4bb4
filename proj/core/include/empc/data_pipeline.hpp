#pragma once

#include "empc/common.hpp"
#include "empc/plant.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace empc::data {

enum class SampleKind { SteadyState, Transient };

const char* to_string(SampleKind kind);

struct Sample {
  Vec inputs;
  Vec targets;  // (NOx ppm, Soot %)
  SampleKind kind = SampleKind::Transient;
  double timestamp = 0.0;  // s, transient only
};

using Samples = std::vector<Sample>;

struct DatasetStats {
  Vec mean;
  Mat cov;
};

struct SplitRatios {
  double train = 0.70;
  double validation = 0.15;
  double test = 0.15;
};

struct SplitDataset {
  Samples train;
  Samples validation;
  Samples test;
};

/// Zero-lag cross-covariance of the mean-removed series divided by the
/// product of their standard deviations.  Throws on a constant series.
double normalized_xcov(const std::vector<double>& a, const std::vector<double>& b);

struct Candidate {
  std::string name;
  std::vector<double> steady;
  std::vector<double> transient;
};

struct TargetSeries {
  std::vector<double> nox;
  std::vector<double> soot;
};

/// Keeps a candidate unless |xcov| against both targets is below threshold
/// in both the steady and transient sets.  Constant series count as 0.
std::vector<std::string> select_inputs(const std::vector<Candidate>& candidates, const TargetSeries& steady,
                                       const TargetSeries& transient, double threshold = 0.05);

/// Mean and (population) covariance of the inputs of steady samples.
DatasetStats compute_stats(const Samples& steady);

/// Precomputed Cholesky factor of the covariance.  An ill-conditioned
/// covariance (or one that fails to factor) gets lambda*I added with
/// lambda = 1e-8 * trace / dim.
class MahalanobisMetric {
 public:
  explicit MahalanobisMetric(const DatasetStats& stats);
  double operator()(const Vec& y) const;

 private:
  Vec mean_;
  Eigen::LLT<Mat> llt_;
};

double mahalanobis(const Vec& y, const DatasetStats& stats);

/// Retains exactly the transient samples with distance <= eps.  Steady
/// samples pass through untouched.
Samples filter_outliers(const Samples& samples, const DatasetStats& stats, double eps);

/// Nearest-rank quantile of the steady samples' own distances.
double default_epsilon(const Samples& steady, const DatasetStats& stats, double quantile = 0.975);

/// transient followed by `copies` copies of steady.
Samples balance(const Samples& steady, const Samples& transient, int copies = 7);

/// Partition sizes: floor, floor, remainder.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios);

/// Seeded shuffle, then contiguous partition.
SplitDataset split(const Samples& samples, const SplitRatios& ratios, std::uint64_t seed);

/// Splits steady and transient sets separately and duplicates the steady
/// share only inside the training partition.
SplitDataset split_stratified(const Samples& steady, const Samples& transient, const SplitRatios& ratios,
                              std::uint64_t seed, int copies = 7);

/// Names of the candidate input channels produced by the generators: the ten
/// measurement channels followed by the pre-injection fuel rate.
std::vector<std::string> candidate_names();

struct GenerationConfig {
  int steady_points = 306;
  int transient_steps = 12001;
  std::uint64_t seed = 1;
};

Samples generate_steady(const GenerationConfig& cfg, const plant::PlantParams& params);
Samples generate_transient(const GenerationConfig& cfg, const plant::PlantParams& params);

/// Keeps the listed input columns, in the given order.
Samples select_columns(const Samples& samples, const std::vector<int>& columns);

/// Column index of each name in `all`; throws ConfigError on unknown names.
std::vector<int> column_indices(const std::vector<std::string>& all, const std::vector<std::string>& names);

/// CSV with columns kind,timestamp,<inputs...>,nox,soot.
void write_samples_csv(const std::filesystem::path& path, const Samples& samples,
                       const std::vector<std::string>& input_names);
Samples read_samples_csv(const std::filesystem::path& path, std::vector<std::string>* input_names = nullptr);

/// Units/kind sidecar for a dataset CSV.
std::string sidecar_json(const std::vector<std::string>& input_names);

struct PrepareConfig {
  double xcov_threshold = 0.05;
  double quantile = 0.975;
  int copies = 7;
  SplitRatios ratios;
  std::uint64_t seed = 1;
};

struct PreparedData {
  std::vector<std::string> input_names;
  DatasetStats stats;
  double epsilon = 0.0;
  std::size_t outliers_removed = 0;
  SplitDataset split;
};

/// Input selection, steady statistics, transient outlier removal and the
/// stratified split, in that order.
PreparedData prepare(const Samples& steady, const Samples& transient, const std::vector<std::string>& names,
                     const PrepareConfig& cfg);

std::string stats_to_json(const DatasetStats& stats, double eps, const std::vector<std::string>& names);

}  // namespace empc::data
