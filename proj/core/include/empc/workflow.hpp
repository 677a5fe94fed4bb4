#pragma once

#include "empc/cycles.hpp"
#include "empc/data_pipeline.hpp"
#include "empc/emissions_model.hpp"
#include "empc/harness.hpp"
#include "empc/identification.hpp"
#include "empc/report.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

/// Pipeline stages over one output directory.  Every stage takes the root
/// seed and writes it into its outputs.
namespace empc::workflow {

/// File layout under the output root.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path plant() const { return root / "plant.json"; }
  std::filesystem::path steady_csv() const { return root / "data" / "steady.csv"; }
  std::filesystem::path transient_csv() const { return root / "data" / "transient.csv"; }
  std::filesystem::path dataset_json() const { return root / "data" / "dataset.json"; }
  std::filesystem::path split_csv(const std::string& part) const { return root / "data" / (part + ".csv"); }
  std::filesystem::path stats_json() const { return root / "data" / "stats.json"; }
  std::filesystem::path model() const { return root / "model" / "emissions_nn.bin"; }
  std::filesystem::path training_log() const { return root / "model" / "training_log.csv"; }
  std::filesystem::path training_json() const { return root / "model" / "training.json"; }
  std::filesystem::path lpv_emissions() const { return root / "lpv" / "emissions.json"; }
  std::filesystem::path lpv_airpath() const { return root / "lpv" / "airpath.json"; }
  std::filesystem::path identification_json() const { return root / "lpv" / "identification.json"; }
  std::filesystem::path validation_json() const { return root / "lpv" / "validation.json"; }
  std::filesystem::path run_dir(const std::string& cycle, const std::string& scenario) const {
    return root / "runs" / cycle / scenario;
  }
  std::filesystem::path report_dir(const std::string& cycle) const { return root / "runs" / cycle / "report"; }
};

using Log = std::function<void(const std::string&)>;

struct DataSummary {
  std::size_t steady = 0;
  std::size_t transient = 0;
};

/// Writes plant.json and the raw steady/transient datasets.
DataSummary generate_data(const Layout& out, const plant::PlantParams& plant, std::uint64_t seed,
                          data::GenerationConfig cfg = {});

/// Reads the raw datasets, writes the three partitions and stats.json.
data::PreparedData prepare_data(const Layout& out, std::uint64_t seed, data::PrepareConfig cfg = {});

/// Reads the partitions, trains, writes the model, the per-epoch log and
/// test-set errors.  The root seed overrides the seeds in `options`.
nn::TrainOutcome train_nn(const Layout& out, std::uint64_t seed, nn::TrainOptions options, const Log& log = {});

struct IdentifySummary {
  lpv::IdentificationResult result;
  lpv::ValidationReport validation;  // on the whtc_like active segment
  std::size_t validation_steps = 0;
};

/// Grid identification from the trained NN, then validation against plant +
/// NN on the whtc_like segment generated from the root seed.
IdentifySummary identify_lpv(const Layout& out, const plant::PlantParams& plant, std::uint64_t seed,
                             lpv::GridConfig cfg, const Log& log = {});

/// Runs the listed scenarios on one cycle into runs/<cycle>/<scenario>/.
/// A baseline is always simulated first: it sets Soot_max.  If the list
/// omits it, it is still stored so deltas can be computed.
std::vector<report::StoredRun> simulate(const Layout& out, const std::filesystem::path& plant_json,
                                        const std::string& cycle, std::uint64_t seed,
                                        const harness::ScenarioSettings& settings, const Log& log = {});

}  // namespace empc::workflow
