#pragma once

#include "empc/harness.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace empc::report {

/// A finished run as stored on disk: run.json plus telemetry.csv.
struct StoredRun {
  harness::RunResult run;
  std::uint64_t seed = 0;
  double dt = kBaseDt;
};

void save_run(const std::filesystem::path& dir, const StoredRun& r);
StoredRun load_run(const std::filesystem::path& dir);

/// Lines starting with '#' are skipped; columns must match telemetry_columns().
std::vector<control::TelemetryRow> parse_telemetry_csv(const std::string& text);

/// One row per run; deltas against the baseline of the same cycle, empty
/// when that cycle has no baseline.  First line records the seed(s).
std::string metrics_csv(const std::vector<StoredRun>& runs);

/// Markdown comparison table, one section per cycle, arrows on deltas.
std::string comparison_table(const std::vector<StoredRun>& runs);

/// One series of a line chart.
struct Series {
  std::string label;
  std::vector<double> t;
  std::vector<double> y;
  std::string color;
  bool dashed = false;
};

struct Panel {
  std::string y_label;
  std::vector<Series> series;
  std::vector<std::pair<std::string, double>> hlines;  // label, level
};

/// Stacked panels sharing the time axis.
std::string svg_chart(const std::string& title, const std::vector<Panel>& panels);

/// Writes metrics.csv, report.md and the SVG plots into out_dir.  Returns
/// the written paths.
std::vector<std::filesystem::path> render_report(const std::vector<StoredRun>& runs,
                                                 const std::filesystem::path& out_dir);

}  // namespace empc::report
