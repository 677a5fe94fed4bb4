#include "empc/harness.hpp"
#include "empc/identification.hpp"
#include "empc/report.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace empc;
using namespace empc::harness;

namespace {

std::vector<control::TelemetryRow> rows_with(const std::vector<double>& nox, const std::vector<double>& soot) {
  std::vector<control::TelemetryRow> rows(nox.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    rows[k].t = 0.1 * static_cast<double>(k);
    rows[k].nox = nox[k];
    rows[k].soot = soot[k];
    rows[k].fuel_target = rows[k].fuel_adjusted = 40.0;
  }
  return rows;
}

// Balanced start and end tags, one root element.  Enough for the charts,
// which carry no comments, CDATA or doctype.
bool well_formed_xml(const std::string& s) {
  std::vector<std::string> stack;
  std::size_t i = s.find("?>");
  if (s.rfind("<?xml", 0) != 0 || i == std::string::npos) return false;
  int roots = 0;
  for (i += 2; (i = s.find('<', i)) != std::string::npos;) {
    const auto end = s.find('>', i);
    if (end == std::string::npos) return false;
    std::string tag = s.substr(i + 1, end - i - 1);
    if (tag.find('<') != std::string::npos) return false;
    if (tag[0] == '/') {
      if (stack.empty() || stack.back() != tag.substr(1)) return false;
      stack.pop_back();
    } else {
      const bool self = tag.back() == '/';
      const std::string name = tag.substr(0, tag.find_first_of(" /"));
      if (stack.empty()) ++roots;
      if (!self) stack.push_back(name);
    }
    i = end + 1;
  }
  return stack.empty() && roots == 1;
}

// Small but real artifact set: a narrow NN trained briefly on plant data and
// a 3 x 3 grid identified from it.
const Artifacts& small_artifacts() {
  static const Artifacts art = [] {
    Artifacts a;
    a.plant = plant::reference_params();
    data::GenerationConfig g;
    g.steady_points = 120;
    g.transient_steps = 1500;
    const auto steady = data::generate_steady(g, a.plant);
    const auto transient = data::generate_transient(g, a.plant);
    data::PrepareConfig pc;
    const auto prep = data::prepare(steady, transient, data::candidate_names(), pc);
    nn::TrainOptions o;
    o.sizes = {0, 24, 12, 0};
    o.config.epochs = 20;
    o.config.lr0 = 3e-3;
    a.nn = nn::train_emissions_model(prep.split, prep.input_names, o).model;
    lpv::GridConfig gc;
    gc.grid.speeds = {1200.0, 2000.0, 2800.0};
    gc.grid.fuels = {20.0, 55.0, 90.0};
    gc.perturbation.duration = 80.0;
    const auto id = lpv::identify_grid(gc, a.plant, a.nn);
    a.emissions = id.emissions;
    a.airpath = id.airpath;
    return a;
  }();
  return art;
}

}  // namespace

TEST(Metrics, WarmupExcludedExactly) {
  const std::vector<double> nox = {900, 800, 10, 20, 30}, soot = {50, 40, 1, 3, 2};
  const auto m = compute_metrics(rows_with(nox, soot), 2, 0.1, 2.5);
  EXPECT_EQ(m.active_steps, 3u);
  EXPECT_NEAR(m.cumulative_nox, 0.1 * 60.0, 1e-12);
  EXPECT_EQ(m.peak_nox, 30.0);
  EXPECT_NEAR(m.average_soot, 2.0, 1e-12);
  EXPECT_EQ(m.peak_soot, 3.0);
  EXPECT_NEAR(m.soot_violation_fraction, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(m.max_soot_excess, 0.5, 1e-12);
  // Changing warmup content leaves every aggregate alone.
  const auto m2 = compute_metrics(rows_with({1, 2, 10, 20, 30}, {0, 0, 1, 3, 2}), 2, 0.1, 2.5);
  EXPECT_EQ(m2.cumulative_nox, m.cumulative_nox);
  EXPECT_EQ(m2.peak_soot, m.peak_soot);
  EXPECT_EQ(m2.average_soot, m.average_soot);
  EXPECT_THROW(compute_metrics(rows_with(nox, soot), 5, 0.1, 0.0), ConfigError);
}

TEST(Metrics, NoLimitMeansNoViolations) {
  const auto m = compute_metrics(rows_with({1, 2, 3}, {10, 20, 30}), 0, 0.1, 0.0);
  EXPECT_EQ(m.soot_violation_fraction, 0.0);
  EXPECT_EQ(m.soot_max, 0.0);
}

TEST(Metrics, FuelBandViolationsCounted) {
  auto rows = rows_with({1, 2, 3}, {1, 1, 1});
  rows[1].fuel_adjusted = 35.0;  // below 0.9 * 40
  rows[2].fuel_adjusted = 40.5;
  EXPECT_EQ(compute_metrics(rows, 0, 0.1, 0.0).fuel_bound_violations, 2u);
}

TEST(Deltas, FormattingAndDirection) {
  EXPECT_EQ(arrow_percent(percent_delta(90.0, 100.0)), "↓ 10.000%");
  EXPECT_EQ(signed_percent(percent_delta(90.0, 100.0)), "-10.000%");
  EXPECT_EQ(arrow_percent(percent_delta(112.5, 100.0)), "↑ 12.500%");
  EXPECT_EQ(signed_percent(percent_delta(112.5, 100.0)), "+12.500%");
  EXPECT_EQ(signed_percent(percent_delta(7.0, 7.0)), "0.000%");
  EXPECT_EQ(arrow_percent(percent_delta(0.0, 0.0)), "0.000%");
}

TEST(Settings, ReferenceFileParses) {
  const auto s = scenario_settings_from_json(read_text_file(EMPC_SOURCE_DIR "/config/scenarios.json"));
  EXPECT_EQ(s.scenarios.size(), 5u);
  EXPECT_EQ(s.pipeline.empc_every, 2);
  EXPECT_EQ(s.pipeline.empc.horizon, 10);
  const auto c = resolve(s, control::make_scenario(control::ScenarioName::EmpcD), 10.0);
  EXPECT_EQ(c.empc.eta, s.eta_high);
  EXPECT_EQ(c.empc.zeta, s.zeta_factor * s.eta_high);
  EXPECT_DOUBLE_EQ(c.empc.soot_max, s.soot_max_fraction * 10.0);
  EXPECT_EQ(resolve(s, control::make_scenario(control::ScenarioName::EmpcC), 10.0).empc.eta, s.eta_low);
}

TEST(Settings, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(scenario_settings_from_json(R"({"empc": {"alpah": 1}})"), ConfigError);
  EXPECT_THROW(scenario_settings_from_json(R"({"extra": 1})"), ConfigError);
  EXPECT_THROW(scenario_settings_from_json(R"({"empc": {"eta_low": 5, "eta_high": 1}})"), ConfigError);
  EXPECT_THROW(scenario_settings_from_json(R"({"scenarios": ["EMPC-Z"]})"), ConfigError);
  EXPECT_THROW(scenario_settings_from_json(R"({"airpath": {"R": [1]}})"), ConfigError);
  EXPECT_THROW(scenario_settings_from_json("{"), ConfigError);
}

TEST(Artifacts, MissingFilesAreAllListed) {
  const auto dir = std::filesystem::temp_directory_path() / "empc_missing_artifacts";
  try {
    load_artifacts(dir / "plant.json", dir / "nn.bin", dir / "em.json", dir / "ap.json");
    FAIL() << "expected ArtifactError";
  } catch (const ArtifactError& e) {
    const std::string msg = e.what();
    for (const char* f : {"plant.json", "nn.bin", "em.json", "ap.json"}) EXPECT_NE(msg.find(f), std::string::npos) << f;
  }
}

TEST(ClosedLoop, BaselineRunShapeAndTargets) {
  const auto& art = small_artifacts();
  const auto cyc = cycles::make_cycle("step_ramp", 1);
  const auto scen = control::make_scenario(control::ScenarioName::Baseline);
  const auto r = run_scenario(cyc, scen, control::PipelineConfig{}, art, 0.0);
  ASSERT_EQ(r.telemetry.size(), cyc.samples.size());
  EXPECT_EQ(r.metrics.active_steps, cyc.samples.size() - cyc.warmup_steps());
  for (std::size_t k = 0; k < r.telemetry.size(); ++k) {
    const auto& row = r.telemetry[k];
    EXPECT_EQ(row.fuel_adjusted, cyc.samples[k].fuel_rate);
    EXPECT_EQ(row.engine_speed, cyc.samples[k].engine_speed);
    EXPECT_EQ(row.pim_adjusted, row.pim_target);
  }
  EXPECT_TRUE(std::isfinite(r.metrics.cumulative_nox));
}

TEST(ClosedLoop, EmpcRunKeepsFuelBandAndIsDeterministic) {
  const auto& art = small_artifacts();
  const auto cyc = cycles::make_cycle("step_ramp", 1);
  ScenarioSettings s;
  s.scenarios = {control::ScenarioName::EmpcD};
  const auto a = run_sweep(cyc, s, art);
  const auto b = run_sweep(cyc, s, art);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].metrics.fuel_bound_violations, 0u);
  EXPECT_GT(a[0].metrics.soot_max, 0.0);
  EXPECT_EQ(control::telemetry_csv(a[0].telemetry), control::telemetry_csv(b[0].telemetry));
  for (const auto& row : a[0].telemetry) EXPECT_GE(row.slack, 0.0);
}

TEST(Report, StoredRunsRoundTripAndRender) {
  const auto& art = small_artifacts();
  const auto cyc = cycles::make_cycle("step_ramp", 3);
  ScenarioSettings s;
  s.scenarios = {control::ScenarioName::Baseline, control::ScenarioName::EmpcC};
  std::vector<report::StoredRun> runs;
  for (const auto& r : run_sweep(cyc, s, art)) runs.push_back({r, 3, cyc.dt});
  const auto dir = std::filesystem::temp_directory_path() / "empc_report_test";
  std::filesystem::remove_all(dir);
  std::vector<report::StoredRun> loaded;
  for (const auto& r : runs) {
    const auto d = dir / "runs" / control::to_string(r.run.scenario.name);
    report::save_run(d, r);
    loaded.push_back(report::load_run(d));
  }
  const auto csv = report::metrics_csv(runs);
  EXPECT_EQ(report::metrics_csv(loaded), csv);
  EXPECT_EQ(control::telemetry_csv(loaded[1].run.telemetry), control::telemetry_csv(runs[1].run.telemetry));

  // Seed line, header, one row per run; baseline deltas are all zero.
  std::istringstream in(csv);
  std::string l1, l2, l3, l4, extra;
  std::getline(in, l1), std::getline(in, l2), std::getline(in, l3), std::getline(in, l4);
  EXPECT_EQ(l1, "# seed=3");
  EXPECT_EQ(l2.rfind("cycle,scenario,", 0), 0u);
  EXPECT_NE(l3.find("step_ramp,baseline,"), std::string::npos);
  EXPECT_NE(l3.find(",0.000%,0.000%,0.000%,0.000%,"), std::string::npos);
  EXPECT_NE(l4.find("step_ramp,EMPC-C,"), std::string::npos);
  EXPECT_FALSE(std::getline(in, extra) && !extra.empty());

  const auto files = report::render_report(loaded, dir / "report");
  bool soot_plot = false;
  for (const auto& f : files) {
    const auto text = read_text_file(f);
    if (f.extension() == ".svg") EXPECT_TRUE(well_formed_xml(text)) << f;
    if (f.filename() == "step_ramp_soot.svg") {
      soot_plot = true;
      EXPECT_NE(text.find("Soot_max"), std::string::npos);
    }
    if (f.filename() == "step_ramp_baseline_targets.svg") EXPECT_EQ(text.find("Soot_max"), std::string::npos);
    if (f.filename() == "step_ramp_EMPC-C_targets.svg") EXPECT_NE(text.find("Soot_max"), std::string::npos);
    if (f.filename() == "report.md") EXPECT_TRUE(text.find("↓") != std::string::npos || text.find("↑") != std::string::npos);
  }
  EXPECT_TRUE(soot_plot);
}

TEST(Report, TelemetryParserRejectsBadInput) {
  EXPECT_THROW(report::parse_telemetry_csv("# seed=1\n"), ConfigError);
  EXPECT_THROW(report::parse_telemetry_csv("a,b\n1,2\n"), ConfigError);
  auto csv = control::telemetry_csv({control::TelemetryRow{}});
  csv.replace(csv.rfind("0,0,0"), 1, "x");
  EXPECT_THROW(report::parse_telemetry_csv(csv), ConfigError);
}

TEST(Report, SvgChartIsWellFormed) {
  report::Panel p{"y <unit>", {{"a & b", {0, 1, 2}, {1, 4, 9}, "#000", false}}, {{"limit", 5.0}}};
  const auto svg = report::svg_chart("t \"q\"", {p, p});
  EXPECT_TRUE(well_formed_xml(svg));
  EXPECT_NE(svg.find("a &amp; b"), std::string::npos);
  EXPECT_THROW(report::svg_chart("x", {}), ConfigError);
}
