#include "empc/workflow.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <functional>
#include <iostream>
#include <set>
#include <tuple>

namespace fs = std::filesystem;
using namespace empc;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  fs::path out = "out";
  fs::path plant;
};

void log_line(const std::string& s) { std::cerr << s << '\n'; }

/// --plant when given, else the copy written by generate-data.
fs::path plant_path(const Globals& g, const workflow::Layout& L) { return g.plant.empty() ? L.plant() : g.plant; }

plant::PlantParams load_plant(const Globals& g, const workflow::Layout& L) {
  return plant::load_params(plant_path(g, L));
}

/// Run directories below each argument (a run directory itself or any parent).
std::vector<fs::path> find_runs(const std::vector<fs::path>& roots) {
  std::set<fs::path> found;
  for (const auto& r : roots) {
    if (!fs::exists(r)) throw ArtifactError("no such directory: " + r.string());
    if (fs::is_regular_file(r / "run.json")) found.insert(r);
    if (!fs::is_directory(r)) continue;
    for (const auto& e : fs::recursive_directory_iterator(r))
      if (e.is_regular_file() && e.path().filename() == "run.json") found.insert(e.path().parent_path());
  }
  if (found.empty()) throw ArtifactError("no run.json found under the given directories");
  return {found.begin(), found.end()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Emissions-aware MPC lab: data, NN, LPV identification, closed-loop scenarios"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Root seed for every random stream")->capture_default_str();
  app.add_option("--out", g.out, "Artifact directory")->capture_default_str();
  app.add_option("--plant", g.plant, "Plant parameter JSON (default: <out>/plant.json, or the reference plant)");

  std::function<void()> action;

  auto* gen = app.add_subcommand("generate-data", "Synthetic steady-state and transient datasets");
  data::GenerationConfig gen_cfg;
  gen->add_option("--steady", gen_cfg.steady_points, "Steady-state points")->capture_default_str();
  gen->add_option("--transient", gen_cfg.transient_steps, "Transient samples")->capture_default_str();
  gen->callback([&] {
    action = [&] {
      const workflow::Layout L{g.out};
      const auto p = g.plant.empty() ? plant::reference_params() : plant::load_params(g.plant);
      const auto s = workflow::generate_data(L, p, g.seed, gen_cfg);
      std::cout << "steady " << s.steady << " transient " << s.transient << " -> " << (g.out / "data").string() << '\n';
    };
  });

  auto* prep = app.add_subcommand("prepare-data", "Input selection, outlier removal, balancing and split");
  data::PrepareConfig prep_cfg;
  prep->add_option("--xcov-threshold", prep_cfg.xcov_threshold, "Minimum |normalized cross-covariance|")
      ->capture_default_str();
  prep->add_option("--quantile", prep_cfg.quantile, "Steady-state distance quantile for the outlier radius")
      ->capture_default_str();
  prep->add_option("--copies", prep_cfg.copies, "Steady-state duplication factor")->capture_default_str();
  prep->callback([&] {
    action = [&] {
      const auto r = workflow::prepare_data(workflow::Layout{g.out}, g.seed, prep_cfg);
      std::cout << "inputs " << r.input_names.size() << " outliers " << r.outliers_removed << " train "
                << r.split.train.size() << " validation " << r.split.validation.size() << " test "
                << r.split.test.size() << '\n';
    };
  });

  auto* train = app.add_subcommand("train-nn", "Train the emissions network");
  fs::path train_cfg;
  train->add_option("--config", train_cfg, "Training JSON (default: built-in reference width)");
  train->callback([&] {
    action = [&] {
      const auto opt = train_cfg.empty() ? nn::TrainOptions{} : nn::train_options_from_json(read_text_file(train_cfg));
      const auto r = workflow::train_nn(workflow::Layout{g.out}, g.seed, opt, log_line);
      std::cout << "best epoch " << r.report.best_epoch << " val " << format_double(r.report.best_val_loss)
                << " test transient NOx " << format_double(r.test.transient.nox_mae) << " Soot "
                << format_double(r.test.transient.soot_mae) << '\n';
    };
  });

  auto* ident = app.add_subcommand("identify-lpv", "Identify the LPV grid and validate it");
  fs::path grid_cfg;
  ident->add_option("--config", grid_cfg, "Grid JSON (default: built-in grid)");
  ident->callback([&] {
    action = [&] {
      const workflow::Layout L{g.out};
      const auto cfg = grid_cfg.empty() ? lpv::GridConfig{} : lpv::grid_config_from_json(read_text_file(grid_cfg));
      const auto s = workflow::identify_lpv(L, load_plant(g, L), g.seed, cfg, log_line);
      std::cout << "nodes " << s.result.equilibria.size() << " above gate: emissions "
                << s.result.rejected_emission_nodes().size() << " airpath "
                << s.result.rejected_airpath_nodes().size() << '\n'
                << "validation (whtc_like, " << s.validation_steps << " steps): NOx MAE "
                << format_double(s.validation.nox_mae) << " Soot MAE " << format_double(s.validation.soot_mae)
                << " (unclipped " << format_double(s.validation.nox_mae_raw) << " / "
                << format_double(s.validation.soot_mae_raw) << ")\n";
    };
  });

  auto* sim = app.add_subcommand("simulate", "Closed-loop scenario runs on one cycle");
  std::string cycle = "whtc_like", scenario = "all";
  fs::path scen_cfg, dump_dir;
  sim->add_option("--cycle", cycle, "step_ramp | ftp_like | whtc_like")->capture_default_str();
  sim->add_option("--scenario", scenario, "baseline | EMPC-A..EMPC-D | all")->capture_default_str();
  sim->add_option("--scenarios", scen_cfg, "Scenario tuning JSON (default: built-in)");
  sim->add_option("--dump-qp-on-error", dump_dir, "Directory for failed QP dumps (default: <out>/qp_dumps)");
  sim->callback([&] {
    action = [&] {
      const workflow::Layout L{g.out};
      auto settings = scen_cfg.empty() ? harness::ScenarioSettings{}
                                       : harness::scenario_settings_from_json(read_text_file(scen_cfg));
      if (scenario != "all") settings.scenarios = {control::scenario_from_string(scenario)};
      settings.pipeline.dump_dir = dump_dir.empty() ? g.out / "qp_dumps" : dump_dir;
      const auto runs = workflow::simulate(L, plant_path(g, L), cycle, g.seed, settings, log_line);
      std::cout << report::metrics_csv(runs);
      for (const auto& r : runs)
        if (r.run.empc_fallbacks + r.run.airpath_fallbacks > 0)
          std::cerr << "warning: " << control::to_string(r.run.scenario.name) << " had " << r.run.empc_fallbacks
                    << " EMPC and " << r.run.airpath_fallbacks << " airpath QP fallbacks\n";
    };
  });

  auto* rep = app.add_subcommand("report", "Metrics CSV, comparison table and SVG plots from stored runs");
  std::vector<fs::path> dirs;
  rep->add_option("dirs", dirs, "Run directories (searched recursively)")->required();
  rep->callback([&] {
    action = [&] {
      std::vector<report::StoredRun> runs;
      for (const auto& d : find_runs(dirs)) runs.push_back(report::load_run(d));
      std::stable_sort(runs.begin(), runs.end(), [](const report::StoredRun& a, const report::StoredRun& b) {
        return std::tie(a.run.cycle, a.run.scenario.name) < std::tie(b.run.cycle, b.run.scenario.name);
      });
      for (const auto& p : report::render_report(runs, g.out / "report")) std::cout << p.string() << '\n';
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitBadConfig;
  }
  try {
    action();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitBadConfig;
  } catch (const ArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return kExitMissingArtifact;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}
