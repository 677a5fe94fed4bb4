#include "empc/workflow.hpp"

#include "json_util.hpp"

#include <sstream>

namespace empc::workflow {

using detail::json;

namespace {

void say(const Log& log, const std::string& s) {
  if (log) log(s);
}

json fit_json(const lpv::FitReport& f) {
  return {{"one_step_rmse", f.one_step_rmse},
          {"rollout_error", f.rollout_error},
          {"rollout_error_initial", f.rollout_error_initial},
          {"spectral_radius_raw", f.spectral_radius_raw},
          {"projected", f.projected},
          {"accepted", f.accepted},
          {"constant_states", f.constant_states}};
}

json errors_json(const nn::EmissionErrors& e) {
  return {{"nox_mae", e.nox_mae}, {"soot_mae", e.soot_mae}, {"count", e.count}};
}

}  // namespace

DataSummary generate_data(const Layout& out, const plant::PlantParams& plant, std::uint64_t seed,
                          data::GenerationConfig cfg) {
  cfg.seed = seed;
  write_text_file(out.plant(), plant::params_to_json(plant));
  const auto steady = data::generate_steady(cfg, plant);
  const auto transient = data::generate_transient(cfg, plant);
  const auto names = data::candidate_names();
  data::write_samples_csv(out.steady_csv(), steady, names);
  data::write_samples_csv(out.transient_csv(), transient, names);
  json side = json::parse(data::sidecar_json(names));
  side["seed"] = seed;
  side["steady_samples"] = steady.size();
  side["transient_samples"] = transient.size();
  write_text_file(out.dataset_json(), side.dump(2) + "\n");
  return {steady.size(), transient.size()};
}

data::PreparedData prepare_data(const Layout& out, std::uint64_t seed, data::PrepareConfig cfg) {
  cfg.seed = seed;
  std::vector<std::string> names, names_t;
  const auto steady = data::read_samples_csv(out.steady_csv(), &names);
  const auto transient = data::read_samples_csv(out.transient_csv(), &names_t);
  if (names != names_t) throw ConfigError("prepare-data: steady and transient datasets have different columns");
  auto prep = data::prepare(steady, transient, names, cfg);
  data::write_samples_csv(out.split_csv("train"), prep.split.train, prep.input_names);
  data::write_samples_csv(out.split_csv("validation"), prep.split.validation, prep.input_names);
  data::write_samples_csv(out.split_csv("test"), prep.split.test, prep.input_names);
  json stats = json::parse(data::stats_to_json(prep.stats, prep.epsilon, prep.input_names));
  stats["seed"] = seed;
  stats["outliers_removed"] = prep.outliers_removed;
  stats["train"] = prep.split.train.size();
  stats["validation"] = prep.split.validation.size();
  stats["test"] = prep.split.test.size();
  write_text_file(out.stats_json(), stats.dump(2) + "\n");
  return prep;
}

nn::TrainOutcome train_nn(const Layout& out, std::uint64_t seed, nn::TrainOptions options, const Log& log) {
  options.init_seed = seed;
  options.config.seed = seed;
  data::SplitDataset split;
  std::vector<std::string> names, nv, nt;
  split.train = data::read_samples_csv(out.split_csv("train"), &names);
  split.validation = data::read_samples_csv(out.split_csv("validation"), &nv);
  split.test = data::read_samples_csv(out.split_csv("test"), &nt);
  if (names != nv || names != nt) throw ConfigError("train-nn: partitions have different columns");
  const int every = std::max(1, options.config.epochs / 20);
  auto outcome = nn::train_emissions_model(split, names, options, [&](int e, double tr, double va) {
    if (e % every == 0) say(log, "epoch " + std::to_string(e) + " train " + format_double(tr) + " val " + format_double(va));
  });
  nn::save_model(out.model(), outcome.model);

  const auto& r = outcome.report;
  std::ostringstream csv;
  csv << "# seed=" << seed << "\nepoch,learning_rate,train_loss,val_loss\n";
  for (std::size_t e = 0; e < r.train_loss.size(); ++e)
    csv << e << ',' << (e < r.learning_rate.size() ? format_double(r.learning_rate[e]) : std::string()) << ','
        << format_double(r.train_loss[e]) << ',' << format_double(r.val_loss[e]) << '\n';
  write_text_file(out.training_log(), csv.str());
  const json j = {{"seed", seed},
                  {"sizes", outcome.model.net.sizes()},
                  {"parameters", nn::parameter_count(outcome.model.net)},
                  {"best_epoch", r.best_epoch},
                  {"best_val_loss", r.best_val_loss},
                  {"initial_val_loss", r.val_loss.empty() ? 0.0 : r.val_loss.front()},
                  {"test_transient", errors_json(outcome.test.transient)},
                  {"test_steady", errors_json(outcome.test.steady)}};
  write_text_file(out.training_json(), j.dump(2) + "\n");
  return outcome;
}

IdentifySummary identify_lpv(const Layout& out, const plant::PlantParams& plant, std::uint64_t seed,
                             lpv::GridConfig cfg, const Log& log) {
  cfg.perturbation.seed = seed;
  const auto model = nn::load_model(out.model());
  IdentifySummary s;
  s.result = lpv::identify_grid(cfg, plant, model, [&](std::size_t node, std::size_t total) {
    if ((node + 1) % 11 == 0 || node + 1 == total)
      say(log, "node " + std::to_string(node + 1) + "/" + std::to_string(total));
  });
  lpv::save_model(out.lpv_emissions(), s.result.emissions);
  lpv::save_model(out.lpv_airpath(), s.result.airpath);

  json nodes = json::array();
  for (std::size_t n = 0; n < s.result.equilibria.size(); ++n) {
    const auto& eq = s.result.equilibria[n];
    nodes.push_back({{"speed", eq.rho.engine_speed},
                     {"fuel", eq.rho.fuel_rate},
                     {"egr_valve", eq.v.egr_valve},
                     {"vgt_position", eq.v.vgt_position},
                     {"nox", eq.emissions[0]},
                     {"soot", eq.emissions[1]},
                     {"emissions_fit", fit_json(s.result.emission_fits[n])},
                     {"airpath_fit", fit_json(s.result.airpath_fits[n])}});
  }
  const json ident = {{"seed", seed},
                      {"gate", cfg.fit.gate},
                      {"rejected_emission_nodes", s.result.rejected_emission_nodes()},
                      {"rejected_airpath_nodes", s.result.rejected_airpath_nodes()},
                      {"nodes", nodes}};
  write_text_file(out.identification_json(), ident.dump(2) + "\n");

  const auto cyc = cycles::make_cycle("whtc_like", seed);
  const std::vector<plant::OperatingPoint> seg(cyc.samples.begin() + static_cast<std::ptrdiff_t>(cyc.warmup_steps()),
                                               cyc.samples.end());
  const auto trace = lpv::record_trace(seg, s.result.airpath, plant, model);
  s.validation = lpv::validate_lpv(s.result.emissions, trace);
  s.validation_steps = seg.size();
  const json val = {{"seed", seed},
                    {"cycle", "whtc_like"},
                    {"steps", seg.size()},
                    {"nox_mae", s.validation.nox_mae},
                    {"soot_mae", s.validation.soot_mae},
                    {"nox_mae_raw", s.validation.nox_mae_raw},
                    {"soot_mae_raw", s.validation.soot_mae_raw}};
  write_text_file(out.validation_json(), val.dump(2) + "\n");
  return s;
}

std::vector<report::StoredRun> simulate(const Layout& out, const std::filesystem::path& plant_json,
                                        const std::string& cycle, std::uint64_t seed,
                                        const harness::ScenarioSettings& settings, const Log& log) {
  const auto art = harness::load_artifacts(plant_json, out.model(), out.lpv_emissions(), out.lpv_airpath());
  const auto cyc = cycles::make_cycle(cycle, seed);
  harness::ScenarioSettings s = settings;
  if (std::find(s.scenarios.begin(), s.scenarios.end(), control::ScenarioName::Baseline) == s.scenarios.end())
    s.scenarios.insert(s.scenarios.begin(), control::ScenarioName::Baseline);
  say(log, "simulating " + cycle + " (" + std::to_string(s.scenarios.size()) + " scenarios)");
  const auto runs = harness::run_sweep(cyc, s, art);
  std::vector<report::StoredRun> stored;
  for (const auto& r : runs) {
    report::StoredRun sr{r, seed, cyc.dt};
    report::save_run(out.run_dir(cycle, control::to_string(r.scenario.name)), sr);
    say(log, std::string(control::to_string(r.scenario.name)) + ": cumulative NOx " +
                 format_double(r.metrics.cumulative_nox) + ", peak soot " + format_double(r.metrics.peak_soot));
    stored.push_back(std::move(sr));
  }
  return stored;
}

}  // namespace empc::workflow
