#include "empc/report.hpp"

#include "json_util.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

namespace empc::report {

using detail::json;

namespace {

json metrics_json(const harness::MetricsReport& m) {
  return {{"cumulative_nox", m.cumulative_nox},
          {"peak_nox", m.peak_nox},
          {"average_soot", m.average_soot},
          {"peak_soot", m.peak_soot},
          {"active_steps", m.active_steps},
          {"soot_max", m.soot_max},
          {"soot_violation_fraction", m.soot_violation_fraction},
          {"max_soot_excess", m.max_soot_excess},
          {"max_predicted_slack", m.max_predicted_slack},
          {"fuel_bound_violations", m.fuel_bound_violations}};
}

harness::MetricsReport metrics_from(const json& j) {
  harness::MetricsReport m;
  m.cumulative_nox = j.at("cumulative_nox").get<double>();
  m.peak_nox = j.at("peak_nox").get<double>();
  m.average_soot = j.at("average_soot").get<double>();
  m.peak_soot = j.at("peak_soot").get<double>();
  m.active_steps = j.at("active_steps").get<std::size_t>();
  m.soot_max = j.at("soot_max").get<double>();
  m.soot_violation_fraction = j.at("soot_violation_fraction").get<double>();
  m.max_soot_excess = j.at("max_soot_excess").get<double>();
  m.max_predicted_slack = j.at("max_predicted_slack").get<double>();
  m.fuel_bound_violations = j.at("fuel_bound_violations").get<std::size_t>();
  return m;
}

double parse_number(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("telemetry line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

/// 1-2-5 step giving roughly `n` ticks over [lo, hi].
double nice_step(double lo, double hi, int n) {
  const double raw = (hi - lo) / std::max(1, n);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (raw <= m * mag) return m * mag;
  return 10.0 * mag;
}

const harness::MetricsReport* baseline_for(const std::vector<StoredRun>& runs, const std::string& cycle) {
  for (const auto& r : runs)
    if (r.run.cycle == cycle && r.run.scenario.name == control::ScenarioName::Baseline) return &r.run.metrics;
  return nullptr;
}

std::vector<std::string> cycles_in_order(const std::vector<StoredRun>& runs) {
  std::vector<std::string> out;
  for (const auto& r : runs)
    if (std::find(out.begin(), out.end(), r.run.cycle) == out.end()) out.push_back(r.run.cycle);
  return out;
}

std::string seed_line(const std::vector<StoredRun>& runs) {
  std::set<std::uint64_t> seeds;
  for (const auto& r : runs) seeds.insert(r.seed);
  std::string s = "# seed=";
  bool first = true;
  for (auto v : seeds) {
    s += (first ? "" : ";") + std::to_string(v);
    first = false;
  }
  return s;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string scenario_color(control::ScenarioName n) {
  return kPalette[static_cast<int>(n) % 6];
}

}  // namespace

void save_run(const std::filesystem::path& dir, const StoredRun& r) {
  const auto& run = r.run;
  json warnings = run.warnings;
  const json j = {{"format", "empc-run"},
                  {"seed", r.seed},
                  {"cycle", run.cycle},
                  {"scenario", control::to_string(run.scenario.name)},
                  {"dt", r.dt},
                  {"warmup_steps", run.warmup_steps},
                  {"metrics", metrics_json(run.metrics)},
                  {"empc_fallbacks", run.empc_fallbacks},
                  {"airpath_fallbacks", run.airpath_fallbacks},
                  {"warnings", warnings}};
  write_text_file(dir / "run.json", j.dump(2) + "\n");
  write_text_file(dir / "telemetry.csv", "# seed=" + std::to_string(r.seed) + "\n" + control::telemetry_csv(run.telemetry));
}

StoredRun load_run(const std::filesystem::path& dir) {
  const auto meta = dir / "run.json", tel = dir / "telemetry.csv";
  std::string missing;
  for (const auto& p : {meta, tel})
    if (!std::filesystem::is_regular_file(p)) missing += (missing.empty() ? "" : ", ") + p.string();
  if (!missing.empty()) throw ArtifactError("missing run files: " + missing);
  StoredRun r;
  try {
    const json j = json::parse(read_text_file(meta));
    if (j.at("format").get<std::string>() != "empc-run") throw ConfigError(meta.string() + ": not a run record");
    r.seed = j.at("seed").get<std::uint64_t>();
    r.dt = j.at("dt").get<double>();
    r.run.cycle = j.at("cycle").get<std::string>();
    r.run.scenario = control::make_scenario(control::scenario_from_string(j.at("scenario").get<std::string>()));
    r.run.warmup_steps = j.at("warmup_steps").get<std::size_t>();
    r.run.metrics = metrics_from(j.at("metrics"));
    r.run.empc_fallbacks = j.at("empc_fallbacks").get<long long>();
    r.run.airpath_fallbacks = j.at("airpath_fallbacks").get<long long>();
    r.run.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ConfigError(meta.string() + ": " + e.what());
  }
  r.run.telemetry = parse_telemetry_csv(read_text_file(tel));
  return r;
}

std::vector<control::TelemetryRow> parse_telemetry_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<control::TelemetryRow> rows;
  bool header = false;
  std::size_t n = 0;
  const auto& cols = control::telemetry_columns();
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != cols.size()) throw ConfigError("telemetry line " + std::to_string(n) + ": wrong column count");
    if (!header) {
      if (f != cols) throw ConfigError("telemetry: unexpected header");
      header = true;
      continue;
    }
    std::vector<double> v(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) v[i] = parse_number(f[i], n);
    control::TelemetryRow r;
    double* dst[] = {&r.t,   &r.engine_speed, &r.fuel_target, &r.fuel_adjusted, &r.pim_target, &r.chi_target,
                     &r.pim_adjusted, &r.chi_adjusted, &r.pim, &r.chi, &r.egr_ff, &r.vgt_ff, &r.egr, &r.vgt,
                     &r.nox, &r.soot, &r.slack};
    for (std::size_t i = 0; i < std::size(dst); ++i) *dst[i] = v[i];
    r.empc_solved = static_cast<int>(v[17]);
    r.empc_fallback = static_cast<int>(v[18]);
    r.airpath_fallback = static_cast<int>(v[19]);
    rows.push_back(r);
  }
  if (!header) throw ConfigError("telemetry: missing header");
  return rows;
}

std::string metrics_csv(const std::vector<StoredRun>& runs) {
  std::ostringstream o;
  o << seed_line(runs) << '\n'
    << "cycle,scenario,cumulative_nox,peak_nox,average_soot,peak_soot,d_cumulative_nox,d_peak_nox,d_average_soot,"
       "d_peak_soot,soot_max,soot_violation_fraction,max_soot_excess,fuel_bound_violations,empc_fallbacks,"
       "airpath_fallbacks\n";
  for (const auto& r : runs) {
    const auto& m = r.run.metrics;
    o << r.run.cycle << ',' << control::to_string(r.run.scenario.name) << ',' << format_double(m.cumulative_nox) << ','
      << format_double(m.peak_nox) << ',' << format_double(m.average_soot) << ',' << format_double(m.peak_soot);
    const auto* b = baseline_for(runs, r.run.cycle);
    if (b) {
      o << ',' << harness::signed_percent(harness::percent_delta(m.cumulative_nox, b->cumulative_nox)) << ','
        << harness::signed_percent(harness::percent_delta(m.peak_nox, b->peak_nox)) << ','
        << harness::signed_percent(harness::percent_delta(m.average_soot, b->average_soot)) << ','
        << harness::signed_percent(harness::percent_delta(m.peak_soot, b->peak_soot));
    } else {
      o << ",,,,";
    }
    o << ',' << format_double(m.soot_max) << ',' << format_double(m.soot_violation_fraction) << ','
      << format_double(m.max_soot_excess) << ',' << m.fuel_bound_violations << ',' << r.run.empc_fallbacks << ','
      << r.run.airpath_fallbacks << '\n';
  }
  return o.str();
}

std::string comparison_table(const std::vector<StoredRun>& runs) {
  std::ostringstream o;
  o << "Root seed: " << seed_line(runs).substr(7) << "\n\n";
  for (const auto& cyc : cycles_in_order(runs)) {
    const auto* b = baseline_for(runs, cyc);
    o << "## " << cyc << "\n\n"
      << "| Scenario | Cumulative NOx [ppm s] | Peak NOx [ppm] | Average Soot [%] | Peak Soot [%] | Soot_max [%] | "
         "Steps over Soot_max |\n"
      << "|---|---|---|---|---|---|---|\n";
    for (const auto& r : runs) {
      if (r.run.cycle != cyc) continue;
      const auto& m = r.run.metrics;
      auto cell = [&](double v, double base) {
        std::string s = fmt(v, "%.6g");
        if (b && r.run.scenario.name != control::ScenarioName::Baseline)
          s += " (" + harness::arrow_percent(harness::percent_delta(v, base)) + ")";
        return s;
      };
      o << "| " << control::to_string(r.run.scenario.name) << " | " << cell(m.cumulative_nox, b ? b->cumulative_nox : 0)
        << " | " << cell(m.peak_nox, b ? b->peak_nox : 0) << " | " << cell(m.average_soot, b ? b->average_soot : 0)
        << " | " << cell(m.peak_soot, b ? b->peak_soot : 0) << " | "
        << (m.soot_max > 0.0 ? fmt(m.soot_max, "%.4g") : std::string("-")) << " | "
        << (m.soot_max > 0.0 ? fmt(100.0 * m.soot_violation_fraction, "%.2f") + "%" : std::string("-")) << " |\n";
    }
    if (!b) o << "\nNo baseline run for this cycle; deltas omitted.\n";
    o << '\n';
  }
  return o.str();
}

std::string svg_chart(const std::string& title, const std::vector<Panel>& panels) {
  if (panels.empty()) throw ConfigError("svg_chart: no panels");
  const double W = 900, left = 80, right = 170, top = 40, ph = 200, gap = 50;
  const double pw = W - left - right;
  const double H = top + static_cast<double>(panels.size()) * (ph + gap) + 10;
  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
    << "</text>\n";

  double t0 = INFINITY, t1 = -INFINITY;
  for (const auto& p : panels)
    for (const auto& s : p.series)
      for (double t : s.t) t0 = std::min(t0, t), t1 = std::max(t1, t);
  if (!(t1 > t0)) t0 = 0.0, t1 = 1.0;

  for (std::size_t pi = 0; pi < panels.size(); ++pi) {
    const auto& p = panels[pi];
    const double y0 = top + static_cast<double>(pi) * (ph + gap);
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& s : p.series)
      for (double v : s.y)
        if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
    for (const auto& h : p.hlines) lo = std::min(lo, h.second), hi = std::max(hi, h.second);
    if (!(hi > lo)) {
      const double c = std::isfinite(lo) ? lo : 0.0;
      lo = c - 1.0, hi = c + 1.0;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad, hi += pad;
    auto X = [&](double t) { return left + (t - t0) / (t1 - t0) * pw; };
    auto Y = [&](double v) { return y0 + ph - (v - lo) / (hi - lo) * ph; };

    o << "<g>\n<rect x=\"" << left << "\" y=\"" << y0 << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
    const double ys = nice_step(lo, hi, 5);
    for (double k = std::ceil(lo / ys); k * ys <= hi; k += 1.0) {
      const double v = k == 0.0 ? 0.0 : k * ys;
      o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << fmt(Y(v)) << "\" y2=\"" << fmt(Y(v))
        << "\" stroke=\"#ddd\"/>\n<text x=\"" << left - 6 << "\" y=\"" << fmt(Y(v) + 4)
        << "\" text-anchor=\"end\">" << fmt(v, "%.4g") << "</text>\n";
    }
    const double ts = nice_step(t0, t1, 8);
    for (double k = std::ceil(t0 / ts); k * ts <= t1; k += 1.0) {
      const double t = k == 0.0 ? 0.0 : k * ts;
      o << "<text x=\"" << fmt(X(t)) << "\" y=\"" << y0 + ph + 15 << "\" text-anchor=\"middle\">" << fmt(t, "%.4g")
        << "</text>\n";
    }
    o << "<text x=\"18\" y=\"" << y0 + ph / 2 << "\" transform=\"rotate(-90 18 " << y0 + ph / 2
      << ")\" text-anchor=\"middle\">" << xml_escape(p.y_label) << "</text>\n";
    if (pi + 1 == panels.size())
      o << "<text x=\"" << left + pw / 2 << "\" y=\"" << y0 + ph + 32 << "\" text-anchor=\"middle\">time [s]</text>\n";

    double ly = y0 + 12;
    for (const auto& s : p.series) {
      if (s.t.size() != s.y.size()) throw ConfigError("svg_chart: series '" + s.label + "' has mismatched lengths");
      o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.2\""
        << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
      for (std::size_t i = 0; i < s.t.size(); ++i)
        if (std::isfinite(s.y[i])) o << fmt(X(s.t[i]), "%.2f") << ',' << fmt(Y(s.y[i]), "%.2f") << ' ';
      o << "\"/>\n<line x1=\"" << left + pw + 10 << "\" x2=\"" << left + pw + 30 << "\" y1=\"" << ly << "\" y2=\""
        << ly << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"5,3\"" : "")
        << "/>\n<text x=\"" << left + pw + 35 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.label) << "</text>\n";
      ly += 16;
    }
    for (const auto& h : p.hlines) {
      o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << fmt(Y(h.second)) << "\" y2=\""
        << fmt(Y(h.second)) << "\" stroke=\"black\" stroke-dasharray=\"2,2\"/>\n<text x=\"" << left + pw + 35
        << "\" y=\"" << ly + 4 << "\">" << xml_escape(h.first) << "</text>\n<line x1=\"" << left + pw + 10
        << "\" x2=\"" << left + pw + 30 << "\" y1=\"" << ly << "\" y2=\"" << ly
        << "\" stroke=\"black\" stroke-dasharray=\"2,2\"/>\n";
      ly += 16;
    }
    o << "</g>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::vector<std::filesystem::path> render_report(const std::vector<StoredRun>& runs,
                                                 const std::filesystem::path& out_dir) {
  if (runs.empty()) throw ConfigError("report: no runs");
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    const auto p = out_dir / name;
    write_text_file(p, text);
    written.push_back(p);
  };
  emit("metrics.csv", metrics_csv(runs));
  emit("report.md", "# Scenario comparison\n\n" + comparison_table(runs));

  auto column = [](const StoredRun& r, auto field) {
    std::vector<double> v;
    v.reserve(r.run.telemetry.size());
    for (const auto& row : r.run.telemetry) v.push_back(row.*field);
    return v;
  };
  // Time axis relative to the end of the warmup, which is hidden.
  auto active = [](const StoredRun& r, std::vector<double> v) {
    v.erase(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(std::min(r.run.warmup_steps, v.size())));
    return v;
  };
  auto times = [&](const StoredRun& r) {
    auto t = active(r, column(r, &control::TelemetryRow::t));
    const double off = t.empty() ? 0.0 : t.front();
    for (auto& x : t) x -= off;
    return t;
  };

  for (const auto& cyc : cycles_in_order(runs)) {
    Panel nox{"NOx [ppm]", {}, {}}, soot{"Soot [%]", {}, {}};
    std::set<double> limits;
    for (const auto& r : runs) {
      if (r.run.cycle != cyc) continue;
      const std::string label = control::to_string(r.run.scenario.name);
      const auto col = scenario_color(r.run.scenario.name);
      const auto t = times(r);
      nox.series.push_back({label, t, active(r, column(r, &control::TelemetryRow::nox)), col, false});
      soot.series.push_back({label, t, active(r, column(r, &control::TelemetryRow::soot)), col, false});
      if (r.run.scenario.soot_limit && r.run.metrics.soot_max > 0.0) limits.insert(r.run.metrics.soot_max);
    }
    for (double l : limits) soot.hlines.push_back({"Soot_max", l});
    emit(cyc + "_nox.svg", svg_chart(cyc + ": NOx", {nox}));
    emit(cyc + "_soot.svg", svg_chart(cyc + ": Soot", {soot}));

    for (const auto& r : runs) {
      if (r.run.cycle != cyc) continue;
      const auto t = times(r);
      using R = control::TelemetryRow;
      Panel pim{"p_im [kPa]",
                {{"target (LUT)", t, active(r, column(r, &R::pim_target)), "#7f7f7f", true},
                 {"adjusted", t, active(r, column(r, &R::pim_adjusted)), "#d62728", true},
                 {"actual", t, active(r, column(r, &R::pim)), "#1f77b4", false}},
                {}};
      Panel chi{"EGR rate [-]",
                {{"target (LUT)", t, active(r, column(r, &R::chi_target)), "#7f7f7f", true},
                 {"adjusted", t, active(r, column(r, &R::chi_adjusted)), "#d62728", true},
                 {"actual", t, active(r, column(r, &R::chi)), "#1f77b4", false}},
                {}};
      Panel fuel{"fuel [mm^3/st]",
                 {{"demand", t, active(r, column(r, &R::fuel_target)), "#7f7f7f", true},
                  {"adjusted", t, active(r, column(r, &R::fuel_adjusted)), "#d62728", false}},
                 {}};
      Panel soot_one{"Soot [%]", {{"soot", t, active(r, column(r, &R::soot)), "#1f77b4", false}}, {}};
      std::vector<Panel> panels{pim, chi, fuel};
      if (r.run.scenario.soot_limit && r.run.metrics.soot_max > 0.0) {
        soot_one.hlines.push_back({"Soot_max", r.run.metrics.soot_max});
        panels.push_back(soot_one);
      }
      const std::string name = control::to_string(r.run.scenario.name);
      emit(cyc + "_" + name + "_targets.svg", svg_chart(cyc + " " + name + ": targets vs actual", panels));
    }
  }
  return written;
}

}  // namespace empc::report
