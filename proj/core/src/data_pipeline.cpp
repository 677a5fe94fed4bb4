#include "empc/data_pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace empc::data {

namespace {

using json = nlohmann::json;

constexpr double kPreInjectionLevel = 1.5;
constexpr double kPreInjectionJitter = 0.3;

double abs_xcov_or_zero(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || a.size() != b.size()) return 0.0;
  try {
    return std::abs(normalized_xcov(a, b));
  } catch (const ConfigError&) {
    return 0.0;
  }
}

Sample make_sample(const plant::PlantState& s, const plant::ActuatorInput& v, const plant::OperatingPoint& rho,
                   const plant::PlantParams& p, double pre_injection, SampleKind kind, double t) {
  const auto m = plant::measurement_vector(s, v, rho, p);
  Sample out;
  out.inputs.resize(plant::kNumMeasurements + 1);
  for (int i = 0; i < plant::kNumMeasurements; ++i) out.inputs(i) = m[static_cast<std::size_t>(i)];
  out.inputs(plant::kNumMeasurements) = pre_injection;
  out.targets.resize(2);
  out.targets << s.nox, s.soot;
  out.kind = kind;
  out.timestamp = t;
  return out;
}

const char* unit_of(const std::string& name) {
  static const std::pair<const char*, const char*> units[] = {
      {"injection_pressure", "MPa (synthetic proxy)"},
      {"main_injection_timing", "deg BTDC (synthetic proxy)"},
      {"main_fuel_rate", "mm^3/st"},
      {"engine_torque", "Nm (synthetic proxy)"},
      {"engine_speed", "rpm"},
      {"intake_pressure", "kPa"},
      {"exhaust_pressure", "kPa"},
      {"mass_air_flow", "g/s"},
      {"egr_position", "% open"},
      {"vgt_position", "% closed"},
      {"pre_injection_fuel_rate", "mm^3/st (synthetic proxy)"},
  };
  for (const auto& [n, u] : units)
    if (name == n) return u;
  return "unknown";
}

}  // namespace

const char* to_string(SampleKind kind) { return kind == SampleKind::SteadyState ? "steady_state" : "transient"; }

double normalized_xcov(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ConfigError("normalized_xcov: length mismatch");
  if (a.size() < 2) throw ConfigError("normalized_xcov: need at least two samples");
  const auto n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  const double scale_a = std::max(1.0, std::abs(ma));
  const double scale_b = std::max(1.0, std::abs(mb));
  if (saa <= 1e-24 * n * scale_a * scale_a || sbb <= 1e-24 * n * scale_b * scale_b)
    throw ConfigError("normalized_xcov: constant signal has zero variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<std::string> select_inputs(const std::vector<Candidate>& candidates, const TargetSeries& steady,
                                       const TargetSeries& transient, double threshold) {
  if (!(threshold > 0.0)) throw ConfigError("select_inputs: threshold must be positive");
  if (candidates.empty()) throw ConfigError("select_inputs: no candidates");
  std::vector<std::string> kept;
  for (const auto& c : candidates) {
    const double best = std::max({abs_xcov_or_zero(c.steady, steady.nox), abs_xcov_or_zero(c.steady, steady.soot),
                                  abs_xcov_or_zero(c.transient, transient.nox),
                                  abs_xcov_or_zero(c.transient, transient.soot)});
    if (best >= threshold) kept.push_back(c.name);
  }
  return kept;
}

DatasetStats compute_stats(const Samples& steady) {
  if (steady.empty()) throw ConfigError("compute_stats: no steady-state samples");
  const Eigen::Index d = steady.front().inputs.size();
  DatasetStats s;
  s.mean = Vec::Zero(d);
  for (const auto& x : steady) {
    if (x.inputs.size() != d) throw ConfigError("compute_stats: inconsistent input dimension");
    s.mean += x.inputs;
  }
  s.mean /= static_cast<double>(steady.size());
  s.cov = Mat::Zero(d, d);
  for (const auto& x : steady) {
    const Vec c = x.inputs - s.mean;
    s.cov.noalias() += c * c.transpose();
  }
  s.cov /= static_cast<double>(steady.size());
  return s;
}

MahalanobisMetric::MahalanobisMetric(const DatasetStats& stats) : mean_(stats.mean) {
  const Eigen::Index d = stats.cov.rows();
  if (d == 0 || stats.cov.cols() != d || stats.mean.size() != d)
    throw ConfigError("mahalanobis: inconsistent statistics");
  auto well_conditioned = [&]() {
    if (llt_.info() != Eigen::Success) return false;
    const Vec diag = llt_.matrixL().toDenseMatrix().diagonal();
    if (!diag.allFinite() || !(diag.minCoeff() > 0.0)) return false;
    const double ratio = diag.minCoeff() / diag.maxCoeff();
    return ratio * ratio > 1e-12;
  };
  llt_.compute(stats.cov);
  if (well_conditioned()) return;
  const double lambda = 1e-8 * stats.cov.trace() / static_cast<double>(d);
  llt_.compute(stats.cov + lambda * Mat::Identity(d, d));
  if (llt_.info() != Eigen::Success || !(lambda > 0.0))
    throw NumericalError("mahalanobis: covariance singular after regularization");
}

double MahalanobisMetric::operator()(const Vec& y) const {
  if (y.size() != mean_.size()) throw ConfigError("mahalanobis: dimension mismatch");
  const Vec z = llt_.matrixL().solve(y - mean_);
  return z.norm();
}

double mahalanobis(const Vec& y, const DatasetStats& stats) { return MahalanobisMetric(stats)(y); }

Samples filter_outliers(const Samples& samples, const DatasetStats& stats, double eps) {
  if (!(eps >= 0.0)) throw ConfigError("filter_outliers: eps must be nonnegative");
  const MahalanobisMetric metric(stats);
  Samples kept;
  kept.reserve(samples.size());
  for (const auto& s : samples)
    if (s.kind == SampleKind::SteadyState || metric(s.inputs) <= eps) kept.push_back(s);
  return kept;
}

double default_epsilon(const Samples& steady, const DatasetStats& stats, double quantile) {
  if (steady.empty()) throw ConfigError("default_epsilon: no steady samples");
  if (!(quantile > 0.0 && quantile <= 1.0)) throw ConfigError("default_epsilon: quantile must be in (0, 1]");
  const MahalanobisMetric metric(stats);
  std::vector<double> d;
  d.reserve(steady.size());
  for (const auto& s : steady) d.push_back(metric(s.inputs));
  std::sort(d.begin(), d.end());
  const auto rank = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(d.size())));
  return d[std::max<std::size_t>(rank, 1) - 1];
}

Samples balance(const Samples& steady, const Samples& transient, int copies) {
  if (copies < 0) throw ConfigError("balance: copies must be nonnegative");
  Samples out = transient;
  out.reserve(transient.size() + steady.size() * static_cast<std::size_t>(copies));
  for (int c = 0; c < copies; ++c) out.insert(out.end(), steady.begin(), steady.end());
  return out;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& r) {
  if (r.train < 0.0 || r.validation < 0.0 || r.test < 0.0 ||
      std::abs(r.train + r.validation + r.test - 1.0) > 1e-9)
    throw ConfigError("split: ratios must be nonnegative and sum to 1");
  // A small epsilon keeps e.g. 0.7 * 100 from flooring to 69.
  const auto a = static_cast<std::size_t>(std::floor(r.train * static_cast<double>(n) + 1e-9));
  const auto b = static_cast<std::size_t>(std::floor(r.validation * static_cast<double>(n) + 1e-9));
  return {a, b, n - a - b};
}

SplitDataset split(const Samples& samples, const SplitRatios& ratios, std::uint64_t seed) {
  if (samples.empty()) throw ConfigError("split: empty input");
  const auto sizes = split_sizes(samples.size(), ratios);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  SplitDataset out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Sample& s = samples[order[i]];
    if (i < sizes[0]) out.train.push_back(s);
    else if (i < sizes[0] + sizes[1]) out.validation.push_back(s);
    else out.test.push_back(s);
  }
  return out;
}

SplitDataset split_stratified(const Samples& steady, const Samples& transient, const SplitRatios& ratios,
                              std::uint64_t seed, int copies) {
  if (steady.empty() && transient.empty()) throw ConfigError("split: empty input");
  SplitDataset ss, tr;
  if (!steady.empty()) ss = split(steady, ratios, seed);
  if (!transient.empty()) tr = split(transient, ratios, seed + 1);
  SplitDataset out;
  out.train = balance(ss.train, tr.train, copies);
  out.validation = tr.validation;
  out.validation.insert(out.validation.end(), ss.validation.begin(), ss.validation.end());
  out.test = tr.test;
  out.test.insert(out.test.end(), ss.test.begin(), ss.test.end());
  return out;
}

std::vector<std::string> candidate_names() {
  std::vector<std::string> names;
  for (const char* n : plant::measurement_names()) names.emplace_back(n);
  names.emplace_back("pre_injection_fuel_rate");
  return names;
}

Samples generate_steady(const GenerationConfig& cfg, const plant::PlantParams& p) {
  if (cfg.steady_points < 0) throw ConfigError("generate_steady: negative point count");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> speed(p.idle_rpm, p.max_rpm), fuel(5.0, p.max_fuel), act(0.0, 100.0);
  Samples out;
  out.reserve(static_cast<std::size_t>(cfg.steady_points));
  for (int i = 0; i < cfg.steady_points; ++i) {
    const plant::OperatingPoint rho{speed(rng), fuel(rng)};
    const plant::ActuatorInput v{act(rng), act(rng)};
    const plant::PlantState s = plant::settle(v, rho, p);
    out.push_back(make_sample(s, v, rho, p, kPreInjectionLevel, SampleKind::SteadyState, 0.0));
  }
  return out;
}

Samples generate_transient(const GenerationConfig& cfg, const plant::PlantParams& p) {
  if (cfg.transient_steps < 0) throw ConfigError("generate_transient: negative step count");
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> speed(p.idle_rpm, p.max_rpm), fuel(5.0, p.max_fuel), act(0.0, 100.0);
  std::uniform_real_distribution<double> seg_len(2.0, 8.0), hold(0.5, 4.0);
  std::uniform_real_distribution<double> jitter(-kPreInjectionJitter, kPreInjectionJitter);

  plant::OperatingPoint from{speed(rng), fuel(rng)};
  plant::OperatingPoint to{speed(rng), fuel(rng)};
  int seg_steps = static_cast<int>(std::lround(seg_len(rng) / kBaseDt));
  int seg_k = 0;
  plant::ActuatorInput v{act(rng), act(rng)};
  int hold_steps = static_cast<int>(std::lround(hold(rng) / kBaseDt));
  int hold_k = 0;

  plant::PlantState s = plant::settle(v, from, p);
  Samples out;
  out.reserve(static_cast<std::size_t>(cfg.transient_steps));
  for (int k = 0; k < cfg.transient_steps; ++k) {
    const double a = std::min(1.0, static_cast<double>(seg_k) / std::max(seg_steps, 1));
    const plant::OperatingPoint rho{from.engine_speed + a * (to.engine_speed - from.engine_speed),
                                    from.fuel_rate + a * (to.fuel_rate - from.fuel_rate)};
    out.push_back(make_sample(s, v, rho, p, kPreInjectionLevel + jitter(rng), SampleKind::Transient, k * kBaseDt));
    s = plant::plant_step(s, v, rho, kBaseDt, p);
    if (++seg_k > seg_steps) {
      from = to;
      to = {speed(rng), fuel(rng)};
      seg_steps = static_cast<int>(std::lround(seg_len(rng) / kBaseDt));
      seg_k = 0;
    }
    if (++hold_k >= hold_steps) {
      v = {act(rng), act(rng)};
      hold_steps = static_cast<int>(std::lround(hold(rng) / kBaseDt));
      hold_k = 0;
    }
  }
  return out;
}

Samples select_columns(const Samples& samples, const std::vector<int>& columns) {
  Samples out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    Sample t = s;
    t.inputs.resize(static_cast<Eigen::Index>(columns.size()));
    for (std::size_t j = 0; j < columns.size(); ++j) {
      if (columns[j] < 0 || columns[j] >= s.inputs.size()) throw ConfigError("select_columns: index out of range");
      t.inputs(static_cast<Eigen::Index>(j)) = s.inputs(columns[j]);
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<int> column_indices(const std::vector<std::string>& all, const std::vector<std::string>& names) {
  std::vector<int> idx;
  for (const auto& n : names) {
    const auto it = std::find(all.begin(), all.end(), n);
    if (it == all.end()) throw ConfigError("unknown column " + n);
    idx.push_back(static_cast<int>(it - all.begin()));
  }
  return idx;
}

void write_samples_csv(const std::filesystem::path& path, const Samples& samples,
                       const std::vector<std::string>& input_names) {
  std::string text = "kind,timestamp";
  for (const auto& n : input_names) text += "," + n;
  text += ",nox,soot\n";
  for (const auto& s : samples) {
    if (s.inputs.size() != static_cast<Eigen::Index>(input_names.size()))
      throw ConfigError("write_samples_csv: input width does not match header");
    text += to_string(s.kind);
    text += ',' + format_double(s.timestamp);
    for (Eigen::Index i = 0; i < s.inputs.size(); ++i) text += ',' + format_double(s.inputs(i));
    text += ',' + format_double(s.targets(0)) + ',' + format_double(s.targets(1)) + '\n';
  }
  write_text_file(path, text);
}

Samples read_samples_csv(const std::filesystem::path& path, std::vector<std::string>* input_names) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset csv is empty: " + path.string());
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 4 || header[0] != "kind" || header[1] != "timestamp" || header[header.size() - 2] != "nox" ||
      header.back() != "soot")
    throw ConfigError("dataset csv has an unexpected header: " + path.string());
  const std::size_t n_in = header.size() - 4;
  if (input_names) input_names->assign(header.begin() + 2, header.end() - 2);
  Samples out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != header.size())
      throw ConfigError("dataset csv line " + std::to_string(line_no) + " has the wrong number of fields");
    Sample s;
    if (cells[0] == "steady_state") s.kind = SampleKind::SteadyState;
    else if (cells[0] == "transient") s.kind = SampleKind::Transient;
    else throw ConfigError("dataset csv line " + std::to_string(line_no) + ": unknown kind " + cells[0]);
    try {
      s.timestamp = std::stod(cells[1]);
      s.inputs.resize(static_cast<Eigen::Index>(n_in));
      for (std::size_t i = 0; i < n_in; ++i) s.inputs(static_cast<Eigen::Index>(i)) = std::stod(cells[2 + i]);
      s.targets.resize(2);
      s.targets << std::stod(cells[2 + n_in]), std::stod(cells[3 + n_in]);
    } catch (const std::exception&) {
      throw ConfigError("dataset csv line " + std::to_string(line_no) + ": malformed number");
    }
    if (!s.inputs.allFinite() || !s.targets.allFinite() || s.targets.minCoeff() < 0.0)
      throw ConfigError("dataset csv line " + std::to_string(line_no) + ": invalid values");
    out.push_back(std::move(s));
  }
  return out;
}

std::string sidecar_json(const std::vector<std::string>& input_names) {
  json cols = json::array();
  cols.push_back({{"name", "kind"}, {"unit", ""}, {"values", {"steady_state", "transient"}}});
  cols.push_back({{"name", "timestamp"}, {"unit", "s"}});
  for (const auto& n : input_names) cols.push_back({{"name", n}, {"unit", unit_of(n)}, {"role", "input"}});
  cols.push_back({{"name", "nox"}, {"unit", "ppm"}, {"role", "target"}});
  cols.push_back({{"name", "soot"}, {"unit", "% opacity"}, {"role", "target"}});
  json j;
  j["format"] = "empc-dataset";
  j["version"] = 1;
  j["columns"] = cols;
  return j.dump(2) + "\n";
}

PreparedData prepare(const Samples& steady, const Samples& transient, const std::vector<std::string>& names,
                     const PrepareConfig& cfg) {
  if (steady.empty() || transient.empty()) throw ConfigError("prepare: both steady and transient samples are required");
  std::vector<Candidate> cands(names.size());
  for (std::size_t j = 0; j < names.size(); ++j) {
    cands[j].name = names[j];
    const auto c = static_cast<Eigen::Index>(j);
    for (const auto& s : steady) {
      if (s.inputs.size() != static_cast<Eigen::Index>(names.size())) throw ConfigError("prepare: input width mismatch");
      cands[j].steady.push_back(s.inputs[c]);
    }
    for (const auto& s : transient) {
      if (s.inputs.size() != static_cast<Eigen::Index>(names.size())) throw ConfigError("prepare: input width mismatch");
      cands[j].transient.push_back(s.inputs[c]);
    }
  }
  TargetSeries ts, tt;
  for (const auto& s : steady) {
    ts.nox.push_back(s.targets[0]);
    ts.soot.push_back(s.targets[1]);
  }
  for (const auto& s : transient) {
    tt.nox.push_back(s.targets[0]);
    tt.soot.push_back(s.targets[1]);
  }
  PreparedData out;
  out.input_names = select_inputs(cands, ts, tt, cfg.xcov_threshold);
  if (out.input_names.empty()) throw ConfigError("prepare: no input passed the cross-covariance test");
  const auto cols = column_indices(names, out.input_names);
  const Samples st = select_columns(steady, cols);
  const Samples tr = select_columns(transient, cols);
  out.stats = compute_stats(st);
  out.epsilon = default_epsilon(st, out.stats, cfg.quantile);
  const Samples kept = filter_outliers(tr, out.stats, out.epsilon);
  out.outliers_removed = tr.size() - kept.size();
  out.split = split_stratified(st, kept, cfg.ratios, cfg.seed, cfg.copies);
  return out;
}

std::string stats_to_json(const DatasetStats& stats, double eps, const std::vector<std::string>& names) {
  json j;
  j["inputs"] = names;
  j["mean"] = std::vector<double>(stats.mean.data(), stats.mean.data() + stats.mean.size());
  json cov = json::array();
  for (Eigen::Index i = 0; i < stats.cov.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(stats.cov.cols()));
    for (Eigen::Index c = 0; c < stats.cov.cols(); ++c) row[static_cast<std::size_t>(c)] = stats.cov(i, c);
    cov.push_back(row);
  }
  j["cov"] = cov;
  j["epsilon"] = eps;
  return j.dump(2) + "\n";
}

}  // namespace empc::data
