#include "empc/emissions_model.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace empc::nn {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'E', 'M', 'P', 'C', 'M', 'L', 'P', '\0'};

void check_dims(const EmissionsModel& m, Eigen::Index n) {
  if (m.net.layers.empty()) throw ConfigError("emissions model: empty network");
  if (m.input_mean.size() != n || m.input_std.size() != n || m.net.layers.front().W.cols() != n)
    throw ConfigError("emissions model: input dimension mismatch");
  if (m.output_scale.size() != m.net.layers.back().W.rows())
    throw ConfigError("emissions model: output dimension mismatch");
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

Vec from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

Vec predict(const EmissionsModel& model, const Vec& inputs) {
  check_dims(model, inputs.size());
  const Vec x = (inputs - model.input_mean).cwiseQuotient(model.input_std);
  return forward(model.net, x).cwiseProduct(model.output_scale);
}

Mat predict_batch(const EmissionsModel& model, const Mat& inputs) {
  check_dims(model, inputs.rows());
  Mat X = inputs.colwise() - model.input_mean;
  X = model.input_std.cwiseInverse().asDiagonal() * X;
  return model.output_scale.asDiagonal() * forward_batch(model.net, X);
}

void fit_standardization(const data::Samples& train, EmissionsModel& model) {
  if (train.empty()) throw ConfigError("standardization: empty training set");
  const auto n = train.front().inputs.size();
  const auto m = train.front().targets.size();
  Vec mean = Vec::Zero(n), sq = Vec::Zero(n), tsq = Vec::Zero(m);
  for (const auto& s : train) {
    if (s.inputs.size() != n || s.targets.size() != m) throw ConfigError("standardization: ragged samples");
    mean += s.inputs;
  }
  const double N = static_cast<double>(train.size());
  mean /= N;
  for (const auto& s : train) {
    sq += (s.inputs - mean).cwiseAbs2();
    tsq += s.targets.cwiseAbs2();
  }
  model.input_mean = mean;
  model.input_std = (sq / N).cwiseSqrt();
  model.output_scale = (tsq / N).cwiseSqrt();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(model.input_std[i] > 1e-12)) model.input_std[i] = 1.0;
  for (Eigen::Index i = 0; i < m; ++i)
    if (!(model.output_scale[i] > 1e-12)) model.output_scale[i] = 1.0;
}

void to_matrices(const EmissionsModel& model, const data::Samples& samples, Mat& X, Mat& Y) {
  const auto n = model.input_mean.size();
  const auto m = model.output_scale.size();
  X.resize(n, static_cast<Eigen::Index>(samples.size()));
  Y.resize(m, static_cast<Eigen::Index>(samples.size()));
  for (std::size_t j = 0; j < samples.size(); ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    if (samples[j].inputs.size() != n || samples[j].targets.size() != m)
      throw ConfigError("emissions model: sample dimension mismatch");
    X.col(c) = (samples[j].inputs - model.input_mean).cwiseQuotient(model.input_std);
    Y.col(c) = samples[j].targets.cwiseQuotient(model.output_scale);
  }
}

TestMetrics evaluate(const EmissionsModel& model, const data::Samples& test) {
  TestMetrics out;
  for (const auto& s : test) {
    const Vec p = predict(model, s.inputs);
    auto& e = s.kind == data::SampleKind::Transient ? out.transient : out.steady;
    e.nox_mae += std::abs(p[0] - s.targets[0]);
    e.soot_mae += std::abs(p[1] - s.targets[1]);
    ++e.count;
  }
  for (auto* e : {&out.transient, &out.steady})
    if (e->count > 0) {
      e->nox_mae /= static_cast<double>(e->count);
      e->soot_mae /= static_cast<double>(e->count);
    }
  return out;
}

TrainOutcome train_emissions_model(const data::SplitDataset& data, const std::vector<std::string>& input_names,
                                   const TrainOptions& options, const EpochCallback& on_epoch) {
  if (data.train.empty()) throw ConfigError("train: empty training set");
  TrainOutcome out;
  auto& model = out.model;
  fit_standardization(data.train, model);
  model.input_names = input_names;
  std::vector<int> sizes = options.sizes;
  if (sizes.size() < 2) throw ConfigError("train: need at least two layer sizes");
  sizes.front() = static_cast<int>(model.input_mean.size());
  sizes.back() = static_cast<int>(model.output_scale.size());
  Mat Xtr, Ytr, Xv, Yv;
  to_matrices(model, data.train, Xtr, Ytr);
  to_matrices(model, data.validation, Xv, Yv);
  model.net = train(make_mlp(sizes, options.init_seed), Xtr, Ytr, Xv, Yv, options.config, out.report, on_epoch);
  out.test = evaluate(model, data.test);
  return out;
}

TrainOptions train_options_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("train config: expected an object");
  TrainOptions o;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "epochs") o.config.epochs = v.get<int>();
      else if (key == "batch_size") o.config.batch_size = v.get<int>();
      else if (key == "lr0") o.config.lr0 = v.get<double>();
      else if (key == "momentum") o.config.momentum = v.get<double>();
      else if (key == "decay") o.config.decay = v.get<double>();
      else if (key == "decay_every") o.config.decay_every = v.get<int>();
      else if (key == "seed") o.config.seed = v.get<std::uint64_t>();
      else if (key == "init_seed") o.init_seed = v.get<std::uint64_t>();
      else if (key == "hidden") {
        o.sizes = {0};
        for (int h : v.get<std::vector<int>>()) o.sizes.push_back(h);
        o.sizes.push_back(0);
      } else
        throw ConfigError("train config: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  validate(o.config);
  for (std::size_t i = 1; i + 1 < o.sizes.size(); ++i)
    if (o.sizes[i] <= 0) throw ConfigError("train config: hidden sizes must be positive");
  return o;
}

std::string serialize_model(const EmissionsModel& model) {
  validate(model.net);
  check_dims(model, model.input_mean.size());
  if (!model.input_names.empty() && model.input_names.size() != model.input_dim())
    throw ConfigError("emissions model: input name count mismatch");
  json h;
  h["format"] = "empc-mlp";
  h["version"] = kModelFormatVersion;
  h["endianness"] = "little";
  h["sizes"] = model.net.sizes();
  h["activation"] = "relu";
  h["param_count"] = parameter_count(model.net);
  h["input_mean"] = to_std(model.input_mean);
  h["input_std"] = to_std(model.input_std);
  h["output_scale"] = to_std(model.output_scale);
  h["input_names"] = model.input_names;
  const std::string header = h.dump();

  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kModelFormatVersion);
  put_u64(out, header.size());
  out += header;
  const Vec theta = flatten(model.net);
  out.reserve(out.size() + 8 * static_cast<std::size_t>(theta.size()));
  for (Eigen::Index i = 0; i < theta.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(theta[i]));
  return out;
}

EmissionsModel deserialize_model(const std::string& bytes) {
  constexpr std::size_t prefix = sizeof kMagic + 4 + 8;
  if (bytes.size() < prefix) throw ArtifactError("model file: truncated header");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw ArtifactError("model file: bad magic");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, sizeof kMagic, 4));
  if (version != kModelFormatVersion)
    throw ArtifactError("model file: unsupported version " + std::to_string(version) + " (expected " +
                        std::to_string(kModelFormatVersion) + ")");
  const std::uint64_t hlen = get_le(bytes, sizeof kMagic + 4, 8);
  if (hlen > bytes.size() - prefix) throw ArtifactError("model file: truncated header");
  json h;
  EmissionsModel m;
  std::vector<int> sizes;
  try {
    h = json::parse(bytes.substr(prefix, hlen));
    if (h.at("format") != "empc-mlp" || h.at("endianness") != "little" || h.at("activation") != "relu")
      throw ArtifactError("model file: unsupported format fields");
    if (h.at("version").get<std::uint32_t>() != version) throw ArtifactError("model file: version mismatch");
    sizes = h.at("sizes").get<std::vector<int>>();
    m.input_mean = from_std(h.at("input_mean").get<std::vector<double>>());
    m.input_std = from_std(h.at("input_std").get<std::vector<double>>());
    m.output_scale = from_std(h.at("output_scale").get<std::vector<double>>());
    m.input_names = h.at("input_names").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ArtifactError(std::string("model file: corrupt header: ") + e.what());
  }
  if (sizes.size() < 2) throw ArtifactError("model file: bad shape header");
  for (int s : sizes)
    if (s <= 0) throw ArtifactError("model file: bad shape header");
  const std::size_t count = parameter_count(sizes);
  if (h.value("param_count", std::size_t{0}) != count) throw ArtifactError("model file: parameter count mismatch");
  const std::size_t blob = prefix + hlen;
  if (bytes.size() - blob != 8 * count)
    throw ArtifactError(bytes.size() - blob < 8 * count ? "model file: truncated parameter blob"
                                                        : "model file: trailing bytes after parameter blob");
  m.net = make_mlp(sizes, 0);
  Vec theta(static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) theta[static_cast<Eigen::Index>(i)] = std::bit_cast<double>(get_le(bytes, blob + 8 * i, 8));
  unflatten(m.net, theta);
  try {
    validate(m.net);
    check_dims(m, m.input_mean.size());
  } catch (const ConfigError& e) {
    throw ArtifactError(std::string("model file: ") + e.what());
  }
  return m;
}

void save_model(const std::filesystem::path& path, const EmissionsModel& model) {
  const std::string bytes = serialize_model(model);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ArtifactError("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ArtifactError("write failed: " + path.string());
}

EmissionsModel load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ArtifactError("missing model file: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_model(ss.str());
}

}  // namespace empc::nn
