#pragma once

#include "empc/common.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace empc::detail {

using json = nlohmann::json;

inline json mat_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline json vec_json(const Vec& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

/// Rows of a nested array; `cols` is needed for matrices with zero rows.
inline Mat mat_from(const json& j, Eigen::Index cols, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + ": expected a nested array");
  Mat m(static_cast<Eigen::Index>(j.size()), cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const auto& row = j.at(static_cast<std::size_t>(i));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw ConfigError(what + ": ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

inline Mat mat_from(const json& j, const std::string& what) {
  const Eigen::Index cols = j.is_array() && !j.empty() && j.front().is_array()
                                ? static_cast<Eigen::Index>(j.front().size())
                                : 0;
  return mat_from(j, cols, what);
}

inline Vec vec_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Calls on_key(key, value) for every member; a false return rejects the key.
template <class F>
void read_object(const json& j, const std::string& what, F&& on_key) {
  if (!j.is_object()) throw ConfigError(what + ": expected an object");
  for (const auto& [key, v] : j.items())
    if (!on_key(key, v)) throw ConfigError(what + ": unknown key '" + key + "'");
}

}  // namespace empc::detail
