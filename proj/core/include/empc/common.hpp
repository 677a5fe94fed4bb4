#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace empc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or out-of-range configuration / inputs.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A required file is absent or unreadable.
class ArtifactError : public Error {
 public:
  using Error::Error;
};

/// Solver breakdown, divergence, non-finite state.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Exit codes used by the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitBadConfig = 2;
inline constexpr int kExitMissingArtifact = 3;
inline constexpr int kExitNumerical = 4;

/// Base sampling period shared by plant, identification and control.
inline constexpr double kBaseDt = 0.1;

bool all_finite(const Vec& v);
bool all_finite(const Mat& m);

/// Spectral radius via a dense eigen decomposition.
double spectral_radius(const Mat& a);

/// Reads a whole text file; throws ArtifactError when missing.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Shortest decimal repr that round-trips a double (used in CSV/JSON dumps).
std::string format_double(double value);

}  // namespace empc
