#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace haar {

using Rng = std::mt19937_64;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Input dimensions disagree with what a model or environment expects.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A NaN/Inf showed up where only finite values are allowed.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rejected configuration, raised before any computation starts.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A runtime-checked invariant failed. These checks are never compiled out.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Seeded stream derived from a base seed plus a path of stream indices, so
/// that e.g. (seed, iteration, episode) always maps to the same generator.
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * stream.size());
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  for (auto s : stream) {
    words.push_back(static_cast<std::uint32_t>(s));
    words.push_back(static_cast<std::uint32_t>(s >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvariantError(message);
}

}  // namespace haar
