#pragma once

// Shared vocabulary of the library: token and sequence types, the error
// hierarchy, and log-space arithmetic helpers.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rgsmc {

using Token = std::int32_t;
using Sequence = std::vector<Token>;
using Prompt = std::string;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidToken : public Error {
 public:
  using Error::Error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

class DegenerateDistribution : public Error {
 public:
  using Error::Error;
};

class DegenerateConditional : public Error {
 public:
  using Error::Error;
};

class PopulationExtinct : public Error {
 public:
  using Error::Error;
};

class InstanceTooLarge : public Error {
 public:
  using Error::Error;
};

/// Raised for malformed model files and run configs. Carries the 1-based
/// line number when the problem can be pinned to one.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// log(sum(exp(xs))). Returns -inf for an empty or all -inf input.
inline double log_sum_exp(std::span<const double> xs) {
  double mx = kNegInf;
  for (double x : xs) mx = std::max(mx, x);
  if (mx == kNegInf) return kNegInf;
  if (mx == std::numeric_limits<double>::infinity()) return mx;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

/// log(exp(a) + exp(b)).
inline double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double mx = std::max(a, b);
  return mx + std::log1p(std::exp(-std::abs(a - b)));
}

/// Difference of extended reals where -inf - -inf is treated as -inf
/// (an impossible event stays impossible).
inline double log_ratio(double num, double den) {
  if (num == kNegInf) return kNegInf;
  return num - den;
}

}  // namespace rgsmc
