#pragma once

// `rgsmc verify`: reduced-size versions of the oracle checks, each reported
// as a measured value against a tolerance.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rgsmc {

struct VerifyOptions {
  /// Substring of suite names to run; empty runs all.
  std::string filter;
  /// Replace the built-in fixtures with this model file and a seeded
  /// step-score potential.
  std::optional<std::filesystem::path> model;
  std::size_t horizon = 3;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  /// Inverts the lookahead ratio in MH acceptance, so mh-invariance fails.
  bool tamper_mh = false;
};

struct VerifyRow {
  std::string suite;
  std::string check;
  double measured = 0.0;
  std::string relation;  // "<=" or ">="
  double tolerance = 0.0;
  bool passed = false;
};

const std::vector<std::string>& verify_suites();

/// Runs the selected suites, printing one line per check to `log` as it
/// completes. Throws ConfigError if the filter matches no suite or the model
/// cannot be loaded.
std::vector<VerifyRow> run_verify(const VerifyOptions& opts, std::ostream& log);

}  // namespace rgsmc
