#pragma once

// Config-driven runs: JSON run configs, the replication and sweep driver,
// summary/trace/manifest output, and aggregation of finished runs.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rgsmc/potential.hpp"
#include "rgsmc/smc.hpp"
#include "rgsmc/target.hpp"

namespace rgsmc {

enum class SweepAxis { kNone, kParticles, kAlpha };

std::string to_string(SweepAxis a);

struct RunConfig {
  std::string name = "run";
  TargetSpec target;  // model and potential are set
  /// Success predicate for best-particle and weighted success, if any.
  std::shared_ptr<const TerminalIndicator> task;
  SMCConfig smc;
  /// Resampling threshold as a fraction of N.
  double ess_fraction = 0.5;
  SweepAxis sweep_axis = SweepAxis::kNone;
  std::vector<double> sweep_values;  // one value (unused) when there is no sweep
  std::size_t replications = 1;
  std::uint64_t seed = 0;
  std::string out_dir;
  /// "auto" computes TV to the oracle when the target is enumerable.
  std::string oracle = "auto";
  /// Every field with defaults filled in, as JSON text. Loading it again
  /// gives the same config.
  std::string resolved;
};

/// Parses a JSON run config. Relative model paths resolve against
/// `base_dir`. Syntax errors, unknown keys, wrong types and invalid values
/// throw ConfigError with the key path and, where possible, the line.
RunConfig parse_run_config(const std::string& text,
                           const std::filesystem::path& base_dir = std::filesystem::path("."));
RunConfig load_run_config(const std::filesystem::path& path);

struct ReplicationResult {
  std::size_t sweep_index = 0;
  double sweep_value = 0.0;
  std::size_t replication = 0;
  std::uint64_t seed = 0;
  std::size_t num_particles = 0;
  double alpha = 0.0;
  bool extinct = false;
  std::optional<bool> best_success;
  std::optional<double> weighted_success;
  double best_log_weight = kNegInf;
  double best_log_reward = kNegInf;
  std::string best_sequence;
  std::optional<double> tv_to_oracle;
  std::size_t tokens = 0;
  double log_Z_hat = kNegInf;
  std::size_t resamples = 0;
  std::size_t mh_proposals = 0;
  std::size_t mh_accepts = 0;
  std::vector<BlockTrace> trace;
};

/// Seed of replication r. The same seed is used at every sweep point.
std::uint64_t replication_seed(std::uint64_t base_seed, std::size_t r);

/// Runs every (sweep point, replication) pair on up to `workers` threads.
/// Results are ordered by sweep point, then replication.
std::vector<ReplicationResult> run_replications(const RunConfig& cfg, std::size_t workers);

void write_summary_csv(const RunConfig& cfg, const std::vector<ReplicationResult>& rows,
                       std::ostream& out);
void write_trace_jsonl(const std::vector<ReplicationResult>& rows, std::ostream& out);
void write_schema_csv(std::ostream& out);

struct RunOutput {
  std::filesystem::path dir;
  std::vector<ReplicationResult> rows;
  std::string config_hash;
  double wall_seconds = 0.0;
};

/// Runs a config and writes summary.csv, trace.jsonl, schema.csv,
/// config.json and manifest.json (last, atomically) into the output
/// directory: `out` if given, else the config's, else runs/<name>.
RunOutput cmd_run(RunConfig cfg, std::optional<std::uint64_t> seed,
                  std::optional<std::filesystem::path> out, std::size_t workers);

/// Aggregates every run under `dir` (found by manifest.json) keyed by run
/// name and sweep value. Writes aggregate.csv or aggregate.jsonl and
/// plot_data.csv into `dir` and returns the aggregate text. Throws
/// ConfigError naming a missing or corrupt manifest or summary.
std::string cmd_report(const std::filesystem::path& dir, const std::string& format);

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(const std::string& data);

/// Writes `data` to `path` via a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& data);

}  // namespace rgsmc
