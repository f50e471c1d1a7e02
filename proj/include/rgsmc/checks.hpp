#pragma once

// Measurements against the enumeration oracle, shared by `rgsmc verify`
// and the acceptance suite. Each returns the measured quantity; callers
// decide the tolerance.

#include <cstdint>
#include <vector>

#include "rgsmc/fixtures.hpp"
#include "rgsmc/oracle.hpp"
#include "rgsmc/smc.hpp"

namespace rgsmc {

struct TvCheck {
  double mean_tv = 0.0;
  double max_tv = 0.0;
  std::size_t runs = 0;
};

/// TV distance between the weighted particle distribution and the
/// enumerated target, over runs with seeds cfg.seed, cfg.seed + 1, ...
TvCheck oracle_tv(const TargetSpec& spec, const SMCConfig& cfg, std::size_t runs,
                  std::size_t workers = 1);

/// TV distance of a run to an arbitrary reference distribution.
double run_tv(const TargetSpec& spec, const SMCConfig& cfg, const SequenceTable& reference);

struct IdentityCheck {
  double max_residual = 0.0;  // relative, over every t
  /// min over t of (mse_prefix - mse_lookahead) / max(mse_prefix, tiny).
  double min_relative_gap = 0.0;
  std::size_t steps = 0;
};

/// MSE decomposition of prefix vs exact-lookahead weights at every t in
/// [0, T], for the proposal p̃^(proposal_tau).
IdentityCheck mse_identity(const TargetSpec& spec, double proposal_tau);

/// max over t and prefixes of |normalized gamma^look_t - oracle marginal|,
/// together with the same for exact next-token conditionals against
/// ratios of marginals.
struct MarginalCheck {
  double max_marginal_error = 0.0;
  double max_conditional_error = 0.0;
};
MarginalCheck lookahead_marginals(const TargetSpec& spec);

struct MeanCheck {
  double mean = 0.0;
  double sem = 0.0;
  double truth = 0.0;
  std::size_t draws = 0;
  /// |mean - truth| / sem, with sem floored at the rounding bound
  /// draws * eps * |truth| of the summed mean.
  double z() const;
};

/// Linear-scale mean of `draws` independent lookahead estimates against the
/// exact horizon-truncated value.
MeanCheck lookahead_unbiasedness(const TargetSpec& spec, const Sequence& prefix,
                                 const LookaheadConfig& cfg, std::size_t draws,
                                 std::uint64_t seed);

/// Mean of exp(log_Z_hat) over runs with seeds cfg.seed + i against Z.
MeanCheck normalizer_unbiasedness(const TargetSpec& spec, const SMCConfig& cfg, std::size_t runs,
                                  std::size_t workers = 1);

struct ChiSquareCheck {
  double statistic = 0.0;
  double critical = 0.0;  // 99% quantile
  std::size_t cells = 0;  // after pooling cells with expected count < 5
  std::size_t chains = 0;
  double acceptance_rate = 0.0;
  bool passed() const { return statistic <= critical; }
};

/// Starts `chains` chains at exact draws from the normalized intermediate
/// target of block k (prefix or lookahead per cfg.mh_target; the MH family
/// is used), applies one mh_block_step each, and tests the resulting
/// empirical distribution against the same target.
ChiSquareCheck mh_invariance(const TargetSpec& spec, const SMCConfig& cfg, std::size_t k,
                             std::size_t chains, std::uint64_t seed);

/// Runs with resampling disabled for each block size and reports the
/// largest per-particle log-weight difference to B = 1 (inf if any token
/// sequence differs).
double block_size_invariance(const Fixture& fixture, Family family, double alpha,
                             const SMCConfig& cfg, const std::vector<std::size_t>& block_sizes);

/// Number of propagations whose incremental log weight is not bit-equal to
/// the block reward log Psi_k, for family I with proposal temperature alpha.
std::size_t tempered_weight_mismatches(const TargetSpec& spec, std::size_t particles,
                                       std::uint64_t seed);

}  // namespace rgsmc
