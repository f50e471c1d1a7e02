#pragma once

// Block-wise resample-move SMC with selective Metropolis-Hastings
// rejuvenation of duplicated low-reward particles.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "rgsmc/oracle.hpp"
#include "rgsmc/target.hpp"

namespace rgsmc {

enum class ResamplingScheme { kMultinomial, kSystematic };
enum class IntermediateTarget { kPrefix, kLookahead };

std::string to_string(ResamplingScheme s);
std::string to_string(IntermediateTarget t);
ResamplingScheme resampling_from_string(const std::string& s);
IntermediateTarget intermediate_from_string(const std::string& s);

struct Particle {
  Sequence tokens;
  double log_weight = 0.0;
  bool terminated = false;
  std::size_t ancestor = 0;
  /// Propagation stream: (slot, epoch) where epoch is the block of the last
  /// resampling. Token t of the particle is drawn at stream position t.
  std::uint64_t stream_slot = 0;
  std::uint64_t stream_epoch = 0;
  /// Sum of log psi over the tokens so far.
  double log_reward = 0.0;
  /// Cached log L-hat of the current prefix (lookahead weighting).
  double log_lookahead = 0.0;
  bool lookahead_valid = true;
  /// Incremental log weight of the most recent propagation.
  double last_log_increment = 0.0;
};

struct ParticleSystem {
  std::vector<Particle> particles;
  double log_Z_hat = 0.0;  // accumulated at each resampling
  std::size_t step = 0;    // blocks processed so far

  std::size_t size() const { return particles.size(); }
  std::vector<double> log_weights() const;
};

struct SMCConfig {
  std::size_t num_particles = 16;
  /// Resample when ESS < threshold. Defaults to N / 2.
  std::optional<double> ess_threshold;
  /// Duplicates whose running reward is below this are rejuvenated.
  double reward_threshold = std::numeric_limits<double>::infinity();
  std::size_t mh_steps = 0;
  ResamplingScheme resampling = ResamplingScheme::kSystematic;
  IntermediateTarget intermediate_target = IntermediateTarget::kPrefix;
  IntermediateTarget mh_target = IntermediateTarget::kLookahead;
  /// Family targeted by MH moves. Defaults to the TargetSpec family.
  std::optional<Family> mh_family;
  std::uint64_t seed = 0;
  LookaheadConfig lookahead;
  /// Generation proposal p̃^(tau). Defaults to alpha.
  std::optional<double> proposal_tau;
  /// Test hook: inverts the lookahead ratio in MH acceptance. Never set
  /// outside verification of the MH invariance check itself.
  bool invert_mh_lookahead_ratio = false;

  double resolved_ess_threshold() const;
  double resolved_proposal_tau(const TargetSpec& spec) const;
  void validate() const;
};

/// Effective sample size 1 / sum W̃^2 from log weights. Throws
/// PopulationExtinct when every weight is -inf.
double ess(std::span<const double> log_weights);
double ess(const ParticleSystem& system);

/// Ancestor indices for N offspring. Multinomial: N i.i.d. categorical
/// draws. Systematic: one uniform, then stratified inverse CDF in particle
/// order.
std::vector<std::size_t> resample_indices(std::span<const double> log_weights,
                                          ResamplingScheme scheme, CounterRng& rng);

/// Resamples in place: copies ancestors, sets all log weights to 0, records
/// ancestors and adds log(mean W) to log_Z_hat.
void resample(ParticleSystem& system, ResamplingScheme scheme, CounterRng& rng);

/// Indices whose ancestor already occurred at a lower index.
std::vector<std::size_t> find_duplicates(const ParticleSystem& system);

/// Log incremental weight of a block:
///   log M_k + log Psi_k - proposal_log_prob [+ log L_new - log L_prev].
/// `prefix` is the sequence through the new block; [begin, end) its range.
/// A zero lookahead on either side gives -inf: a prefix estimated to have
/// no completions carries no weight.
double incremental_log_weight(const TargetSpec& spec, IntermediateTarget kind,
                              std::span<const Token> sequence, std::size_t begin,
                              std::size_t end, double proposal_log_prob,
                              double log_lookahead_prev = 0.0, double log_lookahead_new = 0.0);

struct MhRecord {
  std::size_t proposals = 0;
  std::size_t accepts = 0;
  std::size_t tokens = 0;
};

struct BlockTrace {
  std::size_t k = 0;
  double ess = 0.0;
  bool resampled = false;
  std::size_t duplicates = 0;
  std::size_t mh_eligible = 0;
  std::size_t mh_proposals = 0;
  std::size_t mh_accepts = 0;
  double mean_running_reward = 0.0;  // over particles with finite reward
  std::size_t tokens_this_block = 0;
  std::size_t cumulative_tokens = 0;
};

struct SMCResult {
  std::vector<Particle> particles;
  double log_Z_hat = 0.0;
  std::vector<BlockTrace> trace;
  std::size_t total_tokens = 0;

  /// Highest final weight; ties go to the higher total reward, then the
  /// lower index.
  std::size_t best_index() const;
  std::vector<double> normalized_weights() const;
};

/// Weighted empirical distribution over eos-padded sequences.
SequenceTable weighted_distribution(const SMCResult& result, const TargetSpec& spec);

/// Runs the sampler for one (spec, config). Holds the lookahead providers
/// and the memoized potential for the duration of a run.
class SmcEngine {
 public:
  SmcEngine(const TargetSpec& spec, const SMCConfig& cfg);

  /// Throws PopulationExtinct when every weight is zero after a block;
  /// `trace()` then holds the blocks completed so far, including that one.
  SMCResult run();
  const std::vector<BlockTrace>& trace() const { return trace_; }

  /// Propagates and weights one particle for 1-based block k.
  std::size_t propagate(Particle& particle, std::size_t k);

  /// S independent-proposal MH updates of block k of `particle`, which must
  /// end inside block k. Streams are keyed by `slot`.
  MhRecord mh_block_step(Particle& particle, std::size_t slot, std::size_t k);

  const TargetSpec& spec() const { return spec_; }
  const TargetSpec& mh_spec() const { return mh_spec_; }
  const SMCConfig& config() const { return cfg_; }

  /// Running reward used by the tau_R gate: total log psi / k.
  static double running_reward(const Particle& particle, std::size_t k);

 private:
  std::unique_ptr<LookaheadProvider> make_provider(const TargetSpec& spec) const;
  LookaheadValue lookahead(const TargetSpec& spec, const LookaheadProvider& provider,
                           std::span<const Token> prefix, CounterRng& rng) const;

  TargetSpec spec_;
  TargetSpec mh_spec_;
  SMCConfig cfg_;
  double proposal_tau_;
  std::unique_ptr<LookaheadProvider> smc_lookahead_;
  std::unique_ptr<LookaheadProvider> mh_lookahead_;
  std::vector<BlockTrace> trace_;
};

SMCResult run_smc(const TargetSpec& spec, const SMCConfig& cfg);

}  // namespace rgsmc
