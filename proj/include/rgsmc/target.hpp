#pragma once

// Full-sequence targets, their prefix-only and lookahead intermediate
// targets, block factors, and the Monte Carlo lookahead estimator.
//
// Both targets share the form
//   Pi(x_{1:T}) ∝ prod_t m_t(x_t | x_<t) psi_t(x_{1:t})
// with m_t = p̃^(alpha) (tempered, family I) or m_t = p^alpha (powered,
// family II). All quantities are returned in log space.

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rgsmc/core.hpp"
#include "rgsmc/model.hpp"
#include "rgsmc/potential.hpp"
#include "rgsmc/rng.hpp"

namespace rgsmc {

enum class Family {
  kTempered,  // family I: per-token tempered conditionals
  kPowered,   // family II: sequence probability raised to alpha
};

std::string to_string(Family f);
Family family_from_string(const std::string& s);

struct TargetSpec {
  Family family = Family::kPowered;
  double alpha = 1.0;
  std::size_t horizon = 1;     // T, in tokens
  std::size_t block_size = 1;  // B, in tokens
  std::shared_ptr<const AutoregressiveModel> model;
  std::shared_ptr<const RewardPotential> potential;
  Prompt prompt;

  /// Throws InvalidParameter unless 1 <= B <= T, alpha > 0 and both model
  /// and potential are set.
  void validate() const;
  const Vocabulary& vocab() const { return model->vocab(); }
  /// K = ceil(T / B); the last block may be short.
  std::size_t num_blocks() const { return (horizon + block_size - 1) / block_size; }
  /// Token range [begin, end) of 1-based block k.
  std::size_t block_begin(std::size_t k) const { return (k - 1) * block_size; }
  std::size_t block_end(std::size_t k) const { return std::min(k * block_size, horizon); }
};

/// Copy of `spec` with a different family (used when MH targets the other
/// family than the SMC weights).
TargetSpec with_family(const TargetSpec& spec, Family family);

/// log m_t(token | prefix) for spec.family; t = prefix.size() + 1.
double log_transition(const TargetSpec& spec, std::span<const Token> prefix, Token token);

/// Per-position log m over every vocabulary token, for the given prefix.
std::vector<double> log_transition_row(const TargetSpec& spec, std::span<const Token> prefix);

/// log psi_t(prefix) with t = prefix.size(), absorbing-eos convention.
double log_potential(const TargetSpec& spec, std::span<const Token> prefix);

/// Sum over positions [begin, end) of seq (clipped to seq.size()) of log m_t.
double segment_log_transition(const TargetSpec& spec, std::span<const Token> seq,
                              std::size_t begin, std::size_t end);
/// Sum over positions [begin, end) of seq (clipped to seq.size()) of log psi_t.
double segment_log_potential(const TargetSpec& spec, std::span<const Token> seq,
                             std::size_t begin, std::size_t end);

/// Unnormalized log Pi(seq). `seq` must have length T, or be terminated by
/// eos at or before T (implicit eos padding).
double unified_log_density(const TargetSpec& spec, std::span<const Token> seq);

/// log gamma^prf_t(prefix) = sum_{s<=t} [log m_s + log psi_s].
double prefix_log_gamma(const TargetSpec& spec, std::span<const Token> prefix);

/// log M_k: sum of log m_t over the tokens of 1-based block k.
double block_log_M(const TargetSpec& spec, std::size_t k, std::span<const Token> seq);
/// log Psi_k: sum of log psi_t over the tokens of 1-based block k.
double block_log_Psi(const TargetSpec& spec, std::size_t k, std::span<const Token> seq);

struct LookaheadValue {
  double log_value = 0.0;
  std::size_t tokens = 0;  // tokens drawn to produce the value
};

/// Source of log L_t(prefix): exact enumeration or a Monte Carlo estimate.
class LookaheadProvider {
 public:
  virtual ~LookaheadProvider() = default;
  virtual LookaheadValue log_lookahead(const TargetSpec& spec, std::span<const Token> prefix,
                                       CounterRng& rng) const = 0;
  virtual bool is_exact() const = 0;
};

/// log L_t via the provider; exactly 0 at t = T or after eos.
LookaheadValue exact_log_lookahead(const TargetSpec& spec, std::span<const Token> prefix,
                                   const LookaheadProvider& provider, CounterRng& rng);

/// log gamma^look_t(prefix) = log gamma^prf_t + log L_t.
double lookahead_log_gamma(const TargetSpec& spec, std::span<const Token> prefix,
                           const LookaheadProvider& provider, CounterRng& rng);

enum class LookaheadMode { kEstimated, kExactOracle };

struct LookaheadConfig {
  std::size_t rollouts = 2;        // J
  std::size_t horizon_blocks = 1;  // H
  double tau_roll = 1.0;           // rollouts drawn at temperature 1 / tau_roll
  LookaheadMode mode = LookaheadMode::kEstimated;

  void validate() const;
};

struct LookaheadEstimate {
  double log_value = 0.0;
  LookaheadConfig config;
  std::vector<Sequence> rollouts;       // continuation tokens only
  std::vector<double> log_rollout_weights;
  std::size_t tokens = 0;
  bool all_rejected = false;  // every rollout has zero weight
};

/// Unbiased estimate of the horizon-truncated lookahead L^(H)_t:
///   (1/J) sum_j prod_s m_s psi_s / p̃^(tau_roll)
/// over J rollouts of min(H*B, T - t) tokens from p̃^(tau_roll).
LookaheadEstimate estimate_log_lookahead(const TargetSpec& spec, std::span<const Token> prefix,
                                         const LookaheadConfig& cfg, CounterRng& rng);

/// Provider wrapping `estimate_log_lookahead`.
class EstimatedLookahead final : public LookaheadProvider {
 public:
  explicit EstimatedLookahead(LookaheadConfig cfg);
  LookaheadValue log_lookahead(const TargetSpec& spec, std::span<const Token> prefix,
                               CounterRng& rng) const override;
  bool is_exact() const override { return false; }

 private:
  LookaheadConfig cfg_;
};

/// Pi(x_t | x_<t) ∝ m_t psi_t L_t over the vocabulary.
Distribution exact_conditional_next_token(const TargetSpec& spec, std::span<const Token> prefix,
                                          const LookaheadProvider& provider, CounterRng& rng);

}  // namespace rgsmc
