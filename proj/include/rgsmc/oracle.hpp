#pragma once

// Brute-force ground truth for small instances: every full sequence is
// enumerated, with post-eos branches collapsed into eos padding.

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <unordered_map>

#include "rgsmc/target.hpp"

namespace rgsmc {

inline constexpr std::size_t kDefaultMaxStates = 1'000'000;

/// Probability (or mass) table keyed by canonical, eos-padded sequences.
using SequenceTable = std::map<Sequence, double>;

struct EnumeratedTarget {
  TargetSpec spec;
  SequenceTable log_masses;  // every canonical length-T sequence -> log mass
  double log_Z = kNegInf;

  /// Normalized Pi over full sequences (linear scale).
  SequenceTable probabilities() const;
};

/// Enumerates all canonical sequences. Throws InstanceTooLarge when
/// |V|^T exceeds `max_states`.
EnumeratedTarget enumerate(const TargetSpec& spec, std::size_t max_states = kDefaultMaxStates);

/// Marginal Pi(x_{1:t}) for every canonical prefix of length t.
SequenceTable oracle_marginal(const EnumeratedTarget& target, std::size_t t);

/// Exact suffix sum L_t(prefix) = sum prod_{s>t} m_s psi_s, optionally
/// truncated to the next `horizon_blocks * B` tokens. Linear scale.
double oracle_lookahead(const EnumeratedTarget& target, std::span<const Token> prefix,
                        std::optional<std::size_t> horizon_blocks = std::nullopt);

/// Same as `oracle_lookahead` in log space, computed directly from a spec.
double oracle_log_lookahead(const TargetSpec& spec, std::span<const Token> prefix,
                            std::optional<std::size_t> horizon_blocks = std::nullopt);

/// Exact lookahead provider. Precomputes log L for every canonical prefix
/// of the TargetSpec it was built for; thread-safe after construction.
class ExactLookahead final : public LookaheadProvider {
 public:
  explicit ExactLookahead(const TargetSpec& spec,
                          std::optional<std::size_t> horizon_blocks = std::nullopt,
                          std::size_t max_states = kDefaultMaxStates);
  LookaheadValue log_lookahead(const TargetSpec& spec, std::span<const Token> prefix,
                               CounterRng& rng) const override;
  bool is_exact() const override { return true; }
  double log_value(std::span<const Token> prefix) const;

 private:
  struct Hash {
    std::size_t operator()(const Sequence& s) const;
  };
  Family family_;
  double alpha_;
  std::unordered_map<Sequence, double, Hash> table_;
};

/// Mean-square errors of the prefix and exact-lookahead weights at step t
/// relative to the full importance weight W_T, for proposal p̃^(proposal_tau),
/// by exact summation over proposal paths.
struct MseReport {
  double mse_prefix = 0.0;                // E[(W_T - W_t^prf)^2]
  double mse_lookahead = 0.0;             // E[(W_T - W_t^prf L_t)^2]
  double excess_prefix = 0.0;             // E[(W_t^prf)^2 (L_t - 1)^2]
  double expected_conditional_var = 0.0;  // E[Var(W_T | F_t)]
  /// |mse_prefix - mse_lookahead - excess| / max(mse_prefix, tiny).
  double identity_residual = 0.0;
};

MseReport oracle_mse_weights(const TargetSpec& spec, double proposal_tau, std::size_t t,
                             std::size_t max_states = kDefaultMaxStates);

/// (1/2) sum |a - b| over the union of keys; missing keys count as 0.
/// Throws InvalidParameter if keys have different lengths.
double tv_distance(const SequenceTable& a, const SequenceTable& b);
/// Same over dense vectors; throws on a length mismatch.
double tv_distance(std::span<const double> a, std::span<const double> b);

/// CSV snapshot: kind,sequence,mass,probability. Full sequences first
/// (kind "full"), then every marginal prefix (kind "prefix", mass empty).
void write_oracle_table(const EnumeratedTarget& target, std::ostream& out);

/// Space-joined token names.
std::string format_sequence(const Vocabulary& vocab, std::span<const Token> seq);

}  // namespace rgsmc
