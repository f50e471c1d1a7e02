#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rgsmc/core.hpp"
#include "rgsmc/rng.hpp"

namespace rgsmc {

/// Ordered token names with one designated end-of-sequence token. Token ids
/// are positions in `names`.
class Vocabulary {
 public:
  Vocabulary(std::vector<std::string> names, Token eos);

  std::size_t size() const { return names_.size(); }
  Token eos() const { return eos_; }
  bool contains(Token t) const { return t >= 0 && static_cast<std::size_t>(t) < names_.size(); }
  const std::string& name(Token t) const { return names_.at(static_cast<std::size_t>(t)); }
  const std::vector<std::string>& names() const { return names_; }
  /// Id of a token name, or nullopt.
  std::optional<Token> find(const std::string& name) const;

 private:
  std::vector<std::string> names_;
  Token eos_;
};

/// Categorical distribution over a vocabulary, stored as log-probabilities
/// indexed by token id.
struct Distribution {
  std::vector<double> log_probs;

  std::size_t size() const { return log_probs.size(); }
  double log_prob(Token t) const { return log_probs.at(static_cast<std::size_t>(t)); }
  double prob(Token t) const { return std::exp(log_prob(t)); }

  static Distribution point_mass(std::size_t vocab_size, Token t);
  static Distribution uniform(std::size_t vocab_size);
  /// From linear probabilities; zeros become -inf.
  static Distribution from_probs(std::span<const double> probs);
};

/// p(x_t | prompt, x_<t) over a finite vocabulary.
///
/// Implementations provide `conditional` for prefixes that do not contain
/// eos; `next_token_dist` adds validation and the absorbing-eos extension.
/// Models are immutable after construction and safe to share across threads.
class AutoregressiveModel {
 public:
  virtual ~AutoregressiveModel() = default;
  virtual const Vocabulary& vocab() const = 0;
  virtual Distribution conditional(const Prompt& prompt, std::span<const Token> prefix) const = 0;
};

/// n-gram lookup table. The context of a prefix is its last min(n, t)
/// tokens. Lookup tries (prompt, context), then (any prompt, context), then
/// the default row.
class TabularModel final : public AutoregressiveModel {
 public:
  struct Context {
    std::optional<Prompt> prompt;  // nullopt matches every prompt
    Sequence tokens;
    auto operator<=>(const Context&) const = default;
  };

  TabularModel(Vocabulary vocab, std::size_t order, std::map<Context, Distribution> table,
               std::optional<Distribution> default_row);

  const Vocabulary& vocab() const override { return vocab_; }
  Distribution conditional(const Prompt& prompt, std::span<const Token> prefix) const override;

  std::size_t order() const { return order_; }
  const std::map<Context, Distribution>& table() const { return table_; }
  const std::optional<Distribution>& default_row() const { return default_; }

 private:
  Vocabulary vocab_;
  std::size_t order_;
  std::map<Context, Distribution> table_;
  std::optional<Distribution> default_;
};

/// Validates `prefix` and returns the model's conditional, or the point mass
/// on eos once eos has been emitted.
Distribution next_token_dist(const AutoregressiveModel& model, const Prompt& prompt,
                             std::span<const Token> prefix);

/// Result of tempering: p^alpha / Z and log Z.
struct Tempered {
  Distribution dist;
  double log_normalizer = 0.0;
};

/// Raises every probability to `alpha` and renormalizes.
Tempered temper(const Distribution& dist, double alpha);

/// Draws a token by inverse CDF using exactly one uniform from `rng`.
Token sample_token(const Distribution& dist, CounterRng& rng);

struct SampledBlocks {
  Sequence tokens;
  std::vector<double> log_probs;  // per token, under the tempered proposal

  double total_log_prob() const;
};

/// Samples up to `blocks * block_size` tokens from temper(p, tau), token by
/// token, stopping after eos. Each token consumes one rng position.
SampledBlocks sample_blocks(const AutoregressiveModel& model, const Prompt& prompt,
                            std::span<const Token> prefix, std::size_t blocks,
                            std::size_t block_size, double tau, CounterRng& rng);

/// Sum of conditional log-probs along `seq`; positions after eos add 0.
double sequence_logprob(const AutoregressiveModel& model, const Prompt& prompt,
                        std::span<const Token> seq);

/// True when `seq` contains eos.
bool is_terminated(const Vocabulary& vocab, std::span<const Token> seq);

/// Pads `seq` with eos to `length` if it is terminated; returns it unchanged
/// otherwise.
Sequence pad_with_eos(const Vocabulary& vocab, std::span<const Token> seq, std::size_t length);

/// Options for `random_tabular_model`.
struct RandomModelOptions {
  std::size_t non_eos_tokens = 2;
  std::size_t order = 1;
  /// Scale of the Gaussian logits; larger values give peakier rows.
  double concentration = 1.0;
  /// Probability mass reserved for eos in every row (0 disables termination).
  double eos_mass = 0.0;
};

/// Seeded random order-n table covering every context; rows are normalized
/// exponentials of Gaussian logits. Token names are "0", "1", ..., "eos".
std::shared_ptr<TabularModel> random_tabular_model(const RandomModelOptions& options,
                                                   std::uint64_t seed);

}  // namespace rgsmc
