#pragma once

#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rgsmc/core.hpp"
#include "rgsmc/model.hpp"

namespace rgsmc {

/// Non-negative prefix score psi_t(x_{1:t}, q), returned in log space.
///
/// `log_value` sees the prefix x_{1:t} (t = prefix.size() >= 1) and the
/// horizon T. Callers go through `log_psi`, which pins post-eos positions
/// to 0 so implementations never see them.
class RewardPotential {
 public:
  virtual ~RewardPotential() = default;
  virtual double log_value(std::span<const Token> prefix, const Prompt& prompt,
                           std::size_t horizon) const = 0;
  virtual std::string describe() const = 0;
};

/// log psi_t with the absorbing-eos convention: 0 for every position after
/// the first eos.
double log_psi(const RewardPotential& potential, const Vocabulary& vocab,
               std::span<const Token> prefix, const Prompt& prompt, std::size_t horizon);

/// Token pattern over a complete sequence. Space separated items: a token
/// name matches itself, '?' matches one token, '*' matches any run.
class TokenPattern {
 public:
  TokenPattern(const std::string& pattern, const Vocabulary& vocab);
  bool matches(std::span<const Token> seq) const;
  const std::string& text() const { return text_; }

 private:
  static constexpr Token kAnyOne = -1;
  static constexpr Token kAnyRun = -2;
  std::string text_;
  std::vector<Token> items_;
};

/// psi == 1.
class ConstantPotential final : public RewardPotential {
 public:
  double log_value(std::span<const Token>, const Prompt&, std::size_t) const override { return 0.0; }
  std::string describe() const override { return "constant"; }
};

/// psi_t = 1 before the sequence completes. At completion (t == T, or the
/// token just emitted is eos) psi = 1 if the sequence, without its eos,
/// matches the pattern and `epsilon` otherwise.
class TerminalIndicator final : public RewardPotential {
 public:
  TerminalIndicator(TokenPattern pattern, Token eos, double epsilon = 0.0);
  double log_value(std::span<const Token> prefix, const Prompt& prompt,
                   std::size_t horizon) const override;
  std::string describe() const override;
  bool satisfied(std::span<const Token> seq) const;

 private:
  TokenPattern pattern_;
  Token eos_;
  double epsilon_;
  double log_epsilon_;
};

/// Per-step bounded score: log psi_t is the sum of `log_factor` over rules
/// whose token equals x_t and whose position (1-based, 0 = any) equals t.
class StepScore final : public RewardPotential {
 public:
  struct Rule {
    Token token;
    std::size_t position = 0;
    double log_factor = 0.0;
  };
  explicit StepScore(std::vector<Rule> rules);
  double log_value(std::span<const Token> prefix, const Prompt& prompt,
                   std::size_t horizon) const override;
  std::string describe() const override;

 private:
  std::vector<Rule> rules_;
};

/// Process-reward analog: psi_t = exp(log_factor * (c(x_{1:t}) - c(x_{1:t-1})))
/// where c counts occurrences of `token`, capped at `cap`.
class CountProgress final : public RewardPotential {
 public:
  CountProgress(Token token, std::size_t cap, double log_factor);
  double log_value(std::span<const Token> prefix, const Prompt& prompt,
                   std::size_t horizon) const override;
  std::string describe() const override;

 private:
  Token token_;
  std::size_t cap_;
  double log_factor_;
};

/// Pointwise product of potentials.
class ProductPotential final : public RewardPotential {
 public:
  explicit ProductPotential(std::vector<std::shared_ptr<const RewardPotential>> parts);
  double log_value(std::span<const Token> prefix, const Prompt& prompt,
                   std::size_t horizon) const override;
  std::string describe() const override;

 private:
  std::vector<std::shared_ptr<const RewardPotential>> parts_;
};

/// Caches another potential per (prompt, prefix, horizon). Thread-safe.
class MemoizedPotential final : public RewardPotential {
 public:
  explicit MemoizedPotential(std::shared_ptr<const RewardPotential> inner);
  double log_value(std::span<const Token> prefix, const Prompt& prompt,
                   std::size_t horizon) const override;
  std::string describe() const override { return inner_->describe(); }
  std::size_t cache_size() const;

 private:
  struct Key {
    Prompt prompt;
    Sequence prefix;
    std::size_t horizon;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const;
  };
  std::shared_ptr<const RewardPotential> inner_;
  mutable std::mutex mu_;
  mutable std::unordered_map<Key, double, KeyHash> cache_;
};

}  // namespace rgsmc
