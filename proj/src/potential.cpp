#include "rgsmc/potential.hpp"

#include <algorithm>
#include <sstream>

#include "rgsmc/rng.hpp"

namespace rgsmc {

double log_psi(const RewardPotential& potential, const Vocabulary& vocab,
               std::span<const Token> prefix, const Prompt& prompt, std::size_t horizon) {
  if (prefix.empty()) return 0.0;
  // Post-eos: an eos strictly before the last position.
  const auto head = prefix.first(prefix.size() - 1);
  if (std::find(head.begin(), head.end(), vocab.eos()) != head.end()) return 0.0;
  return potential.log_value(prefix, prompt, horizon);
}

TokenPattern::TokenPattern(const std::string& pattern, const Vocabulary& vocab) : text_(pattern) {
  std::istringstream in(pattern);
  for (std::string w; in >> w;) {
    if (w == "?") {
      items_.push_back(kAnyOne);
    } else if (w == "*") {
      items_.push_back(kAnyRun);
    } else {
      auto tok = vocab.find(w);
      if (!tok) throw InvalidParameter("pattern '" + pattern + "': unknown token '" + w + "'");
      items_.push_back(*tok);
    }
  }
}

bool TokenPattern::matches(std::span<const Token> seq) const {
  // Wildcard DP: row[j] = first i tokens matched by first j items.
  const std::size_t m = items_.size();
  std::vector<char> prev(m + 1, 0), row(m + 1, 0);
  prev[0] = 1;
  for (std::size_t j = 1; j <= m; ++j) prev[j] = prev[j - 1] && items_[j - 1] == kAnyRun;
  for (Token tok : seq) {
    row[0] = 0;
    for (std::size_t j = 1; j <= m; ++j) {
      const Token it = items_[j - 1];
      if (it == kAnyRun) {
        row[j] = row[j - 1] || prev[j];
      } else {
        row[j] = prev[j - 1] && (it == kAnyOne || it == tok);
      }
    }
    prev.swap(row);
  }
  return prev[m] != 0;
}

TerminalIndicator::TerminalIndicator(TokenPattern pattern, Token eos, double epsilon)
    : pattern_(std::move(pattern)),
      eos_(eos),
      epsilon_(epsilon),
      log_epsilon_(epsilon > 0.0 ? std::log(epsilon) : kNegInf) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InvalidParameter("epsilon must lie in [0, 1]");
}

bool TerminalIndicator::satisfied(std::span<const Token> seq) const {
  auto end = std::find(seq.begin(), seq.end(), eos_);
  return pattern_.matches(std::span<const Token>(seq.begin(), end));
}

double TerminalIndicator::log_value(std::span<const Token> prefix, const Prompt&,
                                    std::size_t horizon) const {
  const bool complete = prefix.size() >= horizon || prefix.back() == eos_;
  if (!complete) return 0.0;
  return satisfied(prefix) ? 0.0 : log_epsilon_;
}

std::string TerminalIndicator::describe() const {
  std::ostringstream out;
  out << "terminal('" << pattern_.text() << "', eps=" << epsilon_ << ")";
  return out.str();
}

StepScore::StepScore(std::vector<Rule> rules) : rules_(std::move(rules)) {
  for (const auto& r : rules_) {
    if (std::isnan(r.log_factor) || r.log_factor == std::numeric_limits<double>::infinity()) {
      throw InvalidParameter("step score factors must be finite or zero");
    }
  }
}

double StepScore::log_value(std::span<const Token> prefix, const Prompt&, std::size_t) const {
  const std::size_t t = prefix.size();
  const Token tok = prefix.back();
  double acc = 0.0;
  for (const auto& r : rules_) {
    if (r.token == tok && (r.position == 0 || r.position == t)) acc += r.log_factor;
  }
  return acc;
}

std::string StepScore::describe() const {
  std::ostringstream out;
  out << "step(";
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    if (i) out << ", ";
    out << rules_[i].token << "@" << rules_[i].position << ":" << std::exp(rules_[i].log_factor);
  }
  out << ")";
  return out.str();
}

CountProgress::CountProgress(Token token, std::size_t cap, double log_factor)
    : token_(token), cap_(cap), log_factor_(log_factor) {
  if (!std::isfinite(log_factor)) throw InvalidParameter("progress factor must be finite");
}

double CountProgress::log_value(std::span<const Token> prefix, const Prompt&, std::size_t) const {
  if (prefix.back() != token_) return 0.0;
  const auto count = static_cast<std::size_t>(std::count(prefix.begin(), prefix.end(), token_));
  return count <= cap_ ? log_factor_ : 0.0;
}

std::string CountProgress::describe() const {
  std::ostringstream out;
  out << "progress(" << token_ << ", cap=" << cap_ << ", factor=" << std::exp(log_factor_) << ")";
  return out.str();
}

ProductPotential::ProductPotential(std::vector<std::shared_ptr<const RewardPotential>> parts)
    : parts_(std::move(parts)) {
  for (const auto& p : parts_) {
    if (!p) throw InvalidParameter("product potential with a null part");
  }
}

double ProductPotential::log_value(std::span<const Token> prefix, const Prompt& prompt,
                                   std::size_t horizon) const {
  double acc = 0.0;
  for (const auto& p : parts_) {
    const double v = p->log_value(prefix, prompt, horizon);
    if (v == kNegInf) return kNegInf;
    acc += v;
  }
  return acc;
}

std::string ProductPotential::describe() const {
  std::string out = "product(";
  for (std::size_t i = 0; i < parts_.size(); ++i) {
    if (i) out += ", ";
    out += parts_[i]->describe();
  }
  return out + ")";
}

MemoizedPotential::MemoizedPotential(std::shared_ptr<const RewardPotential> inner)
    : inner_(std::move(inner)) {
  if (!inner_) throw InvalidParameter("memoized potential needs a potential");
}

std::size_t MemoizedPotential::KeyHash::operator()(const Key& k) const {
  std::uint64_t h = std::hash<std::string>{}(k.prompt);
  h = mix64(h, k.horizon);
  for (Token t : k.prefix) h = mix64(h, static_cast<std::uint64_t>(t));
  return static_cast<std::size_t>(h);
}

double MemoizedPotential::log_value(std::span<const Token> prefix, const Prompt& prompt,
                                    std::size_t horizon) const {
  Key key{prompt, Sequence(prefix.begin(), prefix.end()), horizon};
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  const double v = inner_->log_value(prefix, prompt, horizon);
  std::lock_guard lock(mu_);
  cache_.emplace(std::move(key), v);
  return v;
}

std::size_t MemoizedPotential::cache_size() const {
  std::lock_guard lock(mu_);
  return cache_.size();
}

}  // namespace rgsmc
