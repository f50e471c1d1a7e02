#include "rgsmc/target.hpp"

#include <algorithm>
#include <cmath>

namespace rgsmc {

std::string to_string(Family f) { return f == Family::kTempered ? "tempered" : "powered"; }

Family family_from_string(const std::string& s) {
  if (s == "tempered" || s == "I" || s == "1") return Family::kTempered;
  if (s == "powered" || s == "II" || s == "2") return Family::kPowered;
  throw InvalidParameter("unknown target family '" + s + "' (expected tempered|powered)");
}

void TargetSpec::validate() const {
  if (!model) throw InvalidParameter("target spec has no model");
  if (!potential) throw InvalidParameter("target spec has no potential");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidParameter("alpha must be positive");
  if (horizon < 1) throw InvalidParameter("horizon T must be >= 1");
  if (block_size < 1 || block_size > horizon) throw InvalidParameter("block size must satisfy 1 <= B <= T");
}

TargetSpec with_family(const TargetSpec& spec, Family family) {
  TargetSpec out = spec;
  out.family = family;
  return out;
}

std::vector<double> log_transition_row(const TargetSpec& spec, std::span<const Token> prefix) {
  const Distribution d = next_token_dist(*spec.model, spec.prompt, prefix);
  if (spec.family == Family::kTempered) return temper(d, spec.alpha).dist.log_probs;
  std::vector<double> row(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) row[i] = spec.alpha * d.log_probs[i];
  return row;
}

double log_transition(const TargetSpec& spec, std::span<const Token> prefix, Token token) {
  if (!spec.vocab().contains(token)) throw InvalidToken("token id " + std::to_string(token) + " not in vocabulary");
  return log_transition_row(spec, prefix)[static_cast<std::size_t>(token)];
}

double log_potential(const TargetSpec& spec, std::span<const Token> prefix) {
  return log_psi(*spec.potential, spec.vocab(), prefix, spec.prompt, spec.horizon);
}

double segment_log_transition(const TargetSpec& spec, std::span<const Token> seq,
                              std::size_t begin, std::size_t end) {
  end = std::min(end, seq.size());
  double acc = 0.0;
  for (std::size_t t = begin; t < end; ++t) {
    const double lm = log_transition(spec, seq.first(t), seq[t]);
    if (lm == kNegInf) return kNegInf;
    acc += lm;
  }
  return acc;
}

double segment_log_potential(const TargetSpec& spec, std::span<const Token> seq,
                             std::size_t begin, std::size_t end) {
  end = std::min(end, seq.size());
  double acc = 0.0;
  for (std::size_t t = begin; t < end; ++t) {
    const double lp = log_potential(spec, seq.first(t + 1));
    if (lp == kNegInf) return kNegInf;
    acc += lp;
  }
  return acc;
}

double unified_log_density(const TargetSpec& spec, std::span<const Token> seq) {
  if (seq.size() > spec.horizon) throw InvalidParameter("sequence longer than horizon T");
  if (seq.size() < spec.horizon && !is_terminated(spec.vocab(), seq)) {
    throw InvalidParameter("sequence shorter than T must end in eos");
  }
  return prefix_log_gamma(spec, seq);
}

double prefix_log_gamma(const TargetSpec& spec, std::span<const Token> prefix) {
  if (prefix.size() > spec.horizon) throw InvalidParameter("prefix longer than horizon T");
  double acc = 0.0;
  for (std::size_t t = 0; t < prefix.size(); ++t) {
    const double lm = log_transition(spec, prefix.first(t), prefix[t]);
    const double lp = log_potential(spec, prefix.first(t + 1));
    if (lm == kNegInf || lp == kNegInf) return kNegInf;
    acc += lm + lp;
  }
  return acc;
}

double block_log_M(const TargetSpec& spec, std::size_t k, std::span<const Token> seq) {
  if (k < 1 || k > spec.num_blocks()) throw InvalidParameter("block index out of range");
  return segment_log_transition(spec, seq, spec.block_begin(k), spec.block_end(k));
}

double block_log_Psi(const TargetSpec& spec, std::size_t k, std::span<const Token> seq) {
  if (k < 1 || k > spec.num_blocks()) throw InvalidParameter("block index out of range");
  return segment_log_potential(spec, seq, spec.block_begin(k), spec.block_end(k));
}

LookaheadValue exact_log_lookahead(const TargetSpec& spec, std::span<const Token> prefix,
                                   const LookaheadProvider& provider, CounterRng& rng) {
  if (prefix.size() >= spec.horizon || is_terminated(spec.vocab(), prefix)) return {};
  return provider.log_lookahead(spec, prefix, rng);
}

double lookahead_log_gamma(const TargetSpec& spec, std::span<const Token> prefix,
                           const LookaheadProvider& provider, CounterRng& rng) {
  const double g = prefix_log_gamma(spec, prefix);
  if (g == kNegInf) return kNegInf;
  return g + exact_log_lookahead(spec, prefix, provider, rng).log_value;
}

void LookaheadConfig::validate() const {
  if (rollouts < 1) throw InvalidParameter("lookahead rollouts J must be >= 1");
  if (horizon_blocks < 1) throw InvalidParameter("lookahead horizon H must be >= 1");
  if (!(tau_roll > 0.0) || !std::isfinite(tau_roll)) throw InvalidParameter("tau_roll must be positive");
}

LookaheadEstimate estimate_log_lookahead(const TargetSpec& spec, std::span<const Token> prefix,
                                         const LookaheadConfig& cfg, CounterRng& rng) {
  cfg.validate();
  LookaheadEstimate est;
  est.config = cfg;
  const std::size_t t = prefix.size();
  if (t >= spec.horizon || is_terminated(spec.vocab(), prefix)) return est;

  const std::size_t len = std::min(cfg.horizon_blocks * spec.block_size, spec.horizon - t);
  est.rollouts.reserve(cfg.rollouts);
  est.log_rollout_weights.reserve(cfg.rollouts);
  Sequence work;
  for (std::size_t j = 0; j < cfg.rollouts; ++j) {
    SampledBlocks roll = sample_blocks(*spec.model, spec.prompt, prefix, 1, len, cfg.tau_roll, rng);
    work.assign(prefix.begin(), prefix.end());
    double lw = 0.0;
    for (std::size_t s = 0; s < roll.tokens.size(); ++s) {
      const double lm = log_transition(spec, work, roll.tokens[s]);
      work.push_back(roll.tokens[s]);
      const double lp = log_potential(spec, work);
      if (lm == kNegInf || lp == kNegInf) {
        lw = kNegInf;
        break;
      }
      lw += (lm - roll.log_probs[s]) + lp;
    }
    est.tokens += roll.tokens.size();
    est.log_rollout_weights.push_back(lw);
    est.rollouts.push_back(std::move(roll.tokens));
  }
  est.log_value = log_sum_exp(est.log_rollout_weights) - std::log(static_cast<double>(cfg.rollouts));
  est.all_rejected = est.log_value == kNegInf;
  return est;
}

EstimatedLookahead::EstimatedLookahead(LookaheadConfig cfg) : cfg_(cfg) { cfg_.validate(); }

LookaheadValue EstimatedLookahead::log_lookahead(const TargetSpec& spec,
                                                 std::span<const Token> prefix,
                                                 CounterRng& rng) const {
  const LookaheadEstimate est = estimate_log_lookahead(spec, prefix, cfg_, rng);
  return {est.log_value, est.tokens};
}

Distribution exact_conditional_next_token(const TargetSpec& spec, std::span<const Token> prefix,
                                          const LookaheadProvider& provider, CounterRng& rng) {
  const std::vector<double> lm = log_transition_row(spec, prefix);
  Distribution out{std::vector<double>(lm.size(), kNegInf)};
  Sequence ext(prefix.begin(), prefix.end());
  ext.push_back(0);
  for (std::size_t v = 0; v < lm.size(); ++v) {
    if (lm[v] == kNegInf) continue;
    ext.back() = static_cast<Token>(v);
    const double lp = log_potential(spec, ext);
    if (lp == kNegInf) continue;
    const double ll = exact_log_lookahead(spec, ext, provider, rng).log_value;
    out.log_probs[v] = lm[v] + lp + ll;
  }
  const double norm = log_sum_exp(out.log_probs);
  if (norm == kNegInf) throw DegenerateConditional("every next token has zero target mass");
  for (double& x : out.log_probs) x -= norm;
  return out;
}

}  // namespace rgsmc
