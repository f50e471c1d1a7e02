#include "rgsmc/smc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace rgsmc {

std::string to_string(ResamplingScheme s) {
  return s == ResamplingScheme::kMultinomial ? "multinomial" : "systematic";
}

std::string to_string(IntermediateTarget t) {
  return t == IntermediateTarget::kPrefix ? "prefix" : "lookahead";
}

ResamplingScheme resampling_from_string(const std::string& s) {
  if (s == "multinomial") return ResamplingScheme::kMultinomial;
  if (s == "systematic") return ResamplingScheme::kSystematic;
  throw InvalidParameter("unknown resampling scheme '" + s + "'");
}

IntermediateTarget intermediate_from_string(const std::string& s) {
  if (s == "prefix") return IntermediateTarget::kPrefix;
  if (s == "lookahead") return IntermediateTarget::kLookahead;
  throw InvalidParameter("unknown intermediate target '" + s + "'");
}

std::vector<double> ParticleSystem::log_weights() const {
  std::vector<double> out;
  out.reserve(particles.size());
  for (const auto& p : particles) out.push_back(p.log_weight);
  return out;
}

double SMCConfig::resolved_ess_threshold() const {
  return ess_threshold.value_or(static_cast<double>(num_particles) / 2.0);
}

double SMCConfig::resolved_proposal_tau(const TargetSpec& spec) const {
  return proposal_tau.value_or(spec.alpha);
}

void SMCConfig::validate() const {
  if (num_particles < 1) throw InvalidParameter("N must be >= 1");
  const double thr = resolved_ess_threshold();
  if (!(thr >= 0.0) || thr > static_cast<double>(num_particles)) {
    throw InvalidParameter("ESS threshold must lie in [0, N]");
  }
  if (std::isnan(reward_threshold)) throw InvalidParameter("reward threshold is NaN");
  if (proposal_tau && !(*proposal_tau > 0.0)) throw InvalidParameter("proposal tau must be positive");
  lookahead.validate();
}

double ess(std::span<const double> log_weights) {
  const double top = log_weights.empty() ? kNegInf : *std::max_element(log_weights.begin(), log_weights.end());
  if (top == kNegInf) throw PopulationExtinct("every particle has zero weight");
  // (sum w)^2 / sum w^2 with w scaled by the largest weight; exactly N for
  // equal weights.
  double s1 = 0.0, s2 = 0.0;
  for (double lw : log_weights) {
    const double w = std::exp(lw - top);
    s1 += w;
    s2 += w * w;
  }
  return std::clamp(s1 * s1 / s2, 1.0, static_cast<double>(log_weights.size()));
}

double ess(const ParticleSystem& system) { return ess(system.log_weights()); }

std::vector<std::size_t> resample_indices(std::span<const double> log_weights,
                                          ResamplingScheme scheme, CounterRng& rng) {
  const std::size_t n = log_weights.size();
  const double lse = log_sum_exp(log_weights);
  if (lse == kNegInf || n == 0) throw PopulationExtinct("cannot resample: every weight is zero");
  std::vector<double> cdf(n);
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = std::exp(log_weights[i] - lse);
    if (w > 0.0) last_positive = i;
    acc += w;
    cdf[i] = acc;
  }
  auto locate = [&](double u) {
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto idx = static_cast<std::size_t>(it - cdf.begin());
    return std::min(idx, last_positive);
  };
  std::vector<std::size_t> out(n);
  if (scheme == ResamplingScheme::kMultinomial) {
    for (std::size_t i = 0; i < n; ++i) out[i] = locate(rng.uniform() * acc);
  } else {
    const double u = rng.uniform();
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = locate((u + static_cast<double>(i)) / static_cast<double>(n) * acc);
    }
  }
  return out;
}

void resample(ParticleSystem& system, ResamplingScheme scheme, CounterRng& rng) {
  const std::vector<double> lw = system.log_weights();
  const std::vector<std::size_t> idx = resample_indices(lw, scheme, rng);
  system.log_Z_hat += log_sum_exp(lw) - std::log(static_cast<double>(lw.size()));
  std::vector<Particle> next;
  next.reserve(idx.size());
  for (std::size_t a : idx) {
    Particle p = system.particles[a];
    p.ancestor = a;
    p.log_weight = 0.0;
    next.push_back(std::move(p));
  }
  system.particles = std::move(next);
}

std::vector<std::size_t> find_duplicates(const ParticleSystem& system) {
  std::unordered_set<std::size_t> seen;
  std::vector<std::size_t> dups;
  for (std::size_t i = 0; i < system.particles.size(); ++i) {
    if (!seen.insert(system.particles[i].ancestor).second) dups.push_back(i);
  }
  return dups;
}

double incremental_log_weight(const TargetSpec& spec, IntermediateTarget kind,
                              std::span<const Token> sequence, std::size_t begin,
                              std::size_t end, double proposal_log_prob,
                              double log_lookahead_prev, double log_lookahead_new) {
  const double lm = segment_log_transition(spec, sequence, begin, end);
  const double lpsi = segment_log_potential(spec, sequence, begin, end);
  if (lm == kNegInf || lpsi == kNegInf) return kNegInf;
  double w = (lm - proposal_log_prob) + lpsi;
  if (kind == IntermediateTarget::kLookahead) {
    if (log_lookahead_new == kNegInf || log_lookahead_prev == kNegInf) return kNegInf;
    w += log_lookahead_new - log_lookahead_prev;
  }
  return w;
}

std::size_t SMCResult::best_index() const {
  if (particles.empty()) throw InvalidParameter("empty result");
  std::size_t best = 0;
  for (std::size_t i = 1; i < particles.size(); ++i) {
    const auto& a = particles[i];
    const auto& b = particles[best];
    if (a.log_weight > b.log_weight ||
        (a.log_weight == b.log_weight && a.log_reward > b.log_reward)) {
      best = i;
    }
  }
  return best;
}

std::vector<double> SMCResult::normalized_weights() const {
  std::vector<double> lw;
  lw.reserve(particles.size());
  for (const auto& p : particles) lw.push_back(p.log_weight);
  const double lse = log_sum_exp(lw);
  std::vector<double> out(lw.size(), 0.0);
  if (lse == kNegInf) return out;
  for (std::size_t i = 0; i < lw.size(); ++i) out[i] = std::exp(lw[i] - lse);
  return out;
}

SequenceTable weighted_distribution(const SMCResult& result, const TargetSpec& spec) {
  const std::vector<double> w = result.normalized_weights();
  SequenceTable out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == 0.0) continue;
    out[pad_with_eos(spec.vocab(), result.particles[i].tokens, spec.horizon)] += w[i];
  }
  return out;
}

SmcEngine::SmcEngine(const TargetSpec& spec, const SMCConfig& cfg) : spec_(spec), cfg_(cfg) {
  spec_.validate();
  cfg_.validate();
  spec_.potential = std::make_shared<MemoizedPotential>(spec.potential);
  mh_spec_ = with_family(spec_, cfg_.mh_family.value_or(spec_.family));
  proposal_tau_ = cfg_.resolved_proposal_tau(spec_);
  if (cfg_.intermediate_target == IntermediateTarget::kLookahead) {
    smc_lookahead_ = make_provider(spec_);
  }
  if (cfg_.mh_steps > 0 && cfg_.mh_target == IntermediateTarget::kLookahead) {
    mh_lookahead_ = make_provider(mh_spec_);
  }
}

std::unique_ptr<LookaheadProvider> SmcEngine::make_provider(const TargetSpec& spec) const {
  if (cfg_.lookahead.mode == LookaheadMode::kExactOracle) {
    return std::make_unique<ExactLookahead>(spec);
  }
  return std::make_unique<EstimatedLookahead>(cfg_.lookahead);
}

LookaheadValue SmcEngine::lookahead(const TargetSpec& spec, const LookaheadProvider& provider,
                                    std::span<const Token> prefix, CounterRng& rng) const {
  return exact_log_lookahead(spec, prefix, provider, rng);
}

double SmcEngine::running_reward(const Particle& particle, std::size_t k) {
  return particle.log_reward / static_cast<double>(std::max<std::size_t>(k, 1));
}

std::size_t SmcEngine::propagate(Particle& p, std::size_t k) {
  const std::size_t begin = spec_.block_begin(k);
  const std::size_t end = spec_.block_end(k);
  if (p.terminated || p.log_weight == kNegInf) return 0;
  if (p.tokens.size() != begin) throw InvalidParameter("particle is not at the start of block k");

  std::size_t tokens = 0;
  double log_l_prev = 0.0;
  const bool look = cfg_.intermediate_target == IntermediateTarget::kLookahead;
  if (look) {
    if (p.lookahead_valid) {
      log_l_prev = p.log_lookahead;
    } else if (begin > 0) {
      CounterRng rng(cfg_.seed, Purpose::kLookahead, p.stream_slot, k, 1);
      const LookaheadValue v = lookahead(spec_, *smc_lookahead_, p.tokens, rng);
      log_l_prev = v.log_value;
      tokens += v.tokens;
    }
  }

  CounterRng rng(cfg_.seed, Purpose::kPropagate, p.stream_slot, p.stream_epoch);
  rng.seek(begin);
  const SampledBlocks blk =
      sample_blocks(*spec_.model, spec_.prompt, p.tokens, 1, end - begin, proposal_tau_, rng);
  tokens += blk.tokens.size();
  p.tokens.insert(p.tokens.end(), blk.tokens.begin(), blk.tokens.end());
  p.terminated = is_terminated(spec_.vocab(), p.tokens);
  const double block_psi = segment_log_potential(spec_, p.tokens, begin, end);
  p.log_reward = (p.log_reward == kNegInf || block_psi == kNegInf) ? kNegInf : p.log_reward + block_psi;

  double log_l_new = 0.0;
  if (look) {
    CounterRng lrng(cfg_.seed, Purpose::kLookahead, p.stream_slot, k, 0);
    const LookaheadValue v = lookahead(spec_, *smc_lookahead_, p.tokens, lrng);
    log_l_new = v.log_value;
    tokens += v.tokens;
    p.log_lookahead = log_l_new;
    p.lookahead_valid = true;
  }
  const double w = incremental_log_weight(spec_, cfg_.intermediate_target, p.tokens, begin, end,
                                          blk.total_log_prob(), log_l_prev, log_l_new);
  p.last_log_increment = w;
  p.log_weight = w == kNegInf ? kNegInf : p.log_weight + w;
  return tokens;
}

MhRecord SmcEngine::mh_block_step(Particle& p, std::size_t slot, std::size_t k) {
  MhRecord rec;
  const std::size_t begin = spec_.block_begin(k);
  const std::size_t end = spec_.block_end(k);
  if (p.tokens.size() > end) throw InvalidParameter("mh_block_step: particle extends past block k");
  if (p.tokens.size() <= begin) return rec;  // terminated before block k

  // Q^(1)_alpha: independent block proposal from the tempered base.
  const TargetSpec proposal_spec = with_family(mh_spec_, Family::kTempered);
  const bool look = cfg_.mh_target == IntermediateTarget::kLookahead;
  const bool reuse_mh_lookahead = look &&
                                  cfg_.intermediate_target == IntermediateTarget::kLookahead &&
                                  mh_spec_.family == spec_.family;
  // Copied: p.tokens is replaced when a proposal is accepted.
  const Sequence prefix(p.tokens.begin(), p.tokens.begin() + static_cast<std::ptrdiff_t>(begin));

  for (std::size_t s = 1; s <= cfg_.mh_steps; ++s) {
    CounterRng prop_rng(cfg_.seed, Purpose::kMhProposal, slot, k, s);
    const SampledBlocks z = sample_blocks(*mh_spec_.model, mh_spec_.prompt, prefix, 1, end - begin,
                                          mh_spec_.alpha, prop_rng);
    Sequence proposed(prefix.begin(), prefix.end());
    proposed.insert(proposed.end(), z.tokens.begin(), z.tokens.end());
    rec.proposals += 1;
    rec.tokens += z.tokens.size();

    const double q_proposed = z.total_log_prob();
    const double q_current = segment_log_transition(proposal_spec, p.tokens, begin, end);

    auto block_target = [&](std::span<const Token> x) {
      const double lm = segment_log_transition(mh_spec_, x, begin, end);
      const double lp = segment_log_potential(mh_spec_, x, begin, end);
      return (lm == kNegInf || lp == kNegInf) ? kNegInf : lm + lp;
    };
    double log_l_proposed = 0.0;
    double log_num = block_target(proposed);
    double log_den = block_target(p.tokens);
    if (look) {
      CounterRng cur_rng(cfg_.seed, Purpose::kMhLookahead, slot, k, 2 * s);
      CounterRng new_rng(cfg_.seed, Purpose::kMhLookahead, slot, k, 2 * s + 1);
      const LookaheadValue l_cur = lookahead(mh_spec_, *mh_lookahead_, p.tokens, cur_rng);
      const LookaheadValue l_new = lookahead(mh_spec_, *mh_lookahead_, proposed, new_rng);
      rec.tokens += l_cur.tokens + l_new.tokens;
      log_l_proposed = l_new.log_value;
      if (cfg_.invert_mh_lookahead_ratio) {
        log_num = log_num == kNegInf ? kNegInf : log_num - l_new.log_value;
        log_den = log_den == kNegInf ? kNegInf : log_den - l_cur.log_value;
      } else {
        log_num = (log_num == kNegInf || l_new.log_value == kNegInf) ? kNegInf : log_num + l_new.log_value;
        log_den = (log_den == kNegInf || l_cur.log_value == kNegInf) ? kNegInf : log_den + l_cur.log_value;
      }
    }
    // Hastings correction for the independence proposal.
    log_num = log_num == kNegInf ? kNegInf : log_num + q_current;
    log_den = log_den == kNegInf ? kNegInf : log_den + q_proposed;

    bool accept = false;
    if (log_num == kNegInf) {
      accept = false;
    } else if (log_den == kNegInf) {
      accept = true;
    } else {
      const double log_ratio = log_num - log_den;
      CounterRng u_rng(cfg_.seed, Purpose::kMhAccept, slot, k, s);
      accept = log_ratio >= 0.0 || u_rng.uniform() < std::exp(log_ratio);
    }
    if (accept) {
      rec.accepts += 1;
      p.tokens = std::move(proposed);
      p.terminated = is_terminated(spec_.vocab(), p.tokens);
      p.log_reward = segment_log_potential(spec_, p.tokens, 0, p.tokens.size());
      // The accepted state keeps the estimate it was accepted with, when
      // that estimate is of the lookahead the SMC weights use.
      p.lookahead_valid = reuse_mh_lookahead;
      p.log_lookahead = log_l_proposed;
    }
  }
  return rec;
}

SMCResult SmcEngine::run() {
  const std::size_t n = cfg_.num_particles;
  const std::size_t K = spec_.num_blocks();
  const double threshold = cfg_.resolved_ess_threshold();

  ParticleSystem sys;
  sys.particles.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    sys.particles[i].ancestor = i;
    sys.particles[i].stream_slot = i;
  }

  SMCResult out;
  trace_.clear();
  std::size_t cumulative = 0;
  for (std::size_t k = 1; k <= K; ++k) {
    BlockTrace tr;
    tr.k = k;
    for (auto& p : sys.particles) tr.tokens_this_block += propagate(p, k);
    try {
      tr.ess = ess(sys);
    } catch (const PopulationExtinct&) {
      cumulative += tr.tokens_this_block;
      tr.cumulative_tokens = cumulative;
      tr.mean_running_reward = kNegInf;
      trace_.push_back(tr);
      throw;
    }
    if (tr.ess < threshold) {
      CounterRng rrng(cfg_.seed, Purpose::kResample, k);
      resample(sys, cfg_.resampling, rrng);
      tr.resampled = true;
      for (std::size_t i = 0; i < n; ++i) {
        sys.particles[i].stream_slot = i;
        sys.particles[i].stream_epoch = k;
      }
      const std::vector<std::size_t> dups = find_duplicates(sys);
      tr.duplicates = dups.size();
      if (cfg_.mh_steps > 0) {
        for (std::size_t i : dups) {
          Particle& p = sys.particles[i];
          if (!(running_reward(p, k) < cfg_.reward_threshold)) continue;
          tr.mh_eligible += 1;
          const MhRecord rec = mh_block_step(p, i, k);
          tr.mh_proposals += rec.proposals;
          tr.mh_accepts += rec.accepts;
          tr.tokens_this_block += rec.tokens;
        }
      }
    }
    double reward_sum = 0.0;
    std::size_t finite = 0;
    for (const auto& p : sys.particles) {
      if (std::isfinite(p.log_reward)) {
        reward_sum += running_reward(p, k);
        ++finite;
      }
    }
    tr.mean_running_reward = finite ? reward_sum / static_cast<double>(finite) : kNegInf;
    cumulative += tr.tokens_this_block;
    tr.cumulative_tokens = cumulative;
    trace_.push_back(tr);
    sys.step = k;
  }

  const std::vector<double> lw = sys.log_weights();
  out.log_Z_hat = sys.log_Z_hat + log_sum_exp(lw) - std::log(static_cast<double>(n));
  out.total_tokens = cumulative;
  out.trace = trace_;
  out.particles = std::move(sys.particles);
  return out;
}

SMCResult run_smc(const TargetSpec& spec, const SMCConfig& cfg) {
  SmcEngine engine(spec, cfg);
  return engine.run();
}

}  // namespace rgsmc
