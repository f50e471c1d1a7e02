#include "rgsmc/checks.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <cstring>
#include <map>
#include <set>

#include "rgsmc/parallel.hpp"

namespace rgsmc {
namespace {

MeanCheck summarize(const std::vector<double>& xs, double truth) {
  MeanCheck out;
  out.truth = truth;
  out.draws = xs.size();
  if (xs.empty()) return out;
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  v /= static_cast<double>(std::max<std::size_t>(xs.size() - 1, 1));
  out.mean = m;
  out.sem = std::sqrt(v / static_cast<double>(xs.size()));
  return out;
}

// Distinct canonical prefixes of length t.
std::vector<Sequence> prefixes_of(const EnumeratedTarget& e, std::size_t t) {
  std::set<Sequence> out;
  for (const auto& [s, lm] : e.log_masses) out.insert(Sequence(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(t)));
  return {out.begin(), out.end()};
}

Sequence trim_after_eos(Sequence s, Token eos) {
  const auto it = std::find(s.begin(), s.end(), eos);
  if (it != s.end()) s.erase(it + 1, s.end());
  return s;
}

}  // namespace

double MeanCheck::z() const {
  const double err = std::abs(mean - truth);
  if (err == 0.0) return 0.0;
  // A deterministic estimator has sem ~ 0; below the rounding bound of the
  // summed mean the error carries no signal.
  const double rounding = static_cast<double>(draws) * std::numeric_limits<double>::epsilon() * std::abs(truth);
  const double scale = std::max(sem, rounding);
  return scale > 0.0 ? err / scale : std::numeric_limits<double>::infinity();
}

double run_tv(const TargetSpec& spec, const SMCConfig& cfg, const SequenceTable& reference) {
  return tv_distance(weighted_distribution(run_smc(spec, cfg), spec), reference);
}

TvCheck oracle_tv(const TargetSpec& spec, const SMCConfig& cfg, std::size_t runs,
                  std::size_t workers) {
  const SequenceTable truth = enumerate(spec).probabilities();
  std::vector<double> tv(runs);
  parallel_for(runs, workers, [&](std::size_t i) {
    SMCConfig c = cfg;
    c.seed = cfg.seed + i;
    tv[i] = run_tv(spec, c, truth);
  });
  TvCheck out;
  out.runs = runs;
  for (double d : tv) {
    out.mean_tv += d;
    out.max_tv = std::max(out.max_tv, d);
  }
  if (runs) out.mean_tv /= static_cast<double>(runs);
  return out;
}

IdentityCheck mse_identity(const TargetSpec& spec, double proposal_tau) {
  IdentityCheck out;
  out.min_relative_gap = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t <= spec.horizon; ++t) {
    const MseReport r = oracle_mse_weights(spec, proposal_tau, t);
    out.max_residual = std::max(out.max_residual, r.identity_residual);
    const double gap = (r.mse_prefix - r.mse_lookahead) / std::max(r.mse_prefix, 1e-300);
    out.min_relative_gap = std::min(out.min_relative_gap, gap);
    ++out.steps;
  }
  return out;
}

MarginalCheck lookahead_marginals(const TargetSpec& spec) {
  const EnumeratedTarget e = enumerate(spec);
  const ExactLookahead exact(spec);
  CounterRng unused(0, Purpose::kTest);
  MarginalCheck out;
  std::vector<SequenceTable> marginals;
  for (std::size_t t = 0; t <= spec.horizon; ++t) marginals.push_back(oracle_marginal(e, t));
  for (std::size_t t = 0; t <= spec.horizon; ++t) {
    const std::vector<Sequence> pres = prefixes_of(e, t);
    std::vector<double> lg;
    for (const Sequence& p : pres) lg.push_back(lookahead_log_gamma(spec, p, exact, unused));
    const double norm = log_sum_exp(lg);
    for (std::size_t i = 0; i < pres.size(); ++i) {
      const double p = lg[i] == kNegInf ? 0.0 : std::exp(lg[i] - norm);
      const auto it = marginals[t].find(pres[i]);
      const double m = it == marginals[t].end() ? 0.0 : it->second;
      out.max_marginal_error = std::max(out.max_marginal_error, std::abs(p - m));
    }
    if (t == spec.horizon) break;
    for (const Sequence& p : pres) {
      const double mp = marginals[t].at(p);
      if (mp <= 0.0 || is_terminated(spec.vocab(), p)) continue;
      const Distribution d = exact_conditional_next_token(spec, p, exact, unused);
      Sequence ext = p;
      ext.push_back(0);
      for (std::size_t v = 0; v < spec.vocab().size(); ++v) {
        ext.back() = static_cast<Token>(v);
        const auto it = marginals[t + 1].find(ext);
        const double ratio = it == marginals[t + 1].end() ? 0.0 : it->second / mp;
        out.max_conditional_error =
            std::max(out.max_conditional_error, std::abs(d.prob(static_cast<Token>(v)) - ratio));
      }
    }
  }
  return out;
}

MeanCheck lookahead_unbiasedness(const TargetSpec& spec, const Sequence& prefix,
                                 const LookaheadConfig& cfg, std::size_t draws,
                                 std::uint64_t seed) {
  const double truth = std::exp(oracle_log_lookahead(spec, prefix, cfg.horizon_blocks));
  CounterRng rng(seed, Purpose::kLookahead, 0x5eed);
  std::vector<double> xs;
  xs.reserve(draws);
  for (std::size_t i = 0; i < draws; ++i) {
    xs.push_back(std::exp(estimate_log_lookahead(spec, prefix, cfg, rng).log_value));
  }
  return summarize(xs, truth);
}

MeanCheck normalizer_unbiasedness(const TargetSpec& spec, const SMCConfig& cfg, std::size_t runs,
                                  std::size_t workers) {
  const double z = std::exp(enumerate(spec).log_Z);
  std::vector<double> xs(runs);
  parallel_for(runs, workers, [&](std::size_t i) {
    SMCConfig c = cfg;
    c.seed = cfg.seed + i;
    xs[i] = std::exp(run_smc(spec, c).log_Z_hat);
  });
  return summarize(xs, z);
}

ChiSquareCheck mh_invariance(const TargetSpec& spec, const SMCConfig& cfg, std::size_t k,
                             std::size_t chains, std::uint64_t seed) {
  SmcEngine engine(spec, cfg);
  const TargetSpec& ms = engine.mh_spec();
  const bool look = cfg.mh_target == IntermediateTarget::kLookahead;
  const std::size_t len = ms.block_end(k);
  const EnumeratedTarget e = enumerate(ms);
  const ExactLookahead exact(ms);
  CounterRng unused(0, Purpose::kTest);

  std::vector<Sequence> support;
  std::vector<double> lg;
  for (const Sequence& p : prefixes_of(e, len)) {
    const double g = look ? lookahead_log_gamma(ms, p, exact, unused) : prefix_log_gamma(ms, p);
    if (g == kNegInf) continue;
    support.push_back(p);
    lg.push_back(g);
  }
  const double norm = log_sum_exp(lg);
  std::vector<double> probs, cdf;
  double acc = 0.0;
  for (double g : lg) {
    probs.push_back(std::exp(g - norm));
    acc += probs.back();
    cdf.push_back(acc);
  }

  std::vector<std::size_t> counts(support.size(), 0);
  std::map<Sequence, std::size_t> index;
  for (std::size_t i = 0; i < support.size(); ++i) index[support[i]] = i;
  CounterRng init(seed, Purpose::kTest, k);
  std::size_t proposals = 0, accepts = 0, outside = 0;
  for (std::size_t c = 0; c < chains; ++c) {
    const double u = init.uniform() * acc;
    const auto j = std::min<std::size_t>(
        static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin()),
        support.size() - 1);
    Particle p;
    p.tokens = trim_after_eos(support[j], ms.vocab().eos());
    const MhRecord rec = engine.mh_block_step(p, c, k);
    proposals += rec.proposals;
    accepts += rec.accepts;
    const auto it = index.find(pad_with_eos(ms.vocab(), p.tokens, len));
    if (it == index.end()) {
      ++outside;  // moved to a zero-mass state
    } else {
      ++counts[it->second];
    }
  }

  // Pool cells with expected count below 5.
  std::vector<std::pair<double, double>> cells;  // (expected, observed)
  double pool_e = 0.0, pool_o = static_cast<double>(outside);
  for (std::size_t i = 0; i < support.size(); ++i) {
    const double ex = probs[i] * static_cast<double>(chains);
    if (ex < 5.0) {
      pool_e += ex;
      pool_o += static_cast<double>(counts[i]);
    } else {
      cells.emplace_back(ex, static_cast<double>(counts[i]));
    }
  }
  if (pool_e > 0.0 || pool_o > 0.0) {
    if (pool_e >= 5.0 || cells.empty()) {
      cells.emplace_back(pool_e, pool_o);
    } else {
      auto smallest = std::min_element(cells.begin(), cells.end());
      smallest->first += pool_e;
      smallest->second += pool_o;
    }
  }
  ChiSquareCheck out;
  out.chains = chains;
  out.cells = cells.size();
  out.acceptance_rate = proposals ? static_cast<double>(accepts) / static_cast<double>(proposals) : 0.0;
  for (const auto& [ex, ob] : cells) {
    out.statistic += ex > 0.0 ? (ob - ex) * (ob - ex) / ex : (ob > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  }
  const double df = std::max<double>(1.0, static_cast<double>(out.cells) - 1.0);
  out.critical = boost::math::quantile(boost::math::chi_squared(df), 0.99);
  return out;
}

double block_size_invariance(const Fixture& fixture, Family family, double alpha,
                             const SMCConfig& cfg, const std::vector<std::size_t>& block_sizes) {
  SMCConfig c = cfg;
  c.ess_threshold = 0.0;
  const SMCResult base = run_smc(fixture.spec(family, alpha, 1), c);
  double worst = 0.0;
  for (std::size_t B : block_sizes) {
    const SMCResult r = run_smc(fixture.spec(family, alpha, B), c);
    for (std::size_t i = 0; i < r.particles.size(); ++i) {
      const Particle& a = r.particles[i];
      const Particle& b = base.particles[i];
      if (a.tokens != b.tokens) return std::numeric_limits<double>::infinity();
      if (a.log_weight == b.log_weight) continue;  // covers both -inf
      worst = std::max(worst, std::abs(a.log_weight - b.log_weight));
    }
  }
  return worst;
}

std::size_t tempered_weight_mismatches(const TargetSpec& spec, std::size_t particles,
                                       std::uint64_t seed) {
  if (spec.family != Family::kTempered) throw InvalidParameter("needs a tempered target");
  SMCConfig cfg;
  cfg.num_particles = particles;
  cfg.ess_threshold = 0.0;
  cfg.proposal_tau = spec.alpha;
  cfg.seed = seed;
  SmcEngine engine(spec, cfg);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < particles; ++i) {
    Particle p;
    p.stream_slot = i;
    for (std::size_t k = 1; k <= spec.num_blocks(); ++k) {
      engine.propagate(p, k);
      if (p.tokens.size() <= spec.block_begin(k)) break;
      const double psi = block_log_Psi(spec, k, p.tokens);
      if (std::memcmp(&psi, &p.last_log_increment, sizeof psi) != 0) ++mismatches;
    }
  }
  return mismatches;
}

}  // namespace rgsmc
