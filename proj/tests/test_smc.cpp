#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"
#include "rgsmc/fixtures.hpp"
#include "rgsmc/oracle.hpp"
#include "rgsmc/smc.hpp"
#include "support.hpp"

using namespace rgsmc;
using namespace rgsmc::testing;

namespace {

ParticleSystem with_ancestors(const std::vector<std::size_t>& anc) {
  ParticleSystem s;
  for (std::size_t a : anc) {
    Particle p;
    p.ancestor = a;
    s.particles.push_back(p);
  }
  return s;
}

// Canonical prefixes of length t with their normalized gamma (prefix or
// lookahead), built from the reference masses.
std::map<Sequence, double> intermediate_distribution(const TargetSpec& spec, std::size_t t,
                                                     bool lookahead) {
  const auto masses = brute_force_masses(spec);
  std::map<Sequence, double> out;
  for (const auto& [s, w] : masses) {
    const Sequence pre(s.begin(), s.begin() + static_cast<long>(t));
    if (out.contains(pre)) continue;
    out[pre] = lookahead ? brute_prefix_gamma(spec, pre) * brute_lookahead(spec, masses, pre)
                         : brute_prefix_gamma(spec, pre);
  }
  return normalized(out);
}

struct ChiSquare {
  double statistic = 0.0;
  double critical = 0.0;
};

// One MH step on chains started from the exact intermediate target at
// block k; returns the goodness-of-fit statistic after the step.
ChiSquare mh_invariance(const TargetSpec& spec, const SMCConfig& cfg, std::size_t k,
                        std::size_t chains) {
  const bool look = cfg.mh_target == IntermediateTarget::kLookahead;
  const auto target = intermediate_distribution(spec, spec.block_end(k), look);
  std::vector<Sequence> support;
  std::vector<double> cdf;
  double acc = 0.0;
  for (const auto& [s, p] : target) {
    support.push_back(s);
    acc += p;
    cdf.push_back(acc);
  }
  SmcEngine engine(spec, cfg);
  std::map<Sequence, std::size_t> counts;
  CounterRng init(cfg.seed, Purpose::kTest, 99);
  for (std::size_t c = 0; c < chains; ++c) {
    const double u = init.uniform() * acc;
    const auto idx = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    Particle p;
    p.tokens = support[std::min(idx, support.size() - 1)];
    // Trim eos padding: particles stop at their first eos.
    const auto eos = std::find(p.tokens.begin(), p.tokens.end(), spec.vocab().eos());
    if (eos != p.tokens.end()) p.tokens.erase(eos + 1, p.tokens.end());
    engine.mh_block_step(p, c, k);
    counts[pad_with_eos(spec.vocab(), p.tokens, spec.block_end(k))] += 1;
  }
  ChiSquare out;
  std::size_t cells = 0;
  for (const auto& [s, p] : target) {
    if (p <= 0.0) continue;
    const double expected = p * static_cast<double>(chains);
    const double observed = counts.contains(s) ? static_cast<double>(counts.at(s)) : 0.0;
    out.statistic += (observed - expected) * (observed - expected) / expected;
    ++cells;
  }
  out.critical = boost::math::quantile(boost::math::chi_squared(static_cast<double>(cells - 1)), 0.99);
  return out;
}

}  // namespace

TEST_CASE("effective sample size") {
  const std::vector<double> equal(8, -1.3);
  CHECK(ess(equal) == 8.0);  // exact: equal weights never trigger resampling at threshold N
  const std::vector<double> half{std::log(0.5), std::log(0.5), kNegInf, kNegInf};
  CHECK(ess(half) == doctest::Approx(2.0));
  const std::vector<double> one{0.0, kNegInf, kNegInf};
  CHECK(ess(one) == doctest::Approx(1.0));
  const std::vector<double> big{1000.0, 1000.0};
  CHECK(ess(big) == doctest::Approx(2.0));
  const std::vector<double> none{kNegInf, kNegInf};
  CHECK_THROWS_AS(ess(none), PopulationExtinct);
}

TEST_CASE("systematic resampling of (0.75, 0.25)") {
  // u < 1/2 gives ancestors (0, 0); otherwise (0, 1).
  const std::vector<double> lw{std::log(0.75), std::log(0.25)};
  int both_zero = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    CounterRng rng(static_cast<std::uint64_t>(i), Purpose::kTest);
    const auto idx = resample_indices(lw, ResamplingScheme::kSystematic, rng);
    REQUIRE(idx[0] == 0);
    REQUIRE(idx.size() == 2);
    if (idx[1] == 0) ++both_zero;
  }
  CHECK(std::abs(both_zero / double(n) - 0.5) < 4 * std::sqrt(0.25 / n));
}

TEST_CASE("multinomial resampling frequencies") {
  const std::vector<double> p{0.1, 0.2, 0.0, 0.7};
  std::vector<double> lw;
  for (double x : p) lw.push_back(std::log(x));
  std::vector<int> counts(4);
  CounterRng rng(5, Purpose::kTest);
  const int rounds = 5000;
  for (int r = 0; r < rounds; ++r) {
    for (std::size_t a : resample_indices(lw, ResamplingScheme::kMultinomial, rng)) ++counts[a];
  }
  CHECK(counts[2] == 0);
  const double n = 4.0 * rounds;
  for (int i : {0, 1, 3}) CHECK(std::abs(counts[i] / n - p[i]) < 4 * std::sqrt(p[i] * (1 - p[i]) / n));
}

TEST_CASE("resampling never selects zero-weight particles at the edges") {
  const std::vector<double> lw{0.0, 0.0, kNegInf};
  for (std::uint64_t s = 0; s < 500; ++s) {
    CounterRng rng(s, Purpose::kTest);
    for (auto scheme : {ResamplingScheme::kSystematic, ResamplingScheme::kMultinomial}) {
      for (std::size_t a : resample_indices(lw, scheme, rng)) CHECK(a != 2);
    }
  }
}

TEST_CASE("resample accumulates the mean weight") {
  ParticleSystem s = with_ancestors({0, 1, 2, 3});
  const std::vector<double> w{1.0, 2.0, 3.0, 6.0};
  for (std::size_t i = 0; i < 4; ++i) s.particles[i].log_weight = std::log(w[i]);
  CounterRng rng(0, Purpose::kTest);
  resample(s, ResamplingScheme::kMultinomial, rng);
  CHECK(s.log_Z_hat == doctest::Approx(std::log(3.0)));
  for (const auto& p : s.particles) CHECK(p.log_weight == 0.0);
}

TEST_CASE("duplicates are the later copies of an ancestor") {
  CHECK(find_duplicates(with_ancestors({3, 3, 3, 1})) == std::vector<std::size_t>{1, 2});
  CHECK(find_duplicates(with_ancestors({0, 1, 0, 1})) == std::vector<std::size_t>{2, 3});
  CHECK(find_duplicates(with_ancestors({0, 1, 2, 3})).empty());
}

TEST_CASE("without resampling the weights telescope to the full importance weight") {
  const Fixture f = random_fixture(61, 2, 5, 0.1);
  for (Family fam : {Family::kTempered, Family::kPowered}) {
    for (auto kind : {IntermediateTarget::kPrefix, IntermediateTarget::kLookahead}) {
      const TargetSpec spec = f.spec(fam, 2.0, 2);
      SMCConfig cfg;
      cfg.num_particles = 32;
      cfg.ess_threshold = 0.0;
      cfg.intermediate_target = kind;
      cfg.lookahead.mode = LookaheadMode::kExactOracle;
      cfg.proposal_tau = 1.5;
      const SMCResult r = run_smc(spec, cfg);
      TargetSpec q = with_family(spec, Family::kTempered);
      q.alpha = 1.5;
      for (const auto& p : r.particles) {
        const double log_q = segment_log_transition(q, p.tokens, 0, spec.horizon);
        const double expected = unified_log_density(spec, p.tokens) - log_q;
        if (expected == kNegInf) {
          CHECK(p.log_weight == kNegInf);
        } else {
          CHECK(p.log_weight == doctest::Approx(expected).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("tempered proposal at tau = alpha weighs each block by its reward") {
  const Fixture f = random_fixture(62, 2, 6, 0.05);
  const TargetSpec spec = f.spec(Family::kTempered, 3.0, 2);
  SMCConfig cfg;
  cfg.num_particles = 16;
  cfg.ess_threshold = 0.0;
  SmcEngine engine(spec, cfg);
  for (std::size_t i = 0; i < 16; ++i) {
    Particle p;
    p.stream_slot = i;
    for (std::size_t k = 1; k <= spec.num_blocks(); ++k) {
      engine.propagate(p, k);
      if (p.tokens.size() <= spec.block_begin(k)) break;
      CHECK(p.last_log_increment == block_log_Psi(spec, k, p.tokens));
    }
  }
  // Direct form of the same identity.
  CounterRng rng(1, Purpose::kTest);
  const SampledBlocks b = sample_blocks(*spec.model, "", Sequence{}, 1, 2, 3.0, rng);
  CHECK(incremental_log_weight(spec, IntermediateTarget::kPrefix, b.tokens, 0, 2, b.total_log_prob()) ==
        block_log_Psi(spec, 1, b.tokens));
}

TEST_CASE("block size does not change draws or final weights without resampling") {
  const Fixture f = random_fixture(63, 2, 6, 0.1);
  SMCConfig cfg;
  cfg.num_particles = 24;
  cfg.ess_threshold = 0.0;
  cfg.seed = 17;
  const SMCResult base = run_smc(f.spec(Family::kPowered, 2.0, 1), cfg);
  for (std::size_t B : {2, 3, 6}) {
    const SMCResult r = run_smc(f.spec(Family::kPowered, 2.0, B), cfg);
    for (std::size_t i = 0; i < 24; ++i) {
      CHECK(r.particles[i].tokens == base.particles[i].tokens);
      if (std::isfinite(base.particles[i].log_weight)) {
        CHECK(r.particles[i].log_weight == doctest::Approx(base.particles[i].log_weight).epsilon(1e-12));
      } else {
        CHECK(r.particles[i].log_weight == kNegInf);
      }
    }
  }
}

TEST_CASE("constant potential at alpha = 1 keeps equal weights") {
  Fixture f = random_fixture(64, 2, 4, 0.1);
  f.potential = std::make_shared<ConstantPotential>();
  for (Family fam : {Family::kTempered, Family::kPowered}) {
    SMCConfig cfg;
    cfg.num_particles = 8;
    const SMCResult r = run_smc(f.spec(fam, 1.0, 2), cfg);
    for (const auto& p : r.particles) CHECK(p.log_weight == 0.0);
    for (const auto& t : r.trace) CHECK_FALSE(t.resampled);
    CHECK(r.log_Z_hat == 0.0);
  }
}

TEST_CASE("runs are reproducible from the seed") {
  const Fixture f = random_fixture(65, 2, 6, 0.1);
  SMCConfig cfg;
  cfg.num_particles = 16;
  cfg.mh_steps = 2;
  cfg.intermediate_target = IntermediateTarget::kLookahead;
  cfg.seed = 5;
  const TargetSpec spec = f.spec(Family::kTempered, 2.0, 2);
  const SMCResult a = run_smc(spec, cfg);
  const SMCResult b = run_smc(spec, cfg);
  REQUIRE(a.particles.size() == b.particles.size());
  for (std::size_t i = 0; i < a.particles.size(); ++i) {
    CHECK(a.particles[i].tokens == b.particles[i].tokens);
    CHECK(a.particles[i].log_weight == b.particles[i].log_weight);
  }
  CHECK(a.total_tokens == b.total_tokens);
  cfg.seed = 6;
  const SMCResult c = run_smc(spec, cfg);
  bool differs = false;
  for (std::size_t i = 0; i < a.particles.size(); ++i) differs |= a.particles[i].tokens != c.particles[i].tokens;
  CHECK(differs);
}

TEST_CASE("normalizer estimate is unbiased on the worked fixture") {
  const TargetSpec spec = worked_fixture().spec(Family::kPowered, 1.0);
  std::vector<double> zs;
  for (std::uint64_t s = 0; s < 4000; ++s) {
    SMCConfig cfg;
    cfg.num_particles = 4;
    cfg.resampling = ResamplingScheme::kMultinomial;
    cfg.ess_threshold = 4.0;  // resample after every block
    cfg.seed = s;
    zs.push_back(std::exp(run_smc(spec, cfg).log_Z_hat));
  }
  const Moments m = moments(zs);
  CHECK(std::abs(m.mean - 1.6) < 4 * m.sem);
}

TEST_CASE("one MH step leaves the intermediate target invariant") {
  const Fixture f = random_fixture(70, 2, 4, 0.1, 1.5);
  const TargetSpec spec = f.spec(Family::kPowered, 2.0, 1);
  for (auto kind : {IntermediateTarget::kPrefix, IntermediateTarget::kLookahead}) {
    for (std::size_t k : {2, 4}) {
      SMCConfig cfg;
      cfg.mh_steps = 1;
      cfg.mh_target = kind;
      cfg.lookahead.mode = LookaheadMode::kExactOracle;
      cfg.seed = 3;
      const ChiSquare c = mh_invariance(spec, cfg, k, 20000);
      INFO(to_string(kind) << " k " << k << " chi2 " << c.statistic << " critical " << c.critical);
      CHECK(c.statistic < c.critical);
    }
  }
}

TEST_CASE("the invariance check detects a wrong acceptance ratio") {
  const Fixture f = random_fixture(71, 2, 3, 0.0, 2.0);
  const TargetSpec spec = f.spec(Family::kPowered, 2.0, 2);
  SMCConfig cfg;
  cfg.mh_steps = 1;
  cfg.mh_target = IntermediateTarget::kLookahead;
  cfg.lookahead.mode = LookaheadMode::kExactOracle;
  cfg.invert_mh_lookahead_ratio = true;
  const ChiSquare c = mh_invariance(spec, cfg, 1, 20000);
  INFO("chi2 " << c.statistic << " critical " << c.critical);
  CHECK(c.statistic > c.critical);
}

TEST_CASE("mh_block_step preconditions") {
  const Fixture f = constraint_fixture();
  const TargetSpec spec = f.spec(Family::kPowered, 1.0, 2);
  SMCConfig cfg;
  cfg.mh_steps = 1;
  SmcEngine engine(spec, cfg);
  Particle long_one;
  long_one.tokens = {0, 0, 0};
  CHECK_THROWS_AS(engine.mh_block_step(long_one, 0, 1), InvalidParameter);
  Particle done;
  done.tokens = {0, spec.vocab().eos()};
  const MhRecord r = engine.mh_block_step(done, 0, 2);
  CHECK(r.proposals == 0);
  CHECK(done.tokens == Sequence{0, spec.vocab().eos()});
}

TEST_CASE("best particle tie-breaking") {
  SMCResult r;
  r.particles.resize(3);
  r.particles[0].log_weight = 0.0;
  r.particles[1].log_weight = 0.0;
  r.particles[1].log_reward = 1.0;
  r.particles[2].log_weight = 0.0;
  r.particles[2].log_reward = 1.0;
  CHECK(r.best_index() == 1);
  r.particles[2].log_weight = 0.5;
  CHECK(r.best_index() == 2);
}

TEST_CASE("config validation and extinction") {
  SMCConfig cfg;
  cfg.num_particles = 4;
  cfg.ess_threshold = 5.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidParameter);
  cfg.ess_threshold = 0.0;
  CHECK_NOTHROW(cfg.validate());
  cfg.num_particles = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidParameter);
  CHECK_THROWS_AS(resampling_from_string("stratified"), InvalidParameter);

  Fixture dead = worked_fixture();
  dead.potential = std::make_shared<StepScore>(std::vector<StepScore::Rule>{{0, 2, kNegInf}, {1, 2, kNegInf}});
  SMCConfig ok;
  ok.num_particles = 4;
  CHECK_THROWS_AS(run_smc(dead.spec(Family::kPowered, 1.0), ok), PopulationExtinct);
}
